"""Run configuration: hyperparameters, profiles, and strict JSON round trip."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .backbone import BackboneConfig


@dataclass
class RunConfig:
    profile: str = "toy"
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    heads: int = 2
    template_side: int = 32
    search_side: int = 64
    mfi_layers: list[int] = dataclasses.field(default_factory=lambda: [2, 3])
    cue_count: int = 1
    state_dim: int = 8
    compress_ratio: int = 8
    mamba_layers: int = 2
    conv_width: int = 4
    experts_k: int = 3
    selection: str = "topk"  # topk | fixed_interval | manual
    manual_layers: list[int] = dataclasses.field(default_factory=list)
    offset_magnitude: float = 5.0
    ffn_ratio: int = 4
    head_depth: int = 3
    cross_modal_cue_keys: bool = False
    shared_trunk: bool = True
    seed: int = 0
    update_interval: int = 25  # dynamic-template refresh period; 0 = never
    update_threshold: float = 0.7
    template_scale: float = 2.0
    search_scale: float = 4.0
    center_jitter: float = 0.04  # training crop-center jitter, fraction of the search side
    learning_rate: float = 1e-3
    dtype_mode: str = "f32"
    out_dir: str = "out"

    def __post_init__(self):
        if self.profile not in ("toy", "paper"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.selection not in ("topk", "fixed_interval", "manual"):
            raise ValueError(f"unknown selection policy {self.selection!r}")
        if self.dtype_mode not in ("f32", "f64"):
            raise ValueError(f"unknown dtype_mode {self.dtype_mode!r}")
        if self.embed_dim % self.compress_ratio:
            raise ValueError(f"compress_ratio {self.compress_ratio} must divide embed_dim {self.embed_dim}")
        self.backbone()  # validates the geometry fields

    @classmethod
    def toy(cls, **overrides) -> "RunConfig":
        return cls(**overrides)

    @classmethod
    def paper(cls, **overrides) -> "RunConfig":
        base = dict(
            profile="paper",
            patch_size=16,
            embed_dim=768,
            depth=12,
            heads=12,
            template_side=128,
            search_side=256,
            mfi_layers=[4, 7, 10],
            cue_count=1,
            state_dim=16,
            compress_ratio=8,
            mamba_layers=2,
            experts_k=6,
            offset_magnitude=5.0,
        )
        base.update(overrides)
        return cls(**base)

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depth=self.depth,
            heads=self.heads,
            template_side=self.template_side,
            search_side=self.search_side,
            mfi_layers=tuple(self.mfi_layers),
            cue_count=self.cue_count,
        )

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def load_config(path) -> RunConfig:
    """Parse a JSON config; keys must exactly match RunConfig field names."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"config root must be an object, got {type(raw).__name__}")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**raw)
