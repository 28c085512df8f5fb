"""Deformable template sampling and temporal cue propagation.

Per frame, the two template feature maps are mixed by a small convolutional
stack into a shared offset basis; four linear heads (modality x template
kind) predict per-cell sampling offsets, scaled by the offset magnitude;
template features are re-read at reference-plus-offset positions by bilinear
interpolation.  The per-modality alignment cue, a small set of tokens carried
across frames, attends over the sampled template features (propagation) and
then over the search features (refinement); the final per-token gate is the
scaled inner product between refined cue and search tokens, and it modulates
the search features into the response map fed to the head.

With offset heads at zero and attention output projections at zero, the
whole module passes cue and templates through unchanged, which is also the
initial state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .init import const_param, normal_init, zeros_param
from .nn import AttentionParams, affine, conv2d, gelu, init_attention, multi_head_attention, bilinear_sample
from .tensor import Tensor, concat, default_dtype, matmul


@dataclass
class CueState:
    """Spatiotemporal alignment cue for one modality at frame ``frame``."""

    cue: Tensor  # [N_K, C]
    frame: int = 0


@dataclass
class OffsetHead:
    w: Tensor  # [C, 2]
    b: Tensor  # [2]


@dataclass
class DamParams:
    mixer_dw: Tensor  # [2C, 3, 3] depthwise
    mixer_dw_bias: Tensor  # [2C]
    mixer_pw: Tensor  # [C, 2C] pointwise
    mixer_pw_bias: Tensor  # [C]
    offset_heads: list[OffsetHead]  # order: (R, z0), (R, zt), (T, z0), (T, zt)
    prop_attn: AttentionParams  # cue <- sampled templates, zero out-proj at init
    refine_attn: AttentionParams  # cue <- search features, zero out-proj at init
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor  # zero at init, keeps refinement residual-neutral
    ffn_b2: Tensor
    cue_init_r: Tensor  # [N_K, C] learnable frame-0 cue
    cue_init_t: Tensor
    magnitude: float = 5.0

    def head(self, modality: str, kind: str) -> OffsetHead:
        idx = {"r": 0, "t": 2}[modality] + {"z0": 0, "zt": 1}[kind]
        return self.offset_heads[idx]


def init_dam(
    rng: np.random.Generator,
    embed_dim: int,
    heads: int,
    cue_count: int = 1,
    magnitude: float = 5.0,
    ffn_ratio: int = 4,
) -> DamParams:
    c = embed_dim
    hidden = c * ffn_ratio
    return DamParams(
        mixer_dw=normal_init(rng, (2 * c, 3, 3)),
        mixer_dw_bias=zeros_param(2 * c),
        mixer_pw=normal_init(rng, (c, 2 * c)),
        mixer_pw_bias=zeros_param(c),
        offset_heads=[OffsetHead(w=zeros_param((c, 2)), b=zeros_param(2)) for _ in range(4)],
        prop_attn=init_attention(rng, c, heads, zero_out_proj=True),
        refine_attn=init_attention(rng, c, heads, zero_out_proj=True),
        ffn_w1=normal_init(rng, (c, hidden)),
        ffn_b1=zeros_param(hidden),
        ffn_w2=zeros_param((hidden, c)),
        ffn_b2=zeros_param(c),
        cue_init_r=normal_init(rng, (cue_count, c)),
        cue_init_t=normal_init(rng, (cue_count, c)),
        magnitude=magnitude,
    )


def initial_cues(params: DamParams) -> tuple[CueState, CueState]:
    return CueState(cue=params.cue_init_r, frame=0), CueState(cue=params.cue_init_t, frame=0)


def reference_grid(height: int, width: int) -> Tensor:
    """Integer cell-center (row, col) coordinates, [H, W, 2]."""
    pts = np.stack(np.meshgrid(np.arange(height), np.arange(width), indexing="ij"), axis=-1)
    return Tensor(pts.astype(default_dtype()))


def reshape_templates(z0_tokens: Tensor, zt_tokens: Tensor) -> tuple[Tensor, Tensor]:
    """Tokens [N_z, C] -> spatial grids [H, W, C] in raster order."""
    n = z0_tokens.shape[0]
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise ValueError(f"template token count {n} is not a square grid")
    c = z0_tokens.shape[1]
    return z0_tokens.reshape(side, side, c), zt_tokens.reshape(side, side, c)


def conv_mixer(z0_grid: Tensor, zt_grid: Tensor, params: DamParams) -> Tensor:
    """Concatenate channels, depthwise 3x3, GELU, pointwise 2C->C, GELU."""
    if z0_grid.shape != zt_grid.shape:
        raise ValueError(f"template grids differ: {z0_grid.shape} vs {zt_grid.shape}")
    stacked = concat([z0_grid, zt_grid], axis=2).transpose(2, 0, 1)  # [2C, H, W]
    mixed = gelu(conv2d(stacked, params.mixer_dw, params.mixer_dw_bias, mode="depthwise", padding=1))
    mixed = gelu(conv2d(mixed, params.mixer_pw, params.mixer_pw_bias, mode="pointwise"))
    return mixed.transpose(1, 2, 0)  # [H, W, C]


def predict_offsets(f_a: Tensor, params: DamParams, modality: str, kind: str) -> Tensor:
    """Per-cell (d_row, d_col) sampling offsets in grid-cell units, [H, W, 2]."""
    head = params.head(modality, kind)
    h, w, c = f_a.shape
    flat = affine(f_a.reshape(h * w, c), head.w, head.b)
    return (flat * params.magnitude).reshape(h, w, 2)


def deform_sample(grid: Tensor, refs: Tensor, offsets: Tensor) -> Tensor:
    """Bilinear-read the grid at reference + offset positions, token order."""
    if grid.shape[:2] != offsets.shape[:2] or refs.shape != offsets.shape:
        raise ValueError(f"shapes disagree: grid {grid.shape}, refs {refs.shape}, offsets {offsets.shape}")
    h, w, _ = grid.shape
    points = (refs + offsets).reshape(h * w, 2)
    return bilinear_sample(grid, points)


def propagate_cue(cue: CueState, sampled_templates: Tensor, params: DamParams) -> CueState:
    """Advance the cue one frame by attending over sampled template features."""
    nxt = cue.cue + multi_head_attention(cue.cue, sampled_templates, params.prop_attn)
    return CueState(cue=nxt, frame=cue.frame + 1)


def refine_and_respond(cue_next: Tensor, search_feats: Tensor, params: DamParams, collect=None) -> Tensor:
    """Spatial guidance, feature enhancement, response generation.

    Returns the gated search features [N_x, C]; the per-token gate (scaled
    cue/search inner product, mean over cue tokens when there are several)
    is stashed into ``collect`` when a dict is passed.
    """
    refined = cue_next + multi_head_attention(cue_next, search_feats, params.refine_attn)
    enhanced = refined + affine(gelu(affine(refined, params.ffn_w1, params.ffn_b1)), params.ffn_w2, params.ffn_b2)
    scale = 1.0 / np.sqrt(search_feats.shape[1])  # keeps gate magnitude width-stable
    gate = matmul(search_feats, enhanced.T) * scale  # [N_x, N_K]
    if gate.shape[1] > 1:
        gate = gate.mean(axis=1, keepdims=True)
    if collect is not None:
        collect["gate"] = gate.data[:, 0].copy()
    return gate * search_feats


@dataclass
class AlignmentResult:
    response_r: Tensor
    response_t: Tensor
    cue_r: CueState
    cue_t: CueState
    diagnostics: dict


def dam_forward(
    z0_r: Tensor,
    zt_r: Tensor,
    z0_t: Tensor,
    zt_t: Tensor,
    search_r: Tensor,
    search_t: Tensor,
    cue_r: CueState,
    cue_t: CueState,
    params: DamParams,
    cross_modal_keys: bool = False,
) -> AlignmentResult:
    """Full per-frame alignment pass for both modalities.

    ``cross_modal_keys`` swaps which modality's sampled templates feed each
    cue's propagation attention (RGB cue reads TIR samples and vice versa).
    """
    g0_r, gt_r = reshape_templates(z0_r, zt_r)
    g0_t, gt_t = reshape_templates(z0_t, zt_t)
    # one shared offset basis for all four heads: modality specificity lives
    # entirely in the heads, so the mixer sees the modality-mean templates
    f_a = conv_mixer((g0_r + g0_t) * 0.5, (gt_r + gt_t) * 0.5, params)
    h, w, _ = g0_r.shape
    refs = reference_grid(h, w)

    diagnostics: dict = {"offsets": {}}
    sampled = {}
    for modality, (g0, gt) in (("r", (g0_r, gt_r)), ("t", (g0_t, gt_t))):
        parts = []
        for kind, grid in (("z0", g0), ("zt", gt)):
            offs = predict_offsets(f_a, params, modality, kind)
            diagnostics["offsets"][(modality, kind)] = offs.data.copy()
            parts.append(deform_sample(grid, refs, offs))
        sampled[modality] = concat(parts, axis=0)  # [2*N_z, C]

    keys_r = sampled["t"] if cross_modal_keys else sampled["r"]
    keys_t = sampled["r"] if cross_modal_keys else sampled["t"]
    next_r = propagate_cue(cue_r, keys_r, params)
    next_t = propagate_cue(cue_t, keys_t, params)

    gates_r: dict = {}
    gates_t: dict = {}
    resp_r = refine_and_respond(next_r.cue, search_r, params, collect=gates_r)
    resp_t = refine_and_respond(next_t.cue, search_t, params, collect=gates_t)
    diagnostics["gate_r"] = gates_r["gate"]
    diagnostics["gate_t"] = gates_t["gate"]
    return AlignmentResult(resp_r, resp_t, next_r, next_t, diagnostics)
