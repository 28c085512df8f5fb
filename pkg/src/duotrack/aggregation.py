"""Sparse per-layer expert selection and aggregation over trunk features.

A shared router scores the backbone depth from average-pooled per-layer
features; the selection policy always keeps the shallowest layer (spatial
detail) and the deepest layer (semantics) and fills the remaining budget by
top-k over the middle layers, ties broken toward the lower layer index.
Selected layers pass through per-layer linear experts and are combined with
learnable per-channel weights.  Selection is hard: no gradient flows through
the choice itself, only through the expert projections and mixing weights.

Layer indices are 1-based everywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .init import const_param, normal_init, zeros_param
from .nn import affine, gelu
from .tensor import Tensor, concat, matmul


@dataclass
class RouterParams:
    """Pool -> MLP -> FC stack producing one logit per backbone layer."""

    w1: Tensor  # [L*C, C]
    b1: Tensor  # [C]
    w2: Tensor  # [C, L]
    b2: Tensor  # [L]

    @property
    def depth(self) -> int:
        return self.w2.shape[1]


@dataclass
class CamParams:
    experts: list[Tensor]  # L matrices [C, C]
    mix_weights: Tensor  # [L, C]
    k: int


def init_router(rng: np.random.Generator, depth: int, embed_dim: int) -> RouterParams:
    return RouterParams(
        w1=normal_init(rng, (depth * embed_dim, embed_dim)),
        b1=zeros_param(embed_dim),
        w2=normal_init(rng, (embed_dim, depth)),
        b2=zeros_param(depth),
    )


def init_cam(rng: np.random.Generator, depth: int, embed_dim: int, k: int) -> CamParams:
    if not 2 <= k <= depth:
        raise ValueError(f"expert budget k={k} outside 2..{depth}")
    experts = []
    for _ in range(depth):
        # identity plus small noise: early in training the aggregation is
        # close to plain layer averaging
        w = np.eye(embed_dim) + rng.standard_normal((embed_dim, embed_dim)) * 0.01
        experts.append(const_param(w))
    return CamParams(
        experts=experts,
        mix_weights=const_param(np.full((depth, embed_dim), 1.0 / k)),
        k=k,
    )


def route(features: Sequence[Tensor], params: RouterParams) -> Tensor:
    """Average-pool each layer over tokens, concatenate, score -> [L] logits."""
    depth = params.depth
    if len(features) != depth:
        raise ValueError(f"router expects {depth} layer features, got {len(features)}")
    pooled = concat([f.mean(axis=0) for f in features], axis=0)
    hidden = gelu(affine(pooled.reshape(1, -1), params.w1, params.b1))
    return affine(hidden, params.w2, params.b2).reshape(-1)


def select_experts(scores, k: int) -> list[int]:
    """Pick k layers: always {1, L}, then top-(k-2) of the interior by score.

    Ties break toward the lower layer index; the result is ascending.
    Depends only on score ranks, so any strictly increasing transform of the
    scores yields the same selection.
    """
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    depth = s.shape[0]
    if not 2 <= k <= depth:
        raise ValueError(f"k={k} outside 2..{depth}")
    interior = s[1 : depth - 1]
    order = np.argsort(-interior, kind="stable")  # stable: ties keep lower index first
    chosen = sorted(int(i) + 2 for i in order[: k - 2])
    return [1] + chosen + [depth]


def select_fixed_interval(depth: int, interval: int = 2) -> list[int]:
    """Ablation preset: every ``interval``-th layer, no forced endpoints."""
    return list(range(interval, depth + 1, interval))


def select_manual(depth: int, layers: Sequence[int]) -> list[int]:
    """Ablation preset: an explicit layer list (e.g. 1,3,6,9,12), validated."""
    out = sorted(set(int(l) for l in layers))
    if not out or out[0] < 1 or out[-1] > depth:
        raise ValueError(f"manual selection {layers} outside 1..{depth}")
    return out


def aggregate(features: Sequence[Tensor], selected: Sequence[int], params: CamParams) -> Tensor:
    """Weighted sum of expert-projected features over the selected layers."""
    if not selected:
        raise ValueError("selected expert set is empty")
    if any(l < 1 or l > len(features) for l in selected):
        raise ValueError(f"selected layers {selected} outside 1..{len(features)}")
    total = None
    for layer in selected:
        projected = matmul(features[layer - 1], params.experts[layer - 1])
        term = projected * params.mix_weights[layer - 1]
        total = term if total is None else total + term
    return total
