"""Fuse the two modality responses and decode an anchor-free bounding box.

The fused search-region grid runs through three small conv towers producing a
sigmoid score map, sub-cell center offsets, and box size fractions.  Decoding
is center-based: take the score argmax (row-major first on ties), add the
sub-cell offset, scale by the cell stride, and clip to the frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .init import buffer_param, const_param, normal_init, ones_param, zeros_param
from .nn import batch_norm2d, conv2d, relu, affine
from .tensor import Tensor, concat, sigmoid


@dataclass
class ConvBnStage:
    w: Tensor  # [C_out, C_in, 3, 3]
    b: Tensor
    gamma: Tensor
    beta: Tensor
    run_mean: Tensor  # buffers, updated in training mode
    run_var: Tensor


@dataclass
class TowerParams:
    stages: list[ConvBnStage]
    final_w: Tensor  # [out_ch, C, 1, 1] as pointwise [out_ch, C]
    final_b: Tensor


@dataclass
class HeadParams:
    fuse_w: Tensor  # [2C, C] pointwise compression
    fuse_b: Tensor
    score: TowerParams
    offset: TowerParams
    size: TowerParams


@dataclass
class BBox:
    """Axis-aligned box in search-frame pixels, top-left origin."""

    x: float
    y: float
    w: float
    h: float
    score: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0


def _init_stage(rng: np.random.Generator, dim: int) -> ConvBnStage:
    return ConvBnStage(
        w=normal_init(rng, (dim, dim, 3, 3)),
        b=zeros_param(dim),
        gamma=ones_param(dim),
        beta=zeros_param(dim),
        run_mean=buffer_param(np.zeros(dim)),
        run_var=buffer_param(np.ones(dim)),
    )


def _init_tower(rng: np.random.Generator, dim: int, out_ch: int, depth: int, final_bias: float = 0.0) -> TowerParams:
    return TowerParams(
        stages=[_init_stage(rng, dim) for _ in range(depth)],
        final_w=normal_init(rng, (out_ch, dim)),
        final_b=const_param(np.full(out_ch, final_bias)),
    )


def init_head(rng: np.random.Generator, dim: int, depth: int = 3) -> HeadParams:
    # score tower bias starts low so the sigmoid baseline is a sparse ~0.1,
    # the usual focal-loss-friendly prior
    return HeadParams(
        fuse_w=normal_init(rng, (2 * dim, dim)),
        fuse_b=zeros_param(dim),
        score=_init_tower(rng, dim, 1, depth, final_bias=-2.19),
        offset=_init_tower(rng, dim, 2, depth),
        size=_init_tower(rng, dim, 2, depth, final_bias=-1.1),
    )


def fuse(h_r: Tensor, h_t: Tensor, params: HeadParams) -> Tensor:
    """Channel-concatenate the modality responses, reshape to the search
    grid, compress 2C -> C pointwise.  Returns [C, H_s, W_s]."""
    if h_r.shape != h_t.shape:
        raise ValueError(f"response shapes differ: {h_r.shape} vs {h_t.shape}")
    n = h_r.shape[0]
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise ValueError(f"search token count {n} is not a square grid")
    both = concat([h_r, h_t], axis=1)  # [N, 2C]
    compressed = affine(both, params.fuse_w, params.fuse_b)  # [N, C]
    return compressed.reshape(side, side, -1).transpose(2, 0, 1)


def _run_tower(x: Tensor, tower: TowerParams, training: bool) -> Tensor:
    for st in tower.stages:
        x = conv2d(x, st.w, st.b, mode="dense", padding=1)
        x = batch_norm2d(x, st.gamma, st.beta, st.run_mean, st.run_var, training=training)
        x = relu(x)
    return conv2d(x, tower.final_w, tower.final_b, mode="pointwise")


def predict_maps(fused: Tensor, params: HeadParams, training: bool = False, with_logits: bool = False):
    """Score [H, W], offset [2, H, W], size [2, H, W]; all sigmoid-squashed.

    ``with_logits`` additionally returns the pre-sigmoid score map for
    numerically stable loss computation.
    """
    score_logits = _run_tower(fused, params.score, training)[0]
    offset = sigmoid(_run_tower(fused, params.offset, training))
    size = sigmoid(_run_tower(fused, params.size, training))
    score = sigmoid(score_logits)
    if with_logits:
        return score, offset, size, score_logits
    return score, offset, size


def decode(score, offset, size, search_side: int) -> BBox:
    """Peak cell + sub-cell offset -> center; sigmoid sizes are fractions of
    the search side.  Ties in the score map resolve to the smallest
    row-major index; the box is clipped to the frame."""
    sd = score.data if isinstance(score, Tensor) else np.asarray(score)
    od = offset.data if isinstance(offset, Tensor) else np.asarray(offset)
    zd = size.data if isinstance(size, Tensor) else np.asarray(size)
    hs, ws = sd.shape
    flat = int(np.argmax(sd))
    i, j = divmod(flat, ws)
    stride = search_side / ws
    cx = (j + float(od[0, i, j])) * stride
    cy = (i + float(od[1, i, j])) * stride
    w = max(float(zd[0, i, j]) * search_side, 1e-6)
    h = max(float(zd[1, i, j]) * search_side, 1e-6)
    w = min(w, float(search_side))
    h = min(h, float(search_side))
    x = min(max(cx - w / 2.0, 0.0), search_side - w)
    y = min(max(cy - h / 2.0, 0.0), search_side - h)
    return BBox(x=x, y=y, w=w, h=h, score=float(sd[i, j]))
