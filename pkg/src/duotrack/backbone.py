"""Patch tokenization, token assembly, and the Transformer trunk.

Token sequences are built in the fixed order [cue; initial template; dynamic
template; search]; ``TokenLayout`` records the segment boundaries so later
stages can slice segments back out.  The trunk is pre-norm ViT; both
modalities share its weights by default, and cross-modal interaction layers
can be hooked in after selected blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .init import normal_init, ones_param, zeros_param
from .nn import AttentionParams, affine, gelu, layer_norm, multi_head_attention
from .tensor import Tensor, concat


@dataclass
class BackboneConfig:
    patch_size: int
    embed_dim: int
    depth: int
    heads: int
    template_side: int
    search_side: int
    mfi_layers: tuple[int, ...] = ()
    cue_count: int = 1

    def __post_init__(self):
        self.mfi_layers = tuple(sorted(self.mfi_layers))
        if self.template_side % self.patch_size or self.search_side % self.patch_size:
            raise ValueError(
                f"image sides ({self.template_side}, {self.search_side}) "
                f"must be divisible by patch size {self.patch_size}"
            )
        if any(l < 1 or l > self.depth for l in self.mfi_layers):
            raise ValueError(f"interaction layers {self.mfi_layers} outside 1..{self.depth}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.cue_count < 1:
            raise ValueError("cue_count must be >= 1")

    @property
    def template_grid(self) -> int:
        return self.template_side // self.patch_size

    @property
    def search_grid(self) -> int:
        return self.search_side // self.patch_size

    @property
    def n_template_tokens(self) -> int:
        return self.template_grid**2

    @property
    def n_search_tokens(self) -> int:
        return self.search_grid**2


@dataclass
class TokenLayout:
    """Segment offsets for the [cue; z0; zt; search] concatenation."""

    n_cue: int
    n_template: int
    n_search: int

    @property
    def total(self) -> int:
        return self.n_cue + 2 * self.n_template + self.n_search

    @property
    def cue(self) -> slice:
        return slice(0, self.n_cue)

    @property
    def z0(self) -> slice:
        return slice(self.n_cue, self.n_cue + self.n_template)

    @property
    def zt(self) -> slice:
        return slice(self.n_cue + self.n_template, self.n_cue + 2 * self.n_template)

    @property
    def search(self) -> slice:
        return slice(self.n_cue + 2 * self.n_template, self.total)


@dataclass
class PatchEmbedParams:
    proj: Tensor  # [3*P*P, C]
    bias: Tensor  # [C]
    pos_template: Tensor  # [N_z, C]
    pos_search: Tensor  # [N_x, C]
    pos_cue: Tensor  # [N_K, C]


@dataclass
class VitBlockParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    attn: AttentionParams
    ln2_gain: Tensor
    ln2_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor


def init_patch_embed(rng: np.random.Generator, config: BackboneConfig) -> PatchEmbedParams:
    c = config.embed_dim
    p = config.patch_size
    return PatchEmbedParams(
        proj=normal_init(rng, (3 * p * p, c)),
        bias=zeros_param(c),
        pos_template=normal_init(rng, (config.n_template_tokens, c)),
        pos_search=normal_init(rng, (config.n_search_tokens, c)),
        pos_cue=normal_init(rng, (config.cue_count, c)),
    )


def init_vit_block(rng: np.random.Generator, dim: int, heads: int, ffn_ratio: int = 4) -> VitBlockParams:
    hidden = dim * ffn_ratio
    return VitBlockParams(
        ln1_gain=ones_param(dim),
        ln1_bias=zeros_param(dim),
        attn=nn.init_attention(rng, dim, heads),
        ln2_gain=ones_param(dim),
        ln2_bias=zeros_param(dim),
        ffn_w1=normal_init(rng, (dim, hidden)),
        ffn_b1=zeros_param(hidden),
        ffn_w2=normal_init(rng, (hidden, dim)),
        ffn_b2=zeros_param(dim),
    )


def patch_embed(image: Tensor, params: PatchEmbedParams, config: BackboneConfig, kind: str) -> Tensor:
    """Split a [3, H, W] image into P x P patches and project to [N, C].

    ``kind`` selects the positional table: "template" or "search".  Patches
    are raster ordered (row-major over the patch grid); within a patch the
    layout is channel-major, matching the projection matrix rows.
    """
    p = config.patch_size
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] image, got {image.shape}")
    _, h, w = image.shape
    if h % p or w % p:
        raise ValueError(f"image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    patches = image.reshape(3, gh, p, gw, p).transpose(1, 3, 0, 2, 4).reshape(gh * gw, 3 * p * p)
    tokens = affine(patches, params.proj, params.bias)
    if kind == "template":
        pos = params.pos_template
    elif kind == "search":
        pos = params.pos_search
    else:
        raise ValueError(f"unknown segment kind {kind!r}")
    if pos.shape[0] != tokens.shape[0]:
        raise ValueError(f"position table {pos.shape} does not match {tokens.shape[0]} tokens")
    return tokens + pos


def assemble_tokens(cue: Tensor, z0: Tensor, zt: Tensor, search: Tensor) -> tuple[Tensor, TokenLayout]:
    """Concatenate the four segments in the fixed order [cue; z0; zt; search]."""
    widths = {cue.shape[1], z0.shape[1], zt.shape[1], search.shape[1]}
    if len(widths) != 1:
        raise ValueError(
            f"token widths differ: cue {cue.shape}, z0 {z0.shape}, zt {zt.shape}, search {search.shape}"
        )
    if z0.shape[0] != zt.shape[0]:
        raise ValueError(f"template token counts differ: {z0.shape[0]} vs {zt.shape[0]}")
    layout = TokenLayout(n_cue=cue.shape[0], n_template=z0.shape[0], n_search=search.shape[0])
    return concat([cue, z0, zt, search], axis=0), layout


def vit_block(x: Tensor, p: VitBlockParams, need_weights: bool = False):
    """Pre-norm residual block: x += MHSA(LN(x)); x += FFN(LN(x))."""
    normed = layer_norm(x, p.ln1_gain, p.ln1_bias)
    if need_weights:
        attn_out, weights = multi_head_attention(normed, normed, p.attn, need_weights=True)
    else:
        attn_out = multi_head_attention(normed, normed, p.attn)
    x = x + attn_out
    h = affine(layer_norm(x, p.ln2_gain, p.ln2_bias), p.ffn_w1, p.ffn_b1)
    x = x + affine(gelu(h), p.ffn_w2, p.ffn_b2)
    if need_weights:
        return x, weights
    return x


def forward_backbone(
    tokens_r: Tensor,
    tokens_t: Tensor,
    blocks: list[VitBlockParams],
    mfi_layers: tuple[int, ...] = (),
    mfi_params: list | None = None,
    blocks_t: list[VitBlockParams] | None = None,
) -> tuple[list[Tensor], list[Tensor]]:
    """Run both modality streams through the trunk, interacting after the
    layers listed in ``mfi_layers`` (1-based).

    Returns the full per-layer feature lists (post-interaction where one ran),
    one entry per layer per modality, for downstream layer aggregation.
    """
    from .interaction import mfi_forward

    if mfi_layers and (mfi_params is None or len(mfi_params) != len(mfi_layers)):
        raise ValueError("one interaction parameter bundle is required per hooked layer")
    trunk_t = blocks if blocks_t is None else blocks_t
    hooks = dict(zip(mfi_layers, mfi_params or []))
    feats_r: list[Tensor] = []
    feats_t: list[Tensor] = []
    x_r, x_t = tokens_r, tokens_t
    for layer, (blk_r, blk_t) in enumerate(zip(blocks, trunk_t), start=1):
        x_r = vit_block(x_r, blk_r)
        x_t = vit_block(x_t, blk_t)
        if layer in hooks:
            x_r, x_t = mfi_forward(x_r, x_t, hooks[layer])
        feats_r.append(x_r)
        feats_t.append(x_t)
    return feats_r, feats_t
