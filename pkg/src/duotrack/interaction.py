"""Cross-modal feature interaction via shared-latent bidirectional scans.

Both modality streams are compressed to a narrow latent width, concatenated
along the sequence axis (RGB first, then TIR) so the recurrent state flows
across the modality boundary, passed through a stack of bidirectional gated
scan blocks, split back apart, and added residually after up-projection.
The up-projections start at zero, which makes the whole layer an exact
identity at initialization.

Cost model (multiply-adds for one forward pass, N tokens per modality,
embed width C, compression ratio r, latent D = C/r, state S, conv width K,
sequence M = 2N):

    projections:  2 modalities x (down + up) = 4 * N * C * D
    per block:    main/gate projections        2 * M * D^2
                  causal depthwise conv        M * D * K
                  per direction: dt projection M * D^2
                                 B, C proj     2 * M * D * S
                                 recurrence    6 * M * D * S + M * D
                  output projection            M * D^2

Every term is linear in N; the dense-attention reference below carries the
usual N^2 attention term at the same widths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .init import normal_init, zeros_param
from .ssm import MambaBlockParams, init_mamba_block, mamba_block
from .tensor import Tensor, concat, matmul


@dataclass
class MfiParams:
    """Down/up projections per modality plus the shared latent scan stack."""

    w_down_r: Tensor  # [C, C/r]
    w_down_t: Tensor
    w_up_r: Tensor  # [C/r, C], zero at init => exact identity
    w_up_t: Tensor
    blocks: list[MambaBlockParams]

    @property
    def latent_dim(self) -> int:
        return self.w_down_r.shape[1]


def init_mfi(
    rng: np.random.Generator,
    embed_dim: int,
    ratio: int,
    state_dim: int,
    n_blocks: int = 2,
    conv_width: int = 4,
) -> MfiParams:
    if embed_dim % ratio:
        raise ValueError(f"compression ratio {ratio} does not divide embed dim {embed_dim}")
    latent = embed_dim // ratio
    return MfiParams(
        w_down_r=normal_init(rng, (embed_dim, latent), std=embed_dim**-0.5),
        w_down_t=normal_init(rng, (embed_dim, latent), std=embed_dim**-0.5),
        w_up_r=zeros_param((latent, embed_dim)),
        w_up_t=zeros_param((latent, embed_dim)),
        blocks=[init_mamba_block(rng, latent, state_dim, conv_width) for _ in range(n_blocks)],
    )


def mfi_forward(f_r: Tensor, f_t: Tensor, params: MfiParams) -> tuple[Tensor, Tensor]:
    """Interact the two modality streams; residual, identity when W_up = 0."""
    if f_r.shape != f_t.shape:
        raise ValueError(f"modality shapes differ: {f_r.shape} vs {f_t.shape}")
    n = f_r.shape[0]
    latent = concat([matmul(f_r, params.w_down_r), matmul(f_t, params.w_down_t)], axis=0)
    for block in params.blocks:
        latent = mamba_block(latent, block)
    back_r = matmul(latent[:n], params.w_up_r)
    back_t = matmul(latent[n:], params.w_up_t)
    return f_r + back_r, f_t + back_t


def mfi_flops(
    n_tokens: int,
    embed_dim: int,
    ratio: int = 8,
    state_dim: int = 16,
    n_blocks: int = 2,
    conv_width: int = 4,
) -> int:
    """Closed-form multiply-add count of one ``mfi_forward`` (see module doc)."""
    d = embed_dim // ratio
    m = 2 * n_tokens
    proj = 4 * n_tokens * embed_dim * d
    per_dir = m * d * d + 2 * m * d * state_dim + 6 * m * d * state_dim + m * d
    per_block = 2 * m * d * d + m * d * conv_width + 2 * per_dir + m * d * d
    return proj + n_blocks * per_block


def cross_attention_flops(n_tokens: int, embed_dim: int) -> int:
    """Multiply-adds of the dense bidirectional cross-attention reference:
    per modality, q/k/v/o projections (4 N C^2) and two N^2 C attention
    products."""
    return 2 * (4 * n_tokens * embed_dim**2 + 2 * n_tokens**2 * embed_dim)


@dataclass
class CrossAttentionRef:
    """Dense O(N^2) cross-modal interaction used as the complexity baseline."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    @classmethod
    def create(cls, rng: np.random.Generator, embed_dim: int) -> "CrossAttentionRef":
        mk = lambda: (rng.standard_normal((embed_dim, embed_dim)) * 0.02).astype(np.float32)
        return cls(wq=mk(), wk=mk(), wv=mk(), wo=mk())

    def __call__(self, f_r: np.ndarray, f_t: np.ndarray, chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
        out_r = f_r + self._attend(f_r, f_t, chunk)
        out_t = f_t + self._attend(f_t, f_r, chunk)
        return out_r, out_t

    def _attend(self, q_src: np.ndarray, kv_src: np.ndarray, chunk: int) -> np.ndarray:
        scale = 1.0 / np.sqrt(q_src.shape[1])
        q = q_src @ self.wq
        k = kv_src @ self.wk
        v = kv_src @ self.wv
        out = np.empty_like(q)
        # row-chunked softmax keeps the N x N score matrix bounded in memory
        # without changing the O(N^2) arithmetic
        for start in range(0, q.shape[0], chunk):
            stop = min(start + chunk, q.shape[0])
            scores = (q[start:stop] @ k.T) * scale
            scores -= scores.max(axis=1, keepdims=True)
            np.exp(scores, out=scores)
            scores /= scores.sum(axis=1, keepdims=True)
            out[start:stop] = scores @ v
        return out @ self.wo
