"""Neural primitives on top of the tensor tape.

Conventions used throughout the package:

* convolution is cross-correlation (no kernel flip), zero padding, stride 1;
* ``conv1d_depthwise`` is causal: the sequence is padded on the left only, so
  position t never sees positions > t;
* ``bilinear_sample`` points are (row, col) in continuous grid coordinates
  and are clamped to [0, H-1] x [0, W-1] before interpolation;
* layer norm of a zero-variance row returns the bias (epsilon denominator).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, concat, gelu, matmul, record, relu, sigmoid, silu  # noqa: F401  (activations re-exported)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax; each slice along ``axis`` is nonnegative and sums to 1."""
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return ((g - dot) * s,)

    return record(out, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization of [N, C] to zero mean / unit variance, then affine."""
    if x.ndim != 2:
        raise ValueError(f"layer_norm expects [N, C], got {x.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def vjp(g):
        gg = g * gain.data
        gx = inv * (gg - gg.mean(axis=1, keepdims=True) - xhat * (gg * xhat).mean(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return record(out, (x, gain, bias), vjp)


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of a [C, H, W] map.

    Training mode normalizes by the map's own spatial statistics and updates
    the running buffers in place (the sanctioned mutation of a Tensor).
    Inference mode uses the stored running statistics only.
    """
    if x.ndim != 3:
        raise ValueError(f"batch_norm2d expects [C, H, W], got {x.shape}")
    c = x.shape[0]
    if training:
        mu = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        running_mean.data[...] = (1.0 - momentum) * running_mean.data + momentum * mu
        running_var.data[...] = (1.0 - momentum) * running_var.data + momentum * var
    else:
        mu = running_mean.data
        var = running_var.data
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
    out = Tensor(xhat * gamma.data[:, None, None] + beta.data[:, None, None])

    def vjp(g):
        ggam = (g * xhat).sum(axis=(1, 2))
        gbet = g.sum(axis=(1, 2))
        gg = g * gamma.data[:, None, None]
        if training:
            n = x.shape[1] * x.shape[2]
            mean_gg = gg.mean(axis=(1, 2))
            mean_ggx = (gg * xhat).mean(axis=(1, 2))
            gx = inv[:, None, None] * (gg - mean_gg[:, None, None] - xhat * mean_ggx[:, None, None])
        else:
            gx = gg * inv[:, None, None]
        return gx, ggam, gbet

    return record(out, (x, gamma, beta), vjp)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, mode: str = "dense", padding: int = 0) -> Tensor:
    """2-D convolution of a [C_in, H, W] map.

    mode "dense": kernel [C_out, C_in, kh, kw]; "depthwise": kernel [C, kh, kw];
    "pointwise": kernel [C_out, C_in] (a 1x1 dense convolution).
    """
    xd = x.data
    kd = kernel.data
    if mode == "pointwise":
        if kd.ndim != 2 or kd.shape[1] != xd.shape[0]:
            raise ValueError(f"pointwise kernel {kd.shape} incompatible with input channels {xd.shape[0]}")
        kd4 = kd[:, :, None, None]
        return _conv2d_dense(x, kernel, kd4, bias, padding, pointwise=True)
    if mode == "dense":
        if kd.ndim != 4 or kd.shape[1] != xd.shape[0]:
            raise ValueError(f"dense kernel {kd.shape} incompatible with input channels {xd.shape[0]}")
        return _conv2d_dense(x, kernel, kd, bias, padding, pointwise=False)
    if mode == "depthwise":
        if kd.ndim != 3 or kd.shape[0] != xd.shape[0]:
            raise ValueError(f"depthwise kernel {kd.shape} incompatible with input channels {xd.shape[0]}")
        return _conv2d_depthwise(x, kernel, bias, padding)
    raise ValueError(f"unknown conv2d mode {mode!r}")


def _pad_hw(xd: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return xd
    return np.pad(xd, ((0, 0), (padding, padding), (padding, padding)))


def _conv2d_dense(x, kernel, kd4, bias, padding, pointwise):
    xd = _pad_hw(x.data, padding)
    c_out, c_in, kh, kw = kd4.shape
    oh = xd.shape[1] - kh + 1
    ow = xd.shape[2] - kw + 1
    if oh <= 0 or ow <= 0:
        raise ValueError(f"kernel {kd4.shape} larger than padded input {xd.shape}")
    acc = np.zeros((c_out, oh, ow), dtype=xd.dtype)
    for di in range(kh):
        for dj in range(kw):
            acc += np.einsum("oc,chw->ohw", kd4[:, :, di, dj], xd[:, di : di + oh, dj : dj + ow], optimize=True)
    if bias is not None:
        acc = acc + bias.data[:, None, None]
    out = Tensor(acc)

    def vjp(g):
        gk = np.zeros_like(kd4)
        gxp = np.zeros_like(xd)
        for di in range(kh):
            for dj in range(kw):
                patch = xd[:, di : di + oh, dj : dj + ow]
                gk[:, :, di, dj] = np.einsum("ohw,chw->oc", g, patch, optimize=True)
                gxp[:, di : di + oh, dj : dj + ow] += np.einsum("oc,ohw->chw", kd4[:, :, di, dj], g, optimize=True)
        gx = gxp if padding == 0 else gxp[:, padding:-padding, padding:-padding]
        gkernel = gk[:, :, 0, 0] if pointwise else gk
        grads = [gx, gkernel]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return record(out, parents, vjp)


def _conv2d_depthwise(x, kernel, bias, padding):
    xd = _pad_hw(x.data, padding)
    kd = kernel.data
    c, kh, kw = kd.shape
    oh = xd.shape[1] - kh + 1
    ow = xd.shape[2] - kw + 1
    if oh <= 0 or ow <= 0:
        raise ValueError(f"kernel {kd.shape} larger than padded input {xd.shape}")
    acc = np.zeros((c, oh, ow), dtype=xd.dtype)
    for di in range(kh):
        for dj in range(kw):
            acc += kd[:, di, dj][:, None, None] * xd[:, di : di + oh, dj : dj + ow]
    if bias is not None:
        acc = acc + bias.data[:, None, None]
    out = Tensor(acc)

    def vjp(g):
        gk = np.zeros_like(kd)
        gxp = np.zeros_like(xd)
        for di in range(kh):
            for dj in range(kw):
                patch = xd[:, di : di + oh, dj : dj + ow]
                gk[:, di, dj] = (g * patch).sum(axis=(1, 2))
                gxp[:, di : di + oh, dj : dj + ow] += kd[:, di, dj][:, None, None] * g
        gx = gxp if padding == 0 else gxp[:, padding:-padding, padding:-padding]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return record(out, parents, vjp)


def conv1d_depthwise(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Causal per-channel 1-D convolution of [L, D] with kernel [K, D].

    Left padding only: output t depends on inputs t-K+1 .. t, so a forward
    scan downstream never sees future tokens.  Tap K-1 is the current token.
    """
    xd = x.data
    kd = kernel.data
    if xd.ndim != 2 or kd.ndim != 2 or kd.shape[1] != xd.shape[1]:
        raise ValueError(f"conv1d_depthwise shapes: input {xd.shape}, kernel {kd.shape}")
    length = xd.shape[0]
    width = kd.shape[0]
    xp = np.concatenate([np.zeros((width - 1, xd.shape[1]), dtype=xd.dtype), xd], axis=0) if width > 1 else xd
    acc = np.zeros_like(xd)
    for k in range(width):
        acc += kd[k] * xp[k : k + length]
    if bias is not None:
        acc = acc + bias.data
    out = Tensor(acc)

    def vjp(g):
        gk = np.empty_like(kd)
        gxp = np.zeros_like(xp)
        for k in range(width):
            gk[k] = (g * xp[k : k + length]).sum(axis=0)
            gxp[k : k + length] += kd[k] * g
        gx = gxp[width - 1 :] if width > 1 else gxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return record(out, parents, vjp)


def bilinear_sample(f: Tensor, points: Tensor) -> Tensor:
    """Sample a [H, W, C] grid at N continuous (row, col) points -> [N, C].

    Coordinates are clamped to the grid before interpolation, so out-of-range
    points read the nearest border cell.  Points that land exactly on integer
    coordinates return the stored value bit-exactly.
    """
    fd = f.data
    pd = points.data
    if fd.ndim != 3 or pd.ndim != 2 or pd.shape[1] != 2:
        raise ValueError(f"bilinear_sample shapes: grid {fd.shape}, points {pd.shape}")
    h, w, _ = fd.shape
    rows = np.clip(pd[:, 0], 0.0, h - 1.0)
    cols = np.clip(pd[:, 1], 0.0, w - 1.0)
    in_r = (pd[:, 0] > 0.0) & (pd[:, 0] < h - 1.0)
    in_c = (pd[:, 1] > 0.0) & (pd[:, 1] < w - 1.0)

    i0 = np.floor(rows).astype(np.int64)
    j0 = np.floor(cols).astype(np.int64)
    exact = (rows == i0) & (cols == j0)
    i0 = np.minimum(i0, h - 2) if h > 1 else i0
    j0 = np.minimum(j0, w - 2) if w > 1 else j0
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fy = (rows - i0)[:, None]
    fx = (cols - j0)[:, None]

    f00 = fd[i0, j0]
    f01 = fd[i0, j1]
    f10 = fd[i1, j0]
    f11 = fd[i1, j1]
    w00 = (1.0 - fy) * (1.0 - fx)
    w01 = (1.0 - fy) * fx
    w10 = fy * (1.0 - fx)
    w11 = fy * fx
    vals = w00 * f00 + w01 * f01 + w10 * f10 + w11 * f11
    vals[exact] = fd[np.clip(pd[exact, 0], 0, h - 1).astype(np.int64), np.clip(pd[exact, 1], 0, w - 1).astype(np.int64)]
    out = Tensor(vals)

    def vjp(g):
        gf = np.zeros_like(fd)
        np.add.at(gf, (i0, j0), g * w00)
        np.add.at(gf, (i0, j1), g * w01)
        np.add.at(gf, (i1, j0), g * w10)
        np.add.at(gf, (i1, j1), g * w11)
        dr = ((f10 - f00) * (1.0 - fx) + (f11 - f01) * fx) * g
        dc = ((f01 - f00) * (1.0 - fy) + (f11 - f10) * fy) * g
        gp = np.zeros_like(pd)
        gp[:, 0] = dr.sum(axis=1) * in_r
        gp[:, 1] = dc.sum(axis=1) * in_c
        return gf, gp

    return record(out, (f, points), vjp)


# -- attention ----------------------------------------------------------------


@dataclass
class AttentionParams:
    """Query/key/value/output projections for scaled dot-product attention."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    heads: int = 1


def init_attention(rng: np.random.Generator, dim: int, heads: int, zero_out_proj: bool = False) -> AttentionParams:
    from .init import normal_init, zeros_param  # local import to avoid a cycle

    return AttentionParams(
        wq=normal_init(rng, (dim, dim)),
        bq=zeros_param(dim),
        wk=normal_init(rng, (dim, dim)),
        bk=zeros_param(dim),
        wv=normal_init(rng, (dim, dim)),
        bv=zeros_param(dim),
        wo=zeros_param((dim, dim)) if zero_out_proj else normal_init(rng, (dim, dim)),
        bo=zeros_param(dim),
        heads=heads,
    )


def multi_head_attention(query: Tensor, keyval: Tensor, p: AttentionParams, need_weights: bool = False):
    """Multi-head scaled dot-product attention with output projection.

    query [Nq, C], keyval [Nk, C] -> [Nq, C].  With ``need_weights`` also
    returns the per-head [Nq, Nk] attention weights as plain arrays.
    """
    dim = query.shape[1]
    if dim % p.heads != 0:
        raise ValueError(f"dim {dim} not divisible by heads {p.heads}")
    hd = dim // p.heads
    scale = 1.0 / np.sqrt(hd)
    q = matmul(query, p.wq) + p.bq
    k = matmul(keyval, p.wk) + p.bk
    v = matmul(keyval, p.wv) + p.bv
    outs = []
    weights = []
    for i in range(p.heads):
        sl = slice(i * hd, (i + 1) * hd)
        attn = softmax(matmul(q[:, sl], k[:, sl].T) * scale, axis=1)
        if need_weights:
            weights.append(attn.data.copy())
        outs.append(matmul(attn, v[:, sl]))
    merged = outs[0] if p.heads == 1 else concat(outs, axis=1)
    result = matmul(merged, p.wo) + p.bo
    if need_weights:
        return result, weights
    return result


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b)."""
    y = matmul(x, w)
    return y if b is None else y + b
