"""Built-in verification suites behind the ``check`` CLI subcommand.

Three suites: "oracles" replays kernels against naive reference
implementations, "grads" runs directional finite-difference checks on each
composite module, "invariants" asserts the structural properties (identity at
initialization, selection policy, sampling locality, determinism).  Each
check returns (name, passed, detail); the CLI prints one line per check.
"""

from __future__ import annotations

import numpy as np

from . import aggregation, alignment, ssm
from .backbone import BackboneConfig, assemble_tokens, forward_backbone, init_vit_block, patch_embed, init_patch_embed, vit_block
from .config import RunConfig
from .gradcheck import directional_check
from .head import fuse, init_head, predict_maps
from .interaction import init_mfi, mfi_forward
from .nn import bilinear_sample, conv1d_depthwise, conv2d, softmax
from .tensor import Tensor, precision


Check = tuple[str, bool, str]


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def oracle_suite(seed: int = 0, cases: int = 25) -> list[Check]:
    rng = np.random.default_rng(seed)
    out: list[Check] = []

    worst = 0.0
    for _ in range(cases):
        m, k, n = rng.integers(1, 9, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        ref = np.zeros((m, n))
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for t in range(k):
                    acc += a[i, t] * b[t, j]
                ref[i, j] = acc
        got = (Tensor(a) @ Tensor(b)).data
        denom = max(1.0, np.abs(ref).max())
        worst = max(worst, np.abs(got - ref).max() / denom)
    out.append(("matmul vs triple loop", worst <= 1e-5, f"max rel err {worst:.2e}"))

    worst = 0.0
    for _ in range(cases):
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = int(rng.integers(3, 8)), int(rng.integers(3, 8))
        x = rng.standard_normal((c_in, h, w))
        kern = rng.standard_normal((c_out, c_in, 3, 3))
        ref = np.zeros((c_out, h, w))
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        for o in range(c_out):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for c in range(c_in):
                        for di in range(3):
                            for dj in range(3):
                                acc += kern[o, c, di, dj] * xp[c, i + di, j + dj]
                    ref[o, i, j] = acc
        got = conv2d(Tensor(x), Tensor(kern), mode="dense", padding=1).data
        worst = max(worst, np.abs(got - ref).max() / max(1.0, np.abs(ref).max()))
    out.append(("conv2d vs nested loops", worst <= 1e-5, f"max rel err {worst:.2e}"))

    worst = 0.0
    for _ in range(cases):
        length, width, dim = int(rng.integers(2, 12)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
        x = rng.standard_normal((length, dim))
        kern = rng.standard_normal((width, dim))
        ref = np.zeros_like(x)
        for t in range(length):
            for kk in range(width):
                src = t - (width - 1) + kk
                if src >= 0:
                    ref[t] += kern[kk] * x[src]
        got = conv1d_depthwise(Tensor(x), Tensor(kern)).data
        worst = max(worst, np.abs(got - ref).max() / max(1.0, np.abs(ref).max()))
    out.append(("conv1d causal vs loop", worst <= 1e-5, f"max rel err {worst:.2e}"))

    worst = 0.0
    for _ in range(cases):
        h, w, c = int(rng.integers(2, 7)), int(rng.integers(2, 7)), int(rng.integers(1, 4))
        grid = rng.standard_normal((h, w, c))
        pts = rng.uniform(-2, max(h, w) + 2, size=(10, 2))
        got = bilinear_sample(Tensor(grid), Tensor(pts)).data
        for p_idx in range(10):
            y = min(max(pts[p_idx, 0], 0.0), h - 1.0)
            x = min(max(pts[p_idx, 1], 0.0), w - 1.0)
            i0, j0 = int(np.floor(y)), int(np.floor(x))
            i0, j0 = min(i0, h - 2) if h > 1 else 0, min(j0, w - 2) if w > 1 else 0
            fy, fx = y - i0, x - j0
            ref = (
                grid[i0, j0] * (1 - fy) * (1 - fx)
                + grid[i0, j0 + 1] * (1 - fy) * fx
                + grid[i0 + 1, j0] * fy * (1 - fx)
                + grid[i0 + 1, j0 + 1] * fy * fx
            )
            worst = max(worst, np.abs(got[p_idx] - ref).max() / max(1.0, np.abs(ref).max()))
    out.append(("bilinear vs per-point", worst <= 1e-5, f"max rel err {worst:.2e}"))

    with precision("f64"):
        worst = 0.0
        for _ in range(cases):
            length = int(rng.integers(1, 65))
            dim = int(rng.integers(1, 9))
            state = int(rng.integers(1, 17))
            p = ssm.init_ssm(rng, dim, state)
            x = _rand(rng, length, dim)
            got = ssm.selective_scan(x, p, "forward").data
            ref = _scan_reference(x.data, p)
            worst = max(worst, np.abs(got - ref).max() / max(1.0, np.abs(ref).max()))
        out.append(("selective scan vs recurrence", worst <= 1e-10, f"max rel err {worst:.2e}"))

    s = softmax(_rand(rng, 6, 9), axis=1).data
    ok = np.all(s >= 0) and np.allclose(s.sum(axis=1), 1.0, atol=1e-6)
    out.append(("softmax slices sum to one", bool(ok), f"max |sum-1| {np.abs(s.sum(axis=1) - 1).max():.2e}"))
    return out


def _scan_reference(x: np.ndarray, p: ssm.SsmParams) -> np.ndarray:
    """Independent per-step recurrence in pure python floats."""
    import math

    delta = np.logaddexp(0.0, x @ p.w_delta.data + p.b_delta.data)
    bmat = x @ p.w_b.data
    cmat = x @ p.w_c.data
    amat = -np.exp(p.a_log.data)
    length, dim = x.shape
    state = amat.shape[1]
    y = np.zeros_like(x)
    h = [[0.0] * state for _ in range(dim)]
    for t in range(length):
        for d in range(dim):
            acc = 0.0
            for s_i in range(state):
                h[d][s_i] = math.exp(delta[t, d] * amat[d, s_i]) * h[d][s_i] + delta[t, d] * bmat[t, s_i] * x[t, d]
                acc += cmat[t, s_i] * h[d][s_i]
            y[t, d] = acc + p.skip.data[d] * x[t, d]
    return y


def grad_suite(seed: int = 0, draws: int = 4) -> list[Check]:
    """Directional FD checks per composite module (reduced draw count; the
    acceptance suite runs the full 20)."""
    out: list[Check] = []
    with precision("f64"):
        rng = np.random.default_rng(seed)
        for name, builder in module_grad_cases(rng):
            worst = 0.0
            for _ in range(draws):
                build_loss, leaves = builder()
                worst = max(worst, directional_check(build_loss, leaves, rng))
            out.append((f"grad {name}", worst <= 1e-4, f"max rel err {worst:.2e}"))
    return out


def module_grad_cases(rng: np.random.Generator):
    """(name, builder) pairs; each builder returns (build_loss, leaves)."""

    def mfi_case():
        p = init_mfi(rng, 16, 4, 4, n_blocks=2, conv_width=3)
        for w in (p.w_up_r, p.w_up_t):
            w.data = rng.standard_normal(w.data.shape) * 0.05
        f_r = Tensor(rng.standard_normal((6, 16)), requires_grad=True)
        f_t = Tensor(rng.standard_normal((6, 16)), requires_grad=True)
        probe_r = rng.standard_normal((6, 16))
        probe_t = rng.standard_normal((6, 16))
        from .init import trainable_params

        leaves = [f_r, f_t] + [t for _, t in trainable_params(p)]

        def build_loss():
            o_r, o_t = mfi_forward(f_r, f_t, p)
            return (o_r * Tensor(probe_r)).sum() + (o_t * Tensor(probe_t)).sum()

        return build_loss, leaves

    def cam_case():
        depth, c, n = 4, 8, 5
        router = aggregation.init_router(rng, depth, c)
        cam = aggregation.init_cam(rng, depth, c, 3)
        feats = [Tensor(rng.standard_normal((n, c)), requires_grad=True) for _ in range(depth)]
        probe = rng.standard_normal((n, c))
        scores = aggregation.route(feats, router).data
        selected = aggregation.select_experts(scores, 3)
        from .init import trainable_params

        leaves = feats + [t for _, t in trainable_params(cam)]

        def build_loss():
            agg = aggregation.aggregate(feats, selected, cam)
            return (agg * Tensor(probe)).sum()

        return build_loss, leaves

    def dam_case():
        c, heads, n_z, n_x = 8, 2, 9, 9
        p = alignment.init_dam(rng, c, heads, cue_count=1, magnitude=2.0, ffn_ratio=2)
        for head_ in p.offset_heads:
            # keep sampling points well away from integer lattice lines,
            # where bilinear interpolation has derivative kinks that central
            # differences would straddle
            head_.w.data = rng.standard_normal(head_.w.data.shape) * 0.004
            head_.b.data = rng.choice([-0.2, 0.2], size=2) + rng.uniform(-0.02, 0.02, size=2)
        for attn in (p.prop_attn, p.refine_attn):
            attn.wo.data = rng.standard_normal(attn.wo.data.shape) * 0.05
        p.ffn_w2.data = rng.standard_normal(p.ffn_w2.data.shape) * 0.05
        tensors = {
            name: Tensor(rng.standard_normal(shape), requires_grad=True)
            for name, shape in {
                "z0r": (n_z, c),
                "ztr": (n_z, c),
                "z0t": (n_z, c),
                "ztt": (n_z, c),
                "sr": (n_x, c),
                "st": (n_x, c),
            }.items()
        }
        probe_r = rng.standard_normal((n_x, c))
        probe_t = rng.standard_normal((n_x, c))
        from .init import trainable_params

        leaves = list(tensors.values()) + [t for _, t in trainable_params(p)]

        def build_loss():
            res = alignment.dam_forward(
                tensors["z0r"],
                tensors["ztr"],
                tensors["z0t"],
                tensors["ztt"],
                tensors["sr"],
                tensors["st"],
                alignment.CueState(cue=p.cue_init_r),
                alignment.CueState(cue=p.cue_init_t),
                p,
            )
            return (res.response_r * Tensor(probe_r)).sum() + (res.response_t * Tensor(probe_t)).sum()

        return build_loss, leaves

    def head_case():
        c, n = 8, 16
        p = init_head(rng, c, depth=2)
        h_r = Tensor(rng.standard_normal((n, c)), requires_grad=True)
        h_t = Tensor(rng.standard_normal((n, c)), requires_grad=True)
        probe = rng.standard_normal((4, 4))
        from .init import trainable_params

        leaves = [h_r, h_t] + [t for _, t in trainable_params(p)]

        def build_loss():
            score, offset, size = predict_maps(fuse(h_r, h_t, p), p, training=False)
            return (score * Tensor(probe)).sum() + (offset.sum() + size.sum()) * 0.25

        return build_loss, leaves

    def backbone_case():
        cfg = BackboneConfig(
            patch_size=4, embed_dim=8, depth=2, heads=2, template_side=8, search_side=12, cue_count=1
        )
        embed = init_patch_embed(rng, cfg)
        block = init_vit_block(rng, 8, 2, ffn_ratio=2)
        img = Tensor(rng.standard_normal((3, 8, 8)), requires_grad=True)
        probe = rng.standard_normal((cfg.n_template_tokens, 8))
        from .init import trainable_params

        leaves = [img] + [t for _, t in trainable_params(embed)] + [t for _, t in trainable_params(block)]

        def build_loss():
            tokens = patch_embed(img, embed, cfg, "template")
            return (vit_block(tokens, block) * Tensor(probe)).sum()

        return build_loss, leaves

    return [
        ("backbone block", backbone_case),
        ("interaction", mfi_case),
        ("aggregation", cam_case),
        ("alignment", dam_case),
        ("head", head_case),
    ]


def invariant_suite(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out: list[Check] = []

    # identity at init: zero up-projection leaves trunk features bit-identical
    cfg = RunConfig(patch_size=8, embed_dim=16, depth=2, heads=2, template_side=16, search_side=16,
                    mfi_layers=[1], compress_ratio=8, state_dim=4, experts_k=2)
    bc = cfg.backbone()
    blocks = [init_vit_block(rng, 16, 2) for _ in range(2)]
    mfi_p = init_mfi(rng, 16, 8, 4)
    tok_r = _rand(rng, 10, 16)
    tok_t = _rand(rng, 10, 16)
    with_mfi = forward_backbone(tok_r, tok_t, blocks, mfi_layers=(1,), mfi_params=[mfi_p])
    without = forward_backbone(tok_r, tok_t, blocks)
    same = all(
        np.array_equal(a.data, b.data) for a, b in zip(with_mfi[0] + with_mfi[1], without[0] + without[1])
    )
    out.append(("identity at init (zero W_up)", same, "bit-exact" if same else "features diverged"))

    # selection policy
    ok = True
    detail = ""
    for _ in range(300):
        depth = int(rng.integers(4, 13))
        k = int(rng.integers(2, depth + 1))
        scores = rng.standard_normal(depth)
        sel = aggregation.select_experts(scores, k)
        shifted = aggregation.select_experts(scores + 3.7, k)
        mono = aggregation.select_experts(np.tanh(scores) * 2.0, k)
        if not (sel[0] == 1 and sel[-1] == depth and len(sel) == k and sel == shifted == mono == sorted(sel)):
            ok = False
            detail = f"violated for depth={depth} k={k}"
            break
    out.append(("expert selection policy", ok, detail or "300 random score vectors"))

    # deformable sampling locality: outputs inside the hull of their 4 cells
    grid = _rand(rng, 5, 5, 3)
    refs = alignment.reference_grid(5, 5)
    offsets = Tensor(rng.uniform(-6, 6, size=(5, 5, 2)))
    sampled = alignment.deform_sample(grid, refs, offsets).data
    pts = (refs.data + offsets.data).reshape(-1, 2)
    ok = True
    for idx in range(pts.shape[0]):
        y = min(max(pts[idx, 0], 0.0), 4.0)
        x = min(max(pts[idx, 1], 0.0), 4.0)
        i0, j0 = min(int(y), 3), min(int(x), 3)
        cell = grid.data[i0 : i0 + 2, j0 : j0 + 2].reshape(4, 3)
        if not np.all(sampled[idx] <= cell.max(axis=0) + 1e-6) or not np.all(sampled[idx] >= cell.min(axis=0) - 1e-6):
            ok = False
            break
    out.append(("sampling convex-hull locality", ok, "25 random offsets"))

    # determinism of a full block under repeated evaluation
    x = _rand(rng, 7, 16)
    block = init_vit_block(rng, 16, 2)
    first = vit_block(x, block).data
    second = vit_block(x, block).data
    ok = np.array_equal(first, second)
    out.append(("re-evaluation determinism", ok, "bit-exact" if ok else "diverged"))
    return out


SUITES = {
    "oracles": oracle_suite,
    "grads": grad_suite,
    "invariants": invariant_suite,
}


def run_suite(name: str, seed: int = 0) -> list[Check]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}, expected one of {sorted(SUITES)}")
    return SUITES[name](seed=seed)
