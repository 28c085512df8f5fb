"""Wall-time scaling benchmark for the interaction kernels.

Times one kernel over an ascending list of per-modality token counts and fits
a power law to (count, median seconds) in log-log space.  The scan-based
kernel should fit an exponent near 1; the dense cross-attention reference
carries the quadratic attention product and fits near 2.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .interaction import CrossAttentionRef, init_mfi, mfi_forward
from .tensor import Tensor


@dataclass
class BenchResult:
    kernel: str
    token_counts: list[int]
    medians: list[float]
    samples: list[list[float]]
    exponent: float

    def csv_rows(self):
        for n, med, reps in zip(self.token_counts, self.medians, self.samples):
            yield [n, f"{med:.6g}"] + [f"{r:.6g}" for r in reps]


def fit_power_law(counts, seconds) -> float:
    """Least-squares slope of log(time) against log(count)."""
    xs = np.log(np.asarray(counts, dtype=np.float64))
    ys = np.log(np.asarray(seconds, dtype=np.float64))
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)


def _time_call(fn, repeats: int) -> list[float]:
    fn()  # warm up allocations and caches
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def bench_scaling(
    kernel: str,
    token_counts,
    repeats: int = 3,
    embed_dim: int = 64,
    ratio: int = 8,
    state_dim: int = 8,
    seed: int = 0,
) -> BenchResult:
    counts = [int(n) for n in token_counts]
    if len(counts) < 4 or sorted(counts) != counts:
        raise ValueError(f"need >= 4 ascending token counts, got {counts}")
    rng = np.random.default_rng(seed)
    medians: list[float] = []
    samples: list[list[float]] = []
    if kernel == "mfi":
        params = init_mfi(rng, embed_dim, ratio, state_dim)
        for n in counts:
            f_r = Tensor(rng.standard_normal((n, embed_dim)).astype(np.float32))
            f_t = Tensor(rng.standard_normal((n, embed_dim)).astype(np.float32))
            reps = _time_call(lambda: mfi_forward(f_r, f_t, params), repeats)
            samples.append(reps)
            medians.append(float(np.median(reps)))
    elif kernel == "attn":
        ref = CrossAttentionRef.create(rng, embed_dim)
        for n in counts:
            f_r = rng.standard_normal((n, embed_dim)).astype(np.float32)
            f_t = rng.standard_normal((n, embed_dim)).astype(np.float32)
            reps = _time_call(lambda: ref(f_r, f_t), repeats)
            samples.append(reps)
            medians.append(float(np.median(reps)))
    else:
        raise ValueError(f"unknown kernel {kernel!r} (expected 'mfi' or 'attn')")
    return BenchResult(
        kernel=kernel,
        token_counts=counts,
        medians=medians,
        samples=samples,
        exponent=fit_power_law(counts, medians),
    )


# deliberately planted-complexity kernels used to validate the fit itself


def planted_linear(n: int) -> float:
    x = np.arange(n * 64, dtype=np.float64)
    return float(np.sin(x).sum())


def planted_quadratic(n: int) -> float:
    x = np.arange(n, dtype=np.float64) % 7
    g = x[:, None] * x[None, :]
    return float(g.sum())


def bench_planted(fn, token_counts, repeats: int = 3) -> BenchResult:
    counts = [int(n) for n in token_counts]
    medians = []
    samples = []
    for n in counts:
        reps = _time_call(lambda: fn(n), repeats)
        samples.append(reps)
        medians.append(float(np.median(reps)))
    return BenchResult(
        kernel=fn.__name__,
        token_counts=counts,
        medians=medians,
        samples=samples,
        exponent=fit_power_law(counts, medians),
    )
