"""Central finite-difference gradient checking.

Two modes: ``elementwise`` perturbs every scalar of every leaf (used on the
small primitive tests), ``directional`` compares the directional derivative
<grad, d> against a symmetric difference along random unit directions over
all leaves jointly (used on composite modules, where full elementwise
differencing would be far too slow).  Relative error per comparison is
|analytic - numeric| / max(1, |analytic|, |numeric|); run these under
``precision("f64")`` with the default h = 1e-4.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor


def _loss_value(build_loss) -> float:
    return float(build_loss().data)


def analytic_grads(build_loss, leaves: list[Tensor]) -> list[np.ndarray]:
    with Tape() as tape:
        loss = build_loss()
        tape.backward(loss)
    # a leaf the tape never saw has no path to the loss: exactly-zero gradient
    return [leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def directional_check(
    build_loss,
    leaves: list[Tensor],
    rng: np.random.Generator,
    n_directions: int = 4,
    h: float = 1e-4,
) -> float:
    """Max relative error between <grad, d> and the central difference."""
    grads = analytic_grads(build_loss, leaves)
    saved = [leaf.data.copy() for leaf in leaves]
    worst = 0.0
    for _ in range(n_directions):
        dirs = [rng.standard_normal(leaf.data.shape) for leaf in leaves]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        for leaf, base, d in zip(leaves, saved, dirs):
            leaf.data = base + h * d
        up = _loss_value(build_loss)
        for leaf, base, d in zip(leaves, saved, dirs):
            leaf.data = base - h * d
        down = _loss_value(build_loss)
        for leaf, base in zip(leaves, saved):
            leaf.data = base
        numeric = (up - down) / (2.0 * h)
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        worst = max(worst, err)
    return worst


def elementwise_check(build_loss, leaves: list[Tensor], h: float = 1e-4) -> float:
    """Max relative error over every scalar entry of every leaf."""
    grads = analytic_grads(build_loss, leaves)
    worst = 0.0
    for leaf, grad in zip(leaves, grads):
        base = leaf.data.copy()
        flat = base.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            work = base.copy().reshape(-1)
            work[idx] = orig + h
            leaf.data = work.reshape(base.shape)
            up = _loss_value(build_loss)
            work[idx] = orig - h
            leaf.data = work.reshape(base.shape)
            down = _loss_value(build_loss)
            leaf.data = base
            numeric = (up - down) / (2.0 * h)
            analytic = grad.reshape(-1)[idx]
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst
