"""Parameter construction helpers and the named-parameter walker."""

from __future__ import annotations

import dataclasses

import numpy as np

from .tensor import Tensor, default_dtype


def normal_init(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    return Tensor((rng.standard_normal(shape) * std).astype(default_dtype()), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=default_dtype()), requires_grad=True)


def ones_param(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=default_dtype()), requires_grad=True)


def const_param(value: np.ndarray) -> Tensor:
    return Tensor(np.asarray(value, dtype=default_dtype()), requires_grad=True)


def buffer_param(value: np.ndarray) -> Tensor:
    """Non-trainable state that still serializes with the weights (BN stats)."""
    return Tensor(np.asarray(value, dtype=default_dtype()), requires_grad=False)


def walk_params(obj, prefix: str = ""):
    """Yield (name, Tensor) for every tensor reachable from a parameter bundle.

    Dataclass fields are visited in declaration order and lists by index, so
    the ordering is deterministic; names are dotted paths unique per bundle.
    """
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            child = getattr(obj, f.name)
            if child is None or isinstance(child, (int, float, str, bool)):
                continue
            yield from walk_params(child, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            yield from walk_params(child, f"{prefix}.{i}" if prefix else str(i))


def trainable_params(obj):
    return [(name, t) for name, t in walk_params(obj) if t.requires_grad]
