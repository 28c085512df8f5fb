"""duotrack: desk-scale RGB/thermal tracking kernels with verification.

Library layout:

* :mod:`duotrack.tensor`, :mod:`duotrack.nn` -- numpy-backed tensors with a
  reverse-mode tape and the neural primitives;
* :mod:`duotrack.backbone` -- patch tokens, token layout, ViT trunk;
* :mod:`duotrack.ssm`, :mod:`duotrack.interaction` -- selective scans and the
  linear-complexity cross-modal interaction (plus the dense reference);
* :mod:`duotrack.aggregation` -- sparse per-layer expert selection;
* :mod:`duotrack.alignment` -- deformable sampling and cue propagation;
* :mod:`duotrack.head` -- response fusion and box decoding;
* harness: config, synth data, weights, tracker, train, bench, metrics,
  report, verify, cli.
"""

from .config import RunConfig, load_config
from .model import ModelParams, frame_forward, init_model
from .tensor import Tape, Tensor, backward, precision

__all__ = [
    "RunConfig",
    "load_config",
    "ModelParams",
    "frame_forward",
    "init_model",
    "Tensor",
    "Tape",
    "backward",
    "precision",
]

__version__ = "0.1.0"
