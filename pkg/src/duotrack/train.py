"""Overfit training loop for the synthetic harness.

One optimization step trains the full model on a single (templates, search)
crop pair: the search region is centered on the previous frame's annotation,
mirroring how inference re-centers on the previous prediction, and the target
is the current frame's annotated box mapped into crop coordinates.  The loss
is penalty-reduced focal on the score logits against a Gaussian bump, plus
L1 and generalized-IoU on the box at the target cell.  Deterministic given
the sequence and seed; no data augmentation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import initial_cues
from .config import RunConfig
from .init import trainable_params
from .metrics import eval_metrics
from .model import ModelParams, frame_forward
from .synth import SequenceRecord, load_frame
from .tensor import Tape, Tensor, absolute, maximum, minimum, sigmoid, softplus
from .tracker import run_tracker, search_crop, template_crop
from .weights import save_model


class Adam:
    def __init__(self, named_params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(t.data) for _, t in self.params]
        self.v = [np.zeros_like(t.data) for _, t in self.params]

    def zero_grad(self):
        for _, t in self.params:
            t.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for i, (_, t) in enumerate(self.params):
            if t.grad is None:
                continue
            g = t.grad
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            t.data = t.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


class Sgd:
    def __init__(self, named_params, lr: float = 1e-2):
        self.params = list(named_params)
        self.lr = lr

    def zero_grad(self):
        for _, t in self.params:
            t.grad = None

    def step(self):
        for _, t in self.params:
            if t.grad is not None:
                t.data = t.data - self.lr * t.grad


@dataclass
class BoxTargets:
    heat: np.ndarray  # [H, W] gaussian, exactly 1 at the peak cell
    cell: tuple[int, int]
    offset: np.ndarray  # (dx, dy) in [0, 1)
    size: np.ndarray  # (w, h) fractions of the search side


def make_targets(box_crop: np.ndarray, grid: int, search_side: int) -> BoxTargets:
    x, y, w, h = box_crop
    stride = search_side / grid
    cx = (x + w / 2.0) / stride
    cy = (y + h / 2.0) / stride
    j = int(np.clip(np.floor(cx), 0, grid - 1))
    i = int(np.clip(np.floor(cy), 0, grid - 1))
    jj, ii = np.meshgrid(np.arange(grid), np.arange(grid))
    sigma = max(0.8, float(np.sqrt(w * h)) / stride / 4.0)
    heat = np.exp(-((jj - j) ** 2 + (ii - i) ** 2) / (2.0 * sigma**2))
    heat[i, j] = 1.0
    return BoxTargets(
        heat=heat,
        cell=(i, j),
        offset=np.array([cx - j, cy - i]),
        size=np.array([w / search_side, h / search_side]),
    )


def focal_loss(score_logits: Tensor, heat: np.ndarray) -> Tensor:
    """Penalty-reduced focal loss on logits (CenterNet convention)."""
    z = score_logits
    p = sigmoid(z)
    log_p = -softplus(-z)
    log_1mp = -softplus(z)
    pos = (heat >= 1.0).astype(z.dtype)
    neg_w = ((1.0 - heat) ** 4) * (1.0 - pos)
    one = 1.0
    pos_term = ((one - p) * (one - p) * log_p * Tensor(pos)).sum()
    neg_term = (p * p * log_1mp * Tensor(neg_w)).sum()
    n_pos = max(float(pos.sum()), 1.0)
    return -(pos_term + neg_term) / n_pos


def _giou_loss(offset_cell, size_cell, tgt: BoxTargets, cell, search_side: int, grid: int) -> Tensor:
    i, j = cell
    stride = search_side / grid
    cx = (offset_cell[0] + float(j)) * stride
    cy = (offset_cell[1] + float(i)) * stride
    w = size_cell[0] * search_side
    h = size_cell[1] * search_side
    gx = (tgt.offset[0] + j) * stride
    gy = (tgt.offset[1] + i) * stride
    gw = tgt.size[0] * search_side
    gh = tgt.size[1] * search_side
    ax1, ax2 = cx - w * 0.5, cx + w * 0.5
    ay1, ay2 = cy - h * 0.5, cy + h * 0.5
    bx1, bx2 = gx - gw * 0.5, gx + gw * 0.5
    by1, by2 = gy - gh * 0.5, gy + gh * 0.5
    iw = maximum(minimum(ax2, bx2) - maximum(ax1, bx1), 0.0)
    ih = maximum(minimum(ay2, by2) - maximum(ay1, by1), 0.0)
    inter = iw * ih
    union = w * h + gw * gh - inter
    ew = maximum(ax2, bx2) - minimum(ax1, bx1)
    eh = maximum(ay2, by2) - minimum(ay1, by1)
    enclosure = ew * eh
    giou = inter / union - (enclosure - union) / enclosure
    return 1.0 - giou


def _l1(pred: Tensor, target: np.ndarray) -> Tensor:
    return absolute(pred - Tensor(target.astype(pred.dtype))).sum()


def frame_loss(result, targets: BoxTargets, search_side: int) -> Tensor:
    i, j = targets.cell
    grid = result.score.shape[0]
    focal = focal_loss(result.score_logits, targets.heat)
    off = result.offset[:, i, j]
    sz = result.size[:, i, j]
    l1 = _l1(off, targets.offset) + _l1(sz, targets.size)
    giou = _giou_loss(off, sz, targets, (i, j), search_side, grid)
    return focal + 5.0 * l1 + 2.0 * giou


def box_in_crop(gt_box: np.ndarray, center, side: float, config: RunConfig) -> np.ndarray:
    """Map a frame-coordinate box into search-crop pixel coordinates."""
    scale = config.search_side / side
    x0 = center[0] - side / 2.0
    y0 = center[1] - side / 2.0
    cx = (gt_box[0] + gt_box[2] / 2.0 - x0 + 0.5) * scale - 0.5
    cy = (gt_box[1] + gt_box[3] / 2.0 - y0 + 0.5) * scale - 0.5
    w = gt_box[2] * scale
    h = gt_box[3] * scale
    return np.array([cx - w / 2.0, cy - h / 2.0, w, h])


@dataclass
class OverfitResult:
    losses: list[float]
    metrics: dict
    checkpoint: Path
    initial_checkpoint: Path
    loss_csv: Path


def train_overfit(
    config: RunConfig,
    params: ModelParams,
    sequence: SequenceRecord,
    steps: int,
    learning_rate: float | None = None,
    out_dir=None,
) -> OverfitResult:
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    init_ckpt = out / "weights_init.cadw"
    save_model(init_ckpt, params)

    frames = [load_frame(sequence, t + 1) for t in range(sequence.n_frames)]
    lr = config.learning_rate if learning_rate is None else learning_rate
    optimizer = Adam(trainable_params(params), lr=lr)
    losses: list[float] = []
    cached_template = template_crop(frames[0][0], frames[0][1], sequence.boxes[0], config)

    for step in range(steps):
        value = overfit_step(params, config, frames, sequence.boxes, step, optimizer, cached_template)
        if not np.isfinite(value):
            raise RuntimeError(f"training diverged at step {step}: loss={value}")
        losses.append(value)

    ckpt = out / "weights_final.cadw"
    save_model(ckpt, params)
    loss_csv = out / "loss_curve.csv"
    with open(loss_csv, "w") as f:
        f.write("step,loss\n")
        for idx, value in enumerate(losses):
            f.write(f"{idx},{value:.10g}\n")

    boxes, _ = run_tracker(config, params, sequence)
    metrics = eval_metrics(boxes, sequence.boxes)
    return OverfitResult(
        losses=losses,
        metrics=metrics,
        checkpoint=ckpt,
        initial_checkpoint=init_ckpt,
        loss_csv=loss_csv,
    )


def overfit_step(params, config, frames, boxes, step, optimizer, z0_pair) -> float:
    """One optimization step: frame ``1 + step mod (F-1)``, search centered
    on the previous frame's annotation with a small deterministic jitter so
    inference-time drift of the crop window stays in-distribution."""
    n = len(frames)
    t = 1 + (step % (n - 1))
    prev_box = boxes[t - 1]
    cur_box = boxes[t]
    jitter = np.random.default_rng((config.seed + 1) * 1_000_003 + step)
    side = config.search_scale * float(np.sqrt(boxes[0][2] * boxes[0][3]))
    shift = jitter.uniform(-config.center_jitter, config.center_jitter, size=2) * side
    center = (
        prev_box[0] + prev_box[2] / 2.0 + shift[0],
        prev_box[1] + prev_box[3] / 2.0 + shift[1],
    )
    rgb, tir = frames[t]
    pair = search_crop(rgb, tir, center, side, config)
    targets = make_targets(box_in_crop(cur_box, center, side, config), config.backbone().search_grid, config.search_side)
    cue_r, cue_t = initial_cues(params.dam)
    optimizer.zero_grad()
    with Tape() as tape:
        result = frame_forward(params, config, z0_pair, z0_pair, pair, cue_r, cue_t, training=True)
        loss = frame_loss(result, targets, config.search_side)
        tape.backward(loss)
    optimizer.step()
    return loss.item()


def compute_frame_loss(params: ModelParams, config: RunConfig, sequence: SequenceRecord, step: int = 0) -> float:
    """Loss of one training step's forward pass without updating anything;
    used to validate checkpoint round trips."""
    frames = [load_frame(sequence, t + 1) for t in range(sequence.n_frames)]
    n = len(frames)
    t = 1 + (step % (n - 1))
    prev_box = sequence.boxes[t - 1]
    cur_box = sequence.boxes[t]
    center = (prev_box[0] + prev_box[2] / 2.0, prev_box[1] + prev_box[3] / 2.0)
    side = config.search_scale * float(np.sqrt(prev_box[2] * prev_box[3]))
    pair = search_crop(frames[t][0], frames[t][1], center, side, config)
    z0_pair = template_crop(frames[0][0], frames[0][1], sequence.boxes[0], config)
    targets = make_targets(box_in_crop(cur_box, center, side, config), config.backbone().search_grid, config.search_side)
    cue_r, cue_t = initial_cues(params.dam)
    result = frame_forward(params, config, z0_pair, z0_pair, pair, cue_r, cue_t, training=False)
    return frame_loss(result, targets, config.search_side).item()
