"""Frame-by-frame tracking over a paired sequence.

The first frame is initialized from ground truth: template crops are taken
around the annotated box in both modalities and the predicted box equals the
annotation.  Every later frame crops a search region around the previous
prediction, runs the model, decodes the box back to frame coordinates,
propagates the alignment cues, and periodically refreshes the dynamic
template when the score peak is confident.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alignment import CueState, initial_cues
from .config import RunConfig
from .head import BBox, decode
from .model import FrameResult, ModelParams, frame_forward
from .synth import SequenceRecord, crop_resize, load_frame
from .tensor import Tensor, default_dtype


@dataclass
class TrackerState:
    z0: tuple[Tensor, Tensor]  # fixed initial template pair (rgb, tir)
    zt: tuple[Tensor, Tensor]  # dynamic template pair
    cue_r: CueState
    cue_t: CueState
    last_box: BBox
    template_src_side: float = 0.0  # source-pixel side of the current template crop
    frame: int = 1


def _to_tensor(arr: np.ndarray) -> Tensor:
    return Tensor(np.ascontiguousarray(arr, dtype=default_dtype()))


def template_crop(rgb: np.ndarray, tir: np.ndarray, box, config: RunConfig) -> tuple[Tensor, Tensor]:
    x, y, w, h = box
    center = (x + w / 2.0, y + h / 2.0)
    side = config.template_scale * float(np.sqrt(w * h))
    return (
        _to_tensor(crop_resize(rgb, center, side, config.template_side)),
        _to_tensor(crop_resize(tir, center, side, config.template_side)),
    )


def search_crop(rgb: np.ndarray, tir: np.ndarray, center, side: float, config: RunConfig):
    return (
        _to_tensor(crop_resize(rgb, center, side, config.search_side)),
        _to_tensor(crop_resize(tir, center, side, config.search_side)),
    )


def crop_box_to_frame(box: BBox, center, side: float, config: RunConfig, frame_side: int) -> BBox:
    """Map a box decoded in search-crop pixels back to frame pixels.

    Boxes live in continuous coordinates (a W-pixel frame spans [0, W]), so
    positions map linearly between crop and frame."""
    scale = side / config.search_side
    x0 = center[0] - side / 2.0
    y0 = center[1] - side / 2.0
    cx, cy = box.center
    fx = x0 + cx * scale
    fy = y0 + cy * scale
    w = min(box.w * scale, frame_side)
    h = min(box.h * scale, frame_side)
    x = min(max(fx - w / 2.0, 0.0), frame_side - w)
    y = min(max(fy - h / 2.0, 0.0), frame_side - h)
    return BBox(x=x, y=y, w=w, h=h, score=box.score)


def init_tracker(params: ModelParams, config: RunConfig, sequence: SequenceRecord) -> TrackerState:
    rgb, tir = load_frame(sequence, 1)
    gt0 = sequence.boxes[0]
    z0 = template_crop(rgb, tir, gt0, config)
    cue_r, cue_t = initial_cues(params.dam)
    return TrackerState(
        z0=z0,
        zt=z0,
        cue_r=cue_r,
        cue_t=cue_t,
        last_box=BBox(x=float(gt0[0]), y=float(gt0[1]), w=float(gt0[2]), h=float(gt0[3]), score=1.0),
        template_src_side=config.template_scale * float(np.sqrt(gt0[2] * gt0[3])),
    )


def run_tracker(
    config: RunConfig,
    params: ModelParams,
    sequence: SequenceRecord,
    keep_frames: tuple[int, ...] = (),
) -> tuple[list[BBox], list[dict]]:
    """Track the whole sequence; returns per-frame boxes and diagnostics.

    Frames listed in ``keep_frames`` (1-based) additionally stash the raw
    score map and alignment diagnostics for later dumping.
    """
    state = init_tracker(params, config, sequence)
    boxes = [state.last_box]
    diags: list[dict] = [{"frame": 1, "peak": 1.0, "initialized": True}]
    for t in range(2, sequence.n_frames + 1):
        rgb, tir = load_frame(sequence, t)
        prev = state.last_box
        center = prev.center
        # search side is tied to the template crop side (2x linear), so the
        # crop scale only changes when the dynamic template is refreshed
        side = (config.search_scale / config.template_scale) * state.template_src_side
        pair = search_crop(rgb, tir, center, side, config)
        result = frame_forward(params, config, state.z0, state.zt, pair, state.cue_r, state.cue_t)
        crop_box = decode(result.score, result.offset, result.size, config.search_side)
        box = crop_box_to_frame(crop_box, center, side, config, sequence.frame_side)
        state.cue_r = result.cue_r
        state.cue_t = result.cue_t
        state.last_box = box
        state.frame = t
        boxes.append(box)

        entry = {
            "frame": t,
            "peak": crop_box.score,
            "box": box,
            "selected_r": result.selected["r"],
            "selected_t": result.selected["t"],
            "router_r": result.router_scores["r"],
            "router_t": result.router_scores["t"],
            "cue_norm_r": float(np.linalg.norm(result.cue_r.cue.data)),
            "cue_norm_t": float(np.linalg.norm(result.cue_t.cue.data)),
        }
        if t in keep_frames:
            entry["score_map"] = result.score.data.copy()
            entry["gate_r"] = result.alignment.diagnostics["gate_r"]
            entry["gate_t"] = result.alignment.diagnostics["gate_t"]
            entry["offsets"] = result.alignment.diagnostics["offsets"]
        diags.append(entry)

        if (
            config.update_interval > 0
            and (t - 1) % config.update_interval == 0
            and crop_box.score > config.update_threshold
        ):
            state.zt = template_crop(rgb, tir, box.as_array(), config)
            state.template_src_side = config.template_scale * float(np.sqrt(box.w * box.h))
    return boxes, diags
