"""Delimited outputs and rendered figures for the harness.

Every report path writes machine-readable CSV next to a matplotlib PNG of the
same data; per-frame maps additionally go out as binary PGM graymaps for
tooling that reads netpbm.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .synth import write_pgm


def write_csv(path, header, rows) -> None:
    with open(path, "w") as f:
        f.write(",".join(str(h) for h in header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")


def quantize_map(arr: np.ndarray, normalize: bool = False) -> np.ndarray:
    """Map a 2-D float array to uint8 for PGM output.

    Score maps are already in [0, 1] and quantize directly; unbounded maps
    (gates) pass ``normalize=True`` for a min-max rescale first.
    """
    a = np.asarray(arr, dtype=np.float64)
    if normalize:
        lo, hi = a.min(), a.max()
        a = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    return np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)


def save_map_pgm(path, arr: np.ndarray, normalize: bool = False) -> None:
    write_pgm(path, quantize_map(arr, normalize=normalize))


def save_map_png(path, arr: np.ndarray, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(arr, cmap="viridis", interpolation="nearest")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_figure(path, losses) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(losses, lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_scaling_figure(path, results) -> None:
    """Log-log wall time vs token count for one or more bench results."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for res in results:
        ax.loglog(res.token_counts, res.medians, "o-", label=f"{res.kernel} (slope {res.exponent:.2f})")
    ax.set_xlabel("tokens per modality")
    ax.set_ylabel("median seconds")
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def dump_maps(frame_diag: dict, out_dir, search_grid: int) -> list[Path]:
    """Write one tracked frame's score map, gate maps, and router trace.

    ``frame_diag`` is a diagnostics entry from the tracker with the optional
    map payloads present (the frame must have been in ``keep_frames``).
    Returns the list of files written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "score_map" not in frame_diag:
        raise ValueError(f"frame {frame_diag.get('frame')} carries no map payload")
    t = frame_diag["frame"]
    written: list[Path] = []

    score = frame_diag["score_map"]
    p = out / f"frame{t:04d}_score.pgm"
    save_map_pgm(p, score)
    written.append(p)
    p = out / f"frame{t:04d}_score.png"
    save_map_png(p, score, title=f"score, frame {t}")
    written.append(p)

    for modality in ("r", "t"):
        gate = np.asarray(frame_diag[f"gate_{modality}"]).reshape(search_grid, search_grid)
        p = out / f"frame{t:04d}_gate_{modality}.pgm"
        save_map_pgm(p, gate, normalize=True)
        written.append(p)
        p = out / f"frame{t:04d}_gate_{modality}.png"
        save_map_png(p, gate, title=f"gate {modality.upper()}, frame {t}")
        written.append(p)

    rows = []
    for modality in ("r", "t"):
        scores = frame_diag[f"router_{modality}"]
        chosen = set(frame_diag[f"selected_{modality}"])
        for layer, value in enumerate(scores, start=1):
            rows.append([t, modality, layer, f"{float(value):.6g}", int(layer in chosen)])
    p = out / f"frame{t:04d}_router.csv"
    write_csv(p, ["frame", "modality", "layer", "score", "selected"], rows)
    written.append(p)
    return written


def write_router_trace(path, diags) -> None:
    """CSV trace (frame, modality, selected layers) across a whole run."""
    rows = []
    for entry in diags:
        if "selected_r" not in entry:
            continue
        for modality in ("r", "t"):
            layers = " ".join(str(l) for l in entry[f"selected_{modality}"])
            rows.append([entry["frame"], modality, layers])
    write_csv(path, ["frame", "modality", "selected_layers"], rows)


def write_boxes_csv(path, boxes) -> None:
    rows = [
        [i + 1, f"{b.x:.3f}", f"{b.y:.3f}", f"{b.w:.3f}", f"{b.h:.3f}", f"{b.score:.5f}"]
        for i, b in enumerate(boxes)
    ]
    write_csv(path, ["frame", "x", "y", "w", "h", "score"], rows)
