"""Synthetic paired RGB/TIR sequences, netpbm frame I/O, and crop utilities.

A sequence is a textured bright square drifting over a structured-noise
background.  The RGB stream renders the intensity texture in color; the TIR
stream renders an inverted-contrast scene with the target as a hot blob and
is translated by a slowly varying misalignment field, emulating sensor
parallax.  Everything is deterministic per seed.

On disk: RGB frames are binary PPM (P6), TIR frames binary PGM (P5), ground
truth is ``gt.txt`` with lines ``frame x y w h`` in pixels, top-left origin.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


# -- netpbm ------------------------------------------------------------------


def write_ppm(path, img: np.ndarray) -> None:
    """Binary P6, maxval 255; img is [H, W, 3] uint8."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"write_ppm expects [H, W, 3] uint8, got {img.shape} {img.dtype}")
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


def write_pgm(path, img: np.ndarray) -> None:
    """Binary P5, maxval 255; img is [H, W] uint8."""
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"write_pgm expects [H, W] uint8, got {img.shape} {img.dtype}")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(magic):
        raise ValueError(f"{path}: expected {magic.decode()} header")
    # header = magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = tokens
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    need = width * height * channels
    buf = data[pos : pos + need]
    if len(buf) != need:
        raise ValueError(f"{path}: truncated payload ({len(buf)} of {need} bytes)")
    arr = np.frombuffer(buf, dtype=np.uint8)
    return arr.reshape(height, width, channels) if channels > 1 else arr.reshape(height, width)


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)


# -- sequence generation -------------------------------------------------------


@dataclass
class SequenceRecord:
    root: Path
    n_frames: int
    frame_side: int
    boxes: np.ndarray  # [F, 4] float, RGB-frame coordinates
    shifts: np.ndarray  # [F, 2] TIR misalignment (dx, dy) in pixels

    def rgb_path(self, frame: int) -> Path:
        return self.root / f"{frame:04d}_rgb.ppm"

    def tir_path(self, frame: int) -> Path:
        return self.root / f"{frame:04d}_tir.pgm"


def _background(rng: np.random.Generator, side: int):
    """Analytic sinusoid mixture so the TIR view can be sampled at shifted
    coordinates exactly; returns a closure (xx, yy) -> field in [0, 1]."""
    n_waves = 4
    freqs = rng.uniform(0.02, 0.08, size=n_waves)
    angles = rng.uniform(0, np.pi, size=n_waves)
    phases = rng.uniform(0, 2 * np.pi, size=n_waves)
    amps = rng.uniform(0.5, 1.0, size=n_waves)

    def field(xx, yy):
        acc = np.zeros_like(xx, dtype=np.float64)
        for f, a, ph, am in zip(freqs, angles, phases, amps):
            acc += am * np.sin(2 * np.pi * f * (xx * np.cos(a) + yy * np.sin(a)) + ph)
        return (acc - acc.min()) / (acc.max() - acc.min() + 1e-9)

    return field


def _checker(rng: np.random.Generator, size: int) -> np.ndarray:
    cell = max(2, size // 5)
    yy, xx = np.mgrid[0:size, 0:size]
    board = ((xx // cell + yy // cell) % 2).astype(np.float64)
    return 0.55 + 0.45 * board + rng.normal(0, 0.02, (size, size))


def gen_sequence(
    seed: int,
    frames: int,
    out_dir,
    frame_side: int = 128,
    motion_model: str = "linear",
    misalignment_px: float = 2.0,
    target_size: int = 0,
) -> SequenceRecord:
    """Render a paired sequence to ``out_dir`` and return its record."""
    if frames < 2:
        raise ValueError("a sequence needs at least 2 frames")
    if motion_model not in ("linear", "static"):
        raise ValueError(f"unknown motion model {motion_model!r}")
    rng = np.random.default_rng(seed)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    size = target_size or max(12, frame_side // 6)
    field = _background(rng, frame_side)
    texture = np.clip(_checker(rng, size), 0.0, 1.0)
    tint = rng.uniform(0.75, 1.0, size=3)

    pos = np.array(
        [
            rng.uniform(size, frame_side - 2 * size),
            rng.uniform(size, frame_side - 2 * size),
        ]
    )
    vel = rng.uniform(1.0, 2.2, size=2) * rng.choice([-1.0, 1.0], size=2)
    if motion_model == "static":
        vel[:] = 0.0
    phase = rng.uniform(0, 2 * np.pi, size=2)

    yy, xx = np.mgrid[0:frame_side, 0:frame_side].astype(np.float64)
    boxes = np.zeros((frames, 4))
    shifts = np.zeros((frames, 2))
    gt_lines = []
    for t in range(frames):
        shift = misalignment_px * np.array(
            [np.sin(2 * np.pi * t / 40.0 + phase[0]), np.cos(2 * np.pi * t / 40.0 + phase[1])]
        )
        shifts[t] = shift
        x0, y0 = int(round(pos[0])), int(round(pos[1]))
        boxes[t] = [x0, y0, size, size]
        gt_lines.append(f"{t + 1} {x0} {y0} {size} {size}")

        rgb = np.empty((frame_side, frame_side, 3), dtype=np.float64)
        base = 0.12 + 0.33 * field(xx, yy)
        noise = rng.normal(0, 0.015, (frame_side, frame_side))
        for ch in range(3):
            rgb[:, :, ch] = base * (0.8 + 0.2 * tint[ch]) + noise
        rgb[y0 : y0 + size, x0 : x0 + size] = (texture[:, :, None] * tint[None, None, :])

        # TIR: inverted-contrast scene translated by the misalignment field
        tir = 0.45 - 0.30 * field(xx - shift[0], yy - shift[1]) + rng.normal(0, 0.015, (frame_side, frame_side))
        tx = x0 + shift[0]
        ty = y0 + shift[1]
        cy, cx = ty + size / 2.0, tx + size / 2.0
        r2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / (0.55 * size) ** 2
        tir = np.maximum(tir, np.exp(-r2) * 0.95)

        write_ppm(root / f"{t + 1:04d}_rgb.ppm", (np.clip(rgb, 0, 1) * 255).round().astype(np.uint8))
        write_pgm(root / f"{t + 1:04d}_tir.pgm", (np.clip(tir, 0, 1) * 255).round().astype(np.uint8))

        pos = pos + vel
        for axis in range(2):
            if pos[axis] < 1 or pos[axis] + size > frame_side - 1:
                vel[axis] = -vel[axis]
                pos[axis] = np.clip(pos[axis], 1, frame_side - size - 1)

    (root / "gt.txt").write_text("\n".join(gt_lines) + "\n")
    return SequenceRecord(root=root, n_frames=frames, frame_side=frame_side, boxes=boxes, shifts=shifts)


def load_sequence(path) -> SequenceRecord:
    root = Path(path)
    gt = root / "gt.txt"
    if not gt.exists():
        raise FileNotFoundError(f"no gt.txt under {root}")
    rows = []
    for line in gt.read_text().splitlines():
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"malformed gt line: {line!r}")
        rows.append([float(v) for v in parts[1:]])
    boxes = np.array(rows)
    first = read_ppm(root / "0001_rgb.ppm")
    return SequenceRecord(
        root=root,
        n_frames=len(rows),
        frame_side=first.shape[0],
        boxes=boxes,
        shifts=np.zeros((len(rows), 2)),
    )


def load_frame(record: SequenceRecord, frame: int) -> tuple[np.ndarray, np.ndarray]:
    """Frame images as float [3, H, W] in [0, 1]; TIR replicated to 3 channels."""
    rgb = read_ppm(record.rgb_path(frame)).astype(np.float64) / 255.0
    tir = read_pgm(record.tir_path(frame)).astype(np.float64) / 255.0
    if rgb.shape[:2] != tir.shape[:2]:
        raise ValueError(f"frame {frame}: RGB {rgb.shape[:2]} and TIR {tir.shape[:2]} sizes differ")
    return rgb.transpose(2, 0, 1), np.repeat(tir[None], 3, axis=0)


# -- crops ---------------------------------------------------------------------


def crop_resize(img: np.ndarray, center: tuple[float, float], side: float, out_side: int) -> np.ndarray:
    """Square crop of a [C, H, W] image around ``center``, bilinear-resized to
    ``out_side``; coordinates outside the frame replicate the border."""
    c, h, w = img.shape
    cx, cy = center
    scale = side / out_side
    coords = (np.arange(out_side) + 0.5) * scale - 0.5
    xs = np.clip(cx - side / 2.0 + coords, 0, w - 1)
    ys = np.clip(cy - side / 2.0 + coords, 0, h - 1)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.minimum(x0, w - 2) if w > 1 else x0
    y0 = np.minimum(y0, h - 2) if h > 1 else y0
    fx = (xs - x0)[None, None, :]
    fy = (ys - y0)[:, None][None, :, :]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    p00 = img[:, y0[:, None], x0[None, :]]
    p01 = img[:, y0[:, None], x1[None, :]]
    p10 = img[:, y1[:, None], x0[None, :]]
    p11 = img[:, y1[:, None], x1[None, :]]
    top = p00 * (1 - fx) + p01 * fx
    bot = p10 * (1 - fx) + p11 * fx
    return top * (1 - fy) + bot * fy
