"""Command-line interface.

Subcommands: init-weights, gen-data, track, overfit, bench, check, dump-maps.
Report-producing commands write CSV plus a rendered PNG figure side by side;
tracked-frame maps also go out as binary PGM.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import report
from .config import RunConfig, load_config
from .metrics import eval_metrics
from .model import init_model
from .synth import gen_sequence, load_sequence
from .tensor import set_default_dtype
from .tracker import run_tracker
from .train import train_overfit
from .verify import run_suite
from .weights import load_model, save_model


def _load_cfg(path: str | None, profile: str | None = None) -> RunConfig:
    if path:
        cfg = load_config(path)
    elif profile == "paper":
        cfg = RunConfig.paper()
    else:
        cfg = RunConfig.toy()
    set_default_dtype(cfg.dtype_mode)
    return cfg


def cmd_init_weights(args) -> int:
    cfg = _load_cfg(args.config, args.profile)
    params = init_model(cfg, seed=args.seed)
    save_model(args.out, params)
    print(f"wrote {args.out}")
    return 0


def cmd_gen_data(args) -> int:
    rec = gen_sequence(
        seed=args.seed,
        frames=args.frames,
        out_dir=args.out,
        frame_side=args.frame_side,
        misalignment_px=args.misalignment,
    )
    print(f"wrote {rec.n_frames} frame pairs to {rec.root}")
    return 0


def cmd_track(args) -> int:
    cfg = _load_cfg(args.config)
    sequence = load_sequence(args.sequence)
    params = init_model(cfg)
    load_model(args.weights, params)
    boxes, diags = run_tracker(cfg, params, sequence)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_boxes_csv(out / "boxes.csv", boxes)
    report.write_router_trace(out / "router_trace.csv", diags)
    metrics = eval_metrics(boxes, sequence.boxes)
    summary = {k: v for k, v in metrics.items() if not k.startswith("per_frame")}
    (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"tracked {len(boxes)} frames: mean IoU {metrics['mean_iou']:.3f}, PR@20 {metrics['pr20']:.3f}")
    return 0


def cmd_overfit(args) -> int:
    cfg = _load_cfg(args.config)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seq_dir = out / "sequence"
    sequence = gen_sequence(seed=cfg.seed, frames=args.frames, out_dir=seq_dir, misalignment_px=args.misalignment)
    params = init_model(cfg)
    result = train_overfit(cfg, params, sequence, steps=args.steps, out_dir=out)
    report.save_loss_figure(out / "loss_curve.png", result.losses)
    summary = {k: v for k, v in result.metrics.items() if not k.startswith("per_frame")}
    (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(
        f"{args.steps} steps: loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}; "
        f"mean IoU {result.metrics['mean_iou']:.3f}, PR@20 {result.metrics['pr20']:.3f}"
    )
    print(f"checkpoint: {result.checkpoint}")
    return 0


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    results = []
    for kernel in args.kernel.split(","):
        res = bench_mod.bench_scaling(kernel.strip(), sizes, repeats=args.repeats)
        results.append(res)
        print(f"{res.kernel}: exponent {res.exponent:.3f}")
        for n, med in zip(res.token_counts, res.medians):
            print(f"  {n:>6} tokens  {med * 1e3:9.3f} ms")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for res in results:
        max_reps = max(len(s) for s in res.samples)
        header = ["tokens", "median_s"] + [f"rep{i}_s" for i in range(max_reps)]
        report.write_csv(out / f"bench_{res.kernel}.csv", header, res.csv_rows())
    report.save_scaling_figure(out / "bench_scaling.png", results)
    print(f"wrote {out}/bench_*.csv and bench_scaling.png")
    return 0


def cmd_check(args) -> int:
    checks = run_suite(args.suite, seed=args.seed)
    failed = 0
    for name, ok, detail in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failed += 0 if ok else 1
    if failed:
        print(f"{failed} of {len(checks)} checks failed")
    return 1 if failed else 0


def cmd_dump_maps(args) -> int:
    cfg = _load_cfg(args.config)
    sequence = load_sequence(args.sequence)
    if not 2 <= args.frame <= sequence.n_frames:
        raise SystemExit(f"--frame must be in 2..{sequence.n_frames} (frame 1 is the init frame)")
    params = init_model(cfg)
    if args.weights:
        load_model(args.weights, params)
    _, diags = run_tracker(cfg, params, sequence, keep_frames=(args.frame,))
    entry = next(d for d in diags if d["frame"] == args.frame)
    files = report.dump_maps(entry, args.out, cfg.backbone().search_grid)
    for f in files:
        print(f"wrote {f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="duotrack", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-weights", help="initialize and save model weights")
    p.add_argument("--profile", choices=["toy", "paper"], default="toy")
    p.add_argument("--config", default=None, help="JSON config overriding the profile")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_init_weights)

    p = sub.add_parser("gen-data", help="generate a synthetic paired sequence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--frame-side", type=int, default=128)
    p.add_argument("--misalignment", type=float, default=2.0)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("track", help="run the tracker over a sequence")
    p.add_argument("--config", required=True)
    p.add_argument("--sequence", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("overfit", help="train on one generated sequence and evaluate")
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--misalignment", type=float, default=2.0)
    p.set_defaults(fn=cmd_overfit)

    p = sub.add_parser("bench", help="wall-time scaling of the interaction kernels")
    p.add_argument("--kernel", default="mfi,attn", help="comma list from {mfi, attn}")
    p.add_argument("--sizes", default="512,1024,2048,4096,8192")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", default="bench_out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("check", help="run a built-in verification suite")
    p.add_argument("--suite", choices=["oracles", "grads", "invariants"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("dump-maps", help="dump one tracked frame's maps")
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--sequence", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--out", default="maps_out")
    p.set_defaults(fn=cmd_dump_maps)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
