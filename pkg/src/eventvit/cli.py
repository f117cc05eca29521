"""Command-line interface.

Commands: voxelize, stats, sweep, train, bench, plus helpers to create
checkpoints (init), synthetic datasets (synth-data), and to compare the
kernel backends (bench-backends).  Domain and IO errors print one line to
stderr and exit with status 2.  Every command is deterministic given its
flags and seed.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import _backend, bench, costmodel, events, patches, train, vit, voxel
from .errors import EventVitError


def _read_any_recording(path: str, width: int | None,
                        height: int | None) -> events.EventRecording:
    """Binary recordings are self-describing; text ones need sensor dims."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == b"EVT1":
        return events.read_recording(path)
    if width is None or height is None:
        raise EventVitError(
            "text event files need --width and --height")
    with open(path, "r", encoding="utf-8") as fh:
        return events.parse_text_recording(fh, width, height)


def cmd_voxelize(args) -> int:
    rec = _read_any_recording(args.input, args.width, args.height)
    grid = voxel.build_voxel_grid(rec, args.channels)
    grid = voxel.resize_pad(grid, args.frame_height, args.frame_width)
    grid = voxel.normalize_nonzero(grid)
    voxel.write_grid_file(args.out, grid)
    print(f"wrote {args.out} shape={grid.shape[0]}x{grid.shape[1]}"
          f"x{grid.shape[2]} nonzero={int(np.count_nonzero(grid))}")
    return 0


def cmd_stats(args) -> int:
    ds = events.load_directory_dataset(args.dataset)
    sets = []
    for rec in ds.recordings:
        grid = voxel.build_voxel_grid(rec, args.channels)
        grid = voxel.resize_pad(grid, args.frame_height, args.frame_width)
        grid = voxel.normalize_nonzero(grid)
        sets.append(patches.select_active(grid, args.threshold,
                                          args.patch_size))
    hist = patches.active_histogram(sets, bins=args.bins)
    with open(args.out, "w", encoding="utf-8") as fh:
        patches.write_histogram_csv(hist, fh)
    print(f"frames={len(sets)} threshold={args.threshold:g} "
          f"mean_active_fraction={hist.mean_active_fraction:.6f}")
    print(f"wrote {args.out}")
    return 0


def _parse_threshold_range(spec: str) -> list[float]:
    try:
        low, high, step = (float(p) for p in spec.split(":"))
    except ValueError:
        raise EventVitError(
            f"thresholds must look like lo:hi:step, got {spec!r}") from None
    if step <= 0 or not 0.0 <= low <= high <= 1.0:
        raise EventVitError(f"bad threshold range {spec!r}")
    count = int(np.floor((high - low) / step + 1e-9)) + 1
    return [low + i * step for i in range(count)]


def cmd_sweep(args) -> int:
    params, cfg = vit.read_checkpoint(args.checkpoint)
    ds = events.load_directory_dataset(args.dataset)
    dataset = train.prepare_dataset(ds.recordings, cfg)
    thresholds = _parse_threshold_range(args.thresholds)
    lines = ["threshold,accuracy,mean_active_fraction,mean_macs"]
    for tau in thresholds:
        m = train.evaluate(params, dataset, cfg, tau)
        lines.append(f"{tau:.6g},{m.accuracy:.6f},"
                     f"{m.mean_active_fraction:.6f},{m.mean_macs:.1f}")
        print(f"threshold={tau:.3f} accuracy={m.accuracy:.4f} "
              f"active={m.mean_active_fraction:.4f} macs={m.mean_macs:.3e}")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = vit.CONFIG_PRESETS[args.config]
    tcfg = train.TrainConfig(
        epochs=args.epochs, lr=args.lr, weight_decay=args.weight_decay,
        threshold_mode=args.mode, threshold=args.threshold,
        mixed_low=args.mixed_low, mixed_high=args.mixed_high,
        augment=args.augment, seed=args.seed)
    ds = events.load_directory_dataset(args.dataset)
    train_set = train.prepare_dataset(ds.recordings, cfg)
    eval_set = None
    if args.eval_dataset:
        eval_ds = events.load_directory_dataset(args.eval_dataset)
        eval_set = train.prepare_dataset(eval_ds.recordings, cfg)
    params = vit.init_params(cfg, args.seed)
    rows = train.fit(params, train_set, cfg, tcfg, eval_set=eval_set,
                     eval_threshold=args.eval_threshold)
    for epoch, m in rows:
        print(f"epoch={epoch} split={m.split} loss={m.loss:.4f} "
              f"acc={m.accuracy:.4f} active={m.mean_active_fraction:.4f}")
    if args.metrics_out:
        with open(args.metrics_out, "w", encoding="utf-8") as fh:
            train.write_metrics_csv(fh, rows)
        print(f"wrote {args.metrics_out}")
    vit.write_checkpoint(args.out, params, cfg)
    print(f"wrote {args.out}")
    return 0


def cmd_bench(args) -> int:
    params, cfg = vit.read_checkpoint(args.checkpoint)
    ds = events.load_directory_dataset(args.dataset)
    if args.compare_dense:
        sparse, dense, speedup = bench.benchmark_speedup(
            params, cfg, ds.recordings, args.threshold, repeats=args.repeats)
        for tag, res in (("sparse", sparse), ("dense", dense)):
            print(f"{tag}: threshold={res.threshold:g} "
                  f"fps={res.frames_per_second:.3f} "
                  f"tokens={res.mean_tokens:.1f} "
                  f"active={res.mean_active_fraction:.4f} "
                  f"preprocess_s={res.preprocess_seconds:.3f}")
        print(f"speedup={speedup:.3f}")
    else:
        res = bench.benchmark_forward(params, cfg, ds.recordings,
                                      args.threshold, repeats=args.repeats)
        print(f"threshold={res.threshold:g} fps={res.frames_per_second:.3f} "
              f"tokens={res.mean_tokens:.1f} "
              f"active={res.mean_active_fraction:.4f} "
              f"preprocess_s={res.preprocess_seconds:.3f}")
    return 0


def cmd_init(args) -> int:
    cfg = vit.CONFIG_PRESETS[args.config]
    params = vit.init_params(cfg, args.seed)
    vit.write_checkpoint(args.out, params, cfg)
    print(f"wrote {args.out} ({params.num_parameters()} parameters)")
    return 0


def cmd_synth_data(args) -> int:
    recs = []
    for class_id in range(events.NUM_SYNTH_CLASSES):
        for i in range(args.per_class):
            recs.append(events.synth_recording(
                class_id, args.seed + i, width=args.width,
                height=args.height))
    names = [f"class{(i)}" for i in range(events.NUM_SYNTH_CLASSES)]
    events.save_directory_dataset(args.out, recs, names)
    print(f"wrote {len(recs)} recordings under {args.out}")
    return 0


def cmd_cost(args) -> int:
    cfg = vit.CONFIG_PRESETS[args.config]
    report = costmodel.cost_report(args.n, cfg, args.mode)
    print(report.to_json())
    print(f"crossover_n={costmodel.crossover_n(cfg)}")
    return 0


def cmd_bench_backends(args) -> int:
    results = bench.benchmark_backends(repeats=args.repeats)
    print(f"active backend: {_backend.BACKEND_NAME}")
    for kernel, times in results.items():
        parts = [f"{name}={seconds * 1e3:.3f}ms"
                 for name, seconds in times.items()]
        if "native" in times and "fallback" in times:
            parts.append(f"speedup={times['fallback'] / times['native']:.2f}x")
        print(f"{kernel}: " + " ".join(parts))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventvit",
        description="Sparse active-patch transformer pipeline for event data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="event file -> normalized frame dump")
    p.add_argument("--input", required=True)
    p.add_argument("--channels", type=int, default=9)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, help="sensor width (text input only)")
    p.add_argument("--height", type=int, help="sensor height (text input only)")
    p.add_argument("--frame-height", type=int, default=voxel.FRAME_HEIGHT)
    p.add_argument("--frame-width", type=int, default=voxel.FRAME_WIDTH)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("stats", help="active-patch histogram over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--threshold", type=float, default=0.35)
    p.add_argument("--out", required=True)
    p.add_argument("--channels", type=int, default=9)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--bins", type=int, default=18)
    p.add_argument("--frame-height", type=int, default=voxel.FRAME_HEIGHT)
    p.add_argument("--frame-width", type=int, default=voxel.FRAME_WIDTH)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sweep", help="accuracy/cost trade-off over thresholds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--thresholds", default="0:0.7:0.05",
                   help="lo:hi:step, inclusive")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train on a labelled dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--eval-dataset")
    p.add_argument("--config", choices=sorted(vit.CONFIG_PRESETS), default="toy")
    p.add_argument("--mode", choices=train.THRESHOLD_MODES, default="fixed")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--eval-threshold", type=float, default=None)
    p.add_argument("--mixed-low", type=float, default=0.0)
    p.add_argument("--mixed-high", type=float, default=0.7)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="forward-pass throughput")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--threshold", type=float, default=0.35)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--compare-dense", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("init", help="write a freshly initialized checkpoint")
    p.add_argument("--config", choices=sorted(vit.CONFIG_PRESETS), default="toy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("cost", help="closed-form cost report")
    p.add_argument("--config", choices=sorted(vit.CONFIG_PRESETS),
                   default="paper")
    p.add_argument("--n", type=int, default=180)
    p.add_argument("--mode", choices=costmodel.COUNTING_MODES,
                   default="paper")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("bench-backends",
                       help="compare compiled and fallback kernels")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench_backends)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (EventVitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
