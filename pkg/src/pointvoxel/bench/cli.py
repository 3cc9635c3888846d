"""Command line entry point: ``pointvoxel <command> ...``."""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from ..core import read_boxes_csv, read_pcb, write_boxes_csv, write_pcb
from .benchmark import DEFAULT_SIZES, BallQueryBenchConfig, KnnBenchConfig, bench_ball_query, bench_knn
from .config import ConfigError, PipelineConfig, load_config
from .pipeline import run_pipeline
from .scene import SceneSpec, gen_scene


def _sizes(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from exc


def cmd_gen_scene(args) -> int:
    spec = load_config(args.spec, SceneSpec) if args.spec else SceneSpec()
    scene = gen_scene(spec)
    write_pcb(args.out, scene.cloud)
    boxes_path = args.boxes or f"{args.out}.boxes.csv"
    write_boxes_csv(boxes_path, scene.boxes)
    print(f"wrote {scene.cloud.n} points to {args.out} and {len(scene.boxes)} boxes to {boxes_path}")
    return 0


def cmd_run_pipeline(args) -> int:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    cloud = read_pcb(args.scene)
    boxes = read_boxes_csv(args.boxes)
    result = run_pipeline(cloud, boxes, cfg)
    with open(args.report, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in result.diagnostics.items():
            w.writerow([k, v])
    if args.features:
        np.save(args.features, result.features)
    d = result.diagnostics
    print(f"{d['references']} references, {d['time_total']:.2f}s; report -> {args.report}")
    return 0


def cmd_bench_ball_query(args) -> int:
    cfg = BallQueryBenchConfig(
        k=args.k, radius=args.radius, kernel=args.kernel, queries=args.queries,
        repeats=args.repeats, seed=args.seed, mode=args.mode,
    )
    report = bench_ball_query(args.sizes, cfg)
    report.write_csv(args.report)
    for r in report.rows:
        print(f"n={r['n']:>7}  brute {r['time_brute_s'] * 1e3:8.2f} ms  "
              f"rv {r['time_rv_query_s'] * 1e3:7.2f} ms  speedup {r['speedup']:7.1f}x  "
              f"inspected/query {r['rv_inspected_per_query']:.0f}")
    return 0


def cmd_bench_knn(args) -> int:
    cfg = KnnBenchConfig(k=args.k, window=args.window, repeats=args.repeats, seed=args.seed)
    modes = ("brute", "voxel", "conquer") if args.mode == "all" else (args.mode,)
    report = bench_knn(args.sizes, modes, cfg)
    report.write_csv(args.report)
    for r in report.rows:
        print(f"n={r['n']:>7}  {r['mode']:<8} {r['time_s'] * 1e3:8.2f} ms  window scans {r['window_scans']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pointvoxel", description="Point-voxel pipeline tools and benchmarks")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="write a seeded synthetic scene")
    g.add_argument("--spec", help="key=value scene spec file (defaults used when omitted)")
    g.add_argument("--out", required=True, help="output PCB v1 file")
    g.add_argument("--boxes", help="output boxes CSV (default: <out>.boxes.csv)")
    g.set_defaults(func=cmd_gen_scene)

    r = sub.add_parser("run-pipeline", help="run the end-to-end pipeline on a scene")
    r.add_argument("--scene", required=True)
    r.add_argument("--boxes", required=True)
    r.add_argument("--config")
    r.add_argument("--report", required=True)
    r.add_argument("--features", help="optional .npy dump of fused query features")
    r.set_defaults(func=cmd_run_pipeline)

    b = sub.add_parser("bench-ball-query", help="range-image vs exhaustive ball query")
    b.add_argument("--sizes", type=_sizes, default=list(DEFAULT_SIZES))
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--report", required=True)
    b.add_argument("--k", type=int, default=32)
    b.add_argument("--radius", type=float, default=0.8)
    b.add_argument("--kernel", type=int, default=16)
    b.add_argument("--queries", type=int, default=1024)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--mode", choices=["random", "sequential"], default="random")
    b.set_defaults(func=cmd_bench_ball_query)

    k = sub.add_parser("bench-knn", help="brute vs voxel vs conquer-fetch KNN")
    k.add_argument("--mode", choices=["brute", "voxel", "conquer", "all"], default="all")
    k.add_argument("--sizes", type=_sizes, default=[50_000])
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--k", type=int, default=8)
    k.add_argument("--window", type=int, default=2)
    k.add_argument("--repeats", type=int, default=3)
    k.add_argument("--report", required=True)
    k.set_defaults(func=cmd_bench_knn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
