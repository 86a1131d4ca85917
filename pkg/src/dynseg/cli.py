"""Command-line entry points: ``dynseg <command> ...``.

Exit codes: 0 success, 1 configuration or I/O error, 2 tracking lost.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .bench import bench_csv, run_bench
from .errors import DynsegError
from .evaluation import (MetricReport, ate_errors, read_tum_trajectory, rpe_errors,
                         write_tum_trajectory)
from .geometry import PoseSE3
from .graph import (RansacParams, build_graph_arrays, classify_components, confirm_dynamic,
                    connected_components, dump_graph, mark_broken)
from .localmap import Keyframe
from .pipeline import RunConfig, run_pipeline, run_sequence
from .simulator import PRESETS, generate_scene, preset, read_observations

log = logging.getLogger("dynseg")


def _read_input(path: Optional[str]) -> str:
    if path is None or path == "-":
        return sys.stdin.read()
    return Path(path).read_text()


def _write_output(text: str, path: Optional[str]):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _parse_delta(text: str):
    """``5`` -> (5, frames); ``1s`` or ``0.5s`` -> (seconds)."""
    text = text.strip()
    if text.endswith("s"):
        return float(text[:-1]), "seconds"
    return int(text), "frames"


def _run_config(args) -> RunConfig:
    base = Path(args.config).read_text() if args.config else ""
    overrides = dict(kv.split("=", 1) for kv in (args.set or []))
    if args.seg is not None:
        overrides["segmentation"] = args.seg
    if args.serial:
        overrides["serial"] = "on"
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["output_dir"] = args.out
    if getattr(args, "tracks", None) not in (None, "-"):
        overrides["tracks"] = args.tracks
    return RunConfig.from_kv(base, **overrides)


def cmd_simulate(args) -> int:
    overrides = {}
    if args.frames is not None:
        overrides["n_frames"] = args.frames
    if args.camera_path is not None:
        overrides["camera_path"] = args.camera_path
    cfg = preset(args.preset, seed=args.seed, **overrides)
    cfg.validate()
    text, gt = generate_scene(cfg)
    _write_output(text, args.output)
    if args.gt_tum:
        Path(args.gt_tum).write_text(
            write_tum_trajectory(gt.trajectory, [f"preset={args.preset} seed={args.seed}"]))
    return 0


def cmd_run(args) -> int:
    cfg = _run_config(args)
    text = None if cfg.tracks else sys.stdin.read()
    code = run_pipeline(cfg, text)
    if code != 1:
        metrics = Path(cfg.output_dir) / "metrics.txt"
        sys.stderr.write(metrics.read_text())
    return code


def _frame(frames, frame_id: int):
    for f in frames:
        if f.frame_id == frame_id:
            return f
    raise DynsegError(f"frame {frame_id} not in the tracks file")


def _single_pass(args, frames, cfg: RunConfig):
    """Delaunay graph of frame ``--ref`` checked against frame ``--frame`` (camera frames)."""
    intr, noise = cfg.intrinsics, cfg.noise
    ref = Keyframe(args.ref, 0.0, PoseSE3.identity(), _frame(frames, args.ref))
    ids, uv, pc, cov = ref.camera_points(intr, noise)
    order = np.argsort(ids, kind="stable")
    graph = build_graph_arrays(ids[order], uv[order], pc[order], cov[order])
    if args.frame is None:
        return graph, None
    cur = Keyframe(args.frame, 0.0, PoseSE3.identity(), _frame(frames, args.frame))
    cur_pts = cur.world_frame_points(intr, noise)
    # the rotation consensus absorbs the unknown rotation between the two frames
    graph, _ = mark_broken(graph, cur_pts, cfg.chi_threshold,
                           RansacParams(cfg.graph_ransac_iterations, cfg.graph_min_fraction),
                           cfg.seed, mode=cfg.residual_mode)
    labeling = classify_components(connected_components(graph))
    return graph, confirm_dynamic(labeling, graph)


def cmd_segment(args) -> int:
    cfg = _run_config(args)
    frames = read_observations(_read_input(args.tracks))
    if args.frame is None:
        args.frame = frames[-1].frame_id
    graph, labeling = _single_pass(args, frames, cfg)
    labels = labeling.label_of()
    lines = [f"# {cfg.header()[0]} ref={args.ref} frame={args.frame}"]
    lines += [f"{pid} {labels.get(pid, 'unknown')}" for pid in graph.vertices.tolist()]
    _write_output("\n".join(lines) + "\n", args.output)
    n_dyn = sum(1 for v in labels.values() if v == "dynamic")
    sys.stderr.write(f"points={graph.n_vertices} edges={graph.n_edges} "
                     f"broken={int((~graph.consistent).sum())} dynamic={n_dyn}\n")
    return 0


def cmd_dump_graph(args) -> int:
    cfg = _run_config(args)
    frames = read_observations(_read_input(args.tracks))
    graph, _ = _single_pass(args, frames, cfg)
    _write_output(dump_graph(graph), args.output)
    return 0


def cmd_dump_map(args) -> int:
    cfg = _run_config(args)
    frames = read_observations(_read_input(args.tracks))
    result = run_sequence(frames, cfg)
    lines = [f"# {cfg.header()[0]}"]
    for pid in sorted(result.local_map.points):
        p = result.local_map.points[pid]
        x, y, z = p.position
        lines.append(f"MP {pid} {x:.9g} {y:.9g} {z:.9g} {p.status}")
    _write_output("\n".join(lines) + "\n", args.output)
    return 2 if result.lost else 0


def _evaluate(args, which: str) -> int:
    est = read_tum_trajectory(Path(args.estimate).read_text())
    gt = read_tum_trajectory(Path(args.groundtruth).read_text())
    report = MetricReport()
    if which == "ate":
        ts, err = ate_errors(est, gt, args.tolerance)
        report.ate_rmse = float(np.sqrt(np.mean(err ** 2)))
        report.n_pairs = len(err)
        kv = f"ate_rmse={report.ate_rmse:.9g}\nn_pairs={report.n_pairs}\n"
    else:
        delta, unit = _parse_delta(args.delta)
        ts, err = rpe_errors(est, gt, delta, unit, args.tolerance)
        report.rpe_rmse = float(np.sqrt(np.mean(err ** 2)))
        report.n_pairs = len(err)
        kv = (f"rpe_rmse={report.rpe_rmse:.9g}\nn_pairs={report.n_pairs}\n"
              f"delta={args.delta}\n")
    sys.stdout.write(kv)
    if args.csv:
        rows = ["timestamp,error_m"] + [f"{float(t)!r},{e:.9g}" for t, e in zip(ts, err)]
        Path(args.csv).write_text("\n".join(rows) + "\n")
    return 0


def cmd_bench(args) -> int:
    rows = run_bench(tuple(args.frontend_points), tuple(args.backend_points), args.runs,
                     args.seed)
    _write_output(bench_csv(rows), args.output)
    return 0


def _add_run_options(p, tracks: bool = True):
    if tracks:
        p.add_argument("tracks", nargs="?", help="tracks file (default: stdin)")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seg", choices=["on", "off"], help="segmentation on or off")
    p.add_argument("--serial", action="store_true", help="run the back-end inline")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dynseg", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"dynseg {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic tracks file")
    p.add_argument("--preset", choices=sorted(PRESETS), default="walking-like")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int)
    p.add_argument("--camera-path")
    p.add_argument("--gt-tum", help="also write the true trajectory in TUM format")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="track and segment a tracks file")
    _add_run_options(p)
    p.set_defaults(func=cmd_run)

    for name, func, hlp in (("segment", cmd_segment, "one graph pass between two frames"),
                            ("dump-graph", cmd_dump_graph, "print the Delaunay graph of a frame")):
        p = sub.add_parser(name, help=hlp)
        _add_run_options(p)
        p.add_argument("--ref", type=int, default=0, help="reference frame id")
        p.add_argument("--frame", type=int, help="frame checked against the reference")
        p.add_argument("-o", "--output")
        p.set_defaults(func=func)

    p = sub.add_parser("dump-map", help="run and print the final local map")
    _add_run_options(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_dump_map)

    for name, which in (("evaluate-ate", "ate"), ("evaluate-rpe", "rpe")):
        p = sub.add_parser(name, help=f"{which.upper()} of a TUM trajectory against ground truth")
        p.add_argument("estimate")
        p.add_argument("groundtruth")
        p.add_argument("--tolerance", type=float, default=0.02,
                       help="timestamp association tolerance (s)")
        p.add_argument("--csv", help="write per-pose errors as CSV")
        if which == "rpe":
            p.add_argument("--delta", default="1", help="interval: frames (5) or seconds (1s)")
        p.set_defaults(func=lambda a, w=which: _evaluate(a, w))

    p = sub.add_parser("bench", help="time the front-end check and the back-end")
    p.add_argument("--frontend-points", type=int, nargs="+", default=[1000])
    p.add_argument("--backend-points", type=int, nargs="+", default=[1000, 4000])
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DynsegError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
