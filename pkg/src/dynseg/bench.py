"""Timing harness for the front-end check and the back-end segmentation.

Both stages run on simulator scenes with ground-truth keyframe poses, so
the timings cover segmentation alone and not tracking.
"""
from __future__ import annotations

import time
from typing import Dict, List, Tuple

import numpy as np

from .graph import RansacParams, segment_frame
from .localmap import (STATIC, Keyframe, LocalMap, apply_backend, backend_segmentation,
                       frame_points_in_world, insert_keyframe)
from .simulator import SceneConfig, frame_timestamp, generate_scene, read_observations


def bench_map(n_points: int, seed: int = 0, keyframes: int = 3, interval: int = 5):
    """Local map holding ``keyframes`` keyframes of a scene with about ``n_points`` points.

    One in twenty points belongs to a moving object. Returns the map (with
    all keyframe back-end results applied), the scene frames, the ground
    truth, intrinsics and noise.
    """
    n_dyn = max(n_points // 20, 3)
    cfg = SceneConfig(n_static=n_points - n_dyn, n_dynamic_objects=1, points_per_object=n_dyn,
                      camera_path="static", n_frames=(keyframes - 1) * interval + 2, seed=seed,
                      object_radius=0.2 * np.sqrt(n_dyn / 20.0))
    text, gt = generate_scene(cfg)
    frames = read_observations(text)
    intr, noise = cfg.intrinsics, cfg.noise
    lmap = LocalMap()
    for n in range(keyframes):
        f = frames[n * interval]
        pose = gt.trajectory[f.frame_id][1]
        lmap = insert_keyframe(lmap, Keyframe(f.frame_id, frame_timestamp(f.frame_id), pose, f),
                               intr, noise)
        lmap = apply_backend(lmap, backend_segmentation(lmap, intr, noise, seed=seed + n))
    return lmap, frames, gt, intr, noise


def _summary(seconds: List[float]) -> Tuple[float, float, float]:
    ms = np.asarray(seconds) * 1e3
    return float(np.median(ms)), float(ms.mean()), float(ms.std())


def time_frontend(n_points: int = 1000, runs: int = 10, seed: int = 0) -> List[float]:
    """Wall times (s) of the front-end graph check of one frame against the map."""
    lmap, frames, gt, intr, noise = bench_map(n_points, seed)
    frame = frames[-1]
    pose = gt.trajectory[frame.frame_id][1]
    kf = Keyframe(frame.frame_id, 0.0, pose, frame)
    ids, _, pc, cov = kf.camera_points(intr, noise)
    prior = lmap.ids_with_status(STATIC)
    out = []
    for r in range(runs + 1):
        t0 = time.perf_counter()
        pts = frame_points_in_world(ids, pc, cov, pose)
        segment_frame(lmap.tracking_graph, pts, prior, 3.0, RansacParams(), seed + r,
                      mode="vector")
        if r:  # first run warms caches
            out.append(time.perf_counter() - t0)
    return out


def time_backend(n_points: int = 1000, runs: int = 10, seed: int = 0) -> List[float]:
    """Wall times (s) of one back-end segmentation over a three-keyframe window."""
    lmap, _, _, intr, noise = bench_map(n_points, seed)
    out = []
    for r in range(runs + 1):
        t0 = time.perf_counter()
        backend_segmentation(lmap, intr, noise, seed=seed + r)
        if r:
            out.append(time.perf_counter() - t0)
    return out


def run_bench(sizes_frontend=(1000,), sizes_backend=(1000, 4000), runs: int = 10,
              seed: int = 0) -> Dict[str, Tuple[float, float, float]]:
    """``stage -> (median_ms, mean_ms, std_ms)``."""
    rows = {}
    for n in sizes_frontend:
        rows[f"frontend_{n}"] = _summary(time_frontend(n, runs, seed))
    for n in sizes_backend:
        rows[f"backend_{n}"] = _summary(time_backend(n, runs, seed))
    return rows


def bench_csv(rows: Dict[str, Tuple[float, float, float]]) -> str:
    lines = ["stage,median_ms,mean_ms,std_ms"]
    lines += [f"{k},{a:.4f},{b:.4f},{c:.4f}" for k, (a, b, c) in rows.items()]
    return "\n".join(lines) + "\n"
