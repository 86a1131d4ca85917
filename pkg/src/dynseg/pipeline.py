"""Sequence processing: tracking front-end plus segmentation back-end.

The back-end result for keyframe ``K_n`` is applied to the map when keyframe
``K_{n+1}`` arrives (the first keyframe is applied at once). The same
schedule is used whether the back-end runs inline (``serial``) or on its own
thread, so both modes give bit-identical trajectories.
"""
from __future__ import annotations

import dataclasses
import hashlib
import logging
import queue
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, TrackingLost
from .estimation import FrameState, RefineOptions, TrackingConfig, frame_state, track_frame
from .evaluation import (MetricReport, Trajectory, ate_rmse, ate_errors, rpe_rmse,
                         segmentation_metrics, write_tum_trajectory)
from .geometry import CameraIntrinsics, NoiseParams, PoseSE3
from .graph import RansacParams
from .localmap import (Keyframe, LocalMap, apply_backend, backend_segmentation,
                       insert_keyframe)
from .simulator import FrameObservations, frame_timestamp, read_ground_truth, read_observations

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    tracks: Optional[str] = None
    output_dir: str = "out"
    seed: int = 0
    segmentation: bool = True
    serial: bool = False
    chi_threshold: float = 3.0
    residual_mode: str = "vector"
    graph_ransac_iterations: int = 50
    graph_min_fraction: float = 0.5
    pose_ransac_iterations: int = 100
    pose_min_fraction: float = 0.3
    threshold_px: float = 2.0
    huber: bool = True
    use_depth: bool = False
    retention_window: int = 3
    keyframe_interval: int = 5
    keyframe_min_translation: float = 0.05
    backend_window: int = 3
    fu: float = 525.0
    fv: float = 525.0
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480
    sigma_d: float = 0.5
    sigma_u: float = 0.5
    sigma_v: float = 0.5
    max_depth: float = 5.0
    max_sigma_z: float = 0.05

    # fields that locate files or pick an execution mode rather than change results
    _PATH_FIELDS = ("tracks", "output_dir", "serial")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fu, self.fv, self.cx, self.cy, self.width, self.height)

    @property
    def noise(self) -> NoiseParams:
        return NoiseParams(self.sigma_d, self.sigma_u, self.sigma_v, self.max_depth,
                           self.max_sigma_z)

    def tracking(self) -> TrackingConfig:
        return TrackingConfig(
            ransac=RansacParams(self.pose_ransac_iterations, self.pose_min_fraction),
            threshold_px=self.threshold_px,
            refine=RefineOptions(sigma_u=self.sigma_u, sigma_v=self.sigma_v,
                                 huber_px=2.0 if self.huber else None,
                                 use_depth=self.use_depth, noise=self.noise),
            chi_threshold=self.chi_threshold,
            graph_ransac=RansacParams(self.graph_ransac_iterations, self.graph_min_fraction),
            segmentation=self.segmentation, residual_mode=self.residual_mode)

    def validate(self):
        try:
            self.intrinsics
            self.noise
            self.tracking()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.residual_mode not in ("vector", "distance"):
            raise ConfigError(f"residual_mode must be vector or distance, got {self.residual_mode!r}")
        if self.keyframe_interval < 1 or self.backend_window < 2 or self.retention_window < 1:
            raise ConfigError("keyframe_interval, backend_window and retention_window too small")

    def to_kv(self, include_paths: bool = True) -> str:
        lines = []
        for f in fields(self):
            if not include_paths and f.name in self._PATH_FIELDS:
                continue
            lines.append(f"{f.name}={_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_kv(include_paths=False).encode()).hexdigest()[:16]

    def header(self) -> List[str]:
        return [f"config_hash={self.config_hash()} seed={self.seed}"]

    def override(self, **kw) -> "RunConfig":
        names = {f.name: f for f in fields(self)}
        clean = {}
        for k, v in kw.items():
            k = k.replace("-", "_")
            if k not in names:
                raise ConfigError(f"unknown config key {k!r}")
            clean[k] = _coerce(names[k], v)
        return dataclasses.replace(self, **clean)

    @classmethod
    def from_kv(cls, text: str, **overrides) -> "RunConfig":
        vals = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key=value")
            k, v = line.split("=", 1)
            vals[k.strip()] = v.strip()
        vals.update({k: v for k, v in overrides.items() if v is not None})
        return cls().override(**vals)


def _format_value(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(f, v):
    if not isinstance(v, str):
        return v
    if f.type in ("bool", bool):
        if v.lower() in ("1", "true", "on", "yes"):
            return True
        if v.lower() in ("0", "false", "off", "no"):
            return False
        raise ConfigError(f"{f.name}: not a boolean: {v!r}")
    try:
        if f.type in ("int", int):
            return int(v)
        if f.type in ("float", float):
            return float(v)
    except ValueError:
        raise ConfigError(f"{f.name}: bad value {v!r}") from None
    return v or None


@dataclass
class SequenceResult:
    trajectory: Trajectory
    local_map: LocalMap
    frame_labels: Dict[int, set] = field(default_factory=dict)
    timings: Dict[str, List[float]] = field(default_factory=lambda: defaultdict(list))
    lost: Optional[str] = None
    keyframes: List[int] = field(default_factory=list)

    def point_labels(self) -> Dict[int, str]:
        return self.local_map.status_of()


class _Backend:
    """Runs back-end jobs inline or on a worker thread, in submission order."""

    def __init__(self, serial: bool, intr, noise, cfg: RunConfig, timings):
        self.serial = serial
        self.args = (intr, noise)
        self.cfg = cfg
        self.timings = timings
        self.pending = None
        if not serial:
            self.jobs: queue.Queue = queue.Queue(maxsize=1)
            self.results: queue.Queue = queue.Queue(maxsize=1)
            self.thread = threading.Thread(target=self._loop, name="dynseg-backend", daemon=True)
            self.thread.start()

    def _run(self, snapshot: LocalMap, seed: int):
        t0 = time.perf_counter()
        res = backend_segmentation(
            snapshot, *self.args, chi_threshold=self.cfg.chi_threshold,
            ransac=RansacParams(self.cfg.graph_ransac_iterations, self.cfg.graph_min_fraction),
            seed=seed, window=self.cfg.backend_window, mode=self.cfg.residual_mode)
        return res, time.perf_counter() - t0

    def _loop(self):
        while True:
            job = self.jobs.get()
            if job is None:
                return
            try:
                self.results.put(self._run(*job))
            except Exception as exc:  # surfaced in collect()
                self.results.put(exc)

    def submit(self, snapshot: LocalMap, seed: int):
        if self.serial:
            self.pending = self._run(snapshot, seed)
        else:
            self.jobs.put((snapshot, seed))
            self.pending = True

    def collect(self):
        if self.pending is None:
            return None
        out = self.pending if self.serial else self.results.get()
        self.pending = None
        if isinstance(out, Exception):
            raise out
        res, dt = out
        self.timings["backend"].append(dt)
        return res

    def close(self):
        if not self.serial:
            self.jobs.put(None)
            self.thread.join()


def run_sequence(frames: Sequence[FrameObservations], cfg: RunConfig) -> SequenceResult:
    """Track every frame and segment at keyframes; no ground truth involved."""
    cfg.validate()
    intr, noise = cfg.intrinsics, cfg.noise
    tcfg = cfg.tracking()
    lmap = LocalMap(retention_window=cfg.retention_window)
    result = SequenceResult(Trajectory(), lmap)
    timings = result.timings
    backend = _Backend(cfg.serial, intr, noise, cfg, timings) if cfg.segmentation else None
    entries = []
    last: Optional[FrameState] = None
    last_kf_frame, last_kf_pose = None, None
    try:
        for n, frame in enumerate(frames):
            t0 = time.perf_counter()
            if n == 0:
                pose = PoseSE3.identity()
            else:
                try:
                    est, labeling = track_frame(lmap, frame, intr, noise, tcfg,
                                                seed=cfg.seed * 1_000_003 + frame.frame_id,
                                                last=last)
                except TrackingLost as exc:
                    result.lost = str(exc)
                    log.warning("tracking lost: %s", exc)
                    break
                pose = est.pose
                result.frame_labels[frame.frame_id] = labeling.dynamic_ids()
            timings["tracking"].append(time.perf_counter() - t0)
            entries.append((frame_timestamp(frame.frame_id), pose))

            is_kf = last_kf_frame is None or (
                frame.frame_id - last_kf_frame >= cfg.keyframe_interval
                or np.linalg.norm(pose.translation - last_kf_pose.translation)
                >= cfg.keyframe_min_translation)
            if is_kf:
                if backend is not None:
                    res = backend.collect()
                    if res is not None:
                        lmap = apply_backend(lmap, res)
                kf = Keyframe(frame.frame_id, frame_timestamp(frame.frame_id), pose, frame)
                lmap = insert_keyframe(lmap, kf, intr, noise)
                result.keyframes.append(frame.frame_id)
                if backend is not None:
                    backend.submit(lmap, cfg.seed * 1_000_003 + frame.frame_id)
                    if n == 0:
                        lmap = apply_backend(lmap, backend.collect())
                last_kf_frame, last_kf_pose = frame.frame_id, pose
            last = frame_state(frame, pose, intr, noise)
        if backend is not None:
            res = backend.collect()
            if res is not None:
                lmap = apply_backend(lmap, res)
    finally:
        if backend is not None:
            backend.close()
    result.trajectory = Trajectory(entries)
    result.local_map = lmap
    return result


def timing_csv(timings: Dict[str, List[float]]) -> str:
    lines = ["stage,median_ms,mean_ms,std_ms"]
    for stage in sorted(timings):
        ms = np.asarray(timings[stage]) * 1e3
        if len(ms):
            lines.append(f"{stage},{np.median(ms):.4f},{ms.mean():.4f},{ms.std():.4f}")
    return "\n".join(lines) + "\n"


def evaluate_run(result: SequenceResult, tracks_text: str) -> Optional[MetricReport]:
    """Compare a run against the ground-truth records of its tracks file, if any."""
    gt = read_ground_truth(tracks_text)
    if len(gt.trajectory) < 2:
        return None
    est = result.trajectory
    report = MetricReport()
    try:
        report.ate_rmse = ate_rmse(est, gt.trajectory)
        report.rpe_rmse = rpe_rmse(est, gt.trajectory, 1, "frames")
        report.n_pairs = len(ate_errors(est, gt.trajectory)[1])
        report.rpe_rmse_1s = rpe_rmse(est, gt.trajectory, 1.0, "seconds")
    except Exception as exc:  # short runs may lack 1 s intervals
        log.info("metric skipped: %s", exc)
    if gt.point_labels:
        labels = {pid: s for pid, s in result.point_labels().items()}
        p, r, f1 = segmentation_metrics(labels, gt) if set(labels) & set(gt.point_labels) \
            else (float("nan"),) * 3
        report.seg_precision, report.seg_recall, report.seg_f1 = p, r, f1
    return report


def run_pipeline(cfg: RunConfig, tracks_text: Optional[str] = None) -> int:
    """Process a tracks file and write ``est.tum``, ``labels.txt``, ``metrics.txt``, ``timing.txt``.

    Returns 0 on success, 2 if tracking was lost and 1 on configuration or
    I/O errors.
    """
    try:
        cfg.validate()
        if tracks_text is None:
            if cfg.tracks is None:
                raise ConfigError("no tracks input")
            tracks_text = Path(cfg.tracks).read_text()
        frames = read_observations(tracks_text)
        if not frames:
            raise ConfigError("tracks file has no observations")
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
    except (OSError, ConfigError, ValueError) as exc:
        log.error("%s", exc)
        return 1

    result = run_sequence(frames, cfg)
    header = cfg.header()
    (out / "est.tum").write_text(write_tum_trajectory(result.trajectory, header))
    label_lines = [f"# {h}" for h in header]
    label_lines += [f"{pid} {st}" for pid, st in sorted(result.point_labels().items())]
    (out / "labels.txt").write_text("\n".join(label_lines) + "\n")

    report = evaluate_run(result, tracks_text)
    metrics = [f"# {h}" for h in header]
    metrics.append(f"segmentation={'on' if cfg.segmentation else 'off'}")
    metrics.append(f"n_frames={len(result.trajectory)}")
    metrics.append(f"tracking_lost={'yes' if result.lost else 'no'}")
    text = "\n".join(metrics) + "\n"
    if report is not None:
        text += report.to_kv()
        text += "".join(f"# {line}\n" for line in report.to_text().splitlines())
    (out / "metrics.txt").write_text(text)
    (out / "timing.txt").write_text(f"# {header[0]}\n" + timing_csv(result.timings))
    return 2 if result.lost else 0
