"""Synthetic dynamic RGB-D scenes with ground truth, and the tracks file format.

A tracks file is the line-based interchange format of the toolkit::

    # tracks v1
    OBS frame_id point_id u v d
    GT_POSE frame_id tx ty tz qx qy qz qw
    GT_LABEL point_id static|dynamic:<k>

Frames are sampled at :data:`FRAME_RATE` Hz, so frame ``f`` has timestamp
``f / FRAME_RATE``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BehindCamera, ConfigError, ParseError
from .evaluation import Trajectory
from .geometry import (CameraIntrinsics, NoiseParams, Observation, PoseSE3, backproject_pixels,
                       depth_stddev, so3_exp)

FRAME_RATE = 30.0
CAMERA_PATHS = ("static", "xyz", "rpy", "halfsphere")
TRACKS_HEADER = "# tracks v1"


def frame_timestamp(frame_id: int) -> float:
    return frame_id / FRAME_RATE


@dataclass(frozen=True)
class SceneConfig:
    n_static: int = 200
    n_dynamic_objects: int = 1
    points_per_object: int = 20
    object_velocity: float = 0.05
    object_angular_velocity: float = 0.0
    camera_path: str = "static"
    n_frames: int = 30
    noise: NoiseParams = field(default_factory=NoiseParams)
    depth_quantization: float = 0.001
    seed: int = 0
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics.kinect)
    pixel_noise: bool = True
    depth_noise: bool = True
    object_radius: float = 0.2
    object_depth: Tuple[float, float] = (1.4, 2.2)
    static_depth: Tuple[float, float] = (2.0, 4.5)
    # unit vectors in the world frame; random horizontal-ish when None
    object_directions: Optional[Tuple[Tuple[float, float, float], ...]] = None

    def validate(self):
        for name in ("n_static", "n_dynamic_objects", "points_per_object"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be >= 2")
        if self.camera_path not in CAMERA_PATHS:
            raise ConfigError(f"unknown camera_path {self.camera_path!r}")
        if self.depth_quantization < 0:
            raise ConfigError("depth_quantization must be >= 0")
        if self.object_velocity < 0 or self.object_angular_velocity < 0:
            raise ConfigError("object velocities must be >= 0")
        if self.intrinsics.width is None or self.intrinsics.height is None:
            raise ConfigError("intrinsics need image bounds")
        if self.object_directions is not None and \
                len(self.object_directions) != self.n_dynamic_objects:
            raise ConfigError("need one direction per dynamic object")

    @property
    def noiseless(self) -> bool:
        return not self.pixel_noise and not self.depth_noise and self.depth_quantization == 0

    def replace(self, **kw) -> "SceneConfig":
        return dataclasses.replace(self, **kw)


PRESETS: Dict[str, dict] = {
    "static": dict(n_static=200, n_dynamic_objects=0, camera_path="xyz", n_frames=60),
    "sitting-like": dict(n_static=200, n_dynamic_objects=1, points_per_object=20,
                         object_velocity=0.03, camera_path="xyz", n_frames=60),
    "walking-like": dict(n_static=200, n_dynamic_objects=2, points_per_object=80,
                         object_velocity=0.006, camera_path="xyz", n_frames=60),
}


def preset(name: str, **overrides) -> SceneConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SceneConfig(**{**PRESETS[name], **overrides})


@dataclass
class GroundTruth:
    trajectory: Trajectory
    point_labels: Dict[int, str]

    def object_of(self, point_id: int) -> Optional[int]:
        lab = self.point_labels[point_id]
        return int(lab.split(":")[1]) if lab.startswith("dynamic") else None

    def dynamic_ids(self) -> set:
        return {k for k, v in self.point_labels.items() if v != "static"}

    def edge_labels(self, pairs) -> List[str]:
        """``boundary`` for edges joining different rigid groups, else ``interior``."""
        return ["interior" if self.point_labels[a] == self.point_labels[b] else "boundary"
                for a, b in pairs]


def _look_at(eye, target) -> np.ndarray:
    """Camera-to-world rotation with z toward ``target`` and y pointing down."""
    z = np.asarray(target, float) - np.asarray(eye, float)
    z /= np.linalg.norm(z)
    down = np.array([0.0, 1.0, 0.0])
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def camera_trajectory(path: str, n_frames: int) -> List[PoseSE3]:
    """Smooth camera-to-world poses; frame 0 looks down +z from near the origin."""
    s = np.arange(n_frames) / 30.0
    poses = []
    for t in s:
        if path == "static":
            R = so3_exp([0.004 * np.sin(2.1 * t), 0.006 * np.sin(1.3 * t), 0.0])
            p = [0.01 * np.sin(1.7 * t), 0.005 * np.sin(2.3 * t), 0.008 * np.sin(1.1 * t)]
        elif path == "xyz":
            R = so3_exp([0.02 * np.sin(0.9 * t), 0.03 * np.sin(0.7 * t), 0.0])
            p = [0.25 * np.sin(1.2 * t), 0.12 * np.sin(1.5 * t), 0.15 * np.sin(0.8 * t)]
        elif path == "rpy":
            R = so3_exp([0.12 * np.sin(1.4 * t), 0.15 * np.sin(1.1 * t), 0.12 * np.sin(1.7 * t)])
            p = [0.01 * np.sin(t), 0.01 * np.sin(1.3 * t), 0.0]
        elif path == "halfsphere":
            # camera on a 1 m diameter half sphere, looking at a point 2.5 m ahead
            az = 0.8 * np.sin(0.5 * t)
            el = 0.5 * np.sin(0.8 * t)
            sphere_center = np.array([0.0, 0.0, 0.5])
            p = sphere_center + 0.5 * np.array([np.sin(az) * np.cos(el), -np.sin(el),
                                                -np.cos(az) * np.cos(el)])
            R = _look_at(p, [0.0, 0.0, 3.0])
        else:
            raise ConfigError(f"unknown camera_path {path!r}")
        poses.append(PoseSE3(R, p))
    # express relative to the first pose so frame 0 is the identity
    T0inv = poses[0].inverse()
    return [T0inv @ T for T in poses]


def _object_pose(center0, direction, speed, omega, frame) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation about the object's vertical axis and its center at ``frame``."""
    R = so3_exp([0.0, omega * frame, 0.0])
    return R, center0 + speed * frame * direction


def project_with_noise(world_point, pose: PoseSE3, intr: CameraIntrinsics, noise: NoiseParams,
                       seed=None, depth_quantization: float = 0.0, frame_id: int = 0,
                       point_id: int = 0, pixel_noise: bool = True,
                       depth_noise: bool = True) -> Observation:
    """Observe a world point from camera ``pose`` with pixel and depth noise.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pc = pose.inverse().apply(world_point)
    if not pc[2] > 0:
        raise BehindCamera(f"point {point_id} is behind the camera")
    u = intr.fu * pc[0] / pc[2] + intr.cx
    v = intr.fv * pc[1] / pc[2] + intr.cy
    z = pc[2]
    du, dv, dz = rng.standard_normal(3)
    if pixel_noise:
        u += noise.sigma_u * du
        v += noise.sigma_v * dv
    if depth_noise:
        z += depth_stddev(z, intr, noise) * dz
    if depth_quantization > 0:
        z = np.round(z / depth_quantization) * depth_quantization
    return Observation(frame_id, point_id, float(u), float(v), float(max(z, 0.0)))


class _Scene:
    def __init__(self, cfg: SceneConfig):
        cfg.validate()
        self.cfg = cfg
        intr = cfg.intrinsics
        rng = np.random.default_rng([cfg.seed, 0x5CE7E])
        self.poses = camera_trajectory(cfg.camera_path, cfg.n_frames)

        W, H = intr.width, intr.height
        frames = rng.integers(cfg.n_frames, size=cfg.n_static)
        uv = rng.uniform([0, 0], [W - 1, H - 1], size=(cfg.n_static, 2))
        depth = rng.uniform(*cfg.static_depth, size=cfg.n_static)
        pc = backproject_pixels(uv[:, 0], uv[:, 1], depth, intr)
        static = np.array([self.poses[f].apply(p) for f, p in zip(frames, pc)]).reshape(-1, 3)

        mid = (cfg.n_frames - 1) / 2.0
        self.objects = []
        for k in range(cfg.n_dynamic_objects):
            if cfg.object_directions is not None:
                d = np.asarray(cfg.object_directions[k], float)
                d = d / np.linalg.norm(d)
            else:
                a = rng.uniform(-0.3, 0.3)
                d = np.array([np.cos(a), np.sin(a), 0.0]) * rng.choice([-1.0, 1.0])
            cu = rng.uniform(0.3 * W, 0.7 * W)
            cv = rng.uniform(0.35 * H, 0.65 * H)
            cz = rng.uniform(*cfg.object_depth)
            c_mid = self.poses[int(round(mid))].apply(backproject_pixels(cu, cv, cz, intr))
            c0 = c_mid - cfg.object_velocity * mid * d
            offs = rng.standard_normal((cfg.points_per_object, 3))
            offs /= np.linalg.norm(offs, axis=1, keepdims=True)
            offs *= cfg.object_radius * rng.uniform(size=(cfg.points_per_object, 1)) ** (1 / 3)
            self.objects.append((c0, d, offs))

        n_total = cfg.n_static + cfg.n_dynamic_objects * cfg.points_per_object
        ids = rng.permutation(n_total)
        self.static_ids = ids[:cfg.n_static]
        self.static_points = static
        self.object_ids = [ids[cfg.n_static + k * cfg.points_per_object:
                               cfg.n_static + (k + 1) * cfg.points_per_object]
                           for k in range(cfg.n_dynamic_objects)]

    def labels(self) -> Dict[int, str]:
        out = {int(i): "static" for i in self.static_ids}
        for k, ids in enumerate(self.object_ids):
            out.update({int(i): f"dynamic:{k}" for i in ids})
        return out

    def world_points(self, frame: int) -> Tuple[np.ndarray, np.ndarray]:
        ids = [self.static_ids]
        pts = [self.static_points]
        cfg = self.cfg
        for (c0, d, offs), oid in zip(self.objects, self.object_ids):
            R, c = _object_pose(c0, d, cfg.object_velocity, cfg.object_angular_velocity, frame)
            ids.append(oid)
            pts.append(offs @ R.T + c)
        return np.concatenate(ids).astype(np.int64), np.concatenate(pts).reshape(-1, 3)

    def observe(self, frame: int) -> List[Observation]:
        cfg = self.cfg
        intr = cfg.intrinsics
        rng = np.random.default_rng([cfg.seed, frame])
        ids, P = self.world_points(frame)
        order = np.argsort(ids)
        ids, P = ids[order], P[order]
        pose = self.poses[frame]
        pc = pose.inverse().apply(P)
        noise = rng.standard_normal((len(ids), 3))
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = intr.fu * pc[:, 0] / z + intr.cx
            v = intr.fv * pc[:, 1] / z + intr.cy
        visible = (z > 0) & intr.in_image(u, v)
        ids, u, v, z, noise = ids[visible], u[visible], v[visible], z[visible], noise[visible]
        if cfg.pixel_noise:
            u = np.clip(u + cfg.noise.sigma_u * noise[:, 0], 0.0, intr.width - 1)
            v = np.clip(v + cfg.noise.sigma_v * noise[:, 1], 0.0, intr.height - 1)
        if cfg.depth_noise:
            z = z + depth_stddev(z, intr, cfg.noise) * noise[:, 2]
        if cfg.depth_quantization > 0:
            z = np.round(z / cfg.depth_quantization) * cfg.depth_quantization
        z = np.maximum(z, 0.0)
        out = [Observation(frame, pid, un, vn, zn)
               for pid, un, vn, zn in zip(ids.tolist(), u.tolist(), v.tolist(), z.tolist())]
        return out


def generate_scene(cfg: SceneConfig) -> Tuple[str, GroundTruth]:
    """Render a scene to tracks-file text plus its ground truth."""
    scene = _Scene(cfg)
    lines = [TRACKS_HEADER]
    for f in range(cfg.n_frames):
        for o in scene.observe(f):
            lines.append(f"OBS {o.frame_id} {o.point_id} {o.u:.9g} {o.v:.9g} {o.d:.9g}")
    for f, T in enumerate(scene.poses):
        t = T.translation
        q = T.quaternion()
        lines.append("GT_POSE %d %s" % (f, " ".join(f"{x:.9g}" for x in (*t, *q))))
    labels = scene.labels()
    for pid in sorted(labels):
        lines.append(f"GT_LABEL {pid} {labels[pid]}")
    traj = Trajectory([(frame_timestamp(f), T) for f, T in enumerate(scene.poses)])
    return "\n".join(lines) + "\n", GroundTruth(traj, labels)


def scene_observations(cfg: SceneConfig) -> List["FrameObservations"]:
    """Observations of every frame at full precision, without the text round trip."""
    scene = _Scene(cfg)
    return [FrameObservations.from_observations(f, scene.observe(f)) for f in range(cfg.n_frames)]


def scene_world_points(cfg: SceneConfig, frame: int) -> Dict[int, np.ndarray]:
    """Ground-truth world positions of all points at ``frame``."""
    ids, P = _Scene(cfg).world_points(frame)
    return {int(i): p for i, p in zip(ids, P)}


@dataclass
class FrameObservations:
    """Observations of one frame as parallel arrays sorted by point id."""

    frame_id: int
    point_ids: np.ndarray
    u: np.ndarray
    v: np.ndarray
    d: np.ndarray

    def __len__(self):
        return len(self.point_ids)

    def observations(self) -> List[Observation]:
        return [Observation(self.frame_id, int(p), float(a), float(b), float(c))
                for p, a, b, c in zip(self.point_ids, self.u, self.v, self.d)]

    @classmethod
    def from_observations(cls, frame_id: int, obs: Sequence[Observation]) -> "FrameObservations":
        obs = sorted(obs, key=lambda o: o.point_id)
        return cls(frame_id, np.array([o.point_id for o in obs], dtype=np.int64),
                   np.array([o.u for o in obs], float), np.array([o.v for o in obs], float),
                   np.array([o.d for o in obs], float))


def _check_header(lines):
    for n, line in enumerate(lines, 1):
        if line.strip():
            if line.strip() != TRACKS_HEADER:
                raise ParseError(f"expected {TRACKS_HEADER!r} header", n)
            return


def read_observations(text: str) -> List[FrameObservations]:
    """Parse the OBS lines of a tracks file, ignoring ground-truth records."""
    lines = text.splitlines()
    _check_header(lines)
    per_frame: Dict[int, List[Observation]] = {}
    for n, line in enumerate(lines, 1):
        if not line.startswith("OBS"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ParseError("OBS needs 5 fields", n)
        try:
            o = Observation(int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4]),
                            float(parts[5]))
        except ValueError as exc:
            raise ParseError(str(exc), n) from None
        per_frame.setdefault(o.frame_id, []).append(o)
    return [FrameObservations.from_observations(f, per_frame[f]) for f in sorted(per_frame)]


def read_ground_truth(text: str) -> GroundTruth:
    """Parse the GT_POSE and GT_LABEL records of a tracks file."""
    poses, labels = {}, {}
    for n, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "GT_POSE":
                vals = [float(x) for x in parts[2:9]]
                poses[int(parts[1])] = PoseSE3.from_tum(*vals)
            elif parts[0] == "GT_LABEL":
                lab = parts[2]
                if lab != "static" and not lab.startswith("dynamic:"):
                    raise ValueError(f"bad label {lab!r}")
                labels[int(parts[1])] = lab
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc), n) from None
    traj = Trajectory([(frame_timestamp(f), poses[f]) for f in sorted(poses)])
    return GroundTruth(traj, labels)
