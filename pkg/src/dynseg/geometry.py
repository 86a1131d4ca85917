"""Pinhole camera model, rigid transforms and the RGB-D depth uncertainty model.

Conventions used throughout the package:

* camera frame: x right, y down, z forward (meters);
* a ``PoseSE3`` maps camera-frame coordinates into the world frame,
  ``p_world = R @ p_cam + t``;
* twists are 6-vectors ``(rho, phi)``: translation part first, rotation second.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import MissingDepth, UntrustedDepth

_ORTHO_TOL = 1e-9

# (1 2 1) x (1 2 1) / 16
GAUSS_KERNEL_3X3 = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fu: float
    fv: float
    cx: float
    cy: float
    width: Optional[int] = None
    height: Optional[int] = None

    def __post_init__(self):
        if not (self.fu > 0 and self.fv > 0):
            raise ValueError("focal lengths must be positive")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise ValueError("principal point must be finite")

    @classmethod
    def kinect(cls) -> "CameraIntrinsics":
        """Default 640x480 Kinect-class camera."""
        return cls(525.0, 525.0, 319.5, 239.5, 640, 480)

    def in_image(self, u, v):
        if self.width is None or self.height is None:
            return np.ones(np.shape(u), dtype=bool)
        u = np.asarray(u)
        v = np.asarray(v)
        return (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)


@dataclass(frozen=True)
class NoiseParams:
    sigma_d: float = 0.5
    sigma_u: float = 0.5
    sigma_v: float = 0.5
    max_depth: float = 5.0
    max_sigma_z: float = 0.05

    def __post_init__(self):
        for name in ("sigma_d", "sigma_u", "sigma_v", "max_depth", "max_sigma_z"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class Observation:
    frame_id: int
    point_id: int
    u: float
    v: float
    d: float

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("depth must be non-negative")


def _check_rotation(R):
    if R.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL:
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
        raise ValueError("rotation determinant is not +1")


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        _check_rotation(R)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "PoseSE3":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_tum(cls, tx, ty, tz, qx, qy, qz, qw) -> "PoseSE3":
        R = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        return cls(R, [tx, ty, tz])

    @classmethod
    def exp(cls, twist) -> "PoseSE3":
        R, t = se3_exp(twist)
        return cls(R, t)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def quaternion(self) -> np.ndarray:
        """Unit quaternion ``(qx, qy, qz, qw)`` with ``qw >= 0``."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        if q[3] < 0:
            q = -q
        return q

    def inverse(self) -> "PoseSE3":
        Rt = self.rotation.T
        return PoseSE3(Rt, -Rt @ self.translation)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        return PoseSE3(self.rotation @ other.rotation,
                       self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def apply(self, points) -> np.ndarray:
        """Transform a 3-vector or an (N, 3) array of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, PoseSE3):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __repr__(self):
        return (f"PoseSE3(t={np.array2string(self.translation, precision=4)}, "
                f"q={np.array2string(self.quaternion(), precision=4)})")


@dataclass(frozen=True, eq=False)
class PointCovariance:
    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.shape != (3, 3):
            raise ValueError("covariance must be 3x3")
        if np.abs(M - M.T).max() > 1e-12:
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(M).min() < -1e-12:
            raise ValueError("covariance is not positive semi-definite")
        M.flags.writeable = False
        object.__setattr__(self, "matrix", M)


def hat(w) -> np.ndarray:
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy],
                     [wz, 0.0, -wx],
                     [-wy, wx, 0.0]])


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = hat(phi)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (np.eye(3) + np.sin(theta) / theta * K
            + (1.0 - np.cos(theta)) / theta ** 2 * K @ K)


def se3_exp(twist) -> Tuple[np.ndarray, np.ndarray]:
    """Exponential map of a twist ``(rho, phi)`` to ``(R, t)``."""
    twist = np.asarray(twist, dtype=float)
    rho, phi = twist[:3], twist[3:]
    theta = np.linalg.norm(phi)
    K = hat(phi)
    R = so3_exp(phi)
    if theta < 1e-8:
        V = np.eye(3) + 0.5 * K + K @ K / 6.0
    else:
        V = (np.eye(3) + (1.0 - np.cos(theta)) / theta ** 2 * K
             + (theta - np.sin(theta)) / theta ** 3 * K @ K)
    return R, V @ rho


def transform_point(pose: PoseSE3, p) -> np.ndarray:
    return pose.apply(p)


def backproject_pixels(u, v, d, intr: CameraIntrinsics) -> np.ndarray:
    """Vectorized pinhole backprojection into the camera frame, shape (N, 3)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = np.asarray(d, dtype=float)
    return np.stack([(u - intr.cx) * d / intr.fu,
                     (v - intr.cy) * d / intr.fv,
                     d], axis=-1)


def backproject(obs: Observation, intr: CameraIntrinsics,
                pose: Optional[PoseSE3] = None) -> np.ndarray:
    """World-frame position of an observed pixel with depth."""
    if obs.d <= 0:
        raise MissingDepth(f"point {obs.point_id} has no depth in frame {obs.frame_id}")
    p = backproject_pixels(obs.u, obs.v, obs.d, intr)
    if pose is None:
        return p
    return pose.apply(p)


def project(p_cam, intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point(s) to ``(u, v, d)``; the inverse of backprojection."""
    p = np.asarray(p_cam, dtype=float)
    z = p[..., 2]
    u = intr.fu * p[..., 0] / z + intr.cx
    v = intr.fv * p[..., 1] / z + intr.cy
    return np.stack([u, v, z], axis=-1)


def depth_stddev(d, intr: CameraIntrinsics, noise: NoiseParams):
    """Depth standard deviation, quadratic in depth: ``sigma_d * d**2 / fv``."""
    return noise.sigma_d * np.square(d) / intr.fv


def depth_mixture(window, intr: CameraIntrinsics, noise: NoiseParams) -> Tuple[float, float]:
    """Mean and variance of the depth mixture over a 3x3 window.

    Each valid cell contributes a Gaussian centred on its depth with the
    quadratic sensor stddev, weighted by the binomial kernel. Cells without
    depth are dropped and the remaining weights renormalized.
    """
    window = np.asarray(window, dtype=float)
    if window.shape != (3, 3):
        raise ValueError("depth window must be 3x3")
    if not window[1, 1] > 0:
        raise MissingDepth("center depth is missing")
    valid = window > 0
    w = np.where(valid, GAUSS_KERNEL_3X3, 0.0)
    w = w / w.sum()
    sigma = depth_stddev(window, intr, noise)
    mu = float(np.sum(w * window))
    var = float(np.sum(w * (sigma ** 2 + window ** 2)) - mu ** 2)
    return mu, max(var, 0.0)


def camera_covariances(u, v, d, intr: CameraIntrinsics, noise: NoiseParams,
                       var_z=None) -> np.ndarray:
    """Camera-frame covariances for arrays of pixels, shape (N, 3, 3).

    Uses the exact second moments of the backprojection under independent
    Gaussian noise on u, v and z.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if var_z is None:
        var_z = depth_stddev(d, intr, noise) ** 2
    var_z = np.broadcast_to(np.asarray(var_z, dtype=float), d.shape)
    a = (u - intr.cx) / intr.fu
    b = (v - intr.cy) / intr.fv
    su2 = (noise.sigma_u / intr.fu) ** 2
    sv2 = (noise.sigma_v / intr.fv) ** 2
    z2 = d ** 2 + var_z

    C = np.empty(d.shape + (3, 3))
    C[..., 0, 0] = var_z * a * a + su2 * z2
    C[..., 1, 1] = var_z * b * b + sv2 * z2
    C[..., 2, 2] = var_z
    C[..., 0, 1] = C[..., 1, 0] = var_z * a * b
    C[..., 0, 2] = C[..., 2, 0] = var_z * a
    C[..., 1, 2] = C[..., 2, 1] = var_z * b
    return C


def trusted_depth(d, intr: CameraIntrinsics, noise: NoiseParams):
    d = np.asarray(d, dtype=float)
    return (d > 0) & (d <= noise.max_depth) & (depth_stddev(d, intr, noise) <= noise.max_sigma_z)


def point_covariance(obs: Observation, intr: CameraIntrinsics, noise: NoiseParams,
                     rotation=None, var_z: Optional[float] = None) -> PointCovariance:
    """3-D covariance of a backprojected observation, rotated into the world frame.

    ``var_z`` overrides the depth variance, e.g. with the output of
    :func:`depth_mixture`.
    """
    if obs.d <= 0:
        raise MissingDepth(f"point {obs.point_id} has no depth")
    if obs.d > noise.max_depth or depth_stddev(obs.d, intr, noise) > noise.max_sigma_z:
        raise UntrustedDepth(f"depth {obs.d:.3f} m of point {obs.point_id} is not trusted")
    C = camera_covariances(obs.u, obs.v, obs.d, intr, noise, var_z)[0]
    if rotation is not None:
        R = np.asarray(rotation, dtype=float)
        C = R @ C @ R.T
    return PointCovariance(0.5 * (C + C.T))


def edge_covariance(a: PointCovariance, b: PointCovariance) -> np.ndarray:
    """Covariance of the difference of two independent points."""
    return a.matrix + b.matrix
