import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynseg.errors import MissingDepth, UntrustedDepth
from dynseg.geometry import (CameraIntrinsics, Observation, PointCovariance, PoseSE3,
                             backproject, backproject_pixels, depth_mixture, depth_stddev,
                             edge_covariance, point_covariance, project, se3_exp, so3_exp,
                             transform_point)

from conftest import random_pose


def test_transform_identity_and_yaw():
    assert np.allclose(transform_point(PoseSE3.identity(), [1, 2, 3]), [1, 2, 3])
    yaw = PoseSE3(so3_exp([0, 0, np.pi / 2]), np.zeros(3))
    assert np.allclose(transform_point(yaw, [1, 0, 0]), [0, 1, 0], atol=1e-15)


def test_compose_with_inverse_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(50):
        T = random_pose(rng)
        p = rng.normal(size=3)
        assert np.allclose((T.inverse() @ T).apply(p), p, atol=1e-12)
        assert np.allclose(T.inverse().apply(T.apply(p)), p, atol=1e-12)


def test_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        PoseSE3(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        PoseSE3(np.eye(3) * 1.001, np.zeros(3))


def test_quaternion_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(20):
        T = random_pose(rng)
        q = T.quaternion()
        assert q[3] >= 0
        back = PoseSE3.from_tum(*T.translation, *q)
        assert np.allclose(back.matrix(), T.matrix(), atol=1e-12)


def test_se3_exp_matches_matrix_exponential():
    from scipy.linalg import expm
    rng = np.random.default_rng(3)
    for _ in range(10):
        xi = rng.normal(size=6)
        M = np.zeros((4, 4))
        M[:3, :3] = [[0, -xi[5], xi[4]], [xi[5], 0, -xi[3]], [-xi[4], xi[3], 0]]
        M[:3, 3] = xi[:3]
        R, t = se3_exp(xi)
        E = expm(M)
        assert np.allclose(R, E[:3, :3], atol=1e-10)
        assert np.allclose(t, E[:3, 3], atol=1e-10)


def test_backproject_examples(intr):
    on_axis = Observation(0, 1, intr.cx, intr.cy, 2.0)
    assert np.allclose(backproject(on_axis, intr, PoseSE3.identity()), [0, 0, 2.0])
    cam = CameraIntrinsics(500, 500, 320, 240)
    assert np.allclose(backproject(Observation(0, 1, 420, 240, 1.0), cam, PoseSE3.identity()),
                       [0.2, 0, 1.0], atol=1e-15)
    with pytest.raises(MissingDepth):
        backproject(Observation(0, 1, 100, 100, 0.0), cam)


def test_project_inverts_backproject(intr):
    rng = np.random.default_rng(4)
    u, v, d = rng.uniform(0, 640, 50), rng.uniform(0, 480, 50), rng.uniform(0.5, 5, 50)
    uvd = project(backproject_pixels(u, v, d, intr), intr)
    assert np.allclose(uvd, np.stack([u, v, d], axis=1), atol=1e-9)


def test_depth_stddev(intr, noise):
    assert depth_stddev(0.0, intr, noise) == 0.0
    assert depth_stddev(2.0, intr, noise) == pytest.approx(0.5 * 4 / 525, rel=1e-12)
    assert depth_stddev(2.0, intr, noise) == pytest.approx(3.8095e-3, abs=1e-7)
    for d in (0.3, 1.7, 4.1):
        assert depth_stddev(2 * d, intr, noise) == 4 * depth_stddev(d, intr, noise)


def test_depth_mixture_constant_window(intr, noise):
    mu, var = depth_mixture(np.full((3, 3), 2.0), intr, noise)
    assert mu == pytest.approx(2.0)
    assert var == pytest.approx(depth_stddev(2.0, intr, noise) ** 2, rel=1e-9)


def test_depth_mixture_against_summation(intr, noise):
    window = np.array([[2.0, 2.1, 2.0], [1.9, 2.0, 0.0], [2.0, 3.5, 2.05]])
    kernel = np.array([1, 2, 1])[:, None] * np.array([1, 2, 1])[None, :] / 16.0
    num = den = second = 0.0
    for r in range(3):
        for c in range(3):
            if window[r, c] > 0:
                w = kernel[r, c]
                s = 0.5 * window[r, c] ** 2 / 525.0
                den += w
                num += w * window[r, c]
                second += w * (s * s + window[r, c] ** 2)
    mu_ref = num / den
    var_ref = second / den - mu_ref ** 2
    mu, var = depth_mixture(window, intr, noise)
    assert mu == pytest.approx(mu_ref, rel=1e-12)
    assert var == pytest.approx(var_ref, rel=1e-9)
    with pytest.raises(MissingDepth):
        depth_mixture(np.where(np.eye(3, dtype=bool), 0.0, 1.0), intr, noise)


def test_point_covariance_on_axis(intr, noise):
    C = point_covariance(Observation(0, 0, intr.cx, intr.cy, 2.0), intr, noise).matrix
    assert C[0, 2] == 0.0 and C[1, 2] == 0.0


def test_point_covariance_rotation_keeps_eigenvalues(intr, noise):
    rng = np.random.default_rng(5)
    obs = Observation(0, 0, 100.0, 400.0, 3.0)
    base = np.linalg.eigvalsh(point_covariance(obs, intr, noise).matrix)
    for _ in range(10):
        R = random_pose(rng).rotation
        rot = np.linalg.eigvalsh(point_covariance(obs, intr, noise, R).matrix)
        assert np.allclose(rot, base, atol=1e-12, rtol=0)


def test_point_covariance_trust_checks(intr, noise):
    with pytest.raises(MissingDepth):
        point_covariance(Observation(0, 0, 10, 10, 0.0), intr, noise)
    with pytest.raises(UntrustedDepth):
        point_covariance(Observation(0, 0, 10, 10, 6.0), intr, noise)


def monte_carlo_covariance(u, v, d, intr, noise, n, rng):
    uu = u + noise.sigma_u * rng.standard_normal(n)
    vv = v + noise.sigma_v * rng.standard_normal(n)
    zz = d + depth_stddev(d, intr, noise) * rng.standard_normal(n)
    P = backproject_pixels(uu, vv, zz, intr)
    return np.cov(P.T)


def test_point_covariance_monte_carlo_spot(intr, noise):
    rng = np.random.default_rng(6)
    u, v, d = 80.0, 420.0, 3.2
    mc = monte_carlo_covariance(u, v, d, intr, noise, 200_000, rng)
    C = point_covariance(Observation(0, 0, u, v, d), intr, noise).matrix
    assert np.max(np.abs(C - mc)) / np.trace(mc) < 0.02


def test_edge_covariance():
    zero = PointCovariance(np.zeros((3, 3)))
    assert np.all(edge_covariance(zero, zero) == 0)
    out = edge_covariance(PointCovariance(np.eye(3) * 1e-4), PointCovariance(np.eye(3) * 2e-4))
    assert np.allclose(out, np.eye(3) * 3e-4, rtol=1e-12)


def test_edge_covariance_random_psd():
    rng = np.random.default_rng(7)
    for _ in range(20):
        A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        a, b = PointCovariance(A @ A.T), PointCovariance(B @ B.T)
        S = edge_covariance(a, b)
        assert np.linalg.eigvalsh(S).min() >= -1e-12
        assert np.trace(S) == pytest.approx(np.trace(a.matrix) + np.trace(b.matrix))


def test_point_covariance_rejects_non_psd():
    with pytest.raises(ValueError):
        PointCovariance(np.diag([1.0, -1.0, 1.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6),
       st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_rigid_transform_preserves_distances(twist, coords):
    T = PoseSE3.exp(np.array(twist))
    p, q = np.array(coords[:3]), np.array(coords[3:])
    assert abs(np.linalg.norm(T.apply(p) - T.apply(q)) - np.linalg.norm(p - q)) < 1e-9
