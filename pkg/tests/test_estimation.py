import numpy as np
import pytest

from conftest import random_pose
from dynseg.errors import InsufficientMatches, TrackingLost
from dynseg.evaluation import Trajectory, ate_rmse, rpe_errors
from dynseg.geometry import Observation, PoseSE3, backproject_pixels, se3_exp
from dynseg.graph import RansacParams
from dynseg.estimation import (Match, RefineOptions, ransac_pose, refine_pose,
                               reprojection_jacobian, reprojection_residual, track_frame)
from dynseg.estimation import _refine_arrays
from dynseg.localmap import LocalMap
from dynseg.pipeline import RunConfig, run_sequence
from dynseg.simulator import (FrameObservations, frame_timestamp, generate_scene, preset,
                              read_observations, scene_world_points)


def _view(rng, intr, pose, n):
    """World points seen by camera ``pose`` and their exact (u, v, d)."""
    uvd = np.column_stack([rng.uniform(20, 620, n), rng.uniform(20, 460, n),
                           rng.uniform(1.0, 4.0, n)])
    pc = backproject_pixels(uvd[:, 0], uvd[:, 1], uvd[:, 2], intr)
    return pose.apply(pc), uvd


def _matches(X, uvd, weights=None, first_id=0):
    weights = np.ones(len(X), int) if weights is None else weights
    return [Match(first_id + n, X[n], Observation(1, first_id + n, *uvd[n]), int(weights[n]))
            for n in range(len(X))]


def _pose_close(a: PoseSE3, b: PoseSE3, tol):
    assert np.abs(a.translation - b.translation).max() < tol
    assert np.abs(a.rotation - b.rotation).max() < tol


def test_ransac_recovers_exact_pose(intr):
    rng = np.random.default_rng(0)
    for _ in range(5):
        pose = random_pose(rng, 0.3, 0.5)
        X, uvd = _view(rng, intr, pose, 60)
        est = ransac_pose(_matches(X, uvd), intr, seed=1)
        _pose_close(est.pose, pose, 1e-6)
        assert len(est.inlier_ids) == 60


def test_ransac_locks_onto_majority_object(intr):
    rng = np.random.default_rng(1)
    pose = random_pose(rng, 0.2, 0.3)
    Xs, uvd_s = _view(rng, intr, pose, 40)
    Xo, uvd_o = _view(rng, intr, pose, 60)
    # the object moved rigidly by M after its map positions were recorded
    M = PoseSE3(*se3_exp([0.15, -0.05, 0.1, 0.02, 0.05, -0.03]))
    Xo_map = M.inverse().apply(Xo)
    matches = _matches(Xs, uvd_s) + _matches(Xo_map, uvd_o, first_id=100)
    est = ransac_pose(matches, intr, RansacParams(200, 0.3), seed=2)
    # the consensus explains the object: camera pose relative to the object
    _pose_close(est.pose, M.inverse().compose(pose), 1e-6)
    assert est.inlier_ids == frozenset(range(100, 160))


def test_ransac_needs_three_matches(intr):
    rng = np.random.default_rng(2)
    X, uvd = _view(rng, intr, PoseSE3.identity(), 2)
    with pytest.raises(InsufficientMatches):
        ransac_pose(_matches(X, uvd), intr)


def test_refine_noiseless_converges_to_truth(intr):
    rng = np.random.default_rng(3)
    pose = random_pose(rng, 0.3, 0.5)
    X, uvd = _view(rng, intr, pose, 50)
    start = PoseSE3(*se3_exp(rng.normal(size=6) * 0.02)).compose(pose)
    est = refine_pose(start, _matches(X, uvd), intr)
    _pose_close(est.pose, pose, 1e-6)
    assert est.final_cost < 1e-12
    assert est.converged


def test_zero_weight_matches_change_nothing(intr):
    rng = np.random.default_rng(4)
    pose = random_pose(rng, 0.3, 0.5)
    X, uvd = _view(rng, intr, pose, 80)
    uvd[:, :2] += rng.normal(scale=0.5, size=(80, 2))
    weights = (rng.uniform(size=80) > 0.4).astype(int)
    X[weights == 0] += rng.normal(scale=0.3, size=(int((weights == 0).sum()), 3))
    start = PoseSE3(*se3_exp(rng.normal(size=6) * 0.01)).compose(pose)
    matches = _matches(X, uvd, weights)
    full = refine_pose(start, matches, intr)
    subset = refine_pose(start, [m for m in matches if m.weight == 1], intr)
    assert np.array_equal(full.pose.matrix(), subset.pose.matrix())
    assert full.final_cost == subset.final_cost


def test_accepted_steps_never_increase_cost(intr):
    rng = np.random.default_rng(5)
    pose = random_pose(rng, 0.3, 0.5)
    X, uvd = _view(rng, intr, pose, 60)
    uvd[:, :2] += rng.normal(scale=1.0, size=(60, 2))
    uvd[:6, :2] += 30.0  # outliers under the Huber kernel
    start = PoseSE3(*se3_exp(rng.normal(size=6) * 0.05)).compose(pose)
    matches = _matches(X, uvd)
    costs = [refine_pose(start, matches, intr, RefineOptions(max_iters=k)).final_cost
             for k in range(1, 12)]
    assert all(b <= a for a, b in zip(costs, costs[1:]))


def test_forward_and_backward_estimates_compose_to_identity(intr):
    rng = np.random.default_rng(6)
    T_ab = random_pose(rng, 0.1, 0.2)  # camera B expressed in camera A
    pc_b, uvd_b = _view(rng, intr, PoseSE3.identity(), 60)
    pc_a = T_ab.apply(pc_b)
    uvd_a = np.column_stack([intr.fu * pc_a[:, 0] / pc_a[:, 2] + intr.cx,
                             intr.fv * pc_a[:, 1] / pc_a[:, 2] + intr.cy, pc_a[:, 2]])
    ab = refine_pose(PoseSE3.identity(), _matches(pc_a, uvd_b), intr).pose
    ba = refine_pose(PoseSE3.identity(), _matches(pc_b, uvd_a), intr).pose
    _pose_close(ab.compose(ba), PoseSE3.identity(), 1e-6)


@pytest.mark.parametrize("use_depth", [False, True])
def test_jacobian_matches_central_differences(intr, use_depth):
    rng = np.random.default_rng(7)
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        T = random_pose(rng, 0.5, 0.5)
        X, uvd = _view(rng, intr, T, 5)
        uvd += rng.normal(scale=0.5, size=uvd.shape)
        T_cw = T.inverse()
        R, t = T_cw.rotation, T_cw.translation
        J = reprojection_jacobian(R, t, X, intr, use_depth)
        num = np.zeros_like(J)
        for k in range(6):
            xi = np.zeros(6)
            xi[k] = h
            dRp, dtp = se3_exp(xi)
            dRm, dtm = se3_exp(-xi)
            ep = reprojection_residual(dRp @ R, dRp @ t + dtp, X, uvd, intr, use_depth)
            em = reprojection_residual(dRm @ R, dRm @ t + dtm, X, uvd, intr, use_depth)
            num[:, :, k] = (ep - em) / (2 * h)
        worst = max(worst, np.abs(J - num).max())
    assert worst < 1e-4


def test_track_frame_without_matches_is_lost(intr, noise):
    empty = FrameObservations(3, np.array([], dtype=np.int64), np.array([]), np.array([]),
                              np.array([]))
    with pytest.raises(TrackingLost):
        track_frame(LocalMap(), empty, intr, noise)


def _oracle_trajectory(cfg, frames, gt):
    """Per-frame poses refined from the true world points (noise-only error)."""
    g0 = gt.trajectory[0][1].inverse()
    out, truth = [], []
    for f in frames:
        gk = g0.compose(gt.trajectory[f.frame_id][1])
        world = scene_world_points(cfg, f.frame_id)
        ids = np.asarray(f.point_ids)
        X = g0.apply(np.array([world[int(i)] for i in ids]))
        est = _refine_arrays(gk, ids, X, np.column_stack([f.u, f.v, f.d]), cfg.intrinsics,
                             RefineOptions())
        out.append((frame_timestamp(f.frame_id), est.pose))
        truth.append((frame_timestamp(f.frame_id), gk))
    return Trajectory(out), Trajectory(truth)


def test_static_sequence_frame_error_within_three_noise_floors():
    cfg = preset("static", seed=0)
    text, gt = generate_scene(cfg)
    frames = read_observations(text)
    result = run_sequence(frames, RunConfig(seed=0, serial=True))
    oracle, truth = _oracle_trajectory(cfg, frames, gt)
    _, floor = rpe_errors(oracle, truth)
    _, err = rpe_errors(result.trajectory, truth)
    assert err.max() < 3 * np.sqrt(np.mean(floor ** 2))


def test_half_dynamic_scene_segmentation_improves_ate_fivefold():
    on, off = [], []
    for seed in range(10):
        cfg = preset("walking-like", seed=seed, n_static=160,
                     object_directions=((1.0, 0.0, 0.0), (-1.0, 0.0, 0.0)))
        text, gt = generate_scene(cfg)
        frames = read_observations(text)
        assert len(gt.dynamic_ids()) == 160
        for seg, acc in ((True, on), (False, off)):
            res = run_sequence(frames, RunConfig(seed=seed, serial=True, segmentation=seg))
            acc.append(ate_rmse(res.trajectory, gt.trajectory))
    assert np.mean(on) * 5 <= np.mean(off)
