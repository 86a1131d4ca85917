"""Camera pose estimation: 3-point RANSAC and weighted motion-only refinement.

The refinement minimizes the weighted, optionally Huber-robustified
reprojection error of fixed world points over the camera pose. Points
labelled dynamic carry weight 0 and are dropped before any arithmetic, so
they have no influence at all on the result.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import Degenerate, InsufficientMatches, NoConsensus, TrackingLost
from .evaluation import align_rigid
from .geometry import (CameraIntrinsics, NoiseParams, Observation, PoseSE3, backproject_pixels,
                       camera_covariances, depth_stddev, se3_exp, trusted_depth)
from .graph import (ComponentLabeling, RansacParams, _iterations_needed, _sample_triples,
                    segment_frame)
from .localmap import STATIC, LocalMap, frame_points_in_world, static_weight


@dataclass(frozen=True, eq=False)
class Match:
    point_id: int
    world_point: np.ndarray
    observation: Observation
    weight: int = 1
    obs_covariance: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.weight not in (0, 1):
            raise ValueError("weight must be 0 or 1")


@dataclass(frozen=True)
class PoseEstimate:
    pose: PoseSE3
    inlier_ids: frozenset
    final_cost: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class RefineOptions:
    max_iters: int = 20
    step_tol: float = 1e-8
    sigma_u: float = 0.5
    sigma_v: float = 0.5
    huber_px: Optional[float] = 2.0
    use_depth: bool = False
    noise: Optional[NoiseParams] = None
    lambda_init: float = 1e-4


def _stack(matches: Sequence[Match]):
    X = np.array([m.world_point for m in matches], dtype=float).reshape(-1, 3)
    uvd = np.array([(m.observation.u, m.observation.v, m.observation.d) for m in matches],
                   dtype=float).reshape(-1, 3)
    return X, uvd


def _reproject(R_cw, t_cw, X, intr: CameraIntrinsics):
    pc = X @ R_cw.T + t_cw
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fu * pc[..., 0] / z + intr.cx
        v = intr.fv * pc[..., 1] / z + intr.cy
    return u, v, z


def ransac_pose(matches: Sequence[Match], intr: CameraIntrinsics,
                params: RansacParams = RansacParams(100, 0.3), seed: int = 0,
                threshold_px: float = 2.0) -> PoseEstimate:
    """Best-consensus camera pose from minimal 3-point 3D-3D alignments.

    Only weight-1 matches with depth take part. A hypothesis is scored by
    the number of matches whose world point reprojects within
    ``threshold_px`` of the observation; the winner is refit on its inliers.
    Sampling stops early once an all-inlier sample is 99% likely.
    """
    usable = [m for m in matches if m.weight == 1 and m.observation.d > 0]
    X, uvd = _stack(usable)
    ids = np.array([m.point_id for m in usable], dtype=np.int64)
    return _ransac_arrays(ids, X, uvd, intr, params, seed, threshold_px)


def _kabsch_centered(A, B):
    """Batched rigid fits ``B ~ R A + t`` for (H, n, 3) stacks."""
    mu_a, mu_b = A.mean(axis=1), B.mean(axis=1)
    H = np.matmul(np.swapaxes(A - mu_a[:, None], 1, 2), B - mu_b[:, None])
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    d = np.sign(np.linalg.det(np.matmul(V, np.swapaxes(U, 1, 2))))
    d[d == 0] = 1.0
    V[:, :, 2] *= d[:, None]
    R = np.matmul(V, np.swapaxes(U, 1, 2))
    return R, mu_b - np.einsum("hij,hj->hi", R, mu_a)


def _ransac_arrays(ids, X, uvd, intr, params: RansacParams, seed, threshold_px,
                   chunk: int = 16) -> PoseEstimate:
    n = len(ids)
    if n < 3:
        raise InsufficientMatches(f"{n} usable matches, need 3")
    Pc = backproject_pixels(uvd[:, 0], uvd[:, 1], uvd[:, 2], intr)
    rng = np.random.default_rng(seed)
    thr2 = threshold_px ** 2

    def inliers(R, t):
        # R, t map camera to world; broadcasts over a leading hypothesis axis
        pc = np.matmul(X - t[..., None, :], R)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            du = intr.fu * pc[..., 0] / z + intr.cx - uvd[:, 0]
            dv = intr.fv * pc[..., 1] / z + intr.cy - uvd[:, 1]
        err2 = du ** 2 + dv ** 2
        return (z > 0) & (err2 < thr2), err2

    picks = _sample_triples(n, params.iterations, rng)
    A = Pc[picks]
    area = np.linalg.norm(np.cross(A[:, 1] - A[:, 0], A[:, 2] - A[:, 0]), axis=1)
    picks = picks[area >= 1e-9]
    if not len(picks):
        raise NoConsensus("every sampled triple was degenerate")
    best_count, best = -1, None
    done, needed = 0, len(picks)
    while done < needed:
        sl = picks[done:done + chunk]
        done += len(sl)
        Rs, ts = _kabsch_centered(Pc[sl], X[sl])
        inl_all, _ = inliers(Rs, ts)
        counts = inl_all.sum(axis=1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best = int(counts[k]), inl_all[k]
            needed = min(len(picks), _iterations_needed(best_count / n, len(picks)))
    if best_count < 3:
        raise NoConsensus("no non-degenerate hypothesis reached 3 inliers")
    R, t = align_rigid(Pc[best], X[best])
    inl, err2 = inliers(R, t)
    if inl.sum() < 3:
        inl = best
    fraction = inl.sum() / n
    if fraction < params.min_fraction:
        raise NoConsensus(f"best inlier fraction {fraction:.2f} < {params.min_fraction}")
    R, t = align_rigid(Pc[inl], X[inl])
    _, err2 = inliers(R, t)
    return PoseEstimate(PoseSE3(_orthonormalize(R), t), frozenset(ids[inl].tolist()),
                        float(np.mean(err2[inl])), done, True)


def _orthonormalize(R):
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


def reprojection_residual(R_cw, t_cw, X, uvd, intr: CameraIntrinsics, use_depth=False):
    """Observed minus predicted ``(u, v[, d])`` for world points ``X`` (N, 3)."""
    u, v, z = _reproject(R_cw, t_cw, X, intr)
    cols = [uvd[:, 0] - u, uvd[:, 1] - v]
    if use_depth:
        cols.append(uvd[:, 2] - z)
    return np.stack(cols, axis=1)


def reprojection_jacobian(R_cw, t_cw, X, intr: CameraIntrinsics, use_depth=False):
    """Jacobian of :func:`reprojection_residual` w.r.t. a left twist on the world-to-camera pose.

    The perturbation is ``T_cw <- exp(xi) T_cw`` with ``xi = (rho, phi)``;
    the result has shape (N, 2 or 3, 6).
    """
    pc = X @ R_cw.T + t_cw
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    n = len(pc)
    dproj = np.zeros((n, 3 if use_depth else 2, 3))
    dproj[:, 0, 0] = intr.fu / z
    dproj[:, 0, 2] = -intr.fu * x / z ** 2
    dproj[:, 1, 1] = intr.fv / z
    dproj[:, 1, 2] = -intr.fv * y / z ** 2
    if use_depth:
        dproj[:, 2, 2] = 1.0
    dpc = np.zeros((n, 3, 6))
    dpc[:, :, :3] = np.eye(3)
    # d(phi x pc)/dphi = -[pc]x
    dpc[:, 0, 4], dpc[:, 0, 5] = z, -y
    dpc[:, 1, 3], dpc[:, 1, 5] = -z, x
    dpc[:, 2, 3], dpc[:, 2, 4] = y, -x
    return -np.einsum("nij,njk->nik", dproj, dpc)


def _sqrt_info(covs, uvd, intr, opts: RefineOptions):
    """Whitening matrices L with L^T L = R^-1, shape (N, m, m).

    ``covs`` holds optional per-match observation covariances (or None).
    """
    m = 3 if opts.use_depth else 2
    C = np.zeros((len(uvd), m, m))
    C[:, 0, 0] = opts.sigma_u ** 2
    C[:, 1, 1] = opts.sigma_v ** 2
    if opts.use_depth:
        noise = opts.noise or NoiseParams()
        C[:, 2, 2] = np.maximum(depth_stddev(uvd[:, 2], intr, noise), 1e-4) ** 2
    for k, given in enumerate(covs or ()):
        if given is not None:
            given = np.asarray(given, dtype=float)
            if given.shape[0] >= m:
                C[k] = given[:m, :m]
    return np.swapaxes(np.linalg.cholesky(np.linalg.inv(C)), 1, 2)


def _robust(chi2, delta):
    """Huber cost on squared whitened norms, and IRLS weights."""
    if delta is None:
        return chi2, np.ones_like(chi2)
    r = np.sqrt(chi2)
    cost = np.where(r <= delta, chi2, 2 * delta * r - delta ** 2)
    w = np.where(r <= delta, 1.0, delta / np.maximum(r, 1e-300))
    return cost, w


def refine_pose(initial: PoseSE3, matches: Sequence[Match], intr: CameraIntrinsics,
                opts: RefineOptions = RefineOptions()) -> PoseEstimate:
    """Levenberg-Marquardt minimization of the weighted reprojection cost.

    ``initial`` and the returned pose are camera-to-world transforms.
    """
    active = [m for m in matches if m.weight == 1]
    X, uvd = _stack(active)
    ids = np.array([m.point_id for m in active], dtype=np.int64)
    return _refine_arrays(initial, ids, X, uvd, intr, opts,
                          [m.obs_covariance for m in active])


def _refine_arrays(initial: PoseSE3, ids, X, uvd, intr, opts: RefineOptions,
                   covs=None) -> PoseEstimate:
    if len(ids) < 3:
        raise InsufficientMatches(f"{len(ids)} weighted matches, need 3")
    L = _sqrt_info(covs, uvd, intr, opts)
    delta = None
    if opts.huber_px is not None:
        delta = opts.huber_px / min(opts.sigma_u, opts.sigma_v)

    def evaluate(R_cw, t_cw):
        e = reprojection_residual(R_cw, t_cw, X, uvd, intr, opts.use_depth)
        we = np.matmul(L, e[:, :, None])[:, :, 0]
        chi2 = np.sum(we ** 2, axis=1)
        cost, w = _robust(chi2, delta)
        if not np.all(np.isfinite(cost)):
            return np.inf, we, w
        return 0.5 * float(np.sum(cost)), we, w

    T_cw = initial.inverse()
    R, t = T_cw.rotation.copy(), T_cw.translation.copy()
    cost, we, w = evaluate(R, t)
    lam = opts.lambda_init
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        J = np.matmul(L, reprojection_jacobian(R, t, X, intr, opts.use_depth))
        Jw = J * w[:, None, None]
        H = np.einsum("nji,njk->ik", Jw, J)
        g = np.einsum("nji,nj->i", Jw, we)
        accepted = False
        while lam < 1e10:
            A = H + lam * np.diag(np.maximum(np.diag(H), 1e-12))
            try:
                step = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            dR, dt = se3_exp(step)
            R_new, t_new = dR @ R, dR @ t + dt
            new_cost, new_we, new_w = evaluate(R_new, t_new)
            if new_cost <= cost:
                R, t, cost, we, w = R_new, t_new, new_cost, new_we, new_w
                lam = max(lam / 10, 1e-12)
                accepted = True
                break
            lam *= 10
        if not accepted:
            if not np.isfinite(cost) or np.linalg.matrix_rank(H) < 6:
                raise Degenerate("normal equations are singular")
            converged = True
            break
        if np.linalg.norm(step) < opts.step_tol:
            converged = True
            break
    R = _orthonormalize(R)
    chi2 = np.sum(we ** 2, axis=1)
    inliers = frozenset(ids[chi2 < 5.991].tolist())
    pose = PoseSE3(R, t).inverse()
    return PoseEstimate(pose, inliers, cost, it, converged and np.isfinite(cost))


@dataclass(frozen=True)
class TrackingConfig:
    ransac: RansacParams = RansacParams(100, 0.3)
    threshold_px: float = 2.0
    refine: RefineOptions = RefineOptions()
    chi_threshold: float = 3.0
    graph_ransac: RansacParams = RansacParams()
    segmentation: bool = True
    residual_mode: str = "vector"


@dataclass(frozen=True, eq=False)
class FrameState:
    """World-frame positions of the trusted observations of a tracked frame."""

    frame_id: int
    pose: PoseSE3
    ids: np.ndarray
    positions: np.ndarray


def frame_state(frame, pose: PoseSE3, intr: CameraIntrinsics, noise: NoiseParams) -> FrameState:
    ok = trusted_depth(frame.d, intr, noise)
    pc = backproject_pixels(frame.u[ok], frame.v[ok], frame.d[ok], intr)
    return FrameState(frame.frame_id, pose, np.asarray(frame.point_ids)[ok], pose.apply(pc))


def _match_arrays(lmap: LocalMap, frame, last: Optional[FrameState], segmentation: bool):
    """Array form of :func:`build_matches`: ``(ids, X, uvd, weight)``."""
    fids = np.asarray(frame.point_ids, dtype=np.int64)
    X = np.full((len(fids), 3), np.nan)
    weight = np.ones(len(fids), dtype=np.int64)
    for n, pid in enumerate(fids.tolist()):
        mp = lmap.points.get(pid)
        if mp is not None:
            X[n] = mp.position
            if segmentation:
                weight[n] = static_weight(mp)
    if last is not None and len(last.ids):
        order = np.argsort(last.ids)
        sorted_ids = last.ids[order]
        pos = np.minimum(np.searchsorted(sorted_ids, fids), len(sorted_ids) - 1)
        hit = sorted_ids[pos] == fids
        X[hit] = last.positions[order[pos[hit]]]
    keep = ~np.isnan(X[:, 0])
    uvd = np.stack([frame.u, frame.v, frame.d], axis=1).astype(float)
    return fids[keep], X[keep], uvd[keep], weight[keep]


def build_matches(lmap: LocalMap, frame, last: Optional[FrameState],
                  segmentation: bool = True) -> List[Match]:
    """Pair the frame's observations with world points.

    A point seen in the previous frame uses its position there (frame-to-frame
    tracking); otherwise its map position. Weights follow the map status.
    """
    ids, X, uvd, weight = _match_arrays(lmap, frame, last, segmentation)
    return [Match(int(pid), X[n], Observation(frame.frame_id, int(pid), *map(float, uvd[n])),
                  int(weight[n])) for n, pid in enumerate(ids)]


def track_frame(lmap: LocalMap, frame, intr: CameraIntrinsics, noise: NoiseParams,
                config: TrackingConfig = TrackingConfig(), seed: int = 0,
                last: Optional[FrameState] = None) -> Tuple[PoseEstimate, ComponentLabeling]:
    """Estimate the pose of one frame against a read-only map snapshot.

    Steps: match, RANSAC initialization, front-end graph check of the stored
    tracking graph, reweighting, and motion-only refinement on the RANSAC
    inliers that keep weight 1.
    """
    ids, X, uvd, weight = _match_arrays(lmap, frame, last, config.segmentation)
    if not len(ids):
        raise TrackingLost(f"frame {frame.frame_id}: no matched points")
    use = (weight == 1) & (uvd[:, 2] > 0)
    try:
        init = _ransac_arrays(ids[use], X[use], uvd[use], intr, config.ransac, seed,
                              config.threshold_px)
    except (NoConsensus, InsufficientMatches) as exc:
        raise TrackingLost(f"frame {frame.frame_id}: {exc}") from None

    labeling = ComponentLabeling(())
    if config.segmentation and lmap.tracking_graph.n_edges:
        ok = trusted_depth(frame.d, intr, noise)
        fids = np.asarray(frame.point_ids)[ok]
        pc = backproject_pixels(frame.u[ok], frame.v[ok], frame.d[ok], intr)
        cov = camera_covariances(frame.u[ok], frame.v[ok], frame.d[ok], intr, noise)
        pts = frame_points_in_world(fids, pc, cov, init.pose)
        labeling = segment_frame(lmap.tracking_graph, pts, lmap.ids_with_status(STATIC),
                                 config.chi_threshold, config.graph_ransac, seed,
                                 mode=config.residual_mode)
    dynamic = labeling.dynamic_ids()
    moving = np.isin(ids, np.fromiter(dynamic, np.int64, len(dynamic)))
    if np.any(moving & use):
        # the first consensus may have locked onto the moving points; redo it without them
        try:
            init = _ransac_arrays(ids[use & ~moving], X[use & ~moving], uvd[use & ~moving],
                                  intr, config.ransac, seed, config.threshold_px)
        except (NoConsensus, InsufficientMatches):
            pass
    inlier = np.isin(ids, np.fromiter(init.inlier_ids, np.int64, len(init.inlier_ids)))
    sel = (weight == 1) & inlier & ~moving
    try:
        est = _refine_arrays(init.pose, ids[sel], X[sel], uvd[sel], intr, config.refine)
    except (InsufficientMatches, Degenerate):
        est = init
    return est, labeling
