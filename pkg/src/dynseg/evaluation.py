"""Trajectory and segmentation metrics, and TUM trajectory file I/O."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import BadQuaternion, EmptyInput, NoAssociation, ParseError
from .geometry import PoseSE3


class Trajectory:
    """Timestamped camera-to-world poses with strictly increasing stamps."""

    def __init__(self, entries: Iterable[Tuple[float, PoseSE3]] = ()):
        self.entries: List[Tuple[float, PoseSE3]] = [(float(t), T) for t, T in entries]
        ts = self.timestamps
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, k):
        return self.entries[k]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([t for t, _ in self.entries], dtype=float)

    @property
    def poses(self) -> List[PoseSE3]:
        return [T for _, T in self.entries]

    def positions(self) -> np.ndarray:
        return np.array([T.translation for _, T in self.entries]).reshape(-1, 3)

    def transformed(self, left: Optional[PoseSE3] = None,
                    right: Optional[PoseSE3] = None) -> "Trajectory":
        """Apply ``left @ T @ right`` to every pose."""
        out = []
        for t, T in self.entries:
            if left is not None:
                T = left @ T
            if right is not None:
                T = T @ right
            out.append((t, T))
        return Trajectory(out)


def read_tum_trajectory(text: str) -> Trajectory:
    entries = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 8:
            raise ParseError(f"expected 8 fields, got {len(parts)}", n)
        try:
            vals = [float(x) for x in parts]
        except ValueError as exc:
            raise ParseError(str(exc), n) from None
        q = np.array(vals[4:8])
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > 1e-3:
            raise BadQuaternion(f"quaternion norm {norm:.6g} is not 1", n)
        q = q / norm
        entries.append((vals[0], PoseSE3.from_tum(*vals[1:4], *q)))
    try:
        return Trajectory(entries)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def write_tum_trajectory(traj: Trajectory, header: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    for t, T in traj:
        vals = (t, *T.translation, *T.quaternion())
        lines.append(" ".join(repr(float(x)) for x in vals))
    return "\n".join(lines) + "\n"


def associate(first: np.ndarray, second: np.ndarray, max_difference: float = 0.02):
    """One-to-one nearest-timestamp association, greedy by smallest gap.

    Returns index pairs ``(i, j)`` sorted by ``i``.
    """
    first = np.asarray(first, dtype=float)
    second = np.asarray(second, dtype=float)
    cands = []
    for i, t in enumerate(first):
        lo = np.searchsorted(second, t - max_difference, side="left")
        hi = np.searchsorted(second, t + max_difference, side="right")
        for j in range(lo, hi):
            gap = abs(t - second[j])
            if gap <= max_difference:
                cands.append((gap, i, j))
    cands.sort()
    used_i, used_j, pairs = set(), set(), []
    for _, i, j in cands:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        pairs.append((i, j))
    pairs.sort()
    return pairs


def align_rigid(model: np.ndarray, data: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation and translation minimizing ``sum |R @ model + t - data|^2`` (no scale)."""
    mu_m = model.mean(axis=0)
    mu_d = data.mean(axis=0)
    H = (model - mu_m).T @ (data - mu_d)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(3)
    if np.linalg.det(Vt.T @ U.T) < 0:
        S[2, 2] = -1.0
    R = Vt.T @ S @ U.T
    return R, mu_d - R @ mu_m


def _associated(est: Trajectory, gt: Trajectory, tol: float, need: int):
    pairs = associate(est.timestamps, gt.timestamps, tol)
    if len(pairs) < need:
        raise NoAssociation(f"only {len(pairs)} associated poses, need {need}")
    return pairs


def ate_errors(est: Trajectory, gt: Trajectory, assoc_tolerance: float = 0.02):
    """Per-pose translational errors after rigid alignment, with their gt timestamps."""
    pairs = _associated(est, gt, assoc_tolerance, 2)
    P = est.positions()[[i for i, _ in pairs]]
    Q = gt.positions()[[j for _, j in pairs]]
    R, t = align_rigid(P, Q)
    err = np.linalg.norm(P @ R.T + t - Q, axis=1)
    return gt.timestamps[[j for _, j in pairs]], err


def ate_rmse(est: Trajectory, gt: Trajectory, assoc_tolerance: float = 0.02) -> float:
    _, err = ate_errors(est, gt, assoc_tolerance)
    return float(np.sqrt(np.mean(err ** 2)))


def rpe_errors(est: Trajectory, gt: Trajectory, delta: float = 1, unit: str = "frames",
               assoc_tolerance: float = 0.02):
    """Translational relative-pose errors over intervals of ``delta`` frames or seconds."""
    pairs = _associated(est, gt, assoc_tolerance, 2)
    E = [est[i][1] for i, _ in pairs]
    G = [gt[j][1] for _, j in pairs]
    ts = np.array([gt[j][0] for _, j in pairs])
    if unit == "frames":
        step = int(delta)
        if step < 1:
            raise ValueError("frame delta must be >= 1")
        idx = [(a, a + step) for a in range(len(pairs) - step)]
    elif unit == "seconds":
        idx = []
        for a, t in enumerate(ts):
            b = int(np.searchsorted(ts, t + delta - 1e-9))
            if b < len(ts):
                idx.append((a, b))
    else:
        raise ValueError(f"unknown delta unit {unit!r}")
    if not idx:
        raise NoAssociation("no pose pairs at the requested spacing")
    err = []
    for a, b in idx:
        rel_gt = G[a].inverse() @ G[b]
        rel_est = E[a].inverse() @ E[b]
        err.append(np.linalg.norm((rel_gt.inverse() @ rel_est).translation))
    return ts[[a for a, _ in idx]], np.array(err)


def rpe_rmse(est: Trajectory, gt: Trajectory, delta: float = 1, unit: str = "frames",
             assoc_tolerance: float = 0.02) -> float:
    _, err = rpe_errors(est, gt, delta, unit, assoc_tolerance)
    return float(np.sqrt(np.mean(err ** 2)))


def segmentation_metrics(predicted: Mapping[int, str], gt) -> Tuple[float, float, float]:
    """Precision, recall and F1 with ``dynamic`` as the positive class.

    Ground-truth points missing from ``predicted`` (or labelled anything
    other than ``dynamic``) count as static predictions. Precision is 1 when
    nothing is predicted dynamic and recall is 1 when nothing is dynamic;
    F1 is 0 when precision and recall are both 0.
    """
    labels = gt.point_labels if hasattr(gt, "point_labels") else gt
    if not set(predicted) & set(labels):
        raise EmptyInput("predictions cover no ground-truth point")
    tp = fp = fn = 0
    for pid, lab in labels.items():
        truth = lab != "static"
        pred = predicted.get(pid, "static") == "dynamic"
        tp += truth and pred
        fp += pred and not truth
        fn += truth and not pred
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def false_dynamic_rate(predicted: Mapping[int, str], gt) -> float:
    """Fraction of ground-truth static points predicted dynamic."""
    labels = gt.point_labels if hasattr(gt, "point_labels") else gt
    static = [pid for pid, lab in labels.items() if lab == "static"]
    if not static:
        return 0.0
    return sum(predicted.get(pid) == "dynamic" for pid in static) / len(static)


@dataclass
class MetricReport:
    ate_rmse: float = float("nan")
    rpe_rmse: float = float("nan")
    rpe_rmse_1s: float = float("nan")
    n_pairs: int = 0
    seg_precision: float = float("nan")
    seg_recall: float = float("nan")
    seg_f1: float = float("nan")

    def to_kv(self) -> str:
        return "".join(f"{k}={v:.9g}\n" if isinstance(v, float) else f"{k}={v}\n"
                       for k, v in asdict(self).items())

    def to_text(self) -> str:
        return (f"ATE RMSE: {self.ate_rmse:.6f} m\n"
                f"RPE RMSE (1 frame): {self.rpe_rmse:.6f} m\n"
                f"RPE RMSE (1 s): {self.rpe_rmse_1s:.6f} m\n"
                f"associated poses: {self.n_pairs}\n"
                f"segmentation P/R/F1: {self.seg_precision:.4f} / {self.seg_recall:.4f}"
                f" / {self.seg_f1:.4f}\n")

    @classmethod
    def parse_kv(cls, text: str) -> "MetricReport":
        vals = {}
        for line in text.splitlines():
            if "=" in line and not line.startswith("#"):
                k, v = line.split("=", 1)
                if k in cls.__dataclass_fields__:
                    vals[k] = int(v) if k == "n_pairs" else float(v)
        return cls(**vals)
