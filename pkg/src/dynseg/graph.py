"""Point-correlation graphs: Delaunay construction, consistency pruning and components.

A graph connects map points that are neighbours in the image of a reference
keyframe. Every edge stores the 3-D distance between its endpoints in that
keyframe; in a rigid scene the distance is preserved in every later frame,
so edges whose length changes beyond the measurement noise are cut. The
connected components that remain are the candidate rigid groups.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix, csgraph
from scipy.spatial import Delaunay, QhullError
from scipy.special import erf
from scipy.stats import chi2

from .errors import DegenerateInput, MissingPoint

CONSISTENT = "consistent"
BROKEN = "broken"
# variance floor (m^2): a 1 um noise level keeps zero-noise inputs free of
# round-off breaks
VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 50
    min_fraction: float = 0.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.min_fraction <= 1.0:
            raise ValueError("min_fraction must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class CorrelationEdge:
    i: int
    j: int
    ref_distance: float
    covariance: np.ndarray
    status: str = CONSISTENT


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CorrelationGraph:
    """Immutable correlation graph stored as parallel arrays.

    ``vertices`` is sorted; ``uv`` holds the reference pixel of each vertex.
    Edges satisfy ``i < j`` and are sorted lexicographically.
    """

    vertices: np.ndarray
    uv: np.ndarray
    i: np.ndarray
    j: np.ndarray
    ref_distance: np.ndarray
    covariance: np.ndarray
    consistent: np.ndarray = None
    # reference-frame vector p_i - p_j, world-aligned
    ref_vector: np.ndarray = None

    def __post_init__(self):
        n_edges = len(self.i)
        if self.consistent is None:
            object.__setattr__(self, "consistent", np.ones(n_edges, dtype=bool))
        if self.ref_vector is None:
            object.__setattr__(self, "ref_vector", np.full((n_edges, 3), np.nan))
        for name, dtype in (("vertices", np.int64), ("uv", float), ("i", np.int64),
                            ("j", np.int64), ("ref_distance", float),
                            ("covariance", float), ("consistent", bool),
                            ("ref_vector", float)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        if self.uv.shape != (len(self.vertices), 2):
            object.__setattr__(self, "uv", _frozen(np.zeros((len(self.vertices), 2)), float))
        if self.covariance.shape != (n_edges, 3, 3):
            object.__setattr__(self, "covariance", _frozen(np.zeros((n_edges, 3, 3)), float))
        if self.consistent.shape != (n_edges,) or len(self.j) != n_edges:
            raise ValueError("edge arrays differ in length")
        if self.ref_vector.shape != (n_edges, 3):
            object.__setattr__(self, "ref_vector", _frozen(np.full((n_edges, 3), np.nan), float))

    @classmethod
    def empty(cls) -> "CorrelationGraph":
        return cls(np.zeros(0, np.int64), np.zeros((0, 2)), np.zeros(0, np.int64),
                   np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 3, 3)))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.i)

    def edges(self) -> Iterator[CorrelationEdge]:
        for k in range(self.n_edges):
            yield CorrelationEdge(int(self.i[k]), int(self.j[k]), float(self.ref_distance[k]),
                                  self.covariance[k],
                                  CONSISTENT if self.consistent[k] else BROKEN)

    def edge_set(self) -> set:
        return set(zip(self.i.tolist(), self.j.tolist()))

    def select_edges(self, mask) -> "CorrelationGraph":
        mask = np.asarray(mask, dtype=bool)
        return CorrelationGraph(self.vertices, self.uv, self.i[mask], self.j[mask],
                                self.ref_distance[mask], self.covariance[mask],
                                self.consistent[mask], self.ref_vector[mask])

    def with_status(self, consistent) -> "CorrelationGraph":
        return CorrelationGraph(self.vertices, self.uv, self.i, self.j,
                                self.ref_distance, self.covariance, consistent, self.ref_vector)

    def without_broken(self) -> "CorrelationGraph":
        return self.select_edges(self.consistent)

    def subgraph(self, ids) -> "CorrelationGraph":
        """Induced subgraph on the given vertex ids."""
        ids = np.fromiter((int(x) for x in ids), dtype=np.int64)
        keep_v = np.isin(self.vertices, ids)
        keep_e = np.isin(self.i, ids) & np.isin(self.j, ids)
        return CorrelationGraph(self.vertices[keep_v], self.uv[keep_v], self.i[keep_e],
                                self.j[keep_e], self.ref_distance[keep_e],
                                self.covariance[keep_e], self.consistent[keep_e],
                                self.ref_vector[keep_e])

    def neighbors(self, vid: int) -> List[int]:
        out = self.j[self.i == vid].tolist() + self.i[self.j == vid].tolist()
        return sorted(out)


@dataclass(frozen=True)
class ComponentLabeling:
    components: Tuple[Tuple[int, ...], ...]
    static_component: Optional[int] = None
    dynamic_components: Tuple[int, ...] = ()

    def static_ids(self) -> set:
        if self.static_component is None:
            return set()
        return set(self.components[self.static_component])

    def dynamic_ids(self) -> set:
        out = set()
        for k in self.dynamic_components:
            out.update(self.components[k])
        return out

    def label_of(self) -> Dict[int, str]:
        labels = {}
        for k, comp in enumerate(self.components):
            lab = "static" if k == self.static_component else (
                "dynamic" if k in self.dynamic_components else "unknown")
            for pid in comp:
                labels[pid] = lab
        return labels


class FramePoints:
    """Positions (and optionally covariances) of points observed in one frame."""

    def __init__(self, ids, positions, covariances=None):
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 3)[order]
        self.covariances = None
        if covariances is not None:
            self.covariances = np.asarray(covariances, dtype=float).reshape(-1, 3, 3)[order]

    @classmethod
    def from_mapping(cls, points: Mapping[int, Sequence[float]],
                     covariances: Optional[Mapping[int, np.ndarray]] = None) -> "FramePoints":
        ids = sorted(points)
        P = np.array([points[k] for k in ids], dtype=float).reshape(-1, 3)
        C = None
        if covariances is not None:
            C = np.array([covariances[k] for k in ids], dtype=float).reshape(-1, 3, 3)
        return cls(ids, P, C)

    def __len__(self):
        return len(self.ids)

    def lookup(self, query):
        """Row index of each query id, and a mask of which ids are present."""
        query = np.asarray(query, dtype=np.int64)
        idx = np.searchsorted(self.ids, query)
        idx = np.minimum(idx, max(len(self.ids) - 1, 0))
        found = (self.ids[idx] == query) if len(self.ids) else np.zeros(len(query), bool)
        return idx, found


def _as_frame_points(points_k, covariances=None) -> FramePoints:
    if isinstance(points_k, FramePoints):
        return points_k
    return FramePoints.from_mapping(points_k, covariances)


def _orientation(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _all_collinear(uv: np.ndarray) -> bool:
    a = uv[0]
    far = np.argmax(np.sum((uv - a) ** 2, axis=1))
    b = uv[far]
    scale = np.abs(uv).max() + 1.0
    if np.sum((b - a) ** 2) <= (1e-12 * scale) ** 2:
        return True
    cross = (b[0] - a[0]) * (uv[:, 1] - a[1]) - (b[1] - a[1]) * (uv[:, 0] - a[0])
    return bool(np.all(np.abs(cross) <= 1e-12 * scale * scale))


def delaunay_edges(uv: np.ndarray) -> np.ndarray:
    """Unique undirected edges ``(a, b)`` with ``a < b`` of the Delaunay triangulation."""
    uv = np.asarray(uv, dtype=float)
    try:
        tri = Delaunay(uv, qhull_options="Qbb Qc Qz Q12 Qt")
    except QhullError as exc:
        raise DegenerateInput(f"triangulation failed: {exc}") from None
    s = tri.simplices
    pairs = np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [0, 2]]])
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)


def build_delaunay(points: Iterable[Tuple[int, float, float]],
                   positions: Optional[Mapping[int, Sequence[float]]] = None,
                   covariances: Optional[Mapping[int, np.ndarray]] = None) -> CorrelationGraph:
    """Connect image-neighbouring points by Delaunay triangulation of their pixels.

    When ``positions`` (reference-frame 3-D points) are given, each edge
    records the distance between its endpoints; ``covariances`` adds the
    summed endpoint covariance to each edge.
    """
    pts = sorted((int(pid), float(u), float(v)) for pid, u, v in points)
    if len(pts) < 3:
        raise DegenerateInput("need at least 3 points")
    ids = np.array([p[0] for p in pts], dtype=np.int64)
    if len(np.unique(ids)) != len(ids):
        raise ValueError("duplicate point ids")
    uv = np.array([(p[1], p[2]) for p in pts])
    pos = None
    if positions is not None:
        pos = np.array([positions[k] for k in ids.tolist()], dtype=float)
    cov = None
    if covariances is not None:
        cov = np.array([covariances[k] for k in ids.tolist()], dtype=float)
    return build_graph_arrays(ids, uv, pos, cov)


def build_graph_arrays(ids, uv, positions=None, covariances=None) -> CorrelationGraph:
    """Array form of :func:`build_delaunay`; ``ids`` must be sorted and unique."""
    ids = np.asarray(ids, dtype=np.int64)
    uv = np.asarray(uv, dtype=float)
    if len(ids) < 3:
        raise DegenerateInput("need at least 3 points")
    if _all_collinear(uv):
        raise DegenerateInput("all points are collinear")
    pairs = delaunay_edges(uv)
    a, b = pairs[:, 0], pairs[:, 1]
    ref = np.zeros(len(pairs))
    vec = None
    if positions is not None:
        P = np.asarray(positions, dtype=float)
        vec = P[a] - P[b]
        ref = np.linalg.norm(vec, axis=1)
    cov = np.zeros((len(pairs), 3, 3))
    if covariances is not None:
        C = np.asarray(covariances, dtype=float)
        cov = C[a] + C[b]
    return CorrelationGraph(ids, uv, ids[a], ids[b], ref, cov, None, vec)


def _residual_arrays(graph: CorrelationGraph, frame: FramePoints):
    """Residuals for all edges whose endpoints are both present in ``frame``.

    Returns ``(mask, current_distance, sigma)`` where ``mask`` selects the
    evaluable edges and the other arrays are restricted to them.
    """
    ia, fa = frame.lookup(graph.i)
    ib, fb = frame.lookup(graph.j)
    mask = fa & fb
    ia, ib = ia[mask], ib[mask]
    diff = frame.positions[ia] - frame.positions[ib]
    cur = np.linalg.norm(diff, axis=1)
    g = diff / np.where(cur > 0, cur, 1.0)[:, None]
    S = graph.covariance[mask]
    if frame.covariances is not None:
        S = S + frame.covariances[ia] + frame.covariances[ib]
    var = np.einsum("ni,nij,nj->n", g, S, g)
    return mask, cur, np.sqrt(np.maximum(var, 0.0) + VAR_FLOOR)


def _normalize(residual, sigma):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = residual / sigma
    out = np.where(sigma > 0, out, np.where(residual == 0, 0.0, np.copysign(np.inf, residual)))
    return out


def edge_residual(edge: CorrelationEdge, points_k: Mapping[int, Sequence[float]],
                  covariances_k: Optional[Mapping[int, np.ndarray]] = None) -> Tuple[float, float]:
    """Distance change of one edge in frame k, raw (meters) and noise-normalized.

    The noise is the edge covariance (plus the frame-k covariances of both
    endpoints when given) projected on the inter-point direction, with a
    1 um floor so noiseless inputs stay finite.
    """
    for pid in (edge.i, edge.j):
        if pid not in points_k:
            raise MissingPoint(f"point {pid} has no position in this frame")
    pi = np.asarray(points_k[edge.i], dtype=float)
    pj = np.asarray(points_k[edge.j], dtype=float)
    diff = pi - pj
    cur = float(np.linalg.norm(diff))
    residual = cur - edge.ref_distance
    g = diff / cur if cur > 0 else np.zeros(3)
    S = np.asarray(edge.covariance, dtype=float)
    if covariances_k is not None:
        S = S + np.asarray(covariances_k[edge.i]) + np.asarray(covariances_k[edge.j])
    sigma = float(np.sqrt(max(g @ S @ g, 0.0) + VAR_FLOOR))
    return residual, float(_normalize(np.array(residual), np.array(sigma)))


def edge_residuals(graph: CorrelationGraph, points_k, covariances_k=None):
    """Vectorized residuals: ``(mask, residual, normalized)`` over evaluable edges."""
    frame = _as_frame_points(points_k, covariances_k)
    mask, cur, sigma = _residual_arrays(graph, frame)
    residual = cur - graph.ref_distance[mask]
    return mask, residual, _normalize(residual, sigma)


def _scale_consensus(cur, ref, sigma, chi, params: RansacParams, rng) -> float:
    """Common distance scale shared by the largest consistent edge subset.

    Hypotheses come from single sampled edges; the winner is refit on its
    inliers. Without a consensus of ``min_fraction`` the rigid model (scale
    1) is kept.
    """
    n = len(cur)
    usable = (ref > 0) & (sigma > 0)
    if n == 0 or not usable.any():
        return 1.0
    cand = np.flatnonzero(usable)
    picks = cand[rng.integers(len(cand), size=params.iterations)]
    hyp = np.concatenate([[1.0], cur[picks] / ref[picks]])
    # (H, n) consensus table
    err = np.abs(cur[None, :] - hyp[:, None] * ref[None, :])
    counts = np.count_nonzero(err <= chi * sigma[None, :], axis=1)
    best = int(np.argmax(counts))
    if counts[best] < params.min_fraction * n:
        return 1.0
    inl = (err[best] <= chi * sigma) & usable
    w = 1.0 / sigma[inl] ** 2
    denom = np.sum(w * ref[inl] ** 2)
    if denom <= 0:
        return float(hyp[best])
    return float(np.sum(w * cur[inl] * ref[inl]) / denom)


def _kabsch_batch(A: np.ndarray, B: np.ndarray, w=None) -> np.ndarray:
    """Rotations ``R`` minimizing ``sum w |R a - b|^2`` for stacks of vector sets (no centering)."""
    if w is None:
        H = np.einsum("hni,hnj->hij", A, B)
    else:
        H = np.einsum("hn,hni,hnj->hij", w, A, B)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(np.einsum("hji,hkj->hik", Vt, U)))
    d[d == 0] = 1.0
    D = np.zeros_like(H)
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    return np.einsum("hji,hjk,hlk->hil", Vt, D, U)


def _vector_threshold(chi: float, dof: int = 3) -> float:
    """Squared Mahalanobis bound with the same false-alarm rate as ``|z| <= chi``."""
    return float(chi2.ppf(erf(chi / np.sqrt(2.0)), dof))


def _vector_arrays(graph: CorrelationGraph, frame: FramePoints):
    ia, fa = frame.lookup(graph.i)
    ib, fb = frame.lookup(graph.j)
    mask = fa & fb
    ia, ib = ia[mask], ib[mask]
    cur = frame.positions[ia] - frame.positions[ib]
    S = graph.covariance[mask]
    if frame.covariances is not None:
        S = S + frame.covariances[ia] + frame.covariances[ib]
    return mask, cur, graph.ref_vector[mask], _sym_inv3(S + np.eye(3) * VAR_FLOOR)


def _sym_inv3(S: np.ndarray) -> np.ndarray:
    """Inverses of symmetric 3x3 matrices as ``(n, 6)`` rows ``xx yy zz xy xz yz``."""
    a, d, f = S[:, 0, 0], S[:, 1, 1], S[:, 2, 2]
    b, c, e = S[:, 0, 1], S[:, 0, 2], S[:, 1, 2]
    cof = np.stack([d * f - e * e, a * f - c * c, a * d - b * b,
                    c * e - b * f, b * e - c * d, b * c - a * e], axis=1)
    det = a * cof[:, 0] + b * cof[:, 3] + c * cof[:, 4]
    # zero-noise edges get a huge but finite weight
    det = np.where(det > 1e-300, det, 1e-300)
    return cof / det[:, None]


def _mahalanobis_sq(err: np.ndarray, info: np.ndarray) -> np.ndarray:
    x, y, z = err[..., 0], err[..., 1], err[..., 2]
    return (info[:, 0] * x * x + info[:, 1] * y * y + info[:, 2] * z * z
            + 2.0 * (info[:, 3] * x * y + info[:, 4] * x * z + info[:, 5] * y * z))


def _sample_triples(n: int, count: int, rng) -> np.ndarray:
    """``count`` triples of distinct indices below ``n``."""
    a = rng.integers(n, size=count)
    b = (a + 1 + rng.integers(n - 1, size=count)) % n
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    c = rng.integers(n - 2, size=count)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.stack([a, b, c], axis=1)


def _iterations_needed(inlier_fraction: float, cap: int, confidence: float = 0.99) -> int:
    good = inlier_fraction ** 3
    if good >= 1.0:
        return 1
    if good <= 0.0:
        return cap
    return min(cap, int(np.ceil(np.log(1.0 - confidence) / np.log(1.0 - good))))


def _rotation_consensus(cur, ref, info, bound, params: RansacParams, rng,
                        chunk: int = 8) -> np.ndarray:
    """Small common rotation relating reference and current edge vectors.

    It absorbs the orientation error of the frame pose. Hypotheses come from
    three sampled edges plus the identity, drawn until an all-inlier sample
    is 99% likely (at most ``iterations``); without a consensus of
    ``min_fraction`` the identity is kept.
    """
    n = len(cur)
    if n < 3:
        return np.eye(3)
    picks = _sample_triples(n, params.iterations, rng)
    best_count = np.count_nonzero(_mahalanobis_sq(cur - ref, info) <= bound)
    best_R = np.eye(3)
    done, needed = 0, _iterations_needed(best_count / n, params.iterations)
    while done < needed:
        sl = picks[done:done + chunk]
        done += len(sl)
        hyp = _kabsch_batch(ref[sl], cur[sl])
        err = cur[None] - np.matmul(ref[None], np.swapaxes(hyp, 1, 2))
        counts = np.count_nonzero(_mahalanobis_sq(err, info) <= bound, axis=1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best_R = counts[k], hyp[k]
            needed = _iterations_needed(best_count / n, params.iterations)
    if best_count < params.min_fraction * n:
        return np.eye(3)
    inl = _mahalanobis_sq(cur - ref @ best_R.T, info) <= bound
    w = info[inl, :3].sum(axis=1)
    return _kabsch_batch(ref[inl][None], cur[inl][None], w[None])[0]


def edge_vector_residuals(graph: CorrelationGraph, points_k, covariances_k=None,
                          rotation: Optional[np.ndarray] = None):
    """Change of the full edge vector: ``(mask, residual (E, 3), mahalanobis)``.

    ``rotation`` is applied to the reference vectors before comparing.
    """
    frame = _as_frame_points(points_k, covariances_k)
    mask, cur, ref, info = _vector_arrays(graph, frame)
    if rotation is not None:
        ref = ref @ np.asarray(rotation, dtype=float).T
    err = cur - ref
    return mask, err, np.sqrt(_mahalanobis_sq(err, info))


def mark_broken(graph: CorrelationGraph, points_k, chi_threshold: float = 3.0,
                ransac: RansacParams = RansacParams(), seed: int = 0,
                covariances_k=None, absolute_threshold: Optional[float] = None,
                mode: str = "vector"):
    """Flag edges that are inconsistent in frame k.

    ``mode="distance"`` tests the change of edge length against its
    projected noise, with a RANSAC common scale. ``mode="vector"`` tests the
    change of the whole world-aligned edge vector (Mahalanobis, at the same
    false-alarm rate as ``chi_threshold`` sigma), with a RANSAC common small
    rotation; it also catches motion perpendicular to an edge, which leaves
    the length nearly unchanged. Graphs without stored reference vectors
    fall back to the distance test.

    Returns ``(graph_with_status, evaluated_mask)``. Edges with an endpoint
    missing from frame k are left untouched and reported as not evaluated.
    ``absolute_threshold`` (meters) replaces the normalized length test.
    """
    if mode not in ("distance", "vector"):
        raise ValueError(f"unknown residual mode {mode!r}")
    frame = _as_frame_points(points_k, covariances_k)
    consistent = graph.consistent.copy()
    rng = np.random.default_rng(seed)
    if (mode == "vector" and absolute_threshold is None
            and not np.isnan(graph.ref_vector).any()):
        mask, cur, ref, info = _vector_arrays(graph, frame)
        bound = _vector_threshold(chi_threshold)
        R = _rotation_consensus(cur, ref, info, bound, ransac, rng)
        bad = _mahalanobis_sq(cur - ref @ R.T, info) > bound
    else:
        mask, cur, sigma = _residual_arrays(graph, frame)
        ref = graph.ref_distance[mask]
        if absolute_threshold is not None:
            bad = np.abs(cur - ref) > absolute_threshold
        else:
            scale = _scale_consensus(cur, ref, sigma, chi_threshold, ransac, rng)
            bad = np.abs(cur - scale * ref) > chi_threshold * sigma
    idx = np.flatnonzero(mask)
    consistent[idx[bad]] = False
    return graph.with_status(consistent), mask


def prune_edges(graph: CorrelationGraph, points_k, chi_threshold: float = 3.0,
                ransac: RansacParams = RansacParams(), seed: int = 0,
                covariances_k=None, absolute_threshold: Optional[float] = None,
                mode: str = "vector") -> CorrelationGraph:
    """Remove the edges that are inconsistent with frame k (see :func:`mark_broken`)."""
    marked, _ = mark_broken(graph, points_k, chi_threshold, ransac, seed,
                            covariances_k, absolute_threshold, mode)
    return marked.without_broken()


def connected_components(graph: CorrelationGraph) -> ComponentLabeling:
    """Maximal connected vertex sets over the consistent edges.

    The traversal itself is scipy's compiled graph search; components are
    ordered by their smallest point id, with sorted members.
    """
    if not graph.consistent.all():
        graph = graph.without_broken()
    n = graph.n_vertices
    if n == 0:
        return ComponentLabeling(())
    a = np.searchsorted(graph.vertices, graph.i)
    b = np.searchsorted(graph.vertices, graph.j)
    adj = coo_matrix((np.ones(len(a), dtype=np.int8), (a, b)), shape=(n, n))
    _, label = csgraph.connected_components(adj, directed=False)
    # relabel so that components follow their smallest vertex (vertices are sorted)
    _, first = np.unique(label, return_index=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    label = rank[label]
    order = np.argsort(label, kind="stable")
    bounds = np.flatnonzero(np.diff(label[order])) + 1
    verts = graph.vertices[order]
    return ComponentLabeling(tuple(tuple(c.tolist()) for c in np.split(verts, bounds)))


def classify_components(labeling: ComponentLabeling, prior_static=()) -> ComponentLabeling:
    """Pick the static component; every other component is dynamic.

    The static component overlaps most with ``prior_static``; without any
    overlap the largest component wins. Remaining ties go to the larger
    component, then to the one holding the smallest point id.
    """
    comps = labeling.components
    if not comps:
        return ComponentLabeling(comps)
    prior = set(prior_static)
    best = max(range(len(comps)),
               key=lambda k: (len(prior.intersection(comps[k])), len(comps[k]), -comps[k][0]))
    dynamic = tuple(k for k in range(len(comps)) if k != best)
    return ComponentLabeling(comps, best, dynamic)


def confirm_dynamic(labeling: ComponentLabeling, marked: CorrelationGraph) -> ComponentLabeling:
    """Keep as dynamic only components cut from the static component by a broken edge.

    A group whose broken edges all lead to other non-static groups (say a
    static point enclosed by a moving object in the image) shows no motion
    relative to the static scene and is left undetermined.
    """
    if labeling.static_component is None or not labeling.dynamic_components:
        return labeling
    comp_of = {}
    for k, comp in enumerate(labeling.components):
        for pid in comp:
            comp_of[pid] = k
    static = labeling.static_component
    touched = set()
    for a, b in zip(marked.i[~marked.consistent].tolist(), marked.j[~marked.consistent].tolist()):
        ca, cb = comp_of.get(a), comp_of.get(b)
        if ca == static and cb is not None:
            touched.add(cb)
        elif cb == static and ca is not None:
            touched.add(ca)
    dynamic = tuple(k for k in labeling.dynamic_components if k in touched)
    return ComponentLabeling(labeling.components, static, dynamic)


def dump_graph(graph: CorrelationGraph) -> str:
    lines = [f"POINT {int(v)} {u:.9g} {w:.9g}" for v, (u, w) in zip(graph.vertices, graph.uv)]
    for e in graph.edges():
        lines.append(f"EDGE {e.i} {e.j} {e.ref_distance:.9g} {e.status}")
    return "\n".join(lines) + "\n"


def parse_graph_dump(text: str) -> CorrelationGraph:
    verts, uv, ei, ej, ref, ok = [], [], [], [], [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "POINT":
            verts.append(int(parts[1]))
            uv.append((float(parts[2]), float(parts[3])))
        elif parts[0] == "EDGE":
            ei.append(int(parts[1]))
            ej.append(int(parts[2]))
            ref.append(float(parts[3]))
            ok.append(parts[4] == CONSISTENT)
    order = np.argsort(verts, kind="stable")
    return CorrelationGraph(np.array(verts, np.int64)[order], np.array(uv).reshape(-1, 2)[order],
                            ei, ej, ref, np.zeros((len(ei), 3, 3)), ok)


def segment_frame(graph: CorrelationGraph, points_k, prior_static=(), chi_threshold: float = 3.0,
                  ransac: RansacParams = RansacParams(), seed: int = 0,
                  covariances_k=None, mode: str = "vector") -> ComponentLabeling:
    """Front-end check of a stored graph against one frame.

    The graph is restricted to the points observed in the frame, pruned,
    split into components and classified against ``prior_static``; see
    :func:`confirm_dynamic` for which non-static components count as dynamic.
    """
    frame = _as_frame_points(points_k, covariances_k)
    keep_v = np.isin(graph.vertices, frame.ids)
    keep_e = np.isin(graph.i, frame.ids) & np.isin(graph.j, frame.ids)
    sub = CorrelationGraph(graph.vertices[keep_v], graph.uv[keep_v], graph.i[keep_e],
                           graph.j[keep_e], graph.ref_distance[keep_e],
                           graph.covariance[keep_e], graph.consistent[keep_e],
                           graph.ref_vector[keep_e])
    marked, _ = mark_broken(sub, frame, chi_threshold, ransac, seed, mode=mode)
    labeling = classify_components(connected_components(marked), prior_static)
    return confirm_dynamic(labeling, marked)
