"""Local map: map points, keyframes, static connections and point lifecycles.

Point status moves ``unknown -> static``, ``unknown -> dynamic``,
``static -> dynamic`` (after repeated splits) and ``dynamic -> removed``.
All operations return a new :class:`LocalMap`; existing maps are never
mutated, so a map can be handed to another thread as a snapshot.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from .errors import DuplicateKeyframe
from .geometry import (CameraIntrinsics, NoiseParams, PoseSE3, backproject_pixels,
                       camera_covariances, trusted_depth)
from .graph import (ComponentLabeling, CorrelationGraph, FramePoints, RansacParams,
                    build_graph_arrays, classify_components, confirm_dynamic,
                    connected_components, mark_broken)
from .errors import DegenerateInput

UNKNOWN = "unknown"
STATIC = "static"
DYNAMIC = "dynamic"


@dataclass(frozen=True, eq=False)
class MapPoint:
    id: int
    position: np.ndarray
    covariance: Optional[np.ndarray]
    status: str = UNKNOWN
    last_tracked_kf: int = 0
    created_kf: int = 0
    static_votes: int = 0
    split_votes: int = 0


@dataclass(frozen=True, eq=False)
class Keyframe:
    """A keyframe: ``observations`` is a FrameObservations-like record of arrays."""

    id: int
    timestamp: float
    pose: PoseSE3
    observations: object

    def camera_points(self, intr: CameraIntrinsics, noise: NoiseParams):
        """Trusted observations as ``(ids, uv, camera-frame points, covariances)``."""
        obs = self.observations
        ok = trusted_depth(obs.d, intr, noise)
        ids = np.asarray(obs.point_ids)[ok]
        u, v, d = obs.u[ok], obs.v[ok], obs.d[ok]
        return (ids, np.stack([u, v], axis=1), backproject_pixels(u, v, d, intr),
                camera_covariances(u, v, d, intr, noise))

    def world_frame_points(self, intr, noise, exclude=()) -> FramePoints:
        ids, _, pc, cov = self.camera_points(intr, noise)
        return frame_points_in_world(ids, pc, cov, self.pose, exclude)


def frame_points_in_world(ids, pc, cov, pose: PoseSE3, exclude=()) -> FramePoints:
    keep = ~np.isin(ids, np.fromiter(exclude, dtype=np.int64, count=len(exclude)))
    R = pose.rotation
    return FramePoints(ids[keep], pose.apply(pc[keep]),
                       np.einsum("ij,njk,lk->nil", R, cov[keep], R))


@dataclass(frozen=True, eq=False)
class LocalMap:
    points: Dict[int, MapPoint] = field(default_factory=dict)
    keyframes: Tuple[Keyframe, ...] = ()
    keyframe_ids: Tuple[int, ...] = ()
    static_graph: CorrelationGraph = field(default_factory=CorrelationGraph.empty)
    # pruned graph over static and unknown points, checked by the front-end
    tracking_graph: CorrelationGraph = field(default_factory=CorrelationGraph.empty)
    retention_window: int = 3
    max_keyframes: int = 10
    static_votes_needed: int = 2
    demotion_votes: int = 2

    def replace(self, **kw) -> "LocalMap":
        return dataclasses.replace(self, **kw)

    @property
    def initialized(self) -> bool:
        return bool(self.keyframes)

    @property
    def last_keyframe(self) -> Optional[Keyframe]:
        return self.keyframes[-1] if self.keyframes else None

    def ids_with_status(self, status: str) -> set:
        return {pid for pid, p in self.points.items() if p.status == status}

    def status_of(self) -> Dict[int, str]:
        return {pid: p.status for pid, p in self.points.items()}

    def keyframes_since(self, kf_id: int) -> int:
        """Number of keyframes inserted after keyframe ``kf_id``."""
        return len(self.keyframe_ids) - int(np.searchsorted(self.keyframe_ids, kf_id, "right"))

    def check(self):
        """Assert the structural invariants of the map."""
        static = self.ids_with_status(STATIC)
        assert set(self.static_graph.vertices.tolist()) <= static
        dynamic = self.ids_with_status(DYNAMIC)
        assert not (set(self.tracking_graph.vertices.tolist()) & dynamic)


def insert_keyframe(lmap: LocalMap, kf: Keyframe, intr: CameraIntrinsics,
                    noise: NoiseParams) -> LocalMap:
    """Add a keyframe: new observed points are created, known ones refreshed."""
    if lmap.keyframe_ids and kf.id <= lmap.keyframe_ids[-1]:
        raise DuplicateKeyframe(f"keyframe {kf.id} is not newer than {lmap.keyframe_ids[-1]}")
    points = dict(lmap.points)
    obs = kf.observations
    ok = trusted_depth(obs.d, intr, noise)
    pc = backproject_pixels(obs.u, obs.v, obs.d, intr)
    pw = kf.pose.apply(pc)
    covs = camera_covariances(obs.u, obs.v, obs.d, intr, noise)
    R = kf.pose.rotation
    for n, pid in enumerate(np.asarray(obs.point_ids).tolist()):
        p = points.get(pid)
        if p is not None:
            points[pid] = dataclasses.replace(p, last_tracked_kf=kf.id)
        elif ok[n]:
            points[pid] = MapPoint(pid, pw[n], R @ covs[n] @ R.T, UNKNOWN, kf.id, kf.id)
    keyframes = (lmap.keyframes + (kf,))[-lmap.max_keyframes:]
    return lmap.replace(points=points, keyframes=keyframes,
                        keyframe_ids=lmap.keyframe_ids + (kf.id,))


def update_point_status(lmap: LocalMap, labeling: ComponentLabeling,
                        evidence: Optional[Iterable[int]] = None,
                        graph: Optional[CorrelationGraph] = None) -> LocalMap:
    """Apply a component labeling to the map.

    ``evidence`` holds the ids whose edges were actually compared between
    frames; unknown points are only promoted to static with evidence (in
    ``static_votes_needed`` labelings). ``graph`` is the pruned graph the
    labeling came from and becomes the new static/tracking graph.
    """
    if not labeling.components:
        return lmap
    evidence = None if evidence is None else set(evidence)
    points = dict(lmap.points)
    static_ids = labeling.static_ids()
    for pid in static_ids:
        p = points.get(pid)
        if p is None:
            continue
        if p.status == UNKNOWN and (evidence is None or pid in evidence):
            votes = p.static_votes + 1
            status = STATIC if votes >= lmap.static_votes_needed else UNKNOWN
            points[pid] = dataclasses.replace(p, static_votes=votes, status=status)
        elif p.status == STATIC and p.split_votes:
            points[pid] = dataclasses.replace(p, split_votes=0)
    for pid in labeling.dynamic_ids():
        p = points.get(pid)
        if p is None:
            continue
        if p.status == UNKNOWN:
            points[pid] = dataclasses.replace(p, status=DYNAMIC)
        elif p.status == STATIC:
            votes = p.split_votes + 1
            status = DYNAMIC if votes >= lmap.demotion_votes else STATIC
            points[pid] = dataclasses.replace(p, split_votes=votes, status=status)

    for pid, p in list(points.items()):
        if p.status == DYNAMIC and lmap.keyframes_since(p.last_tracked_kf) >= lmap.retention_window:
            del points[pid]

    static = {pid for pid, p in points.items() if p.status == STATIC}
    tracked = {pid for pid, p in points.items() if p.status != DYNAMIC}
    if graph is not None:
        static_graph = graph.subgraph(static)
        tracking_graph = graph.subgraph(tracked)
    else:
        static_graph = lmap.static_graph.subgraph(static)
        tracking_graph = lmap.tracking_graph.subgraph(tracked)
    return lmap.replace(points=points, static_graph=static_graph, tracking_graph=tracking_graph)


def static_weight(p: MapPoint) -> int:
    """1 for points usable in pose estimation (static or not yet classified), else 0."""
    return 0 if p.status == DYNAMIC else 1


@dataclass(frozen=True, eq=False)
class BackendResult:
    keyframe_id: int
    graph: CorrelationGraph
    labeling: ComponentLabeling
    evidence: frozenset


def backend_segmentation(lmap: LocalMap, intr: CameraIntrinsics, noise: NoiseParams,
                         chi_threshold: float = 3.0, ransac: RansacParams = RansacParams(),
                         seed: int = 0, window: int = 3,
                         mode: str = "vector") -> BackendResult:
    """Segment the points of the newest keyframe against older keyframes.

    A Delaunay graph is built over the newest keyframe's pixels (known
    dynamic points excluded); its edges are checked in each of the previous
    ``window - 1`` keyframes, and the surviving components are classified
    with the current static points as prior.
    """
    kf = lmap.last_keyframe
    dynamic = lmap.ids_with_status(DYNAMIC)
    ids, uv, pc, cov = kf.camera_points(intr, noise)
    keep = ~np.isin(ids, np.fromiter(dynamic, dtype=np.int64, count=len(dynamic)))
    ids, uv = ids[keep], uv[keep]
    ref = frame_points_in_world(ids, pc[keep], cov[keep], kf.pose)
    try:
        graph = build_graph_arrays(ref.ids, uv[np.argsort(ids, kind="stable")],
                                   ref.positions, ref.covariances)
    except DegenerateInput:
        return BackendResult(kf.id, CorrelationGraph.empty(), ComponentLabeling(()), frozenset())
    evidence = set()
    for n, old in enumerate(lmap.keyframes[-window:-1]):
        frame = old.world_frame_points(intr, noise, dynamic)
        graph, mask = mark_broken(graph, frame, chi_threshold, ransac, seed=seed + n,
                                  covariances_k=None, mode=mode)
        evidence.update(graph.i[mask].tolist())
        evidence.update(graph.j[mask].tolist())
    labeling = classify_components(connected_components(graph), lmap.ids_with_status(STATIC))
    labeling = confirm_dynamic(labeling, graph)
    graph = graph.without_broken()
    return BackendResult(kf.id, graph, labeling, frozenset(evidence))


def apply_backend(lmap: LocalMap, result: BackendResult) -> LocalMap:
    return update_point_status(lmap, result.labeling, result.evidence, result.graph)
