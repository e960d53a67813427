"""Frame-to-frame nucleus tracking and the displacement split.

Tracks live in a configurable coordinate space. The default is the
straightened body space, where rigid repositioning of the whole embryo
cancels out and the residual motion is the biological part worth gating on.
Each frame pair is one gated assignment solve; a track whose gate wins goes
dim and keeps its last coordinate so it can be matched again whenever the
nucleus brightens back up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .assignment import (Assignment, ConstraintSet, build_cost_matrix,
                         solve_constrained, solve_lap)
from .errors import MissingCorrespondence
from .geometry import (SeamCellFrame, StraightenedCoord, fit_splines,
                       straighten_frame, straighten_point)
from .graphs import (build_delaunay_graph, build_distance_graph,
                     rescore_hypotheses)
from .records import NucleusRecord

COORDINATE_SPACES = ("raw", "straightened")
METHODS = ("gnn", "murty_rescore")
GRAPH_KINDS = ("radius", "delaunay")

MATCHED = "matched"
DIMMED = "dimmed"
NOT_YET_PRESENT = "not_yet_present"


@dataclass(frozen=True)
class TrackStatus:
    """Per-frame state of one track."""

    kind: str
    detection_index: Optional[int] = None

    def __post_init__(self):
        if self.kind not in (MATCHED, DIMMED, NOT_YET_PRESENT):
            raise ValueError(f"unknown status kind {self.kind!r}")
        if (self.detection_index is not None) != (self.kind == MATCHED):
            raise ValueError("detection_index goes with matched status only")

    @property
    def is_matched(self) -> bool:
        return self.kind == MATCHED


def matched(detection_index: int) -> TrackStatus:
    return TrackStatus(MATCHED, int(detection_index))


DIMMED_STATUS = TrackStatus(DIMMED)
NOT_YET_STATUS = TrackStatus(NOT_YET_PRESENT)


@dataclass(frozen=True)
class TrackSet:
    """Status of every track in every frame.

    Within a frame each detection index belongs to at most one track; a track
    is dimmed exactly in the frames where its gate won.
    """

    tracks: Mapping[str, Tuple[TrackStatus, ...]]
    frame_count: int

    def __post_init__(self):
        object.__setattr__(self, "tracks",
                           {k: tuple(v) for k, v in self.tracks.items()})
        for nid, hist in self.tracks.items():
            if len(hist) != self.frame_count:
                raise ValueError(f"track {nid!r} has {len(hist)} statuses "
                                 f"for {self.frame_count} frames")
        for t in range(self.frame_count):
            used = [h[t].detection_index for h in self.tracks.values()
                    if h[t].is_matched]
            if len(used) != len(set(used)):
                raise ValueError(f"frame {t}: detection claimed twice")

    def predicted_map(self, t: int) -> Dict[str, Optional[int]]:
        """id -> detection index (None while dimmed / not yet present)."""
        return {nid: (h[t].detection_index if h[t].is_matched else None)
                for nid, h in self.tracks.items()}

    def counts(self, t: int) -> Tuple[int, int, int]:
        """(matched, dimmed, not_yet_present) totals in frame t."""
        kinds = [h[t].kind for h in self.tracks.values()]
        return (kinds.count(MATCHED), kinds.count(DIMMED),
                kinds.count(NOT_YET_PRESENT))


@dataclass(frozen=True)
class TrackConfig:
    gate: float = math.inf
    coordinate_space: str = "straightened"
    method: str = "gnn"
    k_best: int = 5
    lam: float = 1.0
    graph_kind: str = "radius"
    graph_radius_um: float = 15.0
    jitter_degenerate: bool = True
    reappear_window: Optional[int] = None   # frames a dim track stays matchable

    def __post_init__(self):
        if not self.gate > 0:
            raise ValueError("gate must be positive (inf allowed)")
        if self.coordinate_space not in COORDINATE_SPACES:
            raise ValueError(f"unknown coordinate space {self.coordinate_space!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.k_best < 1:
            raise ValueError("k_best must be at least 1")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.graph_kind not in GRAPH_KINDS:
            raise ValueError(f"unknown graph kind {self.graph_kind!r}")
        if not self.graph_radius_um > 0:
            raise ValueError("graph radius must be positive")
        if self.reappear_window is not None and self.reappear_window < 0:
            raise ValueError("reappear_window must be nonnegative or None")


def _features(records: Sequence[NucleusRecord], cfg: TrackConfig) -> np.ndarray:
    if cfg.coordinate_space == "raw":
        return np.array([r.position for r in records], dtype=float).reshape(-1, 3)
    missing = [i for i, r in enumerate(records) if r.straightened is None]
    if missing:
        raise ValueError("straightened tracking needs straightened coords; "
                         f"missing on records {missing}")
    return np.array([r.straightened.as_vector() for r in records],
                    dtype=float).reshape(-1, 3)


def _build_graph(points: np.ndarray, cfg: TrackConfig):
    if cfg.graph_kind == "radius":
        return build_distance_graph(points, cfg.graph_radius_um)
    return build_delaunay_graph(points, jitter=cfg.jitter_degenerate)


def track_frame_pair(prev: Sequence[NucleusRecord],
                     curr: Sequence[NucleusRecord],
                     cfg: TrackConfig = TrackConfig(),
                     constraints: Optional[ConstraintSet] = None,
                     ) -> Tuple[Assignment, List[NucleusRecord]]:
    """Assign previous-frame tracks to current detections.

    Returns the assignment (rows in ``prev`` order, columns in ``curr``
    order) and a relabeled copy of ``curr``: matched records inherit the
    track id, unmatched ones keep whatever id they already had (usually
    none; they wait to be named).
    """
    ids = [r.id for r in prev]
    if any(i is None for i in ids):
        raise ValueError("every previous-frame record needs an id")
    if len(set(ids)) != len(ids):
        raise ValueError("previous-frame ids must be unique")

    feats_prev = _features(prev, cfg)
    feats_curr = _features(curr, cfg)
    C = build_cost_matrix(feats_prev, feats_curr, gate=cfg.gate)

    if cfg.method == "gnn":
        if constraints is None or constraints.is_empty():
            a = solve_lap(C)
        else:
            a = solve_constrained(C, constraints)
    else:
        g_prev = _build_graph(feats_prev, cfg)
        g_curr = _build_graph(feats_curr, cfg)
        a = rescore_hypotheses(C, cfg.k_best, g_prev, g_curr,
                               lam=cfg.lam, constraints=constraints).assignment

    det_to_track = {j: i for i, j in a.matched_pairs()}
    labeled: List[NucleusRecord] = []
    for j, rec in enumerate(curr):
        if j in det_to_track:
            labeled.append(replace(rec, id=prev[det_to_track[j]].id))
        else:
            labeled.append(replace(rec))
    seen: Dict[str, int] = {}
    for j, rec in enumerate(labeled):
        if rec.id is None:
            continue
        if rec.id in seen:
            raise ValueError(f"label collision on {rec.id!r}: detections "
                             f"{seen[rec.id]} and {j}")
        seen[rec.id] = j
    return a, labeled


@dataclass
class _Carried:
    position: np.ndarray
    straightened: Optional[StraightenedCoord]
    last_seen: int


class TrackerState:
    """Incremental tracker: seed with a labeled frame, then step through
    detections one frame at a time. Dim tracks keep their last coordinate
    and stay matchable (within the configured re-appearance window)."""

    def __init__(self, cfg: TrackConfig = TrackConfig()):
        self.cfg = cfg
        self._order: List[str] = []
        self._carried: Dict[str, _Carried] = {}
        self._history: Dict[str, List[TrackStatus]] = {}
        self.frame_count = 0
        self._auto_counter = 0

    def candidate_ids(self) -> List[str]:
        """Tracks eligible for matching in the next step, in row order."""
        w = self.cfg.reappear_window
        out = []
        for nid in self._order:
            age = self.frame_count - 1 - self._carried[nid].last_seen
            if w is None or age <= w:
                out.append(nid)
        return out

    def seed(self, records: Sequence[NucleusRecord]) -> None:
        if self.frame_count:
            raise ValueError("tracker is already seeded")
        ids = [r.id for r in records]
        if any(i is None for i in ids) or len(set(ids)) != len(ids):
            raise ValueError("seed frame must carry unique ids on every record")
        if self.cfg.coordinate_space == "straightened":
            _features(records, self.cfg)     # validates presence
        for j, rec in enumerate(records):
            self._order.append(rec.id)
            self._carried[rec.id] = _Carried(np.asarray(rec.position, float),
                                             rec.straightened, 0)
            self._history[rec.id] = [matched(j)]
        self.frame_count = 1

    def _fresh_name(self) -> str:
        while True:
            self._auto_counter += 1
            name = f"N{self._auto_counter:03d}"
            if name not in self._carried:
                return name

    def step(self, records: Sequence[NucleusRecord],
             constraints: Optional[ConstraintSet] = None,
             auto_name: bool = False,
             ) -> Tuple[Assignment, List[NucleusRecord]]:
        if not self.frame_count:
            raise ValueError("seed the tracker before stepping")
        t = self.frame_count
        cand = self.candidate_ids()
        pseudo = [NucleusRecord(frame_index=t - 1,
                                position=self._carried[n].position,
                                id=n,
                                straightened=self._carried[n].straightened)
                  for n in cand]
        a, labeled = track_frame_pair(pseudo, records, self.cfg, constraints)

        matched_ids = {}
        for i, j in a.matched_pairs():
            matched_ids[cand[i]] = j
        for nid in self._order:
            if nid in matched_ids:
                j = matched_ids[nid]
                rec = labeled[j]
                self._history[nid].append(matched(j))
                self._carried[nid] = _Carried(np.asarray(rec.position, float),
                                              rec.straightened, t)
            else:
                self._history[nid].append(DIMMED_STATUS)
        if auto_name:
            for j, rec in enumerate(labeled):
                if j in matched_ids.values() or rec.id in self._carried:
                    continue
                name = rec.id or self._fresh_name()
                labeled[j] = replace(rec, id=name)
                self._order.append(name)
                self._carried[name] = _Carried(np.asarray(rec.position, float),
                                               rec.straightened, t)
                self._history[name] = [NOT_YET_STATUS] * t + [matched(j)]
        self.frame_count = t + 1
        return a, labeled

    def result(self) -> TrackSet:
        return TrackSet(tracks={k: tuple(v) for k, v in self._history.items()},
                        frame_count=self.frame_count)


def _attach_straightened(records: Sequence[NucleusRecord],
                         seam: SeamCellFrame) -> List[NucleusRecord]:
    return [replace(rec, straightened=coord)
            for rec, coord in straighten_frame(records, seam)]


def track_sequence(frames: Sequence[Sequence[NucleusRecord]],
                   seam_frames: Optional[Sequence[SeamCellFrame]] = None,
                   cfg: TrackConfig = TrackConfig(),
                   auto_name: bool = False) -> TrackSet:
    """Track through a whole sequence; the first frame is the seed volume.

    With ``seam_frames`` given, records are straightened here; otherwise
    straightened tracking expects the coordinates already attached.
    """
    if not frames:
        raise ValueError("need at least one frame")
    if cfg.coordinate_space == "straightened" and seam_frames is not None:
        if len(seam_frames) != len(frames):
            raise ValueError("need one seam-cell frame per detection frame")
        frames = [_attach_straightened(f, s)
                  for f, s in zip(frames, seam_frames)]
    state = TrackerState(cfg)
    state.seed(frames[0])
    for f in frames[1:]:
        state.step(f, auto_name=auto_name)
    return state.result()


@dataclass(frozen=True)
class Displacement:
    """Frame-to-frame displacement of one nucleus, split into the raw-space
    total and the straightened-space estimate of internal motion. The
    organism-motion diagnostic is the difference of their magnitudes; the
    split is approximate, so it can go slightly negative."""

    delta_raw: np.ndarray
    delta_internal: np.ndarray

    @property
    def raw_norm(self) -> float:
        return float(np.linalg.norm(self.delta_raw))

    @property
    def internal_norm(self) -> float:
        return float(np.linalg.norm(self.delta_internal))

    @property
    def organism_estimate(self) -> float:
        return self.raw_norm - self.internal_norm


def displacement_decomposition(prev: Sequence[NucleusRecord],
                               curr: Sequence[NucleusRecord],
                               seam_prev: SeamCellFrame,
                               seam_curr: SeamCellFrame,
                               ) -> Dict[str, Displacement]:
    """Split per-nucleus displacement into total and internal parts.

    Correspondence comes from shared record ids; records without an id on
    either side are ignored.
    """
    def by_id(records, side):
        out = {}
        for r in records:
            if r.id is None:
                continue
            if r.id in out:
                raise ValueError(f"duplicate id {r.id!r} in {side} frame")
            out[r.id] = r
        return out

    p, c = by_id(prev, "previous"), by_id(curr, "current")
    common = sorted(set(p) & set(c))
    if not common:
        raise MissingCorrespondence("no shared ids between the two frames")
    sp = fit_splines(seam_prev)
    sc = fit_splines(seam_curr)
    out: Dict[str, Displacement] = {}
    for nid in common:
        a, b = p[nid], c[nid]
        d_raw = np.asarray(b.position, float) - np.asarray(a.position, float)
        d_int = (straighten_point(b.position, sc).as_vector()
                 - straighten_point(a.position, sp).as_vector())
        out[nid] = Displacement(delta_raw=d_raw, delta_internal=d_int)
    return out
