"""Spatial graphs over nuclei and quadratic (edge-consistency) rescoring.

A frame graph caches edge lengths so assignment hypotheses can be scored by
how well they preserve local geometry: matched edges pay the absolute change
in length, edges losing an endpoint pay that track's gate, and the gated
linear cost enters with weight lambda. With no edges the score collapses to
the linear assignment cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .assignment import (
    UNASSIGNED,
    Assignment,
    ConstraintSet,
    CostMatrix,
    augmented_key,
    murty_k_best,
)
from .delaunay import tetrahedralize
from .errors import IndexMismatch


@dataclass(frozen=True)
class FrameGraph:
    """Vertices with an undirected edge set; edges cache their length."""

    vertex_positions: np.ndarray
    edges: Dict[Tuple[int, int], float]
    builder: str

    def __post_init__(self):
        pos = np.asarray(self.vertex_positions, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("vertex positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "vertex_positions", pos)
        n = len(pos)
        for (i, k), length in self.edges.items():
            if not (0 <= i < k < n):
                raise ValueError(f"bad edge ({i}, {k}) for {n} vertices")
            true_len = float(np.linalg.norm(pos[i] - pos[k]))
            if abs(true_len - length) >= 1e-9:
                raise ValueError(f"edge ({i}, {k}) cached length is stale")

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_positions)

    def edge_set(self) -> frozenset:
        return frozenset(self.edges)


def _edge_dict(pos: np.ndarray, pairs) -> Dict[Tuple[int, int], float]:
    out: Dict[Tuple[int, int], float] = {}
    for i, k in pairs:
        i, k = (int(i), int(k)) if i < k else (int(k), int(i))
        out[(i, k)] = float(np.linalg.norm(pos[i] - pos[k]))
    return out


def build_distance_graph(points, r: float) -> FrameGraph:
    """Edge (i, k) iff the pair sits within Euclidean distance r."""
    if not r > 0:
        raise ValueError("radius must be positive")
    pos = np.asarray(points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pos)):
        raise ValueError("points must be finite")
    pairs = cKDTree(pos).query_pairs(r, output_type="ndarray") if len(pos) \
        else np.zeros((0, 2), dtype=int)
    return FrameGraph(vertex_positions=pos, edges=_edge_dict(pos, pairs),
                      builder=f"radius({r})")


def build_delaunay_graph(points, jitter: bool = False,
                         jitter_um: float = 1e-6, seed: int = 0) -> FrameGraph:
    """1-skeleton of the 3-D Delaunay tetrahedralization. Degenerate clouds
    raise DegenerateInput unless ``jitter`` perturbs them (deterministically,
    by ~jitter_um); cached lengths always come from the original points."""
    pos = np.asarray(points, dtype=float).reshape(-1, 3)
    work = pos
    if jitter:
        rng = np.random.default_rng(seed)
        work = pos + rng.normal(0.0, jitter_um, size=pos.shape)
    tets = tetrahedralize(work)
    pairs = set()
    for a, b, c, d in tets:
        pairs.update({(a, b), (a, c), (a, d), (b, c), (b, d), (c, d)})
    return FrameGraph(vertex_positions=pos, edges=_edge_dict(pos, pairs),
                      builder="delaunay")


def qap_cost(a: Assignment, G_prev: FrameGraph, G_curr: FrameGraph,
             lam: float = 1.0, gates=None) -> float:
    """Edge-consistency score of one assignment hypothesis.

    Sum over previous-frame edges of |old length - new length| when both
    endpoints are matched; each unassigned endpoint instead contributes that
    track's gate (0 if no gates are given), so dropping matches is not free.
    The gated linear cost is added with weight lam.
    """
    n = G_prev.n_vertices
    t2d = a.track_to_detection
    if len(t2d) != n:
        raise IndexMismatch(
            f"assignment covers {len(t2d)} tracks, graph has {n} vertices")
    m = G_curr.n_vertices
    for j in t2d:
        if j != UNASSIGNED and j >= m:
            raise IndexMismatch(f"detection {j} outside current graph ({m})")
    if gates is not None:
        gates = np.asarray(gates, dtype=float)
        if gates.shape != (n,):
            raise IndexMismatch("need one gate per track")

    curr = G_curr.vertex_positions
    quad = 0.0
    for (i, k), length in G_prev.edges.items():
        ji, jk = t2d[i], t2d[k]
        if ji != UNASSIGNED and jk != UNASSIGNED:
            quad += abs(length - float(np.linalg.norm(curr[ji] - curr[jk])))
        else:
            if gates is not None:
                if ji == UNASSIGNED:
                    quad += float(gates[i])
                if jk == UNASSIGNED:
                    quad += float(gates[k])
    return quad + lam * a.total_cost


@dataclass(frozen=True)
class Hypothesis:
    """One candidate assignment with its linear and edge-consistency costs."""

    assignment: Assignment
    lap_cost: float
    score: float
    kbest_index: int


def score_hypotheses(C: CostMatrix, K: int, G_prev: FrameGraph,
                     G_curr: FrameGraph, lam: float = 1.0,
                     constraints: Optional[ConstraintSet] = None,
                     ) -> List[Hypothesis]:
    """All K-best hypotheses rescored by qap_cost, cheapest score first; ties
    fall back to the linear cost, then the lexicographic assignment order."""
    if G_prev.n_vertices != C.n_tracks:
        raise IndexMismatch("previous graph must have one vertex per track")
    if G_curr.n_vertices != C.n_detections:
        raise IndexMismatch("current graph must have one vertex per detection")
    hyps = murty_k_best(C, K, constraints=constraints)
    scored = [
        Hypothesis(assignment=a, lap_cost=a.total_cost,
                   score=qap_cost(a, G_prev, G_curr, lam, gates=C.gates),
                   kbest_index=idx)
        for idx, a in enumerate(hyps)
    ]
    scored.sort(key=lambda h: (
        h.score, h.lap_cost,
        augmented_key(h.assignment.track_to_detection, C.n_detections)))
    return scored


def rescore_hypotheses(C: CostMatrix, K: int, G_prev: FrameGraph,
                       G_curr: FrameGraph, lam: float = 1.0,
                       constraints: Optional[ConstraintSet] = None,
                       ) -> Hypothesis:
    """The hypothesis among the K best whose edge-consistency score is
    minimal."""
    return score_hypotheses(C, K, G_prev, G_curr, lam, constraints)[0]
