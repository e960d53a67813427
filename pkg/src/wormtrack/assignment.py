"""Gated linear assignment: cost matrices, exact solves, K-best enumeration.

Tracks that match nothing pay a per-track gate cost d_i, modelled as an
augmented n x (m + n) problem whose last n columns hold d_i on the diagonal
and are otherwise forbidden. Only the dense n x m block and the gate vector
are stored; the off-diagonal infinity block is implicit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import heapq

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import InfeasibleConstraints, NonFiniteInput

UNASSIGNED = -1

# relative tolerance for treating two solution costs as tied
_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class CostMatrix:
    """Gated pairwise costs.

    ``block[i, j]`` is the cost of matching track i to detection j (+inf
    where the gate excludes the pair); ``gates[i]`` is the charge for leaving
    track i unassigned. Indices are 0-based throughout.
    """

    block: np.ndarray
    gates: np.ndarray

    def __post_init__(self):
        block = np.array(self.block, dtype=float)
        gates = np.array(self.gates, dtype=float)
        if block.ndim != 2:
            raise ValueError("block must be a 2-D array")
        if gates.shape != (block.shape[0],):
            raise ValueError("need exactly one gate per track")
        if np.isnan(block).any() or np.isnan(gates).any():
            raise NonFiniteInput("costs must not be NaN")
        if np.isneginf(block).any() or np.isneginf(gates).any():
            raise NonFiniteInput("costs must not be -inf")
        if (block[np.isfinite(block)] < 0).any() or (gates[np.isfinite(gates)] < 0).any():
            raise ValueError("costs must be nonnegative")
        block.setflags(write=False)
        gates.setflags(write=False)
        object.__setattr__(self, "block", block)
        object.__setattr__(self, "gates", gates)

    @property
    def n_tracks(self) -> int:
        return self.block.shape[0]

    @property
    def n_detections(self) -> int:
        return self.block.shape[1]


@dataclass(frozen=True)
class Assignment:
    """A one-to-one matching: detection index per track (or ``UNASSIGNED``),
    the leftover detections, and the total cost including gate charges."""

    track_to_detection: Tuple[int, ...]
    unassigned_detections: frozenset
    total_cost: float

    def matched_pairs(self) -> List[Tuple[int, int]]:
        return [(i, j) for i, j in enumerate(self.track_to_detection)
                if j != UNASSIGNED]


@dataclass(frozen=True)
class ConstraintSet:
    """User-verified decisions folded into a re-solve: pinned (i, j) matches,
    forbidden (i, j) pairs, and tracks forced to stay unassigned."""

    pinned: frozenset = frozenset()
    forbidden: frozenset = frozenset()
    forced_unassigned: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "pinned",
                           frozenset((int(i), int(j)) for i, j in self.pinned))
        object.__setattr__(self, "forbidden",
                           frozenset((int(i), int(j)) for i, j in self.forbidden))
        object.__setattr__(self, "forced_unassigned",
                           frozenset(int(i) for i in self.forced_unassigned))

    def validate(self, n_tracks: int, n_detections: int) -> None:
        for i, j in self.pinned | self.forbidden:
            if not (0 <= i < n_tracks and 0 <= j < n_detections):
                raise ValueError(f"constraint pair ({i}, {j}) out of range")
        for i in self.forced_unassigned:
            if not (0 <= i < n_tracks):
                raise ValueError(f"forced-unassigned track {i} out of range")
        pinned_tracks = [i for i, _ in self.pinned]
        pinned_dets = [j for _, j in self.pinned]
        if len(set(pinned_tracks)) != len(pinned_tracks):
            raise InfeasibleConstraints("a track is pinned to two detections")
        if len(set(pinned_dets)) != len(pinned_dets):
            raise InfeasibleConstraints("a detection is pinned to two tracks")
        if self.pinned & self.forbidden:
            raise InfeasibleConstraints("a pair is both pinned and forbidden")
        if set(pinned_tracks) & self.forced_unassigned:
            raise InfeasibleConstraints("a pinned track is forced unassigned")

    def is_empty(self) -> bool:
        return not (self.pinned or self.forbidden or self.forced_unassigned)


def build_cost_matrix(tracks: Sequence, detections: Sequence,
                      gate) -> CostMatrix:
    """Pairwise Euclidean distances, gated: entries exceeding the track's
    gate d_i become +inf. ``gate`` is a scalar or a per-track vector."""
    tracks = np.asarray(tracks, dtype=float)
    if tracks.size == 0:
        raise ValueError("tracks must be nonempty")
    tracks = tracks.reshape(-1, 3)
    detections = np.asarray(detections, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(tracks)) or not np.all(np.isfinite(detections)):
        raise NonFiniteInput("positions must be finite")
    gates = np.array(np.broadcast_to(np.asarray(gate, dtype=float),
                                     (len(tracks),)))
    if np.isnan(gates).any():
        raise NonFiniteInput("gates must not be NaN")
    if (gates[np.isfinite(gates)] < 0).any() or np.isneginf(gates).any():
        raise ValueError("gates must be nonnegative")
    if detections.shape[0]:
        block = cdist(tracks, detections)
        block[block > gates[:, None]] = np.inf
    else:
        block = np.zeros((len(tracks), 0))
    return CostMatrix(block=block, gates=gates)


# --- internal augmented solver -------------------------------------------
#
# Augmented column indices: 0..m-1 are detections, m+i is row i's gate.
# scipy cannot take +inf entries without risking an "infeasible" error, so
# allowed-but-infinite gates become a finite marker S (larger than any full
# finite assignment) and structurally forbidden cells become (n+2)*S, which
# no solution touches unless the subproblem is genuinely infeasible. Costs
# then order by (number of infinite gates used, finite remainder), which is
# the limit ordering of the true +inf objective.


def _sentinel_matrix(block: np.ndarray, gates: np.ndarray,
                     forbidden: frozenset, pinned: Sequence[Tuple[int, int]]):
    n, m = block.shape
    finite_sum = float(block[np.isfinite(block)].sum()
                       + gates[np.isfinite(gates)].sum())
    S = 1.0 + finite_sum
    big = (n + 2) * S
    A = np.full((n, m + n), big)
    A[:, :m] = np.where(np.isfinite(block), block, big)
    A[np.arange(n), m + np.arange(n)] = np.where(np.isfinite(gates), gates, S)
    for i, j in forbidden:
        A[i, j] = big
    for i, j in pinned:
        keep = A[i, j]
        A[i, :] = big
        A[i, j] = keep
    return A, S


def _true_cost(cols: np.ndarray, block: np.ndarray, gates: np.ndarray,
               forbidden: frozenset):
    """(n_inf, finite) for a column choice, or None if it uses a forbidden
    cell (meaning the subproblem was infeasible)."""
    n, m = block.shape
    n_inf = 0
    finite = 0.0
    for i, j in enumerate(cols):
        if (i, int(j)) in forbidden:
            return None
        if j >= m:
            if j != m + i:
                return None
            g = gates[i]
            if np.isinf(g):
                n_inf += 1
            else:
                finite += g
        else:
            c = block[i, j]
            if np.isinf(c):
                return None
            finite += c
    return n_inf, finite


def _solve_raw(block, gates, forbidden=frozenset(), pinned=()):
    """One augmented solve. Returns (cols, n_inf, finite) or None."""
    A, _ = _sentinel_matrix(block, gates, forbidden, pinned)
    _, cols = linear_sum_assignment(A)
    # a pinned row landing elsewhere means the solver was forced onto a
    # masked cell: the pinned subproblem has no feasible completion
    if any(cols[i] != j for i, j in pinned):
        return None
    res = _true_cost(cols, block, gates, forbidden)
    if res is None:
        return None
    return cols, res[0], res[1]


def _ties(f_a: float, f_b: float) -> bool:
    return abs(f_a - f_b) <= _TIE_RTOL * max(1.0, abs(f_a), abs(f_b))


def _tie_duals(A: np.ndarray, cols: np.ndarray, eps: float):
    """Reduced costs certifying the base optimum, or None.

    Bellman relaxation over the matched-edge difference constraints yields
    potentials (u, v) that are tight on the matching and feasible everywhere;
    free columns must sit at ~0 or the matching had an improving path. Under
    that certificate, complementary slackness confines every equally cheap
    solution to cells of near-zero reduced cost, so canonicalization can skip
    the rest. Verified numerically; on failure the caller falls back to the
    coarse row-minimum prune.
    """
    n, width = A.shape
    matched = A[np.arange(n), cols]
    v = np.zeros(width)
    for _ in range(width + 2):
        cand = (A + (v[cols] - matched)[:, None]).min(axis=0)
        nv = np.minimum(v, cand)
        if np.array_equal(nv, v):
            break
        v = nv
    u = matched - v[cols]
    red = A - u[:, None] - v[None, :]
    free = np.ones(width, dtype=bool)
    free[cols] = False
    if red.min() < -eps or (v[free] < -eps).any():
        return None
    return red


def _canonical_solve(block, gates, forbidden=frozenset(), pinned=()):
    """Optimal solve whose representative is the lexicographic minimum over
    equally cheap solutions: scanning rows in order, each takes the lowest
    augmented column any optimum can give it (gate sorts after detections).

    Candidate columns are pruned by reduced cost (with a row-minimum lower
    bound as fallback), so extra solves only happen near genuine ties.
    """
    base = _solve_raw(block, gates, forbidden, pinned)
    if base is None:
        return None
    cols, n_inf, finite = base
    n, m = block.shape
    if n == 0:
        # nothing to canonicalize; happens when constraints pin every row
        return np.asarray(cols, dtype=int), n_inf, finite

    A, S = _sentinel_matrix(block, gates, forbidden, pinned)
    rowmin = A.min(axis=1)
    cost_sent = float(A[np.arange(n), cols].sum())
    slack = cost_sent - float(rowmin.sum())
    margin = slack + 1e-9 * max(1.0, cost_sent) + 1e-12
    eps = 1e-7 * max(1.0, cost_sent)
    red = _tie_duals(A, np.asarray(cols), eps)
    # bound on any tied solution's per-cell reduced cost: the tie tolerance
    # plus accumulated certificate slop
    tie_slack = _TIE_RTOL * max(1.0, cost_sent) + 2.0 * n * eps + 1e-12

    pins = list(pinned)
    pinrows = {i for i, _ in pins}
    pincols = {j for _, j in pins}
    cur = np.array(cols)
    for i in range(n):
        if i in pinrows:
            continue
        ji = int(cur[i])
        for j in range(min(ji, m)):
            if j in pincols or (i, j) in forbidden or np.isinf(block[i, j]):
                continue
            if A[i, j] - rowmin[i] > margin:
                continue
            if red is not None and red[i, j] > tie_slack:
                continue
            res = _solve_raw(block, gates, forbidden, pins + [(i, j)])
            if res is not None and res[1] == n_inf and _ties(res[2], finite):
                cur = np.array(res[0])
                ji = j
                break
        pins.append((i, ji))
        pinrows.add(i)
        pincols.add(ji)
    return cur, n_inf, finite


def _make_assignment(cols, block, gates) -> Assignment:
    n, m = block.shape
    t2d = tuple(int(j) if j < m else UNASSIGNED for j in cols)
    total = 0.0
    for i, j in enumerate(t2d):
        total += gates[i] if j == UNASSIGNED else block[i, j]
    used = {j for j in t2d if j != UNASSIGNED}
    return Assignment(track_to_detection=t2d,
                      unassigned_detections=frozenset(range(m)) - used,
                      total_cost=float(total))


def augmented_key(track_to_detection: Sequence[int],
                  n_detections: int) -> Tuple[int, ...]:
    """Tie-break key: per-row augmented column, so a gate (m + i) sorts after
    every real detection."""
    return tuple(n_detections + i if j == UNASSIGNED else j
                 for i, j in enumerate(track_to_detection))


def solve_lap(C: CostMatrix) -> Assignment:
    """Globally optimal gated assignment; deterministic under ties (lowest
    track index takes the lowest detection index, gate last)."""
    res = _canonical_solve(C.block, C.gates)
    # gate columns make the unconstrained problem always feasible
    assert res is not None
    return _make_assignment(res[0], C.block, C.gates)


def _reduce(C: CostMatrix, constraints: ConstraintSet):
    """Cost surgery: drop pinned/forced rows and pinned columns, mark
    forbidden cells +inf. Returns the subproblem plus index maps."""
    n, m = C.n_tracks, C.n_detections
    pinned_rows = {i for i, _ in constraints.pinned}
    pinned_cols = {j for _, j in constraints.pinned}
    rows = [i for i in range(n)
            if i not in pinned_rows and i not in constraints.forced_unassigned]
    cols = [j for j in range(m) if j not in pinned_cols]
    sub = C.block[np.ix_(rows, cols)].copy() if rows and cols \
        else np.zeros((len(rows), len(cols)))
    rmap = {i: a for a, i in enumerate(rows)}
    cmap = {j: b for b, j in enumerate(cols)}
    for i, j in constraints.forbidden:
        if i in rmap and j in cmap:
            sub[rmap[i], cmap[j]] = np.inf
    return sub, C.gates[rows], rows, cols


def _lift(sub_cols, rows, cols, constraints: ConstraintSet, n: int, m: int):
    """Map a subproblem solution back to full augmented columns."""
    full = np.empty(n, dtype=int)
    for i, j in constraints.pinned:
        full[i] = j
    for i in constraints.forced_unassigned:
        full[i] = m + i
    m_sub = len(cols)
    for a, i in enumerate(rows):
        j = int(sub_cols[a])
        full[i] = cols[j] if j < m_sub else m + i
    return full


def solve_constrained(C: CostMatrix, constraints: ConstraintSet) -> Assignment:
    """Optimal assignment honoring pins, forbidden pairs, and forced
    unassignments. Pinned pairs always appear in the output, at whatever cost
    the matrix stores for them."""
    constraints.validate(C.n_tracks, C.n_detections)
    if constraints.is_empty():
        return solve_lap(C)
    sub, sub_gates, rows, cols = _reduce(C, constraints)
    res = _canonical_solve(sub, sub_gates)
    assert res is not None
    full = _lift(res[0], rows, cols, constraints, C.n_tracks, C.n_detections)
    return _make_assignment(full, C.block, C.gates)


def murty_k_best(C: CostMatrix, K: int,
                 constraints: Optional[ConstraintSet] = None) -> List[Assignment]:
    """The min(K, #feasible) cheapest assignments in nondecreasing cost,
    duplicate-free, via inclusion/exclusion partitioning; each subproblem is
    solved exactly. Element 0 equals solve_lap / solve_constrained."""
    if K < 1:
        raise ValueError("K must be >= 1")
    constraints = constraints or ConstraintSet()
    constraints.validate(C.n_tracks, C.n_detections)
    block, gates, rows, cols = _reduce(C, constraints)
    n_sub, m_sub = block.shape

    out: List[Assignment] = []
    counter = itertools.count()  # heap stability for identical keys

    def push(heap, res, pins, forb):
        sub_cols, n_inf, finite = res
        key = (n_inf, finite, tuple(int(c) for c in sub_cols))
        heapq.heappush(heap, (key, next(counter), sub_cols, pins, forb))

    root = _canonical_solve(block, gates)
    heap: list = []
    if root is not None:
        push(heap, root, (), frozenset())
    while heap and len(out) < K:
        (_, _, sub_cols, pins, forb) = heapq.heappop(heap)
        full = _lift(sub_cols, rows, cols, constraints,
                     C.n_tracks, C.n_detections)
        out.append(_make_assignment(full, C.block, C.gates))
        if len(out) >= K:
            break
        acc = list(pins)
        pinned_rows = {i for i, _ in pins}
        for i in range(n_sub):
            if i in pinned_rows:
                continue
            child_forb = forb | {(i, int(sub_cols[i]))}
            res = _canonical_solve(block, gates, child_forb, tuple(acc))
            if res is not None:
                push(heap, res, tuple(acc), child_forb)
            acc.append((i, int(sub_cols[i])))
    return out
