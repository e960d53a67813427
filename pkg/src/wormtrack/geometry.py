"""Seam-cell spline fitting and coordinate straightening.

The fiducial seam cells outline the coiled embryo in bilateral pairs. Natural
cubic splines through the left side, right side, and pairwise midpoints give a
body-centered curve; a rotation-minimizing frame along the midline plus the
inscribed cross-section ellipses define the straightened (s, u, v) space that
other nuclei are remapped into.

All operations here are pure; a fitted :class:`WormSplines` is immutable and
safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DuplicateKnot, OutOfRange, TooFewPairs, WormtrackError
from .records import NucleusRecord

# Canonical posterior-to-anterior pair names. The Q neuroblast pair appears
# only late in development and is the one optional entry.
CANONICAL_PAIR_NAMES = ("T", "V6", "V5", "Q", "V4", "V3", "V2", "V1", "H2", "H1", "H0")
REQUIRED_PAIR_NAMES = tuple(n for n in CANONICAL_PAIR_NAMES if n != "Q")

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)

DEFAULT_SAMPLE_COUNT = 512

# Two projection minima closer than this (in um of point-to-curve distance)
# are treated as ambiguous.
AMBIGUITY_DISTANCE_UM = 1e-4
PROJECTION_TOL_UM = 1e-4


@dataclass
class SeamCellPair:
    name: str
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=float)
        self.right = np.asarray(self.right, dtype=float)
        for v in (self.left, self.right):
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"pair {self.name}: positions must be finite 3-vectors")

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.left + self.right)


@dataclass
class SeamCellFrame:
    """Named seam-cell pairs for one frame, in canonical posterior-to-anterior order."""

    frame_index: int
    pairs: List[SeamCellPair]

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        names = [p.name for p in self.pairs]
        unknown = [n for n in names if n not in CANONICAL_PAIR_NAMES]
        if unknown:
            raise ValueError(f"unknown seam pair names: {unknown}")
        if len(set(names)) != len(names):
            raise ValueError("duplicate seam pair names")
        order = [CANONICAL_PAIR_NAMES.index(n) for n in names]
        if order != sorted(order):
            raise ValueError("seam pairs must be listed posterior to anterior "
                             f"({' '.join(CANONICAL_PAIR_NAMES)})")

    def missing_required(self) -> List[str]:
        present = {p.name for p in self.pairs}
        return [n for n in REQUIRED_PAIR_NAMES if n not in present]

    @property
    def pair_names(self) -> List[str]:
        return [p.name for p in self.pairs]


@dataclass
class MovingFrame:
    """Right-handed orthonormal triad at arc length ``s`` along the midline."""

    s: float
    origin: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    binormal: np.ndarray


@dataclass
class StraightenedCoord:
    """A point remapped into the straightened body space.

    ``s`` is arc length along the midline, ``u``/``v`` are offsets along the
    local normal and binormal, and ``r_lateral`` is the lateral semi-axis of the
    inscribed cross-section ellipse at ``s``. ``clamped`` flags projections that
    fell beyond the body ends; ``ambiguous`` flags projections where a second
    local minimum was equally close.
    """

    s: float
    u: float
    v: float
    r_lateral: float
    inside_body: bool
    clamped: bool = False
    ambiguous: bool = False

    def as_vector(self) -> np.ndarray:
        return np.array([self.s, self.u, self.v])


def _perpendicular_to(t: np.ndarray) -> np.ndarray:
    # deterministic unit vector orthogonal to t
    k = int(np.argmin(np.abs(t)))
    e = np.zeros(3)
    e[k] = 1.0
    n = e - np.dot(e, t) * t
    return n / np.linalg.norm(n)


def _double_reflect(p0, t0, n0, p1, t1):
    """Propagate a rotation-minimizing normal from (p0, t0, n0) to (p1, t1)."""
    v1 = p1 - p0
    c1 = float(np.dot(v1, v1))
    if c1 < 1e-24:
        nl, tl = n0, t0
    else:
        nl = n0 - (2.0 / c1) * np.dot(v1, n0) * v1
        tl = t0 - (2.0 / c1) * np.dot(v1, t0) * v1
    v2 = t1 - tl
    c2 = float(np.dot(v2, v2))
    if c2 < 1e-24:
        n1 = nl
    else:
        n1 = nl - (2.0 / c2) * np.dot(v2, nl) * v2
    n1 = n1 - np.dot(n1, t1) * t1
    return n1 / np.linalg.norm(n1)


class WormSplines:
    """Left/right/midpoint natural cubic splines over shared chord-length knots.

    Carries a dense arc-length table (``sample_count`` entries) used for
    s <-> parameter conversion, frame propagation, and nearest-point scans.
    Immutable after construction.
    """

    def __init__(self, seam: SeamCellFrame, sample_count: int = DEFAULT_SAMPLE_COUNT,
                 aspect_ratio: float = 1.0):
        if len(seam.pairs) < 4:
            raise TooFewPairs(
                f"spline fit needs at least 4 seam pairs, got {len(seam.pairs)}")
        if sample_count < 16:
            raise ValueError("sample_count must be >= 16")
        if aspect_ratio <= 0:
            raise ValueError("aspect_ratio must be > 0")

        lefts = np.array([p.left for p in seam.pairs])
        rights = np.array([p.right for p in seam.pairs])
        mids = 0.5 * (lefts + rights)

        chords = np.linalg.norm(np.diff(mids, axis=0), axis=1)
        if np.any(chords < 1e-9):
            i = int(np.argmax(chords < 1e-9))
            raise DuplicateKnot(
                f"consecutive seam midpoints {seam.pairs[i].name} and "
                f"{seam.pairs[i + 1].name} coincide")
        knots = np.concatenate([[0.0], np.cumsum(chords)])

        self.pair_names = list(seam.pair_names)
        self.knots = knots
        self.sample_count = int(sample_count)
        self.aspect_ratio = float(aspect_ratio)
        self.left = CubicSpline(knots, lefts, bc_type="natural", axis=0)
        self.right = CubicSpline(knots, rights, bc_type="natural", axis=0)
        self.mid = CubicSpline(knots, mids, bc_type="natural", axis=0)
        self._mid_d = self.mid.derivative()

        self._build_arc_table()
        self._build_frame_table(lefts[0], rights[0])

    # -- construction helpers ------------------------------------------------

    def _build_arc_table(self):
        t0, t1 = self.knots[0], self.knots[-1]
        self._t_grid = np.linspace(t0, t1, self.sample_count)
        # 5-point Gauss-Legendre speed integral per grid interval
        a = self._t_grid[:-1]
        h = np.diff(self._t_grid)
        tq = a[:, None] + (0.5 * h)[:, None] * (_GL_NODES[None, :] + 1.0)
        speeds = np.linalg.norm(self._mid_d(tq.ravel()), axis=1).reshape(tq.shape)
        seg = (0.5 * h) * (speeds @ _GL_WEIGHTS)
        self._s_grid = np.concatenate([[0.0], np.cumsum(seg)])
        if np.any(np.diff(self._s_grid) <= 0):
            raise WormtrackError("arc-length table is not strictly increasing")
        self.total_arc_length_mid = float(self._s_grid[-1])
        self._grid_points = self.mid(self._t_grid)
        self._max_speed = float(np.max(np.linalg.norm(self._mid_d(self._t_grid), axis=1))) * 1.5

    def _build_frame_table(self, left0: np.ndarray, right0: np.ndarray):
        tangents = self._mid_d(self._t_grid)
        tangents /= np.linalg.norm(tangents, axis=1)[:, None]

        axis = left0 - right0  # seed the normal toward the left side
        n0 = axis - np.dot(axis, tangents[0]) * tangents[0]
        nn = np.linalg.norm(n0)
        n0 = n0 / nn if nn > 1e-9 else _perpendicular_to(tangents[0])

        normals = np.empty_like(tangents)
        normals[0] = n0
        for i in range(1, len(self._t_grid)):
            normals[i] = _double_reflect(
                self._grid_points[i - 1], tangents[i - 1], normals[i - 1],
                self._grid_points[i], tangents[i])
        self._grid_tangents = tangents
        self._grid_normals = normals

    # -- parameter/arc-length conversion --------------------------------------

    def _check_s(self, s: float) -> float:
        if not (-1e-9 <= s <= self.total_arc_length_mid + 1e-9):
            raise OutOfRange(
                f"s={s} outside [0, {self.total_arc_length_mid}]")
        return min(max(s, 0.0), self.total_arc_length_mid)

    def param_of_s(self, s: float) -> float:
        s = self._check_s(s)
        t = float(np.interp(s, self._s_grid, self._t_grid))
        # one Newton step sharpens the table interpolation
        sp = float(np.linalg.norm(self._mid_d(t)))
        if sp > 1e-12:
            ds = float(np.interp(t, self._t_grid, self._s_grid)) - s
            t = float(np.clip(t - ds / sp, self.knots[0], self.knots[-1]))
        return t

    def s_of_param(self, t: float) -> float:
        return float(np.interp(t, self._t_grid, self._s_grid))

    def knot_arc_lengths(self) -> np.ndarray:
        return np.array([self.s_of_param(t) for t in self.knots])


def fit_splines(seam: SeamCellFrame, sample_count: int = DEFAULT_SAMPLE_COUNT,
                aspect_ratio: float = 1.0) -> WormSplines:
    """Fit left/right/midpoint natural cubic splines through the seam pairs.

    Knot parameters are the cumulative chord lengths of the pairwise midpoints
    and are shared by all three splines, keeping them aligned station by
    station. Raises :class:`TooFewPairs` below 4 pairs and
    :class:`DuplicateKnot` when consecutive midpoints coincide.
    """
    return WormSplines(seam, sample_count=sample_count, aspect_ratio=aspect_ratio)


def frame_at(splines: WormSplines, s: float) -> MovingFrame:
    """Rotation-minimizing frame of the midline at arc length ``s``.

    The normal is propagated from the posterior end by the double-reflection
    recurrence, seeded with the left-right axis projected orthogonal to the
    initial tangent. Raises :class:`OutOfRange` outside [0, total length].
    """
    s = splines._check_s(s)
    t = splines.param_of_s(s)
    origin = splines.mid(t)
    tangent = splines._mid_d(t)
    tangent = tangent / np.linalg.norm(tangent)

    i = int(np.searchsorted(splines._t_grid, t, side="right") - 1)
    i = max(0, min(i, len(splines._t_grid) - 1))
    normal = _double_reflect(
        splines._grid_points[i], splines._grid_tangents[i], splines._grid_normals[i],
        origin, tangent)
    binormal = np.cross(tangent, normal)
    return MovingFrame(s=s, origin=origin, tangent=tangent, normal=normal,
                       binormal=binormal)


def ellipse_at(splines: WormSplines, s: float) -> Tuple[float, float]:
    """Semi-axes (lateral, dorsoventral) of the inscribed ellipse at ``s``.

    The lateral semi-axis is half the left-right spline separation at the
    shared parameter location; the dorsoventral semi-axis scales it by the
    configured aspect ratio (1.0 keeps circular cross-sections).
    """
    s = splines._check_s(s)
    t = splines.param_of_s(s)
    r_lat = 0.5 * float(np.linalg.norm(splines.left(t) - splines.right(t)))
    return r_lat, splines.aspect_ratio * r_lat


def _golden_minimize(f, a: float, b: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    while (b - a) > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
    return 0.5 * (a + b)


def straighten_point(p: Sequence[float], splines: WormSplines) -> StraightenedCoord:
    """Remap a raw-space point into straightened (s, u, v) coordinates.

    ``s`` is the arc length of the nearest midline point (dense scan over the
    sample grid, then golden-section refinement); ``u``/``v`` are the offsets
    along the local normal and binormal. Projections beyond the ends clamp to
    the endpoint and set ``clamped``; two near-equal minima set ``ambiguous``
    and resolve to the smaller ``s``.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ValueError("point must be a finite 3-vector")

    d = np.linalg.norm(splines._grid_points - p[None, :], axis=1)
    n = len(d)
    minima = [i for i in range(n)
              if (i == 0 or d[i] <= d[i - 1]) and (i == n - 1 or d[i] <= d[i + 1])]

    tol_t = PROJECTION_TOL_UM / (10.0 * splines._max_speed)
    grid = splines._t_grid

    def dist2(t):
        q = splines.mid(t) - p
        return float(np.dot(q, q))

    candidates = []  # (distance, t)
    for i in minima:
        a = grid[max(i - 1, 0)]
        b = grid[min(i + 1, n - 1)]
        if b - a < 1e-15:
            t_star = grid[i]
        else:
            t_star = _golden_minimize(dist2, a, b, tol_t)
        candidates.append((math.sqrt(dist2(t_star)), t_star))

    best_d = min(c[0] for c in candidates)
    near = [c for c in candidates if c[0] - best_d <= AMBIGUITY_DISTANCE_UM]
    # collapse refinements that converged to the same spot
    near_sorted = sorted(near, key=lambda c: c[1])
    distinct = [near_sorted[0]]
    for c in near_sorted[1:]:
        if c[1] - distinct[-1][1] > max(100.0 * tol_t, 1e-9):
            distinct.append(c)
    ambiguous = len(distinct) > 1
    dist, t_star = distinct[0]  # smaller parameter = smaller s wins

    if grid[0] + tol_t < t_star < grid[-1] - tol_t:
        # Newton polish on (P(t)-p).P'(t) = 0; golden section alone leaves
        # micrometer-scale*1e-5 slop that rigid-invariance consumers notice
        t_cur = t_star
        for _ in range(6):
            q = splines.mid(t_cur) - p
            d1 = splines.mid(t_cur, 1)
            g = float(np.dot(q, d1))
            gp = float(np.dot(d1, d1) + np.dot(q, splines.mid(t_cur, 2)))
            if gp <= 0.0:
                break
            step = g / gp
            t_next = t_cur - step
            if not (grid[0] <= t_next <= grid[-1]) or abs(t_next - t_star) > 10 * tol_t:
                break
            t_cur = t_next
            if abs(step) < 1e-14 * max(1.0, grid[-1]):
                break
        if dist2(t_cur) <= dist2(t_star):
            t_star = t_cur

    clamped = bool(t_star <= grid[0] + tol_t or t_star >= grid[-1] - tol_t)
    if clamped:  # snap to the exact endpoint rather than tol_t shy of it
        t_star = grid[0] if t_star - grid[0] < grid[-1] - t_star else grid[-1]
    s = splines.s_of_param(t_star)
    s = min(max(s, 0.0), splines.total_arc_length_mid)

    fr = frame_at(splines, s)
    rel = p - fr.origin
    u = float(np.dot(rel, fr.normal))
    v = float(np.dot(rel, fr.binormal))
    r_lat, r_dv = ellipse_at(splines, s)
    if r_lat > 1e-12:
        inside = (u / r_lat) ** 2 + (v / r_dv) ** 2 <= 1.0 + 1e-12
    else:
        inside = abs(u) < 1e-12 and abs(v) < 1e-12
    return StraightenedCoord(s=s, u=u, v=v, r_lateral=r_lat, inside_body=bool(inside),
                             clamped=clamped, ambiguous=ambiguous)


def straighten_frame(nuclei: Iterable[NucleusRecord], seam: SeamCellFrame,
                     sample_count: int = DEFAULT_SAMPLE_COUNT,
                     aspect_ratio: float = 1.0,
                     ) -> List[Tuple[NucleusRecord, StraightenedCoord]]:
    """Fit splines for ``seam`` and straighten every nucleus, order preserved.

    Geometry errors are re-raised with the offending nucleus index attached.
    """
    splines = fit_splines(seam, sample_count=sample_count, aspect_ratio=aspect_ratio)
    out: List[Tuple[NucleusRecord, StraightenedCoord]] = []
    for idx, rec in enumerate(nuclei):
        try:
            coord = straighten_point(rec.position, splines)
        except WormtrackError as exc:
            raise type(exc)(f"nucleus {idx}: {exc}") from exc
        out.append((rec, coord))
    return out
