"""Incremental 3-D Delaunay tetrahedralization (Bowyer-Watson).

Points are conditioned to a unit box and inserted one at a time into a large
bounding super-tetrahedron; each insertion carves the cavity of tetrahedra
whose circumsphere contains the point and re-fans the cavity boundary around
it. Predicates run in extended precision so the empty-circumsphere property
holds to well below 1e-9 on generic input; exactly degenerate configurations
raise rather than silently producing a broken complex.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from .errors import DegenerateInput

# super-tetrahedron distances to try, in conditioned units: the construction
# is only faithful while every real circumsphere stays clear of the super
# vertices, so nearly-flat clouds (huge circumradii) need a farther shell;
# each result is verified and rebuilt farther out if the check fails
_SUPER_SCALES = (1e3, 1e6, 1e9)


def _triple(a, b, c):
    """Scalar triple product a . (b x c), vectorized over leading axes."""
    return (a[..., 0] * (b[..., 1] * c[..., 2] - b[..., 2] * c[..., 1])
            - a[..., 1] * (b[..., 0] * c[..., 2] - b[..., 2] * c[..., 0])
            + a[..., 2] * (b[..., 0] * c[..., 1] - b[..., 1] * c[..., 0]))


def _orient(pts, a, b, c, d):
    """Orientation determinant det[a-d, b-d, c-d]; tetrahedra are kept
    positive under this convention so the insphere determinant reads
    positive-inside."""
    return float(_triple(pts[a] - pts[d], pts[b] - pts[d], pts[c] - pts[d]))


def _insphere_mask(pts, tets, p):
    """Boolean per tetrahedron: does the circumsphere strictly contain point
    p? Rows of ``tets`` must be positively oriented."""
    R = pts[tets] - pts[p]
    w = (R * R).sum(axis=2)
    m0 = _triple(R[:, 1], R[:, 2], R[:, 3])
    m1 = _triple(R[:, 0], R[:, 2], R[:, 3])
    m2 = _triple(R[:, 0], R[:, 1], R[:, 3])
    m3 = _triple(R[:, 0], R[:, 1], R[:, 2])
    det = -w[:, 0] * m0 + w[:, 1] * m1 - w[:, 2] * m2 + w[:, 3] * m3
    return det > 0


def _build(scaled: np.ndarray, L: float) -> List[Tuple[int, int, int, int]]:
    """One Bowyer-Watson pass with super vertices at distance L; returns the
    interior (all-real) tetrahedra, unverified."""
    k = len(scaled)
    sup = np.array([[-L, -L, -L], [3 * L, -L, -L],
                    [-L, 3 * L, -L], [-L, -L, 3 * L]])
    P = np.vstack([scaled, sup]).astype(np.longdouble)

    def oriented(a, b, c, d):
        o = _orient(P, a, b, c, d)
        if o == 0.0:
            raise DegenerateInput(
                "cospherical or coplanar configuration; perturb the input")
        return (a, b, c, d) if o > 0 else (a, b, d, c)

    tets: List[Tuple[int, int, int, int]] = [oriented(k, k + 1, k + 2, k + 3)]
    for p in range(k):
        arr = np.asarray(tets, dtype=int)
        bad = _insphere_mask(P, arr, p)
        if not bad.any():
            # p is inside the super-tetrahedron, so some circumsphere must
            # contain it; reaching here means an exactly-on-sphere tie
            raise DegenerateInput(
                "cospherical configuration; perturb the input")
        faces: dict = {}
        for t_idx in np.flatnonzero(bad):
            a, b, c, d = tets[t_idx]
            for face in ((a, b, c), (a, b, d), (a, c, d), (b, c, d)):
                key = tuple(sorted(face))
                faces[key] = faces.get(key, 0) + 1
        tets = [t for t_idx, t in enumerate(tets) if not bad[t_idx]]
        for face, count in faces.items():
            if count == 1:
                tets.append(oriented(face[0], face[1], face[2], p))
    return [t for t in tets if max(t) < k]


def _verified(tets, scaled: np.ndarray) -> bool:
    """Empty-circumsphere audit of every interior tetrahedron (1e-9 slack on
    the conditioned scale)."""
    k = len(scaled)
    P = scaled.astype(np.longdouble)
    for tet in tets:
        a = P[tet[0]]
        M = 2.0 * (P[list(tet[1:])] - a)
        rhs = (P[list(tet[1:])] ** 2).sum(axis=1) - (a ** 2).sum()
        det = _triple(M[:, 0], M[:, 1], M[:, 2])
        if det == 0.0:
            return False
        center = np.array([_triple(rhs, M[:, 1], M[:, 2]),
                           _triple(M[:, 0], rhs, M[:, 2]),
                           _triple(M[:, 0], M[:, 1], rhs)]) / det
        radius = np.sqrt(((center - a) ** 2).sum())
        others = np.setdiff1d(np.arange(k), tet)
        if len(others):
            d = np.sqrt(((P[others] - center) ** 2).sum(axis=1))
            if d.min() < radius - 1e-9:
                return False
    return True


def tetrahedralize(points) -> np.ndarray:
    """Delaunay tetrahedra of a 3-D point cloud as a (T, 4) index array.

    Raises DegenerateInput for fewer than 4 points, duplicates, and
    coplanar/collinear clouds; callers wanting a lenient path can perturb
    their input first (see build_delaunay_graph's jitter option).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be a (k, 3) array")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    k = len(pts)
    if k < 4:
        raise DegenerateInput("need at least 4 points to tetrahedralize")
    if len(np.unique(pts, axis=0)) < k:
        raise DegenerateInput("duplicate points")

    lo = pts.min(axis=0)
    span = float((pts.max(axis=0) - lo).max())
    scaled = (pts - lo) / span
    sv = np.linalg.svd(scaled - scaled.mean(axis=0), compute_uv=False)
    if sv[-1] <= 1e-9 * sv[0]:
        raise DegenerateInput("points are coplanar or collinear")

    for L in _SUPER_SCALES:
        tets = _build(scaled, L)
        if tets and _verified(tets, scaled):
            return np.asarray(sorted(tuple(sorted(t)) for t in tets),
                              dtype=int)
    raise DegenerateInput(
        "no valid tetrahedralization (input is nearly degenerate)")
