"""Shared fixtures: hand-built seam frames and rigid transforms."""

import numpy as np

from wormtrack.geometry import CANONICAL_PAIR_NAMES, SeamCellFrame, SeamCellPair

NAMES_10 = [n for n in CANONICAL_PAIR_NAMES if n != "Q"]


def seam_from_rows(lefts, rights, frame_index=0, names=None):
    lefts = np.asarray(lefts, dtype=float)
    rights = np.asarray(rights, dtype=float)
    if names is None:
        names = list(CANONICAL_PAIR_NAMES) if len(lefts) == 11 else NAMES_10[: len(lefts)]
    pairs = [SeamCellPair(name=n, left=l, right=r) for n, l, r in zip(names, lefts, rights)]
    return SeamCellFrame(frame_index=frame_index, pairs=pairs)


def straight_seam(n_pairs=10, spacing=10.0, half_width=1.0, frame_index=0):
    """Two parallel straight rows along +x, left at +y, right at -y."""
    xs = np.arange(n_pairs) * spacing
    lefts = np.stack([xs, np.full(n_pairs, half_width), np.zeros(n_pairs)], axis=1)
    rights = np.stack([xs, np.full(n_pairs, -half_width), np.zeros(n_pairs)], axis=1)
    return seam_from_rows(lefts, rights, frame_index=frame_index)


def arc_seam(radius=40.0, half_width=1.0, n_pairs=11, frame_index=0):
    """Seam pairs on concentric half-circle arcs of radius R +/- half_width."""
    theta = np.linspace(0.0, np.pi, n_pairs)
    names = list(CANONICAL_PAIR_NAMES)

    def ring(r):
        return np.stack([r * np.cos(theta), r * np.sin(theta), np.zeros(n_pairs)], axis=1)

    return seam_from_rows(ring(radius + half_width), ring(radius - half_width),
                          frame_index=frame_index, names=names)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def apply_rigid(seam, R, t):
    pairs = [type(p)(name=p.name, left=R @ p.left + t, right=R @ p.right + t)
             for p in seam.pairs]
    return type(seam)(frame_index=seam.frame_index, pairs=pairs)
