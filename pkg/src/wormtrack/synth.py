"""Synthetic coiled embryos with exact ground truth.

Ground truth lives in body coordinates: each nucleus has a station along the
midline plus an in-cross-section offset, and each frame embeds those body
coordinates into world space through a template midline (helix, planar coil,
or random spline), a rotation-minimizing frame, an optional low-frequency
warp, and a per-frame rigid pose. Internal motion (Brownian walk, dropout)
happens in body coordinates, so rigid repositioning between frames never
touches it and straightened coordinates are frame-invariant by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InfeasibleConfig
from .geometry import CANONICAL_PAIR_NAMES, SeamCellFrame, SeamCellPair
from .records import NucleusRecord

_BAND_LETTERS = ("A", "B", "C", "D")
_BAND_ANGLES = np.deg2rad([45.0, 135.0, 225.0, 315.0])
_DENSE = 2048
# station fractions for the 11 canonical pairs, posterior to anterior
_SEAM_STATIONS = np.linspace(0.02, 0.98, 11)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_frames: int = 10
    body_kind: str = "helix"                # helix | planar-coil | random-spline
    body_length_um: float = 430.0
    tube_radius_um: float = 12.0
    min_curvature_radius_um: float = 30.0
    seam_pairs: int = 11
    n_nuclei: int = 85
    radial_fraction: float = 0.6            # band depth as a fraction of r(q)
    brownian_sigma_um: float = 0.0
    repositioning: str = "rigid"            # rigid | none
    translation_range_um: float = 50.0
    warp_amplitude_um: float = 0.0
    elongation_rate: float = 0.0
    dropout_prob: float = 0.0
    seam_jitter_um: float = 0.0
    min_along_band_spacing_um: float = 2.5

    def validate(self) -> None:
        if self.body_kind not in ("helix", "planar-coil", "random-spline"):
            raise ValueError(f"unknown body kind {self.body_kind!r}")
        if self.seam_pairs not in (10, 11):
            raise ValueError("seam_pairs must be 10 or 11")
        if self.repositioning not in ("rigid", "none"):
            raise ValueError(f"unknown repositioning {self.repositioning!r}")
        if self.n_frames < 1 or self.n_nuclei < 1:
            raise ValueError("need at least one frame and one nucleus")
        for name in ("body_length_um", "tube_radius_um",
                     "min_curvature_radius_um", "brownian_sigma_um",
                     "translation_range_um", "warp_amplitude_um",
                     "elongation_rate", "seam_jitter_um"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must be in [0, 1)")
        if not 0.0 < self.radial_fraction <= 0.85:
            raise ValueError("radial_fraction must be in (0, 0.85]")
        per_band = int(np.ceil(self.n_nuclei / len(_BAND_LETTERS)))
        spacing = 0.88 * self.body_length_um / max(per_band - 1, 1)
        if spacing < self.min_along_band_spacing_um:
            raise InfeasibleConfig(
                f"{self.n_nuclei} nuclei need along-band spacing "
                f"{spacing:.2f} um, below the "
                f"{self.min_along_band_spacing_um} um floor")


@dataclass(frozen=True)
class SynthResult:
    """Frames of detections (frame 0 carries ids), seam-cell frames, and the
    id -> detection-index truth per frame (None while dropped out).
    ``midlines`` holds each frame's dense world-space midline polyline and
    ``truth_body`` the per-frame body coordinates, for diagnostics."""

    frames: List[List[NucleusRecord]]
    seam_frames: List[SeamCellFrame]
    truth: List[Dict[str, Optional[int]]]
    midlines: List[np.ndarray]
    truth_body: List[Dict[str, Tuple[float, float, float]]]


def _unit(v):
    return v / np.linalg.norm(v)


def _template_curve(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Dense template midline with total arc length body_length_um and
    curvature radius bounded below by min_curvature_radius_um."""
    q = np.linspace(0.0, 1.0, _DENSE)
    if cfg.body_kind == "helix":
        turns = 1.5
        hyp = cfg.body_length_um / (2 * np.pi * turns)
        a = 0.8 * hyp                       # curvature radius = hyp^2 / a
        if hyp * hyp / a < cfg.min_curvature_radius_um:
            a = hyp * hyp / cfg.min_curvature_radius_um
            a = min(a, 0.99 * hyp)
        b = np.sqrt(hyp * hyp - a * a)
        phi = q * 2 * np.pi * turns
        pts = np.stack([a * np.cos(phi), a * np.sin(phi), b * phi], axis=1)
    elif cfg.body_kind == "planar-coil":
        # Archimedean spiral: successive turns clear each other by well over
        # a tube diameter, so the coiled body never self-intersects
        r0 = 1.5 * cfg.min_curvature_radius_um
        c = 3.0 * cfg.tube_radius_um
        L = cfg.body_length_um
        theta_max = (-r0 + np.sqrt(r0 * r0 + 2 * c * L)) / c
        th = q * theta_max
        rad = r0 + c * th
        pts = np.stack([rad * np.cos(th), rad * np.sin(th),
                        np.zeros(_DENSE)], axis=1)
    else:
        # random spline: a direction random walk with bounded turning, so the
        # discrete curvature radius stays above the configured floor
        n_ctrl = 24
        step = cfg.body_length_um / (n_ctrl - 1)
        # damp the polygon turning rate: the cubic overshoots corners
        max_turn = 0.4 * step / cfg.min_curvature_radius_um
        d = _unit(rng.normal(size=3))
        ctrl = [np.zeros(3)]
        for _ in range(n_ctrl - 1):
            axis = _unit(np.cross(d, rng.normal(size=3)))
            angle = rng.uniform(-max_turn, max_turn)
            d = _unit(d * np.cos(angle) + np.cross(axis, d) * np.sin(angle))
            ctrl.append(ctrl[-1] + step * d)
        ctrl = np.asarray(ctrl)
        # smooth resample through the control points
        t_ctrl = np.linspace(0, 1, n_ctrl)
        pts = CubicSpline(t_ctrl, ctrl, bc_type="natural", axis=0)(q)
    # normalize arc length exactly to the configured body length
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    pts *= cfg.body_length_um / seg.sum()
    return pts


def _transport_frames(pts: np.ndarray):
    """Tangent/normal/binormal along a dense polyline via parallel transport
    (successive projection of the previous normal)."""
    tangents = np.gradient(pts, axis=0)
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
    normals = np.empty_like(tangents)
    ref = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(tangents[0], ref)) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    normals[0] = _unit(ref - np.dot(ref, tangents[0]) * tangents[0])
    for i in range(1, len(pts)):
        n = normals[i - 1] - np.dot(normals[i - 1], tangents[i]) * tangents[i]
        normals[i] = _unit(n)
    binormals = np.cross(tangents, normals)
    return tangents, normals, binormals


def _radius_profile(q, cfg: SynthConfig):
    """Tube radius tapering toward both ends."""
    return cfg.tube_radius_um * np.sqrt(1.0 - 0.84 * (2.0 * q - 1.0) ** 2)


def _arc_fractions(pts: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return s / s[-1]


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation matrix from a random unit quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


class _Embedding:
    """World-space embedding of body coordinates for one frame."""

    def __init__(self, template: np.ndarray, scale: float, warp: np.ndarray,
                 R: np.ndarray, t: np.ndarray):
        pts = template * scale + warp
        self.mid = pts @ R.T + t
        self.T, self.N, self.B = (v @ R.T for v in _transport_frames(pts))
        self.frac = _arc_fractions(pts)

    def at(self, ell: float, u: float, v: float) -> np.ndarray:
        i = int(np.searchsorted(self.frac, ell, side="left"))
        i = min(max(i, 0), len(self.frac) - 1)
        return self.mid[i] + u * self.N[i] + v * self.B[i]


def generate(cfg: SynthConfig) -> SynthResult:
    """Deterministic synthetic sequence for the given config."""
    cfg.validate()
    streams = np.random.SeedSequence(cfg.seed).spawn(6)
    rng_body, rng_pose, rng_brown, rng_drop, rng_shuffle, rng_jit = \
        (np.random.default_rng(s) for s in streams)

    template = _template_curve(cfg, rng_body)

    # band layout in body coordinates, staggered between bands so nuclei in
    # neighboring bands do not share a cross-section
    counts = [cfg.n_nuclei // 4 + (1 if b < cfg.n_nuclei % 4 else 0)
              for b in range(4)]
    ids: List[str] = []
    base_body: List[Tuple[float, float, float]] = []
    for b, (letter, angle, n_b) in enumerate(
            zip(_BAND_LETTERS, _BAND_ANGLES, counts)):
        if n_b == 0:
            continue
        stations = np.linspace(0.06, 0.94, n_b)
        # cap the stagger so sparse bands stay inside the body
        half_gap = (stations[1] - stations[0]) / 2.0 if n_b > 1 else 0.0
        stations += (b / 4.0) * min(half_gap, 0.04)
        for i, ell in enumerate(stations):
            r = cfg.radial_fraction * _radius_profile(ell, cfg)
            ids.append(f"{letter}{i + 1:02d}")
            base_body.append((float(ell), float(r * np.cos(angle)),
                              float(r * np.sin(angle))))

    seam_names = list(CANONICAL_PAIR_NAMES)
    if cfg.seam_pairs == 10:
        seam_names.remove("Q")
    seam_stations = [_SEAM_STATIONS[i]
                     for i, name in enumerate(CANONICAL_PAIR_NAMES)
                     if name in seam_names]

    frames: List[List[NucleusRecord]] = []
    seam_frames: List[SeamCellFrame] = []
    truth: List[Dict[str, Optional[int]]] = []
    midlines: List[np.ndarray] = []
    truth_body: List[Dict[str, Tuple[float, float, float]]] = []

    walk = np.zeros((len(ids), 3))
    for t in range(cfg.n_frames):
        if cfg.repositioning == "rigid" and t > 0:
            R = _random_rotation(rng_pose)
            trans = rng_pose.uniform(-cfg.translation_range_um,
                                     cfg.translation_range_um, size=3)
        else:
            R, trans = np.eye(3), np.zeros(3)
            if cfg.repositioning == "rigid":
                rng_pose.normal(size=4)     # keep the stream aligned
                rng_pose.uniform(size=3)
        scale = 1.0 + cfg.elongation_rate * t
        if cfg.warp_amplitude_um > 0:
            q = np.linspace(0, 1, _DENSE)
            direction = _unit(rng_pose.normal(size=3)) \
                if cfg.repositioning == "rigid" else np.array([0.0, 0.0, 1.0])
            phase = rng_jit.uniform(0, 2 * np.pi)
            warp = (cfg.warp_amplitude_um
                    * np.sin(2 * np.pi * q + phase)[:, None] * direction)
        else:
            warp = np.zeros((_DENSE, 3))
        emb = _Embedding(template, scale, warp, R, trans)
        length_t = cfg.body_length_um * scale

        if t > 0 and cfg.brownian_sigma_um > 0:
            walk = walk + rng_brown.normal(0.0, cfg.brownian_sigma_um,
                                           size=walk.shape)

        body_t: Dict[str, Tuple[float, float, float]] = {}
        positions: Dict[str, np.ndarray] = {}
        for idx, (nid, (ell0, u0, v0)) in enumerate(zip(ids, base_body)):
            ell = float(np.clip(ell0 + walk[idx, 0] / length_t, 0.01, 0.99))
            u, v = u0 + walk[idx, 1], v0 + walk[idx, 2]
            cap = 0.85 * _radius_profile(ell, cfg)
            rad = float(np.hypot(u, v))
            if rad > cap:                    # keep nuclei inside the tube
                u, v = u * cap / rad, v * cap / rad
            body_t[nid] = (ell, float(u), float(v))
            positions[nid] = emb.at(ell, u, v)

        dropped = set()
        if t > 0 and cfg.dropout_prob > 0:
            mask = rng_drop.uniform(size=len(ids)) < cfg.dropout_prob
            dropped = {nid for nid, m in zip(ids, mask) if m}
        elif cfg.dropout_prob > 0:
            rng_drop.uniform(size=len(ids))  # keep the stream aligned

        visible = [nid for nid in ids if nid not in dropped]
        perm = (rng_shuffle.permutation(len(visible)) if t > 0
                else np.arange(len(visible)))
        records = []
        frame_truth: Dict[str, Optional[int]] = {nid: None for nid in ids}
        for det_idx, vis_idx in enumerate(perm):
            nid = visible[vis_idx]
            records.append(NucleusRecord(
                frame_index=t, position=positions[nid],
                id=nid if t == 0 else None, origin_tag="imported"))
            frame_truth[nid] = det_idx

        pairs = []
        for name, ell in zip(seam_names, seam_stations):
            i = int(np.searchsorted(emb.frac, ell))
            i = min(max(i, 0), len(emb.frac) - 1)
            r = _radius_profile(ell, cfg)
            left = emb.mid[i] + r * emb.N[i]
            right = emb.mid[i] - r * emb.N[i]
            if cfg.seam_jitter_um > 0:
                left = left + rng_jit.normal(0, cfg.seam_jitter_um, 3)
                right = right + rng_jit.normal(0, cfg.seam_jitter_um, 3)
            pairs.append(SeamCellPair(name=name, left=left, right=right))
        order_map = {n: i for i, n in enumerate(CANONICAL_PAIR_NAMES)}
        pairs.sort(key=lambda p: order_map[p.name])

        frames.append(records)
        seam_frames.append(SeamCellFrame(frame_index=t, pairs=pairs))
        truth.append(frame_truth)
        midlines.append(emb.mid)
        truth_body.append(body_t)

    return SynthResult(frames=frames, seam_frames=seam_frames, truth=truth,
                       midlines=midlines, truth_body=truth_body)


def inject_band_drift(result: SynthResult, band: str, offset,
                      from_frame: int = 1) -> SynthResult:
    """Translate every detection of one band by a world-space offset in all
    frames >= from_frame; truth indices are unchanged."""
    offset = np.asarray(offset, dtype=float)
    new_frames = []
    for t, records in enumerate(result.frames):
        if t < from_frame:
            new_frames.append(list(records))
            continue
        moved = {j for nid, j in result.truth[t].items()
                 if j is not None and nid.startswith(band)}
        new_frames.append([
            NucleusRecord(frame_index=r.frame_index,
                          position=np.asarray(r.position) + offset,
                          id=r.id, straightened=r.straightened,
                          origin_tag=r.origin_tag)
            if j in moved else r
            for j, r in enumerate(records)])
    return SynthResult(frames=new_frames, seam_frames=result.seam_frames,
                       truth=result.truth, midlines=result.midlines,
                       truth_body=result.truth_body)


def make_drift_scenario(seed: int, n_points: int = 5, k_rank_max: int = 5):
    """A frame pair where a coordinated band drift makes the cheapest linear
    assignment wrong while the true matching (a rigid translation, hence zero
    edge distortion) sits within the top-``k_rank_max`` hypotheses.

    Returns (prev_points, curr_points, gate, true_assignment) with the truth
    being the identity. Seeds are retried deterministically until the
    ranking condition holds.
    """
    from .assignment import build_cost_matrix, murty_k_best

    for attempt in range(64):
        rng = np.random.default_rng([seed, attempt])
        spac = rng.uniform(3.0, 6.0, size=n_points - 1)
        xs = np.concatenate([[0.0], np.cumsum(spac)])
        pts = np.stack([xs, np.zeros(n_points), np.zeros(n_points)], axis=1)
        T = spac.mean()
        dets = pts + np.array([T, 0.0, 0.0])
        gate = n_points * T - sum(abs(T - s) for s in spac) - 1.0
        if gate < T + 1.0:
            continue
        C = build_cost_matrix(pts, dets, gate=gate)
        hyps = murty_k_best(C, k_rank_max + 1)
        ident = tuple(range(n_points))
        ranks = [i for i, a in enumerate(hyps)
                 if a.track_to_detection == ident]
        if ranks and 1 <= ranks[0] <= k_rank_max - 1:
            return pts, dets, float(gate), ident
    raise RuntimeError("no qualifying drift scenario for this seed")
