"""Release gates runnable from the command line.

Every check builds its own scenario, runs the library against an
independently coded reference (exhaustive enumeration, bitmask DP, or a
direct geometric audit), and reports one pass/fail line. The simulator-based
checks pin the quantitative thresholds the toolkit is expected to clear.
"""

from __future__ import annotations

import itertools
import json
import math
import tempfile
from dataclasses import dataclass, replace
from time import perf_counter
from typing import Dict, List, Optional, Tuple

import numpy as np

from .assignment import (ConstraintSet, CostMatrix, UNASSIGNED,
                         build_cost_matrix, murty_k_best, solve_lap)
from .delaunay import tetrahedralize
from .geometry import fit_splines, straighten_point
from .graphs import build_distance_graph, rescore_hypotheses
from .io import Config
from .metrics import DetectionScore, frame_accuracy, match_centroids, summarize
from .records import NucleusRecord
from .service import SessionStore, replay_log
from .synth import SynthConfig, generate, inject_band_drift, make_drift_scenario
from .tracking import TrackConfig, _features, track_frame_pair, track_sequence


@dataclass(frozen=True)
class BenchResult:
    name: str
    passed: bool
    detail: str


# ------------------------------------------------- independent references

def _cost_of(t2d, block, gates) -> Tuple[int, float]:
    """(infinite terms, finite sum) of a matching, rows in ascending order."""
    n_inf, finite = 0, 0.0
    for i, j in enumerate(t2d):
        c = gates[i] if j == UNASSIGNED else block[i][j]
        if math.isinf(c):
            n_inf += 1
        else:
            finite += c
    return n_inf, finite


def _dp_min_cost(block, gates) -> Tuple[int, float]:
    """Optimal matching value by bitmask DP over used columns."""
    n, m = block.shape
    best = {0: (0, 0.0)}
    for i in range(n):
        nxt: Dict[int, Tuple[int, float]] = {}

        def relax(mask, cost):
            old = nxt.get(mask)
            if old is None or cost < old:
                nxt[mask] = cost

        for mask, (k, f) in best.items():
            g = gates[i]
            relax(mask, (k + 1, f) if math.isinf(g) else (k, f + g))
            for j in range(m):
                if not (mask >> j & 1) and not math.isinf(block[i, j]):
                    relax(mask | 1 << j, (k, f + block[i, j]))
        best = nxt
    return min(best.values())


def _dp_best_matching(block, gates) -> Tuple[Tuple[int, float], int]:
    """Optimal value plus how many pairs that optimum matches."""
    n, m = block.shape
    best: Dict[int, Tuple[Tuple[int, float], int]] = {0: ((0, 0.0), 0)}
    for i in range(n):
        nxt: Dict[int, Tuple[Tuple[int, float], int]] = {}

        def relax(mask, cost, tp):
            old = nxt.get(mask)
            if old is None or cost < old[0]:
                nxt[mask] = (cost, tp)

        for mask, ((k, f), tp) in best.items():
            g = gates[i]
            if math.isinf(g):
                relax(mask, (k + 1, f), tp)
            else:
                relax(mask, (k, f + g), tp)
            for j in range(m):
                if not (mask >> j & 1) and not math.isinf(block[i, j]):
                    relax(mask | 1 << j, (k, f + block[i, j]), tp + 1)
        best = nxt
    return min(best.values())


def _all_matchings(n: int, m: int):
    for combo in itertools.product([UNASSIGNED] + list(range(m)), repeat=n):
        used = [j for j in combo if j != UNASSIGNED]
        if len(set(used)) == len(used):
            yield combo


def _circumsphere(p4: np.ndarray) -> Tuple[np.ndarray, float]:
    """Center/radius through four points, via the perpendicular-bisector
    system in extended precision."""
    p = np.asarray(p4, dtype=np.longdouble)
    a = p[0]
    M = 2.0 * (p[1:] - a)
    rhs = (p[1:] ** 2).sum(axis=1) - (a ** 2).sum()
    center = np.linalg.solve(M.astype(float), rhs.astype(float))
    radius = float(np.sqrt(((center - a.astype(float)) ** 2).sum()))
    return center, radius


# ------------------------------------------------------- simulator helpers

def _labeled(result, t: int) -> List[NucleusRecord]:
    """Frame t records with truth ids attached."""
    by_index = {j: nid for nid, j in result.truth[t].items() if j is not None}
    return [replace(r, id=by_index.get(j)) for j, r in
            enumerate(result.frames[t])]


def _straightened_frames(result) -> List[List[NucleusRecord]]:
    out = []
    for recs, seam in zip(result.frames, result.seam_frames):
        splines = fit_splines(seam)
        out.append([replace(r, straightened=straighten_point(r.position,
                                                             splines))
                    for r in recs])
    return out


def _pair_accuracy(a, prev_ids, truth_map) -> float:
    predicted = {prev_ids[i]: (None if j == UNASSIGNED else j)
                 for i, j in enumerate(a.track_to_detection)}
    return frame_accuracy(predicted, truth_map)


# ----------------------------------------------------------------- checks

def check_lap_oracle(seed: int) -> BenchResult:
    rng = np.random.default_rng([seed, 1])
    t0 = perf_counter()
    for trial in range(500):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, 8))
        block = rng.uniform(0.0, 100.0, (n, m))
        block[rng.random((n, m)) < 0.25] = np.inf
        if rng.random() < 0.3:
            gates = np.full(n, np.inf)
        else:
            gates = rng.uniform(0.0, 120.0, n)
            gates[rng.random(n) < 0.2] = np.inf
        a = solve_lap(CostMatrix(block=block, gates=gates))
        got = _cost_of(a.track_to_detection, block, gates)
        want = _dp_min_cost(block, gates)
        if got != want:
            return BenchResult("lap_oracle", False,
                               f"trial {trial}: solver {got}, DP {want}")
    dt = perf_counter() - t0
    return BenchResult("lap_oracle", dt < 5.0,
                       f"500/500 instances exact in {dt:.2f} s (budget 5 s)")


def check_murty_oracle(seed: int) -> BenchResult:
    rng = np.random.default_rng([seed, 2])
    for trial in range(200):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(1, 6))
        block = rng.uniform(0.0, 100.0, (n, m))
        block[rng.random((n, m)) < 0.2] = np.inf
        gates = rng.uniform(0.0, 150.0, n)
        gates[rng.random(n) < 0.2] = np.inf
        want = sorted(
            _cost_of(t2d, block, gates)
            for t2d in _all_matchings(n, m)
            if not any(j != UNASSIGNED and math.isinf(block[i][j])
                       for i, j in enumerate(t2d)))
        ranked = murty_k_best(CostMatrix(block=block, gates=gates),
                              len(want) + 3)
        got = [_cost_of(a.track_to_detection, block, gates) for a in ranked]
        if got != want:
            return BenchResult("murty_oracle", False,
                               f"trial {trial}: ranked costs diverge from "
                               f"enumeration ({len(got)} vs {len(want)})")
    for trial in range(100):
        n = int(rng.integers(6, 10))
        m = int(rng.integers(6, 10))
        block = rng.uniform(0.0, 100.0, (n, m))
        gates = rng.uniform(0.0, 150.0, n)
        C = CostMatrix(block=block, gates=gates)
        top5 = [a.track_to_detection for a in murty_k_best(C, 5)]
        top30 = [a.track_to_detection for a in murty_k_best(C, 30)]
        if top5 != top30[:5]:
            return BenchResult("murty_oracle", False,
                               f"prefix property broken on trial {trial}")
    return BenchResult("murty_oracle", True,
                       "200/200 exhaustive rankings exact; "
                       "K=5 prefix of K=30 on 100/100")


def check_untwist_rigid_invariance(seed: int) -> BenchResult:
    cfg = SynthConfig(seed=seed + 3, n_frames=50, n_nuclei=85)
    result = generate(cfg)
    frames = _straightened_frames(result)

    base: Dict[str, np.ndarray] = {}
    drift = 0.0
    for t in range(cfg.n_frames):
        by_index = {j: nid for nid, j in result.truth[t].items()}
        for j, rec in enumerate(frames[t]):
            vec = rec.straightened.as_vector()
            nid = by_index[j]
            if t == 0:
                base[nid] = vec
            else:
                drift = max(drift, float(np.max(np.abs(vec - base[nid]))))

    from .tracking import displacement_decomposition
    raw_norms, internal_norms = [], []
    for t in range(cfg.n_frames - 1):
        decomp = displacement_decomposition(
            _labeled(result, t), _labeled(result, t + 1),
            result.seam_frames[t], result.seam_frames[t + 1])
        raw_norms += [d.raw_norm for d in decomp.values()]
        internal_norms += [d.internal_norm for d in decomp.values()]
    raw_med = float(np.median(raw_norms))
    int_med = float(np.median(internal_norms))
    passed = drift < 1e-6 and raw_med > 10.0 and int_med < 1e-6
    return BenchResult(
        "untwist_rigid_invariance", passed,
        f"max straightened drift {drift:.2e} um (< 1e-6); raw displacement "
        f"median {raw_med:.1f} um (> 10); internal estimate median "
        f"{int_med:.2e} um (< 1e-6)")


def _twitching_suite(seed: int) -> Tuple[SynthConfig, object]:
    cfg = SynthConfig(seed=seed, n_frames=31, n_nuclei=85,
                      brownian_sigma_um=1.0, elongation_rate=0.01)
    return cfg, generate(cfg)


def check_straightened_vs_raw(seed: int) -> BenchResult:
    t0 = perf_counter()
    cfg, result = _twitching_suite(seed + 4)
    ts_s = track_sequence(result.frames, result.seam_frames, TrackConfig())
    ts_r = track_sequence(result.frames,
                          cfg=TrackConfig(coordinate_space="raw"))
    accs_s = [frame_accuracy(ts_s.predicted_map(t), result.truth[t])
              for t in range(1, cfg.n_frames)]
    accs_r = [frame_accuracy(ts_r.predicted_map(t), result.truth[t])
              for t in range(1, cfg.n_frames)]
    med_s = summarize(accs_s).median
    med_r = summarize(accs_r).median
    dt = perf_counter() - t0
    passed = med_s >= 0.95 and med_r <= 0.5 and dt < 60.0
    return BenchResult(
        "straightened_vs_raw_tracking", passed,
        f"median accuracy straightened {med_s:.3f} (>= 0.95), "
        f"raw {med_r:.3f} (<= 0.5); 30 pairs, 85 nuclei, {dt:.1f} s")


def check_gate_convergence(seed: int) -> BenchResult:
    cfg, result = _twitching_suite(seed + 5)
    frames = _straightened_frames(result)
    labeled = []
    for t in range(cfg.n_frames):
        by_index = {j: nid for nid, j in result.truth[t].items()}
        labeled.append([replace(r, id=by_index[j])
                        for j, r in enumerate(frames[t])])

    tr = TrackConfig()
    d_max = 0.0
    for t in range(cfg.n_frames - 1):
        f_prev = _features(labeled[t], tr)
        f_curr = _features(labeled[t + 1], tr)
        for nid, j_prev in result.truth[t].items():
            j_curr = result.truth[t + 1].get(nid)
            if j_prev is None or j_curr is None:
                continue
            d_max = max(d_max, float(np.linalg.norm(f_curr[j_curr]
                                                    - f_prev[j_prev])))

    gated_cfg = replace(tr, gate=2.0 * d_max)
    for t in range(cfg.n_frames - 1):
        a_u, _ = track_frame_pair(labeled[t], frames[t + 1], tr)
        a_g, _ = track_frame_pair(labeled[t], frames[t + 1], gated_cfg)
        if a_u.track_to_detection != a_g.track_to_detection:
            return BenchResult(
                "gate_convergence", False,
                f"pair {t}: gate 2*d_max = {2 * d_max:.1f} um changed the "
                "assignment")

    # band A oscillates +-15 um so every pair sees a 15 um coordinated jump
    drifted = result
    offset = np.array([15.0, 0.0, 0.0])
    for t in range(1, cfg.n_frames):
        sign = 1.0 if t % 2 == 1 else -1.0
        drifted = inject_band_drift(drifted, "A", sign * offset, from_frame=t)
    dframes = _straightened_frames(drifted)
    dlabeled = []
    for t in range(cfg.n_frames):
        by_index = {j: nid for nid, j in drifted.truth[t].items()}
        dlabeled.append([replace(r, id=by_index[j])
                         for j, r in enumerate(dframes[t])])
    accs_u, accs_g = [], []
    tight = replace(tr, gate=10.0)
    for t in range(cfg.n_frames - 1):
        ids = [r.id for r in dlabeled[t]]
        a_u, _ = track_frame_pair(dlabeled[t], dframes[t + 1], tr)
        a_g, _ = track_frame_pair(dlabeled[t], dframes[t + 1], tight)
        accs_u.append(_pair_accuracy(a_u, ids, drifted.truth[t + 1]))
        accs_g.append(_pair_accuracy(a_g, ids, drifted.truth[t + 1]))
    med_u = summarize(accs_u).median
    med_g = summarize(accs_g).median
    passed = med_g < med_u
    return BenchResult(
        "gate_convergence", passed,
        f"gate 2*d_max ({2 * d_max:.1f} um) identical to ungated on 30/30 "
        f"pairs; under 15 um drift, gate 10 um median {med_g:.3f} < ungated "
        f"{med_u:.3f}")


def check_delaunay(seed: int) -> BenchResult:
    rng = np.random.default_rng([seed, 6])
    worst = math.inf
    for trial in range(100):
        pts = rng.uniform(0.0, 30.0, (30, 3))
        tets = tetrahedralize(pts)
        for tet in tets:
            center, radius = _circumsphere(pts[tet])
            dists = np.linalg.norm(pts - center, axis=1)
            dists[list(tet)] = np.inf
            slack = float(dists.min() - radius)
            worst = min(worst, slack)
            if slack < -1e-9:
                return BenchResult(
                    "delaunay_circumsphere", False,
                    f"trial {trial}: point {slack:.2e} um inside a "
                    "circumsphere")
        radii = [5.0, 7.5, 10.0, 12.5]
        graphs = [build_distance_graph(pts, r).edge_set() for r in radii]
        for small, big in zip(graphs, graphs[1:]):
            if not small <= big:
                return BenchResult("delaunay_circumsphere", False,
                                   f"trial {trial}: radius nesting broken")
    return BenchResult(
        "delaunay_circumsphere", True,
        f"100/100 clouds empty-circumsphere (worst slack {worst:.2e}); "
        "radius nesting 5 - 7.5 - 10 - 12.5 um holds")


def check_qap_rescoring(seed: int) -> BenchResult:
    recovered = 0
    for i in range(20):
        pts, dets, gate, truth = make_drift_scenario(seed=seed * 100 + i)
        C = build_cost_matrix(pts, dets, gate=gate)
        g_prev = build_distance_graph(pts, 7.5)
        g_curr = build_distance_graph(dets, 7.5)
        hyp = rescore_hypotheses(C, 5, g_prev, g_curr, lam=1.0)
        if hyp.assignment.track_to_detection == truth:
            recovered += 1
    return BenchResult(
        "qap_drift_recovery", recovered >= 16,
        f"true matching recovered on {recovered}/20 coordinated-drift "
        "scenarios (threshold 16)")


def check_session_resolve(seed: int) -> BenchResult:
    cfg, result = _twitching_suite(seed + 7)
    frames = _straightened_frames(result)
    labeled = []
    for t in range(cfg.n_frames):
        by_index = {j: nid for nid, j in result.truth[t].items()}
        labeled.append([replace(r, id=by_index[j])
                        for j, r in enumerate(frames[t])])
    tr = TrackConfig()
    for t in range(cfg.n_frames - 1):
        a, _ = track_frame_pair(labeled[t], frames[t + 1], tr)
        cons = ConstraintSet(pinned=frozenset(a.matched_pairs()))
        a2, _ = track_frame_pair(labeled[t], frames[t + 1], tr, cons)
        if a2.track_to_detection != a.track_to_detection:
            return BenchResult("session_resolve", False,
                               f"pair {t}: pin-all-correct re-solve changed "
                               "the assignment")

    raw_cfg = Config(tracking=TrackConfig(coordinate_space="raw"))
    with tempfile.TemporaryDirectory() as tmp:
        store = SessionStore(raw_cfg, session_dir=tmp)
        payload = {"frames": [
            [{"x_um": 10.0 * k, "y_um": 0.0, "z_um": 0.0, "id": f"N{k:03d}"}
             for k in range(4)],
            [{"x_um": 10.0 * k + 1.0, "y_um": 0.0, "z_um": 0.0, "id": None}
             for k in range(4)],
            [{"x_um": 10.0 * k + 2.0, "y_um": 0.0, "z_um": 0.0, "id": None}
             for k in range(4)]]}
        session = store.create(payload)
        with session.lock:
            session.edit(1, "add", {"position": [55.0, 0.0, 0.0],
                                    "id": "N900"}, expected_rev=0)
            session.edit(1, "move", {"index": 0,
                                     "position": [1.5, 0.0, 0.0]},
                         expected_rev=1)
            session.edit(1, "undo", {}, expected_rev=2)
            session.constrain("pin", {"track_id": "N001",
                                      "detection_index": 1}, expected_rev=3)
            session.commit(force=False, expected_rev=4)
            live = json.dumps(session.state(), sort_keys=True)
        rebuilt = replay_log(f"{tmp}/{session.session_id}.jsonl",
                             session.session_id)
        again = json.dumps(rebuilt.state(), sort_keys=True)
        if live != again:
            return BenchResult("session_resolve", False,
                               "log replay diverged from the live session")

    rng = np.random.default_rng([seed, 8])
    big_prev = [{"x_um": float(x), "y_um": float(y), "z_um": float(z),
                 "id": f"T{k:03d}"}
                for k, (x, y, z) in enumerate(rng.uniform(0, 300, (200, 3)))]
    big_curr = [{"x_um": d["x_um"] + float(dx), "y_um": d["y_um"] + float(dy),
                 "z_um": d["z_um"] + float(dz), "id": None}
                for d, (dx, dy, dz) in zip(big_prev, rng.normal(0, 1.0,
                                                                (200, 3)))]
    store = SessionStore(raw_cfg)
    session = store.create({"frames": [big_prev, big_curr]})
    with session.lock:
        session.predict()           # warm caches
        t0 = perf_counter()
        session.predict()
        dt = perf_counter() - t0
    passed = dt <= 0.2
    return BenchResult(
        "session_resolve", passed,
        f"pin-all-correct idempotent on 30/30 pairs; replay byte-identical; "
        f"predict at n=m=200 took {dt * 1e3:.0f} ms (<= 200)")


def check_metrics_oracle(seed: int) -> BenchResult:
    rng = np.random.default_rng([seed, 9])
    for trial in range(200):
        nd = int(rng.integers(1, 8))
        nt = int(rng.integers(1, 8))
        dets = rng.uniform(0.0, 20.0, (nd, 3))
        truth = rng.uniform(0.0, 20.0, (nt, 3))
        radius = float(rng.uniform(2.0, 12.0))
        score = match_centroids(dets, truth, radius)
        block = np.linalg.norm(dets[:, None, :] - truth[None, :, :], axis=2)
        block[block > radius] = np.inf
        _, tp = _dp_best_matching(block, np.full(nd, radius))
        if (score.true_positives, score.false_positives,
                score.false_negatives) != (tp, nd - tp, nt - tp):
            return BenchResult(
                "metrics_oracle", False,
                f"trial {trial}: match_centroids tp={score.true_positives}, "
                f"DP tp={tp}")
    for _ in range(200):
        tp, fp, fn = (int(v) for v in rng.integers(0, 40, 3))
        s = DetectionScore.from_counts(tp, fp, fn)
        harm = (2 * s.precision * s.recall / (s.precision + s.recall)
                if s.precision + s.recall else 0.0)
        if abs(s.f1 - harm) > 1e-12:
            return BenchResult("metrics_oracle", False,
                               f"F1 {s.f1} vs harmonic mean {harm}")
    return BenchResult(
        "metrics_oracle", True,
        "200/200 matchings equal DP optimum; F1 harmonic identity to 1e-12")


CHECKS = [
    check_lap_oracle,
    check_murty_oracle,
    check_untwist_rigid_invariance,
    check_straightened_vs_raw,
    check_gate_convergence,
    check_delaunay,
    check_qap_rescoring,
    check_session_resolve,
    check_metrics_oracle,
]


def run_all(seed: int = 0) -> List[BenchResult]:
    out = []
    for check in CHECKS:
        try:
            out.append(check(seed))
        except Exception as exc:                      # a gate must not crash the rest
            name = check.__name__.replace("check_", "", 1)
            out.append(BenchResult(name, False, f"crashed: {exc!r}"))
    return out
