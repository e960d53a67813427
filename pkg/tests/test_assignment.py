import math

import numpy as np
import pytest

from wormtrack.assignment import (
    UNASSIGNED,
    Assignment,
    ConstraintSet,
    CostMatrix,
    build_cost_matrix,
    murty_k_best,
    solve_constrained,
    solve_lap,
)
from wormtrack.errors import InfeasibleConstraints, NonFiniteInput

from oracles import assignment_cost, brute_force_ranked, dp_min_cost


def random_instance(rng, n, m, gate_range=(5.0, 50.0), integer=False):
    if integer:
        block = rng.integers(0, 100, size=(n, m)).astype(float)
        gates = rng.integers(5, 60, size=n).astype(float)
    else:
        block = rng.uniform(0, 100, size=(n, m))
        gates = rng.uniform(*gate_range, size=n)
    return CostMatrix(block=block, gates=gates)


class TestBuildCostMatrix:
    def test_triangle_distance(self):
        C = build_cost_matrix([[0, 0, 0]], [[3, 4, 0]], gate=10.0)
        assert C.block[0, 0] == pytest.approx(5.0)
        assert C.gates[0] == 10.0

    def test_gating_forces_gate_column(self):
        C = build_cost_matrix([[0, 0, 0]], [[3, 4, 0]], gate=4.0)
        assert math.isinf(C.block[0, 0])
        a = solve_lap(C)
        assert a.track_to_detection == (UNASSIGNED,)
        assert a.unassigned_detections == frozenset({0})
        assert a.total_cost == pytest.approx(4.0)

    def test_loose_gate_matches_ungated(self):
        rng = np.random.default_rng(0)
        tracks = rng.uniform(0, 200, size=(40, 3))
        detections = tracks + rng.uniform(-15, 15, size=(40, 3))
        gated = solve_lap(build_cost_matrix(tracks, detections, gate=100.0))
        open_ = solve_lap(build_cost_matrix(tracks, detections, gate=np.inf))
        assert gated.track_to_detection == open_.track_to_detection
        assert gated.total_cost == pytest.approx(open_.total_cost)

    def test_per_track_gates(self):
        C = build_cost_matrix([[0, 0, 0], [10, 0, 0]], [[6, 0, 0]],
                              gate=[5.0, 5.0])
        assert math.isinf(C.block[0, 0])
        assert C.block[1, 0] == pytest.approx(4.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteInput):
            build_cost_matrix([[0, 0, np.nan]], [[1, 1, 1]], gate=5.0)
        with pytest.raises(NonFiniteInput):
            build_cost_matrix([[0, 0, 0]], [[np.inf, 0, 0]], gate=5.0)
        with pytest.raises(ValueError):
            build_cost_matrix([], [[1, 1, 1]], gate=5.0)

    def test_no_detections(self):
        C = build_cost_matrix([[0, 0, 0], [1, 1, 1]], [], gate=7.0)
        a = solve_lap(C)
        assert a.track_to_detection == (UNASSIGNED, UNASSIGNED)
        assert a.total_cost == pytest.approx(14.0)


class TestSolveLap:
    def test_two_by_two(self):
        C = CostMatrix(block=[[1, 2], [2, 1]], gates=[10, 10])
        a = solve_lap(C)
        assert a.track_to_detection == (0, 1)
        assert a.total_cost == pytest.approx(2.0)
        assert a.unassigned_detections == frozenset()

    def test_gate_cheaper_than_match(self):
        a = solve_lap(CostMatrix(block=[[5.0]], gates=[3.0]))
        assert a.track_to_detection == (UNASSIGNED,)
        assert a.unassigned_detections == frozenset({0})
        assert a.total_cost == pytest.approx(3.0)

    def test_matches_permutation_oracle_6x6(self):
        import itertools
        rng = np.random.default_rng(42)
        for _ in range(100):
            block = rng.integers(0, 100, size=(6, 6)).astype(float)
            a = solve_lap(CostMatrix(block=block, gates=np.full(6, np.inf)))
            best = min(sum(block[i, p[i]] for i in range(6))
                       for p in itertools.permutations(range(6)))
            assert a.total_cost == pytest.approx(best)

    def test_optimal_up_to_7x7_with_gates(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            n, m = rng.integers(1, 8, size=2)
            C = random_instance(rng, n, m)
            a = solve_lap(C)
            got = assignment_cost(a.track_to_detection, C.block, C.gates)
            assert got == dp_min_cost(C.block, C.gates)
            # reported cost agrees with the recomputed sum
            assert a.total_cost == pytest.approx(got[1])

    def test_tie_break_lowest_indices(self):
        a = solve_lap(CostMatrix(block=np.ones((3, 3)), gates=[9, 9, 9]))
        assert a.track_to_detection == (0, 1, 2)
        b = solve_lap(CostMatrix(block=[[1, 2], [1, 2]], gates=[9, 9]))
        assert b.track_to_detection == (0, 1)

    def test_gate_ties_sort_after_detections(self):
        a = solve_lap(CostMatrix(block=[[5.0, 5.0]], gates=[5.0]))
        assert a.track_to_detection == (0,)

    def test_matches_ranked_oracle_exactly(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n, m = rng.integers(1, 5, size=2)
            C = random_instance(rng, n, m, integer=True)
            a = solve_lap(C)
            assert a.track_to_detection == brute_force_ranked(C.block, C.gates)[0][2]

    def test_scale_equivariance(self):
        rng = np.random.default_rng(5)
        C = random_instance(rng, 6, 6)
        scaled = CostMatrix(block=C.block * 3.5, gates=C.gates * 3.5)
        assert solve_lap(C).track_to_detection == solve_lap(scaled).track_to_detection

    def test_gate_relief_bound(self):
        # raising every gate by delta relaxes gating, so the optimum can
        # worsen by at most the total gate increase
        rng = np.random.default_rng(9)
        for _ in range(20):
            tracks = rng.uniform(0, 50, size=(8, 3))
            dets = rng.uniform(0, 50, size=(10, 3))
            lo = solve_lap(build_cost_matrix(tracks, dets, gate=8.0))
            hi = solve_lap(build_cost_matrix(tracks, dets, gate=20.0))
            assert hi.total_cost <= lo.total_cost + 8 * (20.0 - 8.0) + 1e-9

    def test_empty_tracks_matrix(self):
        a = solve_lap(CostMatrix(block=np.zeros((0, 3)), gates=np.zeros(0)))
        assert a.track_to_detection == ()
        assert a.unassigned_detections == frozenset({0, 1, 2})
        assert a.total_cost == 0.0

    def test_infinite_gate_reported_infinite(self):
        C = CostMatrix(block=[[np.inf]], gates=[np.inf])
        a = solve_lap(C)
        assert a.track_to_detection == (UNASSIGNED,)
        assert math.isinf(a.total_cost)


class TestSolveConstrained:
    def test_empty_constraints_identical(self):
        rng = np.random.default_rng(1)
        C = random_instance(rng, 6, 7)
        assert solve_constrained(C, ConstraintSet()) == solve_lap(C)

    def test_pin_optimal_pair_idempotent(self):
        rng = np.random.default_rng(2)
        C = random_instance(rng, 5, 5)
        base = solve_lap(C)
        i, j = base.matched_pairs()[0]
        got = solve_constrained(C, ConstraintSet(pinned={(i, j)}))
        assert got == base

    def test_pin_forces_swap(self):
        C = CostMatrix(block=[[1, 2], [2, 1]], gates=[10, 10])
        a = solve_constrained(C, ConstraintSet(pinned={(0, 1)}))
        assert a.track_to_detection == (1, 0)
        assert a.total_cost == pytest.approx(4.0)

    def test_forbid_matches_filtered_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            C = random_instance(rng, 4, 4, integer=True)
            base = solve_lap(C)
            if not base.matched_pairs():
                continue
            i, j = base.matched_pairs()[0]
            got = solve_constrained(C, ConstraintSet(forbidden={(i, j)}))
            ranked = brute_force_ranked(C.block, C.gates,
                                        keep=lambda t: t[i] != j)
            assert got.track_to_detection == ranked[0][2]
            assert assignment_cost(got.track_to_detection, C.block, C.gates) \
                == ranked[0][0]

    def test_forced_unassigned_charges_gate(self):
        C = CostMatrix(block=[[1, 2], [2, 1]], gates=[7, 10])
        a = solve_constrained(C, ConstraintSet(forced_unassigned={0}))
        assert a.track_to_detection == (UNASSIGNED, 1)
        assert a.total_cost == pytest.approx(8.0)

    def test_conflicting_pins_rejected(self):
        C = CostMatrix(block=[[1, 2], [2, 1]], gates=[10, 10])
        with pytest.raises(InfeasibleConstraints):
            solve_constrained(C, ConstraintSet(pinned={(0, 0), (0, 1)}))
        with pytest.raises(InfeasibleConstraints):
            solve_constrained(C, ConstraintSet(pinned={(0, 0), (1, 0)}))
        with pytest.raises(InfeasibleConstraints):
            solve_constrained(C, ConstraintSet(pinned={(0, 0)},
                                               forbidden={(0, 0)}))
        with pytest.raises(InfeasibleConstraints):
            solve_constrained(C, ConstraintSet(pinned={(0, 0)},
                                               forced_unassigned={0}))

    def test_out_of_range_rejected(self):
        C = CostMatrix(block=[[1.0]], gates=[1.0])
        with pytest.raises(ValueError):
            solve_constrained(C, ConstraintSet(pinned={(0, 5)}))

    def test_pinning_gated_pair_keeps_it(self):
        C = CostMatrix(block=[[np.inf, 2.0]], gates=[5.0])
        a = solve_constrained(C, ConstraintSet(pinned={(0, 0)}))
        assert a.track_to_detection == (0,)
        assert math.isinf(a.total_cost)

    def test_every_row_pinned(self):
        rng = np.random.default_rng(11)
        C = random_instance(rng, 5, 5)
        base = solve_lap(C)
        pins = frozenset(base.matched_pairs())
        if len(pins) == 5:
            got = solve_constrained(C, ConstraintSet(pinned=pins))
            assert got == base
        # the degenerate square case regardless of what the seed produced
        C2 = CostMatrix(block=[[1.0, 9.0], [9.0, 1.0]], gates=[20.0, 20.0])
        got = solve_constrained(C2, ConstraintSet(pinned={(0, 1), (1, 0)}))
        assert got.track_to_detection == (1, 0)
        assert got.total_cost == pytest.approx(18.0)

    def test_no_tracks_at_all(self):
        C = CostMatrix(block=np.zeros((0, 3)), gates=np.zeros(0))
        a = solve_lap(C)
        assert a.track_to_detection == ()
        assert a.unassigned_detections == frozenset({0, 1, 2})
        assert a.total_cost == 0.0


class TestMurtyKBest:
    def test_k1_equals_solve_lap(self):
        rng = np.random.default_rng(6)
        C = random_instance(rng, 5, 6)
        assert murty_k_best(C, 1) == [solve_lap(C)]

    def test_all_permutations_in_order(self):
        rng = np.random.default_rng(8)
        block = rng.uniform(0, 50, size=(4, 4))
        C = CostMatrix(block=block, gates=np.full(4, np.inf))
        out = murty_k_best(C, 24)
        assert len(out) == 24
        costs = [a.total_cost for a in out]
        assert all(math.isfinite(c) for c in costs)
        assert costs == sorted(costs)
        perms = {a.track_to_detection for a in out}
        assert len(perms) == 24
        assert all(UNASSIGNED not in p for p in perms)

    def test_prefix_consistency(self):
        rng = np.random.default_rng(10)
        C = random_instance(rng, 6, 8)
        assert murty_k_best(C, 30)[:5] == murty_k_best(C, 5)

    def test_matches_full_ranking_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(40):
            n, m = rng.integers(1, 5, size=2)
            C = random_instance(rng, n, m, integer=True)
            ranked = brute_force_ranked(C.block, C.gates)
            K = min(len(ranked), 12)
            out = murty_k_best(C, K)
            assert len(out) == K
            assert [a.track_to_detection for a in out] \
                == [rec[2] for rec in ranked[:K]]

    def test_k_exceeds_feasible_count(self):
        C = CostMatrix(block=[[np.inf]], gates=[4.0])
        out = murty_k_best(C, 5)
        assert len(out) == 1
        assert out[0].track_to_detection == (UNASSIGNED,)

    def test_no_duplicates_big_k(self):
        rng = np.random.default_rng(13)
        C = random_instance(rng, 5, 5)
        out = murty_k_best(C, 200)
        seen = [a.track_to_detection for a in out]
        assert len(seen) == len(set(seen))
        costs = [a.total_cost for a in out]
        finite = [c for c in costs if math.isfinite(c)]
        assert finite == sorted(finite)

    def test_respects_constraints(self):
        rng = np.random.default_rng(14)
        C = random_instance(rng, 4, 4, integer=True)
        cs = ConstraintSet(pinned={(0, 2)}, forbidden={(1, 1)})
        out = murty_k_best(C, 10, constraints=cs)
        assert out[0] == solve_constrained(C, cs)
        for a in out:
            assert a.track_to_detection[0] == 2
            assert a.track_to_detection[1] != 1
        ranked = brute_force_ranked(
            C.block, C.gates,
            keep=lambda t: t[0] == 2 and t[1] != 1)
        assert [a.track_to_detection for a in out] \
            == [rec[2] for rec in ranked[:10]]

    def test_k_must_be_positive(self):
        C = CostMatrix(block=[[1.0]], gates=[1.0])
        with pytest.raises(ValueError):
            murty_k_best(C, 0)


class TestAssignmentInvariants:
    def test_no_detection_used_twice(self):
        rng = np.random.default_rng(15)
        for _ in range(30):
            n, m = rng.integers(1, 9, size=2)
            C = random_instance(rng, n, m)
            a = solve_lap(C)
            used = [j for j in a.track_to_detection if j != UNASSIGNED]
            assert len(used) == len(set(used))
            assert a.unassigned_detections == frozenset(range(m)) - set(used)
