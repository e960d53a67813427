"""Tests for frame-to-frame tracking and the displacement split."""

import numpy as np
import pytest

from wormtrack.assignment import ConstraintSet
from wormtrack.errors import MissingCorrespondence
from wormtrack.metrics import frame_accuracy
from wormtrack.records import NucleusRecord
from wormtrack.synth import SynthConfig, generate, make_drift_scenario
from wormtrack.tracking import (DIMMED_STATUS, TrackConfig, TrackerState,
                                TrackSet, TrackStatus, displacement_decomposition,
                                matched, track_frame_pair, track_sequence)

RAW = TrackConfig(coordinate_space="raw")


def recs(points, ids=None, frame=0):
    points = np.asarray(points, dtype=float)
    return [NucleusRecord(frame_index=frame, position=p,
                          id=None if ids is None else ids[i])
            for i, p in enumerate(points)]


def dart_throw(rng, n, min_dist, box=200.0):
    """n points in a cube with pairwise distance at least min_dist."""
    pts = []
    while len(pts) < n:
        p = rng.uniform(0, box, size=3)
        if all(np.linalg.norm(p - q) >= min_dist for q in pts):
            pts.append(p)
    return np.array(pts)


def labeled_frame(result, t):
    """Synth detections of frame t with their true ids attached."""
    return [NucleusRecord(frame_index=t, position=result.frames[t][j].position,
                          id=nid)
            for nid, j in sorted(result.truth[t].items()) if j is not None]


class TestTrackStatus:
    def test_matched_needs_index(self):
        with pytest.raises(ValueError):
            TrackStatus("matched")
        with pytest.raises(ValueError):
            TrackStatus("dimmed", detection_index=3)
        with pytest.raises(ValueError):
            TrackStatus("vanished")

    def test_trackset_rejects_double_claim(self):
        with pytest.raises(ValueError):
            TrackSet(tracks={"a": (matched(0),), "b": (matched(0),)},
                     frame_count=1)

    def test_trackset_rejects_ragged_history(self):
        with pytest.raises(ValueError):
            TrackSet(tracks={"a": (matched(0),)}, frame_count=2)


class TestTrackConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(gate=0.0), dict(coordinate_space="polar"), dict(method="mht"),
        dict(k_best=0), dict(lam=-1.0), dict(graph_kind="knn"),
        dict(graph_radius_um=0.0), dict(reappear_window=-1),
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            TrackConfig(**kwargs)

    def test_infinite_gate_allowed(self):
        TrackConfig(gate=np.inf)


class TestTrackFramePair:
    def test_identical_frames_identity(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 50, size=(12, 3))
        ids = [f"A{i:02d}" for i in range(12)]
        prev = recs(pts, ids)
        a, labeled = track_frame_pair(prev, recs(pts, frame=1), RAW)
        assert a.track_to_detection == tuple(range(12))
        assert not a.unassigned_detections
        assert [r.id for r in labeled] == ids

    @pytest.mark.parametrize("seed", range(10))
    def test_brownian_pair_nearly_perfect(self, seed):
        # well-separated nuclei under 1 um-per-axis jitter: the ungated
        # nearest-structure solve should recover essentially every identity
        rng = np.random.default_rng(seed)
        pts = dart_throw(rng, 85, 20.0)
        ids = [f"A{i:02d}" for i in range(85)]
        curr = pts + rng.normal(0.0, 1.0, size=pts.shape)
        a, _ = track_frame_pair(recs(pts, ids), recs(curr, frame=1), RAW)
        correct = sum(1 for i, j in enumerate(a.track_to_detection) if i == j)
        assert correct / 85 >= 0.99

    def test_removed_nucleus_dims_its_track(self):
        res = generate(SynthConfig(seed=3, n_frames=1, repositioning="none"))
        prev = labeled_frame(res, 0)
        gone = prev[7].id
        curr = [NucleusRecord(frame_index=1, position=r.position)
                for k, r in enumerate(prev) if k != 7]
        cfg = TrackConfig(coordinate_space="raw", gate=10.0)
        a, labeled = track_frame_pair(prev, curr, cfg)
        assert a.track_to_detection[7] == -1
        assert gone not in [r.id for r in labeled]
        for i, j in a.matched_pairs():
            assert np.array_equal(prev[i].position, curr[j].position)
        assert len(list(a.matched_pairs())) == len(curr)

    def test_requires_ids_on_prev(self):
        pts = np.zeros((2, 3))
        with pytest.raises(ValueError):
            track_frame_pair(recs(pts), recs(pts, frame=1), RAW)
        with pytest.raises(ValueError):
            track_frame_pair(recs(pts, ["x", "x"]), recs(pts, frame=1), RAW)

    def test_straightened_space_needs_coords(self):
        pts = np.random.default_rng(1).uniform(0, 9, (3, 3))
        with pytest.raises(ValueError, match="straightened"):
            track_frame_pair(recs(pts, ["a", "b", "c"]), recs(pts, frame=1),
                             TrackConfig(coordinate_space="straightened"))

    def test_pin_constraint_forces_match(self):
        pts = np.array([[0.0, 0, 0], [10.0, 0, 0]])
        dets = np.array([[1.0, 0, 0], [9.0, 0, 0]])
        cons = ConstraintSet(pinned=frozenset({(0, 1)}))
        a, _ = track_frame_pair(recs(pts, ["a", "b"]), recs(dets, frame=1),
                                RAW, cons)
        assert a.track_to_detection == (1, 0)

    def test_murty_rescore_recovers_band_drift(self):
        for seed in range(5):
            pts, dets, gate, truth = make_drift_scenario(seed)
            ids = [f"A{i:02d}" for i in range(len(pts))]
            gnn = TrackConfig(coordinate_space="raw", gate=gate)
            qap = TrackConfig(coordinate_space="raw", gate=gate,
                              method="murty_rescore", k_best=6,
                              graph_kind="radius", graph_radius_um=7.5,
                              lam=1.0)
            a_gnn, _ = track_frame_pair(recs(pts, ids), recs(dets, frame=1), gnn)
            a_qap, _ = track_frame_pair(recs(pts, ids), recs(dets, frame=1), qap)
            assert a_gnn.track_to_detection != truth
            assert a_qap.track_to_detection == truth

    def test_label_collision_raises(self):
        prev = recs([[0.0, 0, 0]], ["a"])
        curr = [NucleusRecord(frame_index=1, position=[0.0, 0, 0]),
                NucleusRecord(frame_index=1, position=[50.0, 0, 0], id="a")]
        with pytest.raises(ValueError, match="collision"):
            track_frame_pair(prev, curr, RAW)


class TestInvariants:
    @pytest.mark.parametrize("seed", range(6))
    def test_gate_converges_to_ungated(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0, 60, size=(9, 3))
        dets = rng.uniform(0, 60, size=(11, 3))
        ids = [str(i) for i in range(9)]
        span = max(np.linalg.norm(p - d) for p in pts for d in dets)
        wide = TrackConfig(coordinate_space="raw", gate=2.0 * span)
        free = TrackConfig(coordinate_space="raw", gate=np.inf)
        a_wide, _ = track_frame_pair(recs(pts, ids), recs(dets, frame=1), wide)
        a_free, _ = track_frame_pair(recs(pts, ids), recs(dets, frame=1), free)
        assert a_wide.track_to_detection == a_free.track_to_detection

    def test_pinning_the_answer_is_idempotent(self):
        rng = np.random.default_rng(17)
        pts = rng.uniform(0, 40, size=(8, 3))
        dets = rng.uniform(0, 40, size=(8, 3))
        ids = [str(i) for i in range(8)]
        cfg = TrackConfig(coordinate_space="raw", gate=30.0)
        base, _ = track_frame_pair(recs(pts, ids), recs(dets, frame=1), cfg)
        cons = ConstraintSet(pinned=frozenset(base.matched_pairs()))
        again, _ = track_frame_pair(recs(pts, ids), recs(dets, frame=1),
                                    cfg, cons)
        assert again.track_to_detection == base.track_to_detection

    def test_detection_order_does_not_matter(self):
        rng = np.random.default_rng(23)
        pts = rng.uniform(0, 50, size=(10, 3))
        curr = pts + rng.normal(0, 0.5, size=pts.shape)
        ids = [f"A{i:02d}" for i in range(10)]
        cfg = TrackConfig(coordinate_space="raw", gate=5.0)
        _, lab1 = track_frame_pair(recs(pts, ids), recs(curr, frame=1), cfg)
        perm = rng.permutation(10)
        _, lab2 = track_frame_pair(recs(pts, ids), recs(curr[perm], frame=1),
                                   cfg)
        map1 = {r.id: tuple(r.position) for r in lab1 if r.id}
        map2 = {r.id: tuple(r.position) for r in lab2 if r.id}
        assert map1 == map2


class TestTrackSequence:
    def test_identical_frames_all_matched(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(0, 50, size=(9, 3))
        ids = [f"A{i:02d}" for i in range(9)]
        frames = [recs(pts, ids)] + [recs(pts, frame=t) for t in (1, 2)]
        ts = track_sequence(frames, cfg=RAW)
        assert ts.frame_count == 3
        for t in range(3):
            n_match, n_dim, n_new = ts.counts(t)
            assert (n_match, n_dim, n_new) == (9, 0, 0)

    def test_absent_frame_dims_then_rematches(self):
        res = generate(SynthConfig(seed=6, n_frames=10, repositioning="none"))
        frames = [labeled_frame(res, 0)]
        victim = frames[0][11].id
        for t in range(1, 10):
            dets = [NucleusRecord(frame_index=t, position=r.position)
                    for r in labeled_frame(res, t)
                    if not (t == 5 and r.id == victim)]
            frames.append(dets)
        cfg = TrackConfig(coordinate_space="raw", gate=10.0)
        ts = track_sequence(frames, cfg=cfg)
        hist = ts.tracks[victim]
        assert hist[5] == DIMMED_STATUS
        assert all(hist[t].is_matched for t in range(10) if t != 5)
        for t in range(1, 10):
            acc = sum(1 for nid, j in ts.predicted_map(t).items()
                      if j is not None
                      and np.array_equal(frames[t][j].position,
                                         res.frames[t][res.truth[t][nid]].position))
            assert acc == len(frames[t])

    def test_reappear_window_zero_blocks_rematch(self):
        pts = np.array([[0.0, 0, 0], [30.0, 0, 0]])
        ids = ["a", "b"]
        frames = [recs(pts, ids), recs(pts[:1], frame=1),
                  recs(pts, frame=2)]
        cfg = TrackConfig(coordinate_space="raw", gate=5.0, reappear_window=0)
        ts = track_sequence(frames, cfg=cfg)
        assert [s.kind for s in ts.tracks["b"]] == \
            ["matched", "dimmed", "dimmed"]
        unlimited = track_sequence(frames, cfg=TrackConfig(
            coordinate_space="raw", gate=5.0))
        assert [s.kind for s in unlimited.tracks["b"]] == \
            ["matched", "dimmed", "matched"]

    def test_straightened_tracking_beats_raw_under_repositioning(self):
        cfg_data = SynthConfig(seed=12, n_frames=5, repositioning="rigid",
                               brownian_sigma_um=0.3)
        res = generate(cfg_data)
        frames = [labeled_frame(res, 0)] + [res.frames[t] for t in range(1, 5)]
        straight = track_sequence(frames, res.seam_frames,
                                  TrackConfig(coordinate_space="straightened"))
        raw = track_sequence(frames, cfg=RAW)

        def median_acc(ts):
            truth_maps = []
            for t in range(1, 5):
                remap = {nid: res.truth[t][nid] for nid in ts.tracks}
                truth_maps.append(
                    frame_accuracy(ts.predicted_map(t), remap))
            return float(np.median(truth_maps))

        assert median_acc(straight) == 1.0
        assert median_acc(raw) < 0.9

    def test_truth_indices_line_up_with_synth_shuffle(self):
        # detections arrive shuffled after frame 0; ids must follow the
        # nucleus, not the slot
        res = generate(SynthConfig(seed=9, n_frames=4, repositioning="none",
                                   brownian_sigma_um=0.4))
        frames = [labeled_frame(res, 0)] + [res.frames[t] for t in range(1, 4)]
        ts = track_sequence(frames, res.seam_frames,
                            TrackConfig(coordinate_space="straightened"))
        for t in range(4):
            assert ts.predicted_map(t) == res.truth[t]

    def test_auto_name_spawns_track(self):
        pts = np.array([[0.0, 0, 0], [30.0, 0, 0]])
        ids = ["a", "b"]
        extra = np.array([[60.0, 0, 0]])
        frames = [recs(pts, ids), recs(pts, frame=1),
                  recs(np.vstack([pts, extra]), frame=2),
                  recs(np.vstack([pts, extra]), frame=3)]
        cfg = TrackConfig(coordinate_space="raw", gate=5.0)
        named = track_sequence(frames, cfg=cfg, auto_name=True)
        assert set(named.tracks) == {"a", "b", "N001"}
        kinds = [s.kind for s in named.tracks["N001"]]
        assert kinds == ["not_yet_present", "not_yet_present",
                         "matched", "matched"]
        anon = track_sequence(frames, cfg=cfg)
        assert set(anon.tracks) == {"a", "b"}

    def test_conservation_counts(self):
        res = generate(SynthConfig(seed=10, n_frames=8, repositioning="none",
                                   brownian_sigma_um=0.5, dropout_prob=0.08))
        frames = [labeled_frame(res, 0)] + [res.frames[t] for t in range(1, 8)]
        cfg = TrackConfig(coordinate_space="raw", gate=8.0)
        ts = track_sequence(frames, cfg=cfg)
        n_tracks = len(frames[0])
        for t in range(8):
            n_match, n_dim, n_new = ts.counts(t)
            assert n_match + n_dim == n_tracks
            assert n_new == 0
            assert n_match <= len(frames[t])

    def test_seed_frame_must_be_labeled(self):
        pts = np.zeros((2, 3)) + [[0, 0, 0], [9, 0, 0]]
        with pytest.raises(ValueError):
            track_sequence([recs(pts), recs(pts, frame=1)], cfg=RAW)

    def test_straightened_needs_seam_frames(self):
        pts = np.array([[0.0, 0, 0]])
        with pytest.raises(ValueError):
            track_sequence([recs(pts, ["a"])],
                           cfg=TrackConfig(coordinate_space="straightened"))


class TestTrackerState:
    def test_step_before_seed_rejected(self):
        state = TrackerState(RAW)
        with pytest.raises(ValueError):
            state.step([])

    def test_double_seed_rejected(self):
        state = TrackerState(RAW)
        state.seed(recs([[0.0, 0, 0]], ["a"]))
        with pytest.raises(ValueError):
            state.seed(recs([[0.0, 0, 0]], ["a"]))

    def test_candidate_order_is_stable(self):
        state = TrackerState(RAW)
        pts = np.array([[0.0, 0, 0], [20.0, 0, 0], [40.0, 0, 0]])
        state.seed(recs(pts, ["a", "b", "c"]))
        state.step(recs(pts, frame=1))
        assert state.candidate_ids() == ["a", "b", "c"]


class TestDisplacementDecomposition:
    def test_identical_frames_zero_both(self):
        res = generate(SynthConfig(seed=1, n_frames=2, repositioning="none"))
        prev, curr = labeled_frame(res, 0), labeled_frame(res, 1)
        out = displacement_decomposition(prev, curr, res.seam_frames[0],
                                         res.seam_frames[1])
        for d in out.values():
            assert d.raw_norm < 1e-12
            assert d.internal_norm < 1e-12

    def test_pure_repositioning_cancels_internal(self):
        res = generate(SynthConfig(seed=2, n_frames=2, repositioning="rigid"))
        prev, curr = labeled_frame(res, 0), labeled_frame(res, 1)
        out = displacement_decomposition(prev, curr, res.seam_frames[0],
                                         res.seam_frames[1])
        assert len(out) == 85
        for d in out.values():
            assert d.internal_norm < 1e-6
            assert d.raw_norm > 1.0
            assert d.organism_estimate == pytest.approx(d.raw_norm, abs=1e-6)

    def test_internal_motion_passes_through(self):
        res = generate(SynthConfig(seed=4, n_frames=2, repositioning="none",
                                   brownian_sigma_um=1.0))
        prev, curr = labeled_frame(res, 0), labeled_frame(res, 1)
        out = displacement_decomposition(prev, curr, res.seam_frames[0],
                                         res.seam_frames[1])
        for d in out.values():
            assert abs(d.internal_norm - d.raw_norm) < 0.5

    def test_no_shared_ids_raises(self):
        a = recs([[0.0, 0, 0]], ["x"])
        b = recs([[0.0, 0, 0]], ["y"], frame=1)
        res = generate(SynthConfig(seed=0, n_frames=2))
        with pytest.raises(MissingCorrespondence):
            displacement_decomposition(a, b, res.seam_frames[0],
                                       res.seam_frames[1])

    def test_duplicate_ids_rejected(self):
        a = recs([[0.0, 0, 0], [5.0, 0, 0]], ["x", "x"])
        res = generate(SynthConfig(seed=0, n_frames=2))
        with pytest.raises(ValueError):
            displacement_decomposition(a, a, res.seam_frames[0],
                                       res.seam_frames[1])
