"""End-to-end tests of the command-line interface."""

import json

import pytest

from wormtrack.cli import main
from wormtrack.io import read_track_csv


def simulate(tmp_path, *extra):
    out = tmp_path / "data"
    rc = main(["simulate", "--seed", "3", "--frames", "4",
               "--out-dir", str(out), *extra])
    assert rc == 0
    return out


class TestSimulate:
    def test_writes_three_files(self, tmp_path, capsys):
        out = simulate(tmp_path)
        for name in ("nuclei.csv", "seam.csv", "truth.csv"):
            assert (out / name).exists()
        assert "4 frames" in capsys.readouterr().out

    def test_same_seed_byte_identical(self, tmp_path):
        a = simulate(tmp_path / "a", "--sigma", "1.0", "--dropout", "0.05")
        b = simulate(tmp_path / "b", "--sigma", "1.0", "--dropout", "0.05")
        for name in ("nuclei.csv", "seam.csv", "truth.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_infeasible_config_exits_one(self, tmp_path, capsys):
        rc = main(["simulate", "--nuclei", "100000",
                   "--out-dir", str(tmp_path / "x")])
        assert rc == 1
        assert "error" in capsys.readouterr().err


class TestUntwist:
    def test_produces_straightened_rows(self, tmp_path, capsys):
        data = simulate(tmp_path)
        out = tmp_path / "straight.csv"
        rc = main(["untwist", "--nuclei", str(data / "nuclei.csv"),
                   "--seam", str(data / "seam.csv"), "--out", str(out)])
        assert rc == 0
        rows = read_track_csv(out)
        assert len(rows) == 4 * 85
        assert all(r.straightened is not None for r in rows)
        assert all(r.position is not None for r in rows)

    def test_missing_nuclei_file(self, tmp_path, capsys):
        rc = main(["untwist", "--nuclei", str(tmp_path / "nope.csv"),
                   "--seam", str(tmp_path / "nope2.csv"),
                   "--out", str(tmp_path / "o.csv")])
        assert rc == 1
        assert "nope.csv" in capsys.readouterr().err


class TestTrack:
    def test_straightened_run_with_truth(self, tmp_path, capsys):
        data = simulate(tmp_path, "--sigma", "0.3")
        out = tmp_path / "track.csv"
        rc = main(["track", "--nuclei", str(data / "nuclei.csv"),
                   "--seam", str(data / "seam.csv"),
                   "--truth", str(data / "truth.csv"),
                   "--space", "straightened", "--out", str(out)])
        assert rc == 0
        text = capsys.readouterr().out
        assert "median" in text.lower()
        rows = read_track_csv(out)
        assert {r.frame for r in rows} == {0, 1, 2, 3}
        matched = [r for r in rows if r.status == "matched"]
        assert all(r.straightened is not None for r in matched)

    def test_perfect_accuracy_on_gentle_data(self, tmp_path, capsys):
        data = simulate(tmp_path, "--sigma", "0.2")
        rc = main(["track", "--nuclei", str(data / "nuclei.csv"),
                   "--seam", str(data / "seam.csv"),
                   "--truth", str(data / "truth.csv"),
                   "--space", "straightened",
                   "--out", str(tmp_path / "t.csv"), "--csv"])
        assert rc == 0
        out = capsys.readouterr().out
        line = [l for l in out.splitlines() if l.startswith("track,")][0]
        _, median, iqr = line.split(",")
        assert float(median) == 1.0
        assert float(iqr) == 0.0

    def test_straightened_without_seam_flag(self, tmp_path, capsys):
        data = simulate(tmp_path)
        rc = main(["track", "--nuclei", str(data / "nuclei.csv"),
                   "--space", "straightened",
                   "--out", str(tmp_path / "t.csv")])
        assert rc == 1
        assert "--seam" in capsys.readouterr().err

    def test_missing_seam_file_named(self, tmp_path, capsys):
        data = simulate(tmp_path)
        rc = main(["track", "--nuclei", str(data / "nuclei.csv"),
                   "--seam", str(tmp_path / "ghost.csv"),
                   "--space", "straightened",
                   "--out", str(tmp_path / "t.csv")])
        assert rc == 1
        assert "ghost.csv" in capsys.readouterr().err


class TestKbest:
    def test_rank_zero_matches_track_output(self, tmp_path, capsys):
        data = simulate(tmp_path, "--frames", "2", "--sigma", "0.2")
        rc = main(["track", "--nuclei", str(data / "nuclei.csv"),
                   "--seam", str(data / "seam.csv"),
                   "--space", "straightened",
                   "--out", str(tmp_path / "t.csv")])
        assert rc == 0
        capsys.readouterr()
        rc = main(["kbest", "--nuclei", str(data / "nuclei.csv"),
                   "--seam", str(data / "seam.csv"),
                   "--space", "straightened", "--k", "1"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        head = json.loads(lines[0])
        best = json.loads(lines[1])
        assert best["rank"] == 0
        kbest_map = {tid: j for tid, j in
                     zip(head["tracks"], best["track_to_detection"])
                     if j >= 0}
        rows = read_track_csv(tmp_path / "t.csv")
        track_map = {r.id: r.detection_index for r in rows
                     if r.frame == 1 and r.status == "matched"}
        assert kbest_map == track_map

    def test_emits_k_distinct_hypotheses(self, tmp_path, capsys):
        data = simulate(tmp_path, "--frames", "2")
        capsys.readouterr()
        rc = main(["kbest", "--nuclei", str(data / "nuclei.csv"),
                   "--seam", str(data / "seam.csv"), "--k", "4"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        hyps = [json.loads(l) for l in lines[1:]]
        assert len(hyps) == 4
        seen = {tuple(h["track_to_detection"]) for h in hyps}
        assert len(seen) == 4
        costs = [h["total_cost"] for h in hyps]
        assert costs == sorted(costs)

    def test_pair_out_of_range(self, tmp_path, capsys):
        data = simulate(tmp_path, "--frames", "2")
        rc = main(["kbest", "--nuclei", str(data / "nuclei.csv"),
                   "--seam", str(data / "seam.csv"), "--pair", "0", "9"])
        assert rc == 1


class TestEvaluate:
    def test_reports_pooled_and_mean(self, tmp_path, capsys):
        data = simulate(tmp_path)
        rc = main(["evaluate", "--detections", str(data / "nuclei.csv"),
                   "--truth", str(data / "nuclei.csv")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "pooled" in out
        assert "per-image mean" in out

    def test_csv_output_parses(self, tmp_path, capsys):
        data = simulate(tmp_path)
        capsys.readouterr()
        rc = main(["evaluate", "--detections", str(data / "nuclei.csv"),
                   "--truth", str(data / "nuclei.csv"), "--csv"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "method,precision,recall,f1"
        for line in lines[1:]:
            parts = line.split(",")
            assert len(parts) == 4
            assert float(parts[3]) == pytest.approx(1.0)


class TestConfigPlumbing:
    def test_config_file_applies(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("tracking:\n  gate: 25.0\n  coordinate_space: raw\n")
        data = simulate(tmp_path, "--repositioning", "none")
        rc = main(["track", "--config", str(cfg),
                   "--nuclei", str(data / "nuclei.csv"),
                   "--out", str(tmp_path / "t.csv")])
        assert rc == 0

    def test_bad_config_exits_one(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("tracking:\n  gaet: 25.0\n")
        data = simulate(tmp_path)
        rc = main(["track", "--config", str(cfg),
                   "--nuclei", str(data / "nuclei.csv"),
                   "--out", str(tmp_path / "t.csv")])
        assert rc == 1
        assert "gaet" in capsys.readouterr().err

    def test_flag_overrides_config(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("tracking:\n  coordinate_space: straightened\n")
        data = simulate(tmp_path, "--repositioning", "none")
        rc = main(["track", "--config", str(cfg), "--space", "raw",
                   "--nuclei", str(data / "nuclei.csv"),
                   "--out", str(tmp_path / "t.csv")])
        assert rc == 0
