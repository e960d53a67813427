"""Command-line interface.

Exit codes: 0 success, 1 bad input (parse/validation/domain errors),
2 unexpected runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .assignment import build_cost_matrix, murty_k_best
from .errors import ValidationError, WormtrackError
from .geometry import straighten_frame
from .io import (Config, frames_as_list, load_config, read_nuclei_csv,
                 read_seam_csv, read_truth_csv, track_rows_from,
                 write_nuclei_csv, write_seam_csv, write_track_csv,
                 write_truth_csv, TrackRow)
from .metrics import (format_accuracy_table, format_detection_table,
                      frame_accuracy, match_centroids, per_image_mean,
                      pooled_score, summarize)
from .records import NucleusRecord
from .synth import SynthConfig, generate
from .tracking import TrackConfig, _features, track_sequence


def _tracking_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--gate", type=float, help="assignment gate in um (inf allowed)")
    p.add_argument("--space", choices=["raw", "straightened"])
    p.add_argument("--method", choices=["gnn", "murty"])
    p.add_argument("--k", type=int, help="hypothesis count for murty")
    p.add_argument("--graph", choices=["radius", "delaunay"])
    p.add_argument("--radius-um", type=float, help="neighborhood graph radius")


def effective_config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    over = {}
    if getattr(args, "gate", None) is not None:
        over["gate"] = args.gate
    if getattr(args, "space", None):
        over["coordinate_space"] = args.space
    if getattr(args, "method", None):
        over["method"] = {"gnn": "gnn", "murty": "murty_rescore"}[args.method]
    if getattr(args, "k", None) is not None:
        over["k_best"] = args.k
    if getattr(args, "graph", None):
        over["graph_kind"] = args.graph
    if getattr(args, "radius_um", None) is not None:
        over["graph_radius_um"] = args.radius_um
    if over:
        cfg = replace(cfg, tracking=replace(cfg.tracking, **over))
    return cfg


def _load_frames(args):
    return frames_as_list(read_nuclei_csv(args.nuclei))


def _load_seam_list(path, n_frames):
    seam_map = read_seam_csv(path)
    missing = [t for t in range(n_frames) if t not in seam_map]
    if missing:
        raise ValidationError(f"{path}: no seam cells for frames {missing}")
    return [seam_map[t] for t in range(n_frames)]


def _straighten_all(frames, seams, cfg: Config):
    out = []
    for recs, seam in zip(frames, seams):
        pairs = straighten_frame(recs, seam, sample_count=cfg.sample_count,
                                 aspect_ratio=cfg.aspect_ratio)
        out.append([replace(r, straightened=c) for r, c in pairs])
    return out


def cmd_untwist(args) -> int:
    cfg = effective_config(args)
    frames = _load_frames(args)
    seams = _load_seam_list(args.seam, len(frames))
    rows = []
    for t, (recs, seam) in enumerate(zip(frames, seams)):
        for j, (rec, coord) in enumerate(
                straighten_frame(recs, seam, sample_count=cfg.sample_count,
                                 aspect_ratio=cfg.aspect_ratio)):
            rows.append(TrackRow(
                frame=t, id=rec.id or "", status="matched",
                detection_index=j,
                position=tuple(float(x) for x in rec.position),
                straightened=tuple(coord.as_vector())))
    write_track_csv(args.out, rows)
    print(f"straightened {len(rows)} nuclei across {len(frames)} frames "
          f"-> {args.out}")
    return 0


def cmd_track(args) -> int:
    cfg = effective_config(args)
    tr = cfg.tracking
    frames = _load_frames(args)
    seams = None
    if args.seam:
        seams = _load_seam_list(args.seam, len(frames))
        frames = _straighten_all(frames, seams, cfg)
    elif tr.coordinate_space == "straightened":
        raise ValidationError("straightened tracking needs --seam")
    ts = track_sequence(frames, cfg=tr, auto_name=args.auto_name)
    write_track_csv(args.out, track_rows_from(ts, frames))
    print(f"tracked {len(ts.tracks)} tracks over {ts.frame_count} frames "
          f"-> {args.out}")
    if args.truth:
        truth = read_truth_csv(args.truth)
        if len(truth) < ts.frame_count:
            raise ValidationError("truth file covers fewer frames than data")
        accs = []
        for t in range(1, ts.frame_count):
            pred = {n: j for n, j in ts.predicted_map(t).items()
                    if n in truth[t]}
            accs.append(frame_accuracy(pred, {n: truth[t][n] for n in pred}))
        s = summarize(accs)
        print(format_accuracy_table([("track", s)], csv=args.csv), end="")
    return 0


def cmd_kbest(args) -> int:
    cfg = effective_config(args)
    tr = cfg.tracking
    frames = _load_frames(args)
    a, b = args.pair
    if not (0 <= a < len(frames) and 0 <= b < len(frames)):
        raise ValidationError(f"frame pair {a},{b} outside 0..{len(frames)-1}")
    prev, curr = frames[a], frames[b]
    if any(r.id is None for r in prev):
        raise ValidationError(f"frame {a} must carry ids on every record")
    if args.seam:
        seams = read_seam_csv(args.seam)
        for t in (a, b):
            if t not in seams:
                raise ValidationError(f"{args.seam}: no seam cells for frame {t}")
        prev = [replace(r, straightened=c) for r, c in
                straighten_frame(prev, seams[a], cfg.sample_count,
                                 cfg.aspect_ratio)]
        curr = [replace(r, straightened=c) for r, c in
                straighten_frame(curr, seams[b], cfg.sample_count,
                                 cfg.aspect_ratio)]
    elif tr.coordinate_space == "straightened":
        raise ValidationError("straightened space needs --seam")
    C = build_cost_matrix(_features(prev, tr), _features(curr, tr),
                          gate=tr.gate)
    hyps = murty_k_best(C, args.k if args.k else tr.k_best)
    ids = [r.id for r in prev]
    print(json.dumps({"tracks": ids, "frames": [a, b]}))
    for rank, h in enumerate(hyps):
        cost = h.total_cost
        print(json.dumps({
            "rank": rank,
            "track_to_detection": list(h.track_to_detection),
            "unassigned_detections": sorted(h.unassigned_detections),
            "total_cost": cost if np.isfinite(cost) else None,
        }))
    return 0


def cmd_evaluate(args) -> int:
    cfg = effective_config(args)
    radius = args.match_radius_um or cfg.match_radius_um
    det = read_nuclei_csv(args.detections)
    truth = read_nuclei_csv(args.truth)
    common = sorted(set(det) & set(truth))
    if not common:
        raise ValidationError("no frames shared between detections and truth")
    rows = []
    for t in common:
        d = np.array([r.position for r in det[t]]).reshape(-1, 3)
        g = np.array([r.position for r in truth[t]]).reshape(-1, 3)
        rows.append((f"frame {t}", match_centroids(d, g, radius)))
    scores = [s for _, s in rows]
    rows.append(("pooled", pooled_score(scores)))
    mean = per_image_mean(scores)
    out = format_detection_table(rows, csv=args.csv)
    if args.csv:
        out += (f"per_image_mean,{mean['precision']:.4f},"
                f"{mean['recall']:.4f},{mean['f1']:.4f}\n")
    else:
        out += (f"per-image mean: precision {mean['precision']:.4f} "
                f"recall {mean['recall']:.4f} f1 {mean['f1']:.4f}\n")
    print(out, end="")
    return 0


def cmd_simulate(args) -> int:
    cfg = SynthConfig(seed=args.seed, n_frames=args.frames,
                      body_kind=args.body,
                      brownian_sigma_um=args.sigma,
                      repositioning=args.repositioning,
                      warp_amplitude_um=args.warp,
                      elongation_rate=args.elongation,
                      dropout_prob=args.dropout,
                      seam_pairs=args.seam_pairs,
                      n_nuclei=args.nuclei,
                      seam_jitter_um=args.seam_jitter)
    res = generate(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_nuclei_csv(out / "nuclei.csv",
                     {t: f for t, f in enumerate(res.frames)})
    write_seam_csv(out / "seam.csv", res.seam_frames)
    write_truth_csv(out / "truth.csv", res.truth)
    print(f"wrote {len(res.frames)} frames to {out}/"
          f"{{nuclei,seam,truth}}.csv")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = effective_config(args)
    port = args.port or cfg.port
    app = create_app(cfg, session_dir=args.session_dir)
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


def cmd_bench(args) -> int:
    from .bench import run_all

    results = run_all(seed=args.seed)
    failed = 0
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        failed += 0 if r.passed else 1
        print(f"[{mark}] {r.name}: {r.detail}")
    print(f"{len(results) - failed}/{len(results)} scenarios passed")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="wormtrack",
        description="Track cell nuclei in coiled, repositioning embryos by "
                    "straightening each volume along the seam-cell midline "
                    "and solving gated assignments between frames.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("untwist", help="seam + nuclei -> straightened CSV")
    _tracking_options(p)
    p.add_argument("--nuclei", required=True)
    p.add_argument("--seam", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_untwist)

    p = sub.add_parser("track", help="track a sequence -> track CSV")
    _tracking_options(p)
    p.add_argument("--nuclei", required=True)
    p.add_argument("--seam")
    p.add_argument("--truth")
    p.add_argument("--out", required=True)
    p.add_argument("--auto-name", action="store_true",
                   help="name unmatched detections automatically")
    p.add_argument("--csv", action="store_true",
                   help="machine-readable accuracy output")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("kbest", help="K best assignments for one frame pair")
    _tracking_options(p)
    p.add_argument("--nuclei", required=True)
    p.add_argument("--seam")
    p.add_argument("--pair", type=int, nargs=2, default=[0, 1],
                   metavar=("PREV", "CURR"))
    p.set_defaults(func=cmd_kbest)

    p = sub.add_parser("evaluate", help="score detections against truth centroids")
    _tracking_options(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--match-radius-um", type=float)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--body", default="helix",
                   choices=["helix", "planar-coil", "random-spline"])
    p.add_argument("--sigma", type=float, default=0.0,
                   help="Brownian step, um per axis per frame")
    p.add_argument("--repositioning", default="rigid",
                   choices=["rigid", "none"])
    p.add_argument("--warp", type=float, default=0.0)
    p.add_argument("--elongation", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--seam-pairs", type=int, default=11, choices=[10, 11])
    p.add_argument("--nuclei", type=int, default=85)
    p.add_argument("--seam-jitter", type=float, default=0.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the interactive session service")
    _tracking_options(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int)
    p.add_argument("--session-dir", help="directory for session logs")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="run the built-in evaluation scenarios")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (WormtrackError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 0
    except Exception as exc:                 # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
