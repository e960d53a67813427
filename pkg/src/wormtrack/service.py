"""HTTP session service for the interactive correct-and-commit workflow.

A session walks a detection sequence pair by pair: predict links the next
frame to the named tracks, the user repairs detections and pins or forbids
links, and commit freezes the pair and advances. Every mutation appends one
event to a JSONL log; replaying the log rebuilds the session exactly, so a
crash loses nothing that was committed. Mutations carry the client's
expected revision and fail with a conflict when it is stale.
"""

from __future__ import annotations

import json
import math
import threading
import uuid
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .assignment import ConstraintSet, UNASSIGNED
from .errors import (Conflict, FrameCommitted, IndexOutOfRange,
                     InfeasibleConstraints, NotFound, UncoveredDetections,
                     ValidationError, WormtrackError)
from .geometry import SeamCellFrame, SeamCellPair, WormSplines, fit_splines, straighten_point
from .io import (Config, config_from_dict, frames_as_list, read_nuclei_csv,
                 read_seam_csv, track_csv_text, track_rows_from)
from .records import NucleusRecord
from .tracking import (DIMMED_STATUS, NOT_YET_STATUS, TrackSet, _features,
                       matched, track_frame_pair)

EDIT_ACTIONS = ("add", "remove", "move", "split", "name", "undo", "redo")
CONSTRAINT_ACTIONS = ("pin", "unpin", "forbid", "unforbid", "clear")
PREDICT_OVERRIDES = ("gate", "method", "k_best", "lam", "graph_kind",
                     "graph_radius_um")


def _vec3(value, what: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"{what} must be a 3-vector of numbers")
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} must be a finite 3-vector")
    return arr


def _rec_json(rec: NucleusRecord, index: int) -> dict:
    out = {"index": index, "x_um": float(rec.position[0]),
           "y_um": float(rec.position[1]), "z_um": float(rec.position[2]),
           "id": rec.id, "origin": rec.origin_tag}
    if rec.straightened is not None:
        c = rec.straightened
        out["s_um"] = c.s
        out["u_um"] = c.u
        out["v_um"] = c.v
        out["inside_body"] = c.inside_body
        if c.clamped:
            out["clamped"] = True
        if c.ambiguous:
            out["ambiguous"] = True
    return out


def _seam_json(frames: Sequence[SeamCellFrame]) -> list:
    return [{"frame_index": sf.frame_index,
             "pairs": [{"name": p.name,
                        "left": [float(x) for x in p.left],
                        "right": [float(x) for x in p.right]}
                       for p in sf.pairs]}
            for sf in frames]


def _seam_from_json(data) -> List[SeamCellFrame]:
    out = []
    for sf in data:
        pairs = [SeamCellPair(name=p["name"], left=p["left"], right=p["right"])
                 for p in sf["pairs"]]
        out.append(SeamCellFrame(frame_index=int(sf["frame_index"]),
                                 pairs=pairs))
    return out


class Session:
    """One embryo's editing session. All public methods are called with the
    session lock held (see SessionStore)."""

    def __init__(self, session_id: str, cfg: Config,
                 frames: List[List[NucleusRecord]],
                 seam: Optional[List[SeamCellFrame]],
                 log_path: Optional[Path] = None):
        if not frames:
            raise ValidationError("dataset has no frames")
        self.session_id = session_id
        self.cfg = cfg
        self.seam = seam
        space = cfg.tracking.coordinate_space
        if space == "straightened" and (seam is None or len(seam) != len(frames)):
            raise ValidationError("straightened tracking needs one seam-cell "
                                  "frame per detection frame")
        self.lock = threading.Lock()
        self.log_path = log_path
        self._replaying = False

        self._splines: Dict[int, WormSplines] = {}
        self.frames: List[List[NucleusRecord]] = []
        for t, recs in enumerate(frames):
            self.frames.append([self._straightened(replace(r), t)
                                for r in recs])

        self.revision = 0
        self.commit_count = 0
        self._order: List[str] = []
        self._statuses: Dict[str, List] = {}
        self._carried: Dict[str, Tuple[np.ndarray, object, int]] = {}
        self.pins: Dict[str, int] = {}
        self.forbids: Set[Tuple[str, int]] = set()
        self._prediction: Optional[dict] = None
        self._undo: List[dict] = []
        self._redo: List[dict] = []

    # ------------------------------------------------------------ helpers

    def _straightened(self, rec: NucleusRecord, t: int) -> NucleusRecord:
        if self.seam is None:
            return rec
        if t not in self._splines:
            self._splines[t] = fit_splines(self.seam[t],
                                           sample_count=self.cfg.sample_count,
                                           aspect_ratio=self.cfg.aspect_ratio)
        coord = straighten_point(rec.position, self._splines[t])
        return replace(rec, straightened=coord)

    def is_committed(self, t: int) -> bool:
        return self.commit_count >= 1 and t <= self.commit_count

    def active_pair(self) -> Optional[Tuple[int, int]]:
        t = self.commit_count
        return (t, t + 1) if t + 1 < len(self.frames) else None

    def _check_revision(self, expected) -> None:
        if expected != self.revision:
            raise Conflict(f"expected revision {expected}, session is at "
                           f"{self.revision}")

    def _bump(self) -> int:
        self.revision += 1
        self._prediction = None
        return self.revision

    def _append(self, event: dict) -> None:
        if self._replaying or self.log_path is None:
            return
        event = dict(event)
        event["rev"] = self.revision
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()

    # --------------------------------------------------------------- edits

    def edit(self, t: int, action: str, params: dict, expected_rev) -> dict:
        self._check_revision(expected_rev)
        if action not in EDIT_ACTIONS:
            raise ValidationError(f"unknown edit action {action!r}; "
                                  f"one of {EDIT_ACTIONS}")
        if action == "undo":
            affected = self._do_undo()
        elif action == "redo":
            affected = self._do_redo()
        else:
            if not 0 <= t < len(self.frames):
                raise NotFound(f"no frame {t}")
            if self.is_committed(t):
                raise FrameCommitted(f"frame {t} is committed")
            before = list(self.frames[t])
            self._apply_edit(t, action, params)
            self._undo.append({"frame": t, "records": before})
            self._redo.clear()
            affected = t
        self._bump()
        self._append({"type": "edit", "frame": t, "action": action,
                      "params": params})
        # undo/redo touch the frame their stack entry names, not the URL's
        return {"revision": self.revision, "frame_index": affected}

    def _index(self, t: int, params: dict) -> int:
        idx = params.get("index")
        if not isinstance(idx, int) or isinstance(idx, bool):
            raise ValidationError("edit needs an integer detection index")
        if not 0 <= idx < len(self.frames[t]):
            raise IndexOutOfRange(f"frame {t} has {len(self.frames[t])} "
                                  f"detections; index {idx} is out of range")
        return idx

    def _roster(self) -> Set[str]:
        if self.commit_count:
            return set(self._statuses)
        return {r.id for r in self.frames[0] if r.id}

    def _check_frame_id(self, t: int, new_id: Optional[str],
                        skip_index: Optional[int] = None) -> None:
        if new_id is None:
            return
        for j, rec in enumerate(self.frames[t]):
            if j != skip_index and rec.id == new_id:
                raise ValidationError(f"id {new_id!r} already used by "
                                      f"detection {j} in frame {t}")
        if self.active_pair() is not None and t == self.active_pair()[1] \
                and new_id in self._roster():
            raise ValidationError(
                f"{new_id!r} is an existing track; pin it to this detection "
                "instead of naming a new one")

    def _apply_edit(self, t: int, action: str, params: dict) -> None:
        recs = self.frames[t]
        if action == "add":
            pos = _vec3(params.get("position"), "position")
            new_id = params.get("id")
            self._check_frame_id(t, new_id)
            rec = NucleusRecord(frame_index=t, position=pos, id=new_id,
                                origin_tag="user_added")
            recs.append(self._straightened(rec, t))
        elif action == "remove":
            idx = self._index(t, params)
            del recs[idx]
        elif action == "move":
            idx = self._index(t, params)
            pos = _vec3(params.get("position"), "position")
            recs[idx] = self._straightened(
                replace(recs[idx], position=pos, origin_tag="user_edited"), t)
        elif action == "split":
            idx = self._index(t, params)
            pos_a = _vec3(params.get("position_a"), "position_a")
            pos_b = _vec3(params.get("position_b"), "position_b")
            keep = self._straightened(
                replace(recs[idx], position=pos_a, origin_tag="user_edited"), t)
            extra = NucleusRecord(frame_index=t, position=pos_b, id=None,
                                  origin_tag="user_added")
            recs[idx] = keep
            recs.insert(idx + 1, self._straightened(extra, t))
        elif action == "name":
            idx = self._index(t, params)
            new_id = params.get("id")
            if new_id is not None and not isinstance(new_id, str):
                raise ValidationError("id must be a string or null")
            self._check_frame_id(t, new_id, skip_index=idx)
            tag = recs[idx].origin_tag
            recs[idx] = replace(recs[idx], id=new_id,
                                origin_tag="user_added" if tag == "user_added"
                                else "user_edited")

    def _do_undo(self) -> int:
        if not self._undo:
            raise ValidationError("nothing to undo")
        t = self._undo[-1]["frame"]
        if self.is_committed(t):
            raise FrameCommitted(f"frame {t} was committed; cannot undo past it")
        entry = self._undo.pop()
        self._redo.append({"frame": t, "records": list(self.frames[t])})
        self.frames[t] = list(entry["records"])
        return t

    def _do_redo(self) -> int:
        if not self._redo:
            raise ValidationError("nothing to redo")
        t = self._redo[-1]["frame"]
        if self.is_committed(t):
            raise FrameCommitted(f"frame {t} was committed; cannot redo")
        entry = self._redo.pop()
        self._undo.append({"frame": t, "records": list(self.frames[t])})
        self.frames[t] = list(entry["records"])
        return t

    # --------------------------------------------------------- constraints

    def constrain(self, action: str, params: dict, expected_rev) -> dict:
        self._check_revision(expected_rev)
        if action not in CONSTRAINT_ACTIONS:
            raise ValidationError(f"unknown constraint action {action!r}; "
                                  f"one of {CONSTRAINT_ACTIONS}")
        if action == "clear":
            self.pins.clear()
            self.forbids.clear()
        else:
            tid = params.get("track_id")
            if not isinstance(tid, str) or not tid:
                raise ValidationError("constraint needs a track_id")
            if action == "unpin":
                self.pins.pop(tid, None)
            else:
                j = params.get("detection_index")
                if not isinstance(j, int) or isinstance(j, bool) or j < 0:
                    raise ValidationError("constraint needs a nonnegative "
                                          "detection_index")
                if action == "pin":
                    self.pins[tid] = j
                    self.forbids.discard((tid, j))
                elif action == "forbid":
                    if self.pins.get(tid) == j:
                        raise InfeasibleConstraints(
                            f"{tid} is pinned to detection {j}; unpin first")
                    self.forbids.add((tid, j))
                elif action == "unforbid":
                    self.forbids.discard((tid, j))
        self._bump()
        self._append({"type": "constraint", "action": action,
                      "params": params})
        return {"revision": self.revision,
                "constraints": self._constraints_json()}

    def _constraints_json(self) -> dict:
        return {"pins": dict(sorted(self.pins.items())),
                "forbids": sorted([list(f) for f in self.forbids])}

    # ---------------------------------------------------------- prediction

    def _prev_side(self) -> Tuple[List[str], List[NucleusRecord]]:
        if self.commit_count == 0:
            recs = self.frames[0]
            ids = [r.id for r in recs]
            missing = [j for j, i in enumerate(ids) if not i]
            if missing:
                raise ValidationError(
                    f"seed-frame detections {missing} have no id; name them "
                    "before predicting")
            if len(set(ids)) != len(ids):
                raise ValidationError("seed-frame ids must be unique")
            return ids, list(recs)
        w = self.cfg.tracking.reappear_window
        ids, recs = [], []
        for nid in self._order:
            pos, coord, last_seen = self._carried[nid]
            if w is not None and (self.commit_count - last_seen) > w:
                continue
            ids.append(nid)
            recs.append(NucleusRecord(frame_index=self.commit_count,
                                      position=pos, id=nid,
                                      straightened=coord))
        return ids, recs

    def _constraint_set(self, row_ids: List[str], n_dets: int) -> ConstraintSet:
        index = {nid: i for i, nid in enumerate(row_ids)}
        pins = set()
        for tid, j in self.pins.items():
            if tid not in index:
                raise ValidationError(f"pin on unknown or unmatchable track "
                                      f"{tid!r}")
            if j >= n_dets:
                raise IndexOutOfRange(f"pin of {tid} to detection {j}: frame "
                                      f"has {n_dets} detections")
            pins.add((index[tid], j))
        forbids = set()
        for tid, j in self.forbids:
            if tid not in index:
                raise ValidationError(f"forbid on unknown track {tid!r}")
            if j >= n_dets:
                raise IndexOutOfRange(f"forbid of {tid} at detection {j}: "
                                      f"frame has {n_dets} detections")
            forbids.add((index[tid], j))
        return ConstraintSet(pinned=frozenset(pins),
                             forbidden=frozenset(forbids))

    def _tracking_cfg(self, overrides: Optional[dict]):
        tr = self.cfg.tracking
        if not overrides:
            return tr
        bad = [k for k in overrides if k not in PREDICT_OVERRIDES]
        if bad:
            raise ValidationError(f"unknown prediction overrides {bad}; "
                                  f"allowed: {list(PREDICT_OVERRIDES)}")
        try:
            return replace(tr, **overrides)
        except ValueError as exc:
            raise ValidationError(str(exc))

    def predict(self, overrides: Optional[dict] = None) -> dict:
        pair = self.active_pair()
        if pair is None:
            raise ValidationError("every frame is committed; nothing to predict")
        t_prev, t_curr = pair
        row_ids, prev_recs = self._prev_side()
        curr = self.frames[t_curr]
        tr = self._tracking_cfg(overrides)
        cons = self._constraint_set(row_ids, len(curr))
        a, labeled = track_frame_pair(prev_recs, curr, tr, cons)
        fp = _features(prev_recs, tr)
        fc = _features(curr, tr) if curr else np.zeros((0, 3))
        matches = []
        for i, j in a.matched_pairs():
            matches.append({"track_id": row_ids[i], "detection_index": j,
                            "distance": float(np.linalg.norm(fp[i] - fc[j]))})
        dimmed = [row_ids[i] for i, j in enumerate(a.track_to_detection)
                  if j == UNASSIGNED]
        self._prediction = {
            "revision": self.revision,
            "pair": [t_prev, t_curr],
            "row_ids": row_ids,
            "cols": list(a.track_to_detection),
            "matches": matches,
            "dimmed": dimmed,
            "new": sorted(a.unassigned_detections),
            "total_cost": (float(a.total_cost)
                           if math.isfinite(a.total_cost) else None),
        }
        return self._prediction

    # --------------------------------------------------------------- commit

    def commit(self, force: bool, expected_rev) -> dict:
        self._check_revision(expected_rev)
        pair = self.active_pair()
        if pair is None:
            raise ValidationError("every frame is committed already")
        pred = self._prediction
        if pred is None or pred["revision"] != self.revision:
            pred = self.predict()
        row_ids, cols = pred["row_ids"], pred["cols"]
        self._apply_commit(row_ids, cols, force)
        self._bump()
        self._append({"type": "commit", "force": bool(force),
                      "row_ids": row_ids, "cols": cols})
        return {"revision": self.revision,
                "committed_frame": self.commit_count,
                "active_pair": self.active_pair()}

    def _apply_commit(self, row_ids: List[str], cols: List[int],
                      force: bool) -> None:
        t_prev, t_curr = self.active_pair()
        curr = self.frames[t_curr]
        taken = {j for j in cols if j != UNASSIGNED}
        unnamed = [j for j in range(len(curr))
                   if j not in taken and curr[j].id is None]
        if unnamed and not force:
            raise UncoveredDetections(
                f"frame {t_curr} detections {unnamed} are unmatched and "
                "unnamed; name or remove them, or commit with force")

        if self.commit_count == 0:
            seed = self.frames[0]
            ids = [r.id for r in seed]
            if any(i is None for i in ids) or len(set(ids)) != len(ids):
                raise ValidationError("seed frame must carry unique ids on "
                                      "every record before the first commit")
            for j, rec in enumerate(seed):
                self._order.append(rec.id)
                self._statuses[rec.id] = [matched(j)]
                self._carried[rec.id] = (np.asarray(rec.position, float),
                                         rec.straightened, 0)

        assigned = {}
        for i, j in enumerate(cols):
            if j != UNASSIGNED:
                assigned[row_ids[i]] = j
        for nid in self._order:
            if nid in assigned:
                j = assigned[nid]
                rec = replace(curr[j], id=nid)
                curr[j] = rec
                self._statuses[nid].append(matched(j))
                self._carried[nid] = (np.asarray(rec.position, float),
                                      rec.straightened, t_curr)
            else:
                self._statuses[nid].append(DIMMED_STATUS)
        # named leftover detections become new tracks
        for j, rec in enumerate(curr):
            if j in assigned.values() or rec.id is None:
                continue
            if rec.id in self._statuses:
                raise ValidationError(
                    f"detection {j} is named {rec.id!r} but that track "
                    "already exists; pin it instead")
            self._order.append(rec.id)
            self._statuses[rec.id] = [NOT_YET_STATUS] * t_curr + [matched(j)]
            self._carried[rec.id] = (np.asarray(rec.position, float),
                                     rec.straightened, t_curr)
        self.pins.clear()
        self.forbids.clear()
        self.commit_count += 1

    # ---------------------------------------------------------------- state

    def track_set(self) -> TrackSet:
        if self.commit_count == 0:
            return TrackSet(tracks={}, frame_count=0)
        return TrackSet(tracks={k: tuple(v) for k, v in self._statuses.items()},
                        frame_count=self.commit_count + 1)

    def state(self, since: Optional[int] = None) -> dict:
        if since is not None and since == self.revision:
            return {"session_id": self.session_id, "revision": self.revision,
                    "unchanged": True}
        ts = self.track_set()
        tracks = {nid: [{"kind": st.kind,
                         "detection_index": st.detection_index}
                        for st in hist]
                  for nid, hist in ts.tracks.items()}
        frames = [{"index": t, "committed": self.is_committed(t),
                   "detections": [_rec_json(r, j)
                                  for j, r in enumerate(recs)]}
                  for t, recs in enumerate(self.frames)]
        pred = None
        if self._prediction is not None \
                and self._prediction["revision"] == self.revision:
            pred = self._prediction
        return {
            "session_id": self.session_id,
            "revision": self.revision,
            "frame_count": len(self.frames),
            "coordinate_space": self.cfg.tracking.coordinate_space,
            "active_pair": self.active_pair(),
            "committed_frames": (list(range(self.commit_count + 1))
                                 if self.commit_count else []),
            "frames": frames,
            "seam": _seam_json(self.seam) if self.seam else None,
            "constraints": self._constraints_json(),
            "prediction": pred,
            "tracks": tracks,
            "undo_depth": len(self._undo),
            "redo_depth": len(self._redo),
        }

    def export_csv(self) -> str:
        ts = self.track_set()
        if ts.frame_count == 0:
            return track_csv_text([])
        return track_csv_text(track_rows_from(ts, self.frames))


# ------------------------------------------------------------------- store

def _dataset_from_payload(payload: dict):
    if payload.get("nuclei_csv"):
        frames = frames_as_list(read_nuclei_csv(payload["nuclei_csv"]))
        seam = None
        if payload.get("seam_csv"):
            seam_map = read_seam_csv(payload["seam_csv"])
            missing = [t for t in range(len(frames)) if t not in seam_map]
            if missing:
                raise ValidationError(f"seam file lacks frames {missing}")
            seam = [seam_map[t] for t in range(len(frames))]
        return frames, seam
    if "frames" in payload:
        frames = []
        for t, dets in enumerate(payload["frames"]):
            recs = []
            for d in dets:
                pos = _vec3([d.get("x_um"), d.get("y_um"), d.get("z_um")],
                            f"frame {t} detection")
                recs.append(NucleusRecord(frame_index=t, position=pos,
                                          id=d.get("id") or None))
            frames.append(recs)
        seam = _seam_from_json(payload["seam"]) if payload.get("seam") else None
        return frames, seam
    raise ValidationError("dataset needs either nuclei_csv or inline frames")


def _frames_json(frames: List[List[NucleusRecord]]) -> list:
    return [[{"x_um": float(r.position[0]), "y_um": float(r.position[1]),
              "z_um": float(r.position[2]), "id": r.id}
             for r in recs]
            for recs in frames]


def _config_json(cfg: Config) -> dict:
    tr = asdict(cfg.tracking)
    return {"tracking": tr,
            "geometry": {"sample_count": cfg.sample_count,
                         "aspect_ratio": cfg.aspect_ratio},
            "metrics": {"match_radius_um": cfg.match_radius_um},
            "service": {"port": cfg.port}}


class SessionStore:
    def __init__(self, cfg: Config = Config(),
                 session_dir: Optional[str] = None):
        self.base_cfg = cfg
        self.dir = Path(session_dir) if session_dir else None
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)
        self._sessions: Dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, payload: dict) -> Session:
        cfg = self.base_cfg
        if payload.get("config"):
            cfg = config_from_dict(payload["config"], origin="config")
        frames, seam = _dataset_from_payload(payload)
        sid = uuid.uuid4().hex[:12]
        log_path = self.dir / f"{sid}.jsonl" if self.dir else None
        session = Session(sid, cfg, frames, seam, log_path=log_path)
        if log_path is not None:
            event = {"type": "create", "rev": 0,
                     "config": _config_json(cfg),
                     "frames": _frames_json(frames),
                     "seam": _seam_json(seam) if seam else None}
            with open(log_path, "w") as fh:
                fh.write(json.dumps(event) + "\n")
                fh.flush()
        with self._lock:
            self._sessions[sid] = session
        return session

    def get(self, sid: str) -> Session:
        with self._lock:
            if sid in self._sessions:
                return self._sessions[sid]
        session = self._load(sid)
        if session is None:
            raise NotFound(f"no session {sid!r}")
        with self._lock:
            return self._sessions.setdefault(sid, session)

    def _load(self, sid: str) -> Optional[Session]:
        if self.dir is None:
            return None
        path = self.dir / f"{sid}.jsonl"
        if not path.exists():
            return None
        return replay_log(path, sid)


def replay_log(path, sid: str) -> Session:
    """Rebuild a session from its event log."""
    with open(path, "r") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("type") != "create":
        raise ValidationError(f"{path}: log does not start with a create event")
    head = lines[0]
    cfg = config_from_dict(head["config"], origin=str(path))
    frames = []
    for t, dets in enumerate(head["frames"]):
        frames.append([NucleusRecord(frame_index=t,
                                     position=[d["x_um"], d["y_um"], d["z_um"]],
                                     id=d.get("id") or None)
                       for d in dets])
    seam = _seam_from_json(head["seam"]) if head.get("seam") else None
    session = Session(sid, cfg, frames, seam, log_path=Path(path))
    session._replaying = True
    try:
        for ev in lines[1:]:
            kind = ev.get("type")
            if kind == "edit":
                session.edit(ev.get("frame", 0), ev["action"],
                             ev.get("params", {}), expected_rev=ev["rev"] - 1)
            elif kind == "constraint":
                session.constrain(ev["action"], ev.get("params", {}),
                                  expected_rev=ev["rev"] - 1)
            elif kind == "commit":
                session._apply_commit(ev["row_ids"], ev["cols"],
                                      force=ev.get("force", False))
                session._bump()
            else:
                raise ValidationError(f"{path}: unknown event type {kind!r}")
            if session.revision != ev["rev"]:
                raise ValidationError(
                    f"{path}: revision drift at event {kind!r}: log says "
                    f"{ev['rev']}, replay reached {session.revision}")
    finally:
        session._replaying = False
    return session


# --------------------------------------------------------------------- app

_ERROR_STATUS = {
    NotFound: 404,
    Conflict: 409,
    FrameCommitted: 409,
    InfeasibleConstraints: 409,
    UncoveredDetections: 409,
    IndexOutOfRange: 422,
    ValidationError: 422,
}


def _status_for(exc: WormtrackError) -> int:
    for klass, code in _ERROR_STATUS.items():
        if isinstance(exc, klass):
            return code
    return 400


def _error_code(exc: Exception) -> str:
    name = type(exc).__name__
    out = []
    for i, ch in enumerate(name):
        if ch.isupper() and i and not name[i - 1].isupper():
            out.append("_")
        out.append(ch.lower())
    return "".join(out)


def create_app(cfg: Config = Config(), session_dir: Optional[str] = None):
    from fastapi import Body, FastAPI, Query, Request
    from fastapi.responses import JSONResponse, PlainTextResponse

    app = FastAPI(title="wormtrack session service")
    store = SessionStore(cfg, session_dir=session_dir)
    app.state.store = store

    @app.exception_handler(WormtrackError)
    async def _wormtrack_error(request: Request, exc: WormtrackError):
        return JSONResponse(status_code=_status_for(exc),
                            content={"error": {"code": _error_code(exc),
                                               "message": str(exc)}})

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=422,
                            content={"error": {"code": "invalid_value",
                                               "message": str(exc)}})

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.post("/sessions")
    def create_session(payload: dict = Body(...)):
        session = store.create(payload)
        with session.lock:
            return session.state()

    @app.get("/sessions/{sid}/state")
    def get_state(sid: str, since: Optional[int] = Query(default=None)):
        session = store.get(sid)
        with session.lock:
            return session.state(since=since)

    @app.post("/sessions/{sid}/frames/{t}/detections:edit")
    def edit_detections(sid: str, t: int, payload: dict = Body(...)):
        session = store.get(sid)
        with session.lock:
            out = session.edit(t, payload.get("action"),
                               {k: v for k, v in payload.items()
                                if k not in ("action", "revision")},
                               expected_rev=payload.get("revision"))
            ta = out.pop("frame_index")
            out["frame"] = {"index": ta,
                            "detections": [_rec_json(r, j) for j, r in
                                           enumerate(session.frames[ta])]} \
                if 0 <= ta < len(session.frames) else None
            out["undo_depth"] = len(session._undo)
            out["redo_depth"] = len(session._redo)
            return out

    @app.post("/sessions/{sid}/predict")
    def predict(sid: str, payload: Optional[dict] = Body(default=None)):
        session = store.get(sid)
        with session.lock:
            overrides = (payload or {}).get("overrides")
            return session.predict(overrides)

    @app.post("/sessions/{sid}/constraints")
    def constraints(sid: str, payload: dict = Body(...)):
        session = store.get(sid)
        with session.lock:
            return session.constrain(payload.get("action"),
                                     {k: v for k, v in payload.items()
                                      if k not in ("action", "revision")},
                                     expected_rev=payload.get("revision"))

    @app.post("/sessions/{sid}/commit")
    def commit(sid: str, payload: dict = Body(...)):
        session = store.get(sid)
        with session.lock:
            return session.commit(force=bool(payload.get("force", False)),
                                  expected_rev=payload.get("revision"))

    @app.get("/sessions/{sid}/export")
    def export(sid: str):
        session = store.get(sid)
        with session.lock:
            text = session.export_csv()
        return PlainTextResponse(text, media_type="text/csv")

    return app
