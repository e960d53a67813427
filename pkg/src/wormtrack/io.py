"""CSV file formats and configuration loading.

Every file boundary is micrometers only; headers carry explicit `_um`
suffixes and a header without them is rejected rather than guessed at.
Floats are written with repr so a write/read cycle is bit-exact. All writes
go through a temp file and an atomic rename.
"""

from __future__ import annotations

import csv
import io as _io
import math
import os
import tempfile
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from .errors import ConfigError, ParseError, UnitMismatch, ValidationError
from .geometry import (CANONICAL_PAIR_NAMES, DEFAULT_SAMPLE_COUNT,
                       REQUIRED_PAIR_NAMES, SeamCellFrame, SeamCellPair)
from .records import NucleusRecord
from .tracking import TrackConfig, TrackSet, TrackStatus

NUCLEI_HEADER = ["frame", "id", "x_um", "y_um", "z_um"]
SEAM_HEADER = ["frame", "pair", "side", "x_um", "y_um", "z_um"]
TRACK_HEADER = ["frame", "id", "status", "detection_index",
                "x_um", "y_um", "z_um", "s_um", "u_um", "v_um"]
TRUTH_HEADER = ["frame", "id", "detection_index"]


# ---------------------------------------------------------------- plumbing

def atomic_write_text(path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    half-written file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."),
                               prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _check_header(got: Sequence[str], expected: Sequence[str], path) -> None:
    got = [c.strip() for c in got]
    if list(got) == list(expected):
        return
    for g, e in zip(got, expected):
        if g != e and e.endswith("_um") and g == e[: -len("_um")]:
            raise UnitMismatch(
                f"{path}: column {g!r} lacks the _um unit suffix", line=1)
    raise ParseError(f"{path}: bad header {got!r}, expected {list(expected)}",
                     line=1)


def _rows(path, expected_header):
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1)
        _check_header(header, expected_header, path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise ParseError(
                    f"{path}: expected {len(expected_header)} fields, "
                    f"got {len(row)}", line=lineno)
            yield lineno, [c.strip() for c in row]


def _parse_int(cell, path, lineno, col):
    try:
        return int(cell)
    except ValueError:
        raise ParseError(f"{path}: {cell!r} is not an integer",
                         line=lineno, column=col)


def _parse_float(cell, path, lineno, col):
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"{path}: {cell!r} is not a number",
                         line=lineno, column=col)
    if not math.isfinite(v):
        raise ParseError(f"{path}: coordinate must be finite",
                         line=lineno, column=col)
    return v


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ------------------------------------------------------------- nuclei CSV

def write_nuclei_csv(path, frames: Mapping[int, Sequence[NucleusRecord]]) -> None:
    rows = []
    for t in sorted(frames):
        for rec in frames[t]:
            rows.append([t, rec.id or "", _fmt(rec.position[0]),
                         _fmt(rec.position[1]), _fmt(rec.position[2])])
    atomic_write_text(path, _csv_text(NUCLEI_HEADER, rows))


def read_nuclei_csv(path) -> Dict[int, List[NucleusRecord]]:
    frames: Dict[int, List[NucleusRecord]] = {}
    for lineno, row in _rows(path, NUCLEI_HEADER):
        t = _parse_int(row[0], path, lineno, 1)
        pos = [_parse_float(row[k], path, lineno, k + 1) for k in (2, 3, 4)]
        rec = NucleusRecord(frame_index=t, position=pos, id=row[1] or None)
        frames.setdefault(t, []).append(rec)
    return frames


def frames_as_list(frames: Mapping[int, List[NucleusRecord]]
                   ) -> List[List[NucleusRecord]]:
    """Frames keyed 0..T-1 as a dense list; gaps are a validation error."""
    if not frames:
        raise ValidationError("no frames present")
    keys = sorted(frames)
    if keys != list(range(len(keys))):
        raise ValidationError(f"frame indices must be contiguous from 0, "
                              f"got {keys}")
    return [frames[k] for k in keys]


# --------------------------------------------------------------- seam CSV

def write_seam_csv(path, seam_frames: Sequence[SeamCellFrame]) -> None:
    rows = []
    for sf in seam_frames:
        for p in sf.pairs:
            for side, v in (("L", p.left), ("R", p.right)):
                rows.append([sf.frame_index, p.name, side,
                             _fmt(v[0]), _fmt(v[1]), _fmt(v[2])])
    atomic_write_text(path, _csv_text(SEAM_HEADER, rows))


def read_seam_csv(path) -> Dict[int, SeamCellFrame]:
    raw: Dict[int, Dict[str, Dict[str, np.ndarray]]] = {}
    for lineno, row in _rows(path, SEAM_HEADER):
        t = _parse_int(row[0], path, lineno, 1)
        name, side = row[1], row[2]
        if name not in CANONICAL_PAIR_NAMES:
            raise ParseError(f"{path}: unknown seam pair {name!r}",
                             line=lineno, column=2)
        if side not in ("L", "R"):
            raise ParseError(f"{path}: side must be L or R, got {side!r}",
                             line=lineno, column=3)
        pos = np.array([_parse_float(row[k], path, lineno, k + 1)
                        for k in (3, 4, 5)])
        sides = raw.setdefault(t, {}).setdefault(name, {})
        if side in sides:
            raise ParseError(f"{path}: duplicate {name}/{side} in frame {t}",
                             line=lineno)
        sides[side] = pos

    out: Dict[int, SeamCellFrame] = {}
    for t, by_name in sorted(raw.items()):
        missing = [n for n in REQUIRED_PAIR_NAMES if n not in by_name]
        half = [n for n, s in by_name.items() if len(s) != 2]
        if missing or half:
            parts = []
            if missing:
                parts.append(f"missing pairs {missing}")
            if half:
                parts.append(f"pairs with one side only {sorted(half)}")
            raise ValidationError(f"{path}: frame {t}: " + "; ".join(parts))
        pairs = [SeamCellPair(name=n, left=by_name[n]["L"],
                              right=by_name[n]["R"])
                 for n in CANONICAL_PAIR_NAMES if n in by_name]
        out[t] = SeamCellFrame(frame_index=t, pairs=pairs)
    return out


# -------------------------------------------------------------- track CSV

@dataclass(frozen=True)
class TrackRow:
    """One track in one frame, as serialized to the track CSV."""

    frame: int
    id: str
    status: str
    detection_index: Optional[int] = None
    position: Optional[Tuple[float, float, float]] = None
    straightened: Optional[Tuple[float, float, float]] = None


def track_csv_text(rows: Sequence[TrackRow]) -> str:
    out = []
    for r in rows:
        pos = r.position or (None, None, None)
        st = r.straightened or (None, None, None)
        out.append([r.frame, r.id, r.status,
                    "" if r.detection_index is None else r.detection_index,
                    _fmt(pos[0]), _fmt(pos[1]), _fmt(pos[2]),
                    _fmt(st[0]), _fmt(st[1]), _fmt(st[2])])
    return _csv_text(TRACK_HEADER, out)


def write_track_csv(path, rows: Sequence[TrackRow]) -> None:
    atomic_write_text(path, track_csv_text(rows))


def read_track_csv(path) -> List[TrackRow]:
    rows = []
    for lineno, row in _rows(path, TRACK_HEADER):
        t = _parse_int(row[0], path, lineno, 1)
        status = row[2]
        if status not in ("matched", "dimmed", "not_yet_present"):
            raise ParseError(f"{path}: unknown status {status!r}",
                             line=lineno, column=3)
        det = None if row[3] == "" else _parse_int(row[3], path, lineno, 4)
        if (det is not None) != (status == "matched"):
            raise ParseError(f"{path}: detection_index must be present "
                             "exactly for matched rows", line=lineno, column=4)

        def triple(first_col):
            cells = row[first_col:first_col + 3]
            if all(c == "" for c in cells):
                return None
            return tuple(_parse_float(c, path, lineno, first_col + k + 1)
                         for k, c in enumerate(cells))

        rows.append(TrackRow(frame=t, id=row[1], status=status,
                             detection_index=det, position=triple(4),
                             straightened=triple(7)))
    return rows


def track_rows_from(ts: TrackSet,
                    frames: Sequence[Sequence[NucleusRecord]]) -> List[TrackRow]:
    """Flatten a TrackSet against its detection frames; matched rows carry
    the detection's raw position and straightened coordinate if attached."""
    rows: List[TrackRow] = []
    for t in range(ts.frame_count):
        for nid in sorted(ts.tracks):
            st: TrackStatus = ts.tracks[nid][t]
            pos = strt = None
            if st.is_matched:
                rec = frames[t][st.detection_index]
                pos = tuple(float(x) for x in rec.position)
                if rec.straightened is not None:
                    strt = tuple(rec.straightened.as_vector())
            rows.append(TrackRow(frame=t, id=nid, status=st.kind,
                                 detection_index=st.detection_index,
                                 position=pos, straightened=strt))
    return rows


# -------------------------------------------------------------- truth CSV

def write_truth_csv(path, truth: Sequence[Mapping[str, Optional[int]]]) -> None:
    rows = []
    for t, frame in enumerate(truth):
        for nid in sorted(frame):
            j = frame[nid]
            rows.append([t, nid, "" if j is None else j])
    atomic_write_text(path, _csv_text(TRUTH_HEADER, rows))


def read_truth_csv(path) -> List[Dict[str, Optional[int]]]:
    raw: Dict[int, Dict[str, Optional[int]]] = {}
    for lineno, row in _rows(path, TRUTH_HEADER):
        t = _parse_int(row[0], path, lineno, 1)
        if not row[1]:
            raise ParseError(f"{path}: empty id", line=lineno, column=2)
        det = None if row[2] == "" else _parse_int(row[2], path, lineno, 3)
        frame = raw.setdefault(t, {})
        if row[1] in frame:
            raise ParseError(f"{path}: duplicate id {row[1]!r} in frame {t}",
                             line=lineno, column=2)
        frame[row[1]] = det
    if not raw:
        return []
    keys = sorted(raw)
    if keys != list(range(len(keys))):
        raise ValidationError(f"{path}: truth frames must be contiguous "
                              f"from 0, got {keys}")
    return [raw[k] for k in keys]


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class Config:
    tracking: TrackConfig = field(default_factory=TrackConfig)
    sample_count: int = DEFAULT_SAMPLE_COUNT
    aspect_ratio: float = 1.0
    match_radius_um: float = 3.0
    port: int = 8571

    def __post_init__(self):
        if self.sample_count < 8:
            raise ConfigError("geometry.sample_count: must be at least 8")
        if not self.aspect_ratio > 0:
            raise ConfigError("geometry.aspect_ratio: must be positive")
        if not self.match_radius_um > 0:
            raise ConfigError("metrics.match_radius_um: must be positive")
        if not 0 < self.port < 65536:
            raise ConfigError("service.port: must be a valid TCP port")


_CONFIG_SECTIONS = {
    "tracking": {f.name for f in dc_fields(TrackConfig)},
    "geometry": {"sample_count", "aspect_ratio"},
    "metrics": {"match_radius_um"},
    "service": {"port"},
}


def _coerce_gate(v):
    if isinstance(v, str) and v.lower() in ("inf", "infinity", ".inf"):
        return math.inf
    return v


def load_config(path) -> Config:
    """Load a YAML config; every key must be known, or the offending path is
    named in the error."""
    with open(path, "r") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}")
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data, origin=str(path))


def config_from_dict(data: Mapping, origin: str = "config") -> Config:
    for section in data:
        if section not in _CONFIG_SECTIONS:
            raise ConfigError(f"{origin}: unknown key {section!r}")
        body = data[section] or {}
        if not isinstance(body, Mapping):
            raise ConfigError(f"{origin}: {section} must be a mapping")
        for key in body:
            if key not in _CONFIG_SECTIONS[section]:
                raise ConfigError(f"{origin}: unknown key "
                                  f"{section}.{key}")
    tr = dict(data.get("tracking") or {})
    if "gate" in tr:
        tr["gate"] = _coerce_gate(tr["gate"])
    geo = data.get("geometry") or {}
    met = data.get("metrics") or {}
    srv = data.get("service") or {}
    try:
        tracking = TrackConfig(**tr)
    except ValueError as exc:
        raise ConfigError(f"{origin}: tracking: {exc}")
    return Config(tracking=tracking,
                  sample_count=geo.get("sample_count", DEFAULT_SAMPLE_COUNT),
                  aspect_ratio=geo.get("aspect_ratio", 1.0),
                  match_radius_um=met.get("match_radius_um", 3.0),
                  port=srv.get("port", 8571))
