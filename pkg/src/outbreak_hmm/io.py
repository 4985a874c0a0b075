"""CSV and JSON file formats.

counts:  ``series_id,year_week,count``
labels:  ``series_id,year_week,label`` (0 or 1; ``NA`` reads as unknown)
group map: ``series_id,group_id``

Writers are deterministic (sorted rows, ``repr`` floats, sorted JSON keys)
and atomic (temp file + rename).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from collections import defaultdict

import numpy as np

from .errors import DataError
from .series import UNKNOWN, SurveillanceSeries, shift_year_week, week_offset

log = logging.getLogger(__name__)

COUNTS_HEADER = ["series_id", "year_week", "count"]
LABELS_HEADER = ["series_id", "year_week", "label"]
GROUPS_HEADER = ["series_id", "group_id"]


def atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write(path, dumps_json(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _rows(path, header):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [c.strip() for c in first] != header:
            raise DataError(f"{path}:1: expected header {','.join(header)}, got {first!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, [c.strip() for c in row]


def _week_key(path, lineno, text):
    try:
        week_offset("2000-W01", text)
    except DataError as exc:
        raise DataError(f"{path}:{lineno}: {exc}") from None
    return text


def read_counts(path) -> dict:
    """``{series_id: {year_week: count}}``."""
    out = defaultdict(dict)
    for lineno, (sid, yw, cnt) in _rows(path, COUNTS_HEADER):
        _week_key(path, lineno, yw)
        try:
            value = int(cnt)
        except ValueError:
            raise DataError(f"{path}:{lineno}: count {cnt!r} is not an integer") from None
        if value < 0:
            raise DataError(f"{path}:{lineno}: negative count {value}")
        if yw in out[sid]:
            raise DataError(f"{path}:{lineno}: duplicate entry for {sid} {yw}")
        out[sid][yw] = value
    if not out:
        raise DataError(f"{path}: no data rows")
    return dict(out)


def read_labels(path) -> dict:
    """``{series_id: {year_week: label}}`` with ``-1`` for ``NA``."""
    out = defaultdict(dict)
    for lineno, (sid, yw, lab) in _rows(path, LABELS_HEADER):
        _week_key(path, lineno, yw)
        if lab in ("0", "1"):
            value = int(lab)
        elif lab in ("NA", ""):
            value = UNKNOWN
        else:
            raise DataError(f"{path}:{lineno}: label {lab!r} must be 0 or 1")
        if yw in out[sid]:
            raise DataError(f"{path}:{lineno}: duplicate entry for {sid} {yw}")
        out[sid][yw] = value
    return dict(out)


def build_series(counts: dict, labels: dict | None = None, grid_start: str | None = None,
                 grid_end: str | None = None) -> list[SurveillanceSeries]:
    """Place every series on one contiguous week grid.

    Missing weeks become zero counts (label 0), with one warning per
    series. Week 1 of the grid is ``grid_start`` (default: earliest week).
    """
    weeks = {w for d in counts.values() for w in d}
    if labels:
        weeks |= {w for d in labels.values() for w in d}
    ordered = sorted(weeks, key=lambda w: week_offset("2000-W01", w))
    start = grid_start or ordered[0]
    end = grid_end or ordered[-1]
    T = week_offset(start, end) + 1
    if T < 1:
        raise DataError(f"empty week grid {start}..{end}")
    out = []
    for sid in sorted(counts):
        y = np.zeros(T, dtype=np.int64)
        have = 0
        for yw, c in counts[sid].items():
            i = week_offset(start, yw)
            if 0 <= i < T:
                y[i] = c
                have += 1
        if have < T:
            log.warning("series %s: %d missing weeks zero-filled", sid, T - have)
        lab = None
        if labels is not None:
            lab = np.zeros(T, dtype=np.int8)
            for yw, v in labels.get(sid, {}).items():
                i = week_offset(start, yw)
                if 0 <= i < T:
                    lab[i] = v
        out.append(SurveillanceSeries(sid, y, lab, start, 1))
    return out


def counts_csv(series) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COUNTS_HEADER)
    for s in sorted(series, key=lambda s: s.series_id):
        for i, c in enumerate(s.counts):
            w.writerow([s.series_id, shift_year_week(s.start_week, i), int(c)])
    return buf.getvalue()


def labels_csv(series) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LABELS_HEADER)
    for s in sorted(series, key=lambda s: s.series_id):
        for i, v in enumerate(s.label_array()):
            w.writerow([s.series_id, shift_year_week(s.start_week, i),
                        "NA" if v == UNKNOWN else int(v)])
    return buf.getvalue()


def read_group_map(path) -> dict:
    out = {}
    for lineno, (sid, gid) in _rows(path, GROUPS_HEADER):
        if sid in out:
            raise DataError(f"{path}:{lineno}: series {sid} assigned twice")
        out[sid] = gid
    return out


def group_map_csv(mapping: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GROUPS_HEADER)
    for sid in sorted(mapping):
        w.writerow([sid, mapping[sid]])
    return buf.getvalue()


def read_table(path, required) -> list[dict]:
    """Rows of a score file as dicts; ``required`` columns must be present."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}:1: missing columns {missing}")
        return list(reader)


def table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
