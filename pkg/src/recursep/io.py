"""Long-format CSV ingestion and export.

Schema (header required, UTF-8, comma separated)::

    id,arm,type,time
    s01,1,event,0.8
    s01,1,death,2.5
    s02,0,censor,3.0

``type`` is ``event``, ``death`` or ``censor``. Every subject has exactly one
``death`` or ``censor`` row and its ``event`` rows lie at or before that time.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .data import Dataset, RawRecord, TimeGrid, default_grid, discretize, to_records
from .exceptions import DataIntegrityError, InputError

COLUMNS = ("id", "arm", "type", "time")
RECORD_TYPES = ("event", "death", "censor")


def read_records(path):
    """Parse a long-format CSV into :class:`RawRecord` objects (file order of first appearance)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    subjects = OrderedDict()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: empty file (a header row is required)")
        header = [h.strip() for h in header]
        if sorted(header) != sorted(COLUMNS):
            raise InputError(f"{path}, line 1: header must contain exactly {', '.join(COLUMNS)}")
        col = {name: header.index(name) for name in COLUMNS}
        for line, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(COLUMNS):
                raise InputError(f"{path}, line {line}: expected {len(COLUMNS)} fields, got {len(row)}")
            sid, arm, kind, time = (row[col[c]].strip() for c in COLUMNS)
            if not sid:
                raise InputError(f"{path}, line {line}: empty id")
            if arm not in ("0", "1"):
                raise InputError(f"{path}, line {line}: arm must be 0 or 1, got {arm!r}")
            if kind not in RECORD_TYPES:
                raise InputError(f"{path}, line {line}: type must be one of {RECORD_TYPES}, got {kind!r}")
            try:
                t = float(time)
            except ValueError:
                raise InputError(f"{path}, line {line}: time is not a number: {time!r}") from None
            if not math.isfinite(t) or t < 0:
                raise InputError(f"{path}, line {line}: time must be finite and nonnegative")
            rec = subjects.get(sid)
            if rec is None:
                rec = subjects[sid] = {"arm": int(arm), "events": [], "exit": None, "line": line}
            elif rec["arm"] != int(arm):
                raise InputError(f"{path}, line {line}: subject {sid} changes arm")
            if kind == "event":
                rec["events"].append(t)
            else:
                if rec["exit"] is not None:
                    raise InputError(f"{path}, line {line}: subject {sid} has a second death/censor row")
                rec["exit"] = (kind, t)

    records, late = [], []
    for sid, rec in subjects.items():
        if rec["exit"] is None:
            raise InputError(f"{path}: subject {sid} (first seen on line {rec['line']}) has no death or censor row")
        kind, t = rec["exit"]
        if kind == "death" and any(e > t for e in rec["events"]):
            late.append(sid)
        records.append(RawRecord(
            sid, rec["arm"], sorted(rec["events"]),
            death_time=t if kind == "death" else None,
            censor_time=t if kind == "censor" else None,
        ))
    if late:
        raise DataIntegrityError(f"{path}: events after death for subjects {', '.join(late)}", late)
    return records


def resolve_grid(records, grid_spec=None):
    """Build a :class:`TimeGrid` from ``grid_spec``.

    ``grid_spec`` may be a TimeGrid, an int ``K`` (equal widths up to the
    largest observed time), a sequence of boundaries starting at 0, or a dict
    with key ``K`` (and optional ``tau``) or ``boundaries``.
    """
    if isinstance(grid_spec, TimeGrid):
        return grid_spec
    if grid_spec is None:
        return default_grid(records)
    if isinstance(grid_spec, dict):
        if "boundaries" in grid_spec:
            return resolve_grid(records, list(grid_spec["boundaries"]))
        if "K" not in grid_spec:
            raise InputError("grid spec needs 'K' or 'boundaries'")
        if grid_spec.get("tau") is not None:
            return TimeGrid.uniform(grid_spec["K"], grid_spec["tau"])
        return default_grid(records, int(grid_spec["K"]))
    if isinstance(grid_spec, (int, np.integer)) and not isinstance(grid_spec, bool):
        return default_grid(records, int(grid_spec))
    b = np.asarray(grid_spec, dtype=float)
    if b.ndim != 1 or b.size < 2 or b[0] != 0:
        raise InputError("grid boundaries must be a list starting at 0 with at least two entries")
    return TimeGrid(b)


def ingest_csv(path, grid_spec=None, death_conflict="error") -> Dataset:
    """Read a long-format CSV and discretize it onto the grid given by ``grid_spec``."""
    records = read_records(path)
    if not records:
        raise InputError(f"{path}: no subjects")
    return discretize(records, resolve_grid(records, grid_spec), death_conflict=death_conflict)


def export_csv(dataset: Dataset, path):
    """Write ``dataset`` in the long format, times at interval right endpoints.

    Re-ingesting with ``grid_spec=dataset.grid`` reproduces ``dataset``.
    """
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for rec in to_records(dataset):
            for t in rec.event_times:
                w.writerow((rec.id, rec.arm, "event", repr(float(t))))
            if rec.death_time is not None:
                w.writerow((rec.id, rec.arm, "death", repr(float(rec.death_time))))
            else:
                w.writerow((rec.id, rec.arm, "censor", repr(float(rec.censor_time))))
    return path


def write_curve_csv(path, time, value, header=("time", "value")):
    """Two-column curve file for plotting."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, v in zip(time, value):
            w.writerow((repr(float(t)), repr(float(v))))
    return path
