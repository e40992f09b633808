"""CSV and JSON formats.

Batch file::

    t_h,s_G_gpl,B_c_gpl,p_L_gpl[,u_umol_m2_s]

Schedule file::

    interval_start_h,u_umol_m2_s

Empty cells are missing observations. A constant ``u_umol_m2_s`` column can
stand in for a schedule file.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .data import BatchDataset
from .errors import ConfigError, DataError
from .hybrid import FEATURES, TARGETS, ResidualModels, ResidualSample
from .model import BIOMASS, GLUCOSE, LACTATE, State
from .sim import ControlSchedule, Trajectory

BATCH_COLUMNS = {"t_h": None, "s_G_gpl": GLUCOSE, "B_c_gpl": BIOMASS, "p_L_gpl": LACTATE}
U_COLUMN = "u_umol_m2_s"
SCHEDULE_COLUMNS = ("interval_start_h", U_COLUMN)
TRAJECTORY_COLUMNS = ("t_h", "B_c_gpl", "E_VU_g", "s_G_gpl", "p_L_gpl", U_COLUMN)
RESIDUAL_COLUMNS = ("t",) + FEATURES + TARGETS


def _cell(text, path, line, col):
    text = text.strip()
    if text == "" or text.lower() == "nan":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}:{line}: column {col!r} is not a number: {text!r}")


def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file")
        rows = [(i, r) for i, r in enumerate(reader, start=2) if any(c.strip() for c in r)]
    return path, header, rows


def load_schedule_csv(path, tf=None) -> ControlSchedule:
    """Read a schedule file; ``tf`` defaults to the end of the last interval."""
    path, header, rows = _read_rows(path)
    for col in header:
        if col not in SCHEDULE_COLUMNS:
            raise DataError(f"{path}: unknown column {col!r}")
    missing = set(SCHEDULE_COLUMNS) - set(header)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    if not rows:
        raise DataError(f"{path}: no intervals")
    i_t, i_u = header.index("interval_start_h"), header.index(U_COLUMN)
    starts = np.array([_cell(r[i_t], path, n, "interval_start_h") for n, r in rows])
    levels = [_cell(r[i_u], path, n, U_COLUMN) for n, r in rows]
    if len(starts) > 1:
        widths = np.diff(starts)
        if np.any(widths <= 0):
            bad = rows[int(np.argmax(widths <= 0)) + 1][0]
            raise DataError(f"{path}:{bad}: interval starts must increase")
        if not np.allclose(widths, widths[0], rtol=1e-9, atol=1e-9):
            raise DataError(f"{path}: intervals must have equal width")
        width = float(widths[0])
    elif tf is not None:
        width = float(tf) - starts[0]
    else:
        raise DataError(f"{path}: cannot infer interval width from a single row")
    if tf is None:
        tf = float(starts[-1] + width)
    try:
        return ControlSchedule(float(starts[0]), float(tf), width, levels)
    except ConfigError as e:
        raise DataError(f"{path}: {e}")


def load_batch_csv(path, schedule_path=None, id=None, interval_width=1.0) -> BatchDataset:
    """Read one batch; the first row doubles as the initial state (E = 0).

    Without ``schedule_path`` the file needs a constant ``u_umol_m2_s``
    column, and the schedule spans the sampled time range in intervals of
    ``interval_width`` hours.
    """
    path, header, rows = _read_rows(path)
    for col in header:
        if col not in BATCH_COLUMNS and col != U_COLUMN:
            raise DataError(f"{path}: unknown column {col!r}")
    if "t_h" not in header:
        raise DataError(f"{path}: missing column 't_h'")
    if not rows:
        raise DataError(f"{path}: no samples")
    times = []
    values = np.full((len(rows), 4), np.nan)
    u_col = []
    for k, (line, r) in enumerate(rows):
        if len(r) != len(header):
            raise DataError(f"{path}:{line}: expected {len(header)} cells, got {len(r)}")
        rec = dict(zip(header, r))
        t = _cell(rec["t_h"], path, line, "t_h")
        if not math.isfinite(t):
            raise DataError(f"{path}:{line}: missing time")
        if times and t <= times[-1]:
            raise DataError(f"{path}:{line}: time {t} does not increase")
        times.append(t)
        for col, j in BATCH_COLUMNS.items():
            if j is not None and col in rec:
                values[k, j] = _cell(rec[col], path, line, col)
        if U_COLUMN in rec:
            u_col.append(_cell(rec[U_COLUMN], path, line, U_COLUMN))

    if schedule_path is not None:
        schedule = load_schedule_csv(schedule_path)
    else:
        if not u_col:
            raise DataError(f"{path}: no schedule file and no {U_COLUMN!r} column")
        u_vals = {v for v in u_col if math.isfinite(v)}
        if len(u_vals) != 1:
            raise DataError(f"{path}: {U_COLUMN!r} column must hold one constant value")
        try:
            schedule = ControlSchedule.constant(
                u_vals.pop(), tf=times[-1], t0=times[0], interval_width=interval_width
            )
        except ConfigError as e:
            raise DataError(f"{path}: {e}")

    first = values[0]
    if not np.all(np.isfinite(first[[BIOMASS, GLUCOSE, LACTATE]])):
        raise DataError(f"{path}: the first row must be fully observed (initial state)")
    x0 = State(first[BIOMASS], 0.0, first[GLUCOSE], first[LACTATE])
    return BatchDataset(id or path.stem, schedule, np.array(times), values, x0)


def _fmt(v) -> str:
    return "" if not math.isfinite(v) else repr(float(v))


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def write_batch_csv(path, data: BatchDataset, with_u=False):
    header = list(BATCH_COLUMNS)
    if with_u:
        header.append(U_COLUMN)
    rows = []
    for t, x in zip(data.times, data.values):
        row = [t, x[GLUCOSE], x[BIOMASS], x[LACTATE]]
        if with_u:
            row.append(float(data.schedule.u_at(t)))
        rows.append(row)
    return _write_csv(path, header, rows)


def write_schedule_csv(path, schedule: ControlSchedule):
    starts = schedule.boundaries()[:-1]
    return _write_csv(path, SCHEDULE_COLUMNS, zip(starts, schedule.levels))


def write_trajectory_csv(path, traj: Trajectory, every: int = 1):
    """Write states every ``every``-th step; the final point is always kept."""
    idx = np.arange(0, len(traj.times), max(1, int(every)))
    if idx[-1] != len(traj.times) - 1:
        idx = np.r_[idx, len(traj.times) - 1]
    u = traj.inputs()
    rows = (
        [traj.times[i], *traj.states[i], u[i]] for i in idx
    )
    return _write_csv(path, TRAJECTORY_COLUMNS, rows)


def load_trajectory_csv(path) -> Trajectory:
    """Read a file written by :func:`write_trajectory_csv`.

    The schedule is rebuilt with one interval per recorded row span, so
    ``inputs()`` of the result reproduces the file's input column.
    """
    path, header, rows = _read_rows(path)
    if tuple(header) != TRAJECTORY_COLUMNS:
        raise DataError(f"{path}: expected columns {','.join(TRAJECTORY_COLUMNS)}")
    data = np.array([[_cell(c, path, n, h) for c, h in zip(r, header)] for n, r in rows])
    if len(data) < 2 or not np.all(np.isfinite(data)):
        raise DataError(f"{path}: need at least two complete rows")
    times = data[:, 0]
    if np.any(np.diff(times) <= 0):
        raise DataError(f"{path}: time does not increase")
    widths = np.diff(times)
    if not np.allclose(widths, widths[0], rtol=1e-6):
        raise DataError(f"{path}: rows must be evenly spaced")
    schedule = ControlSchedule(times[0], times[-1], float(widths[0]), list(data[:-1, 5]))
    return Trajectory(times, data[:, 1:5], schedule)


def write_residuals_csv(path, samples: list[ResidualSample]):
    return _write_csv(path, RESIDUAL_COLUMNS, (s.as_row() for s in samples))


def load_residuals_csv(path) -> list[ResidualSample]:
    path, header, rows = _read_rows(path)
    for col in header:
        if col not in RESIDUAL_COLUMNS:
            raise DataError(f"{path}: unknown column {col!r}")
    missing = set(RESIDUAL_COLUMNS) - set(header)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    out = []
    for line, r in rows:
        rec = dict(zip(header, r))
        vals = [_cell(rec[c], path, line, c) for c in RESIDUAL_COLUMNS]
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}:{line}: residual rows must be complete")
        out.append(ResidualSample(*vals))
    return out


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})")


def write_json(path, payload: dict, config: dict | None = None, seed: int | None = None):
    """Write ``payload`` with the tool version and the generating config embedded."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"tool": "optoferm", "version": __version__}
    if config is not None:
        doc["config"] = config
    if seed is not None:
        doc["seed"] = seed
    doc.update(payload)
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def save_residual_models(path, models: ResidualModels, config=None, seed=None):
    return write_json(path, {"models": models.to_dict()}, config, seed)


def load_residual_models(path) -> ResidualModels:
    doc = read_json(path)
    try:
        return ResidualModels.from_dict(doc["models"])
    except (KeyError, TypeError) as e:
        raise DataError(f"{path}: not a residual-model file ({e})")
