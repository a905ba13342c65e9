"""Result persistence: atomic CSV/JSON writes, run manifests, and the
comparison of a simulated trajectory against reported case counts."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
import os
import platform
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Trajectory
from .errors import EpipolicyError

CALENDAR_ORIGIN = dt.date(2020, 3, 1)

TRAJECTORY_COLUMNS = ("day", "s", "e", "i", "r", "n_i", "r_eff", "icu_load", "attenuation", "phase")


class ReportError(EpipolicyError, OSError):
    """Output could not be written or input data could not be read."""


class MalformedDataError(EpipolicyError, ValueError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


def fmt(v) -> str:
    """Stable text form of a cell: shortest round-trip repr for floats."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        return repr(f)
    return str(v)


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    return atomic_write_bytes(Path(path), csv_text(header, rows).encode("utf-8"))


def read_csv(path) -> tuple[list[str], list[dict]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            return list(reader.fieldnames or []), rows
    except OSError as exc:
        raise ReportError(f"cannot read {path}: {exc.strerror or exc}") from exc


def trajectory_rows(traj: Trajectory, sigma_icu: float):
    n_i = traj.infected_count
    load = traj.icu_load(sigma_icu)
    for k in range(len(traj.times)):
        yield (int(traj.times[k]), traj.s[k], traj.e[k], traj.i[k], traj.r[k], n_i[k],
               traj.r_eff[k], load[k], traj.attenuation[k], int(traj.phase[k]))


def write_trajectory(path, traj: Trajectory, sigma_icu: float) -> Path:
    return write_csv(path, TRAJECTORY_COLUMNS, trajectory_rows(traj, sigma_icu))


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    scenario: str
    scenario_sha256: str
    version: str
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)
    seed: int | None = None
    arguments: dict = field(default_factory=dict)

    def check_outputs(self, root: Path) -> None:
        for name in self.outputs:
            p = Path(root) / name
            if not p.is_file() or p.stat().st_size == 0:
                raise ReportError(f"declared output {p} is missing or empty")

    def to_json(self) -> str:
        doc = dict(self.__dict__)
        doc["python"] = platform.python_version()
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def now_iso() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(root: Path, manifest: RunManifest) -> Path:
    manifest.finished = now_iso()
    manifest.check_outputs(root)
    return atomic_write_bytes(Path(root) / "manifest.json", manifest.to_json().encode("utf-8"))


# ---------------------------------------------------------------------------
# reported data


@dataclass(frozen=True)
class ReportedSeries:
    dates: tuple
    active_cases: np.ndarray

    def __post_init__(self):
        cases = np.asarray(self.active_cases, dtype=float)
        if len(self.dates) != cases.shape[0]:
            raise MalformedDataError("dates and counts differ in length")
        for k, (a, b) in enumerate(zip(self.dates, self.dates[1:])):
            if not b > a:
                raise MalformedDataError(f"date {b} does not follow {a}", row=k + 3, column="date")
        bad = np.flatnonzero(~(cases >= 0))
        if bad.size:
            raise MalformedDataError(f"count must be >= 0, got {cases[bad[0]]}",
                                     row=int(bad[0]) + 2, column="active_cases")
        cases.setflags(write=False)
        object.__setattr__(self, "active_cases", cases)

    def day_index(self, origin: dt.date = CALENDAR_ORIGIN) -> np.ndarray:
        return np.array([(d - origin).days for d in self.dates], dtype=np.int64)


def parse_reported_csv(text: str) -> ReportedSeries:
    """Two-column CSV with header ``date,active_cases``; dates in ISO form."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise MalformedDataError("file is empty", row=1)
    header = [h.strip().lstrip("﻿") for h in header]
    if header != ["date", "active_cases"]:
        raise MalformedDataError(f"header must be 'date,active_cases', got {','.join(header)!r}", row=1)
    dates, counts, lines = [], [], []
    for n, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise MalformedDataError(f"expected 2 fields, got {len(row)}", row=n)
        lines.append(n)
        try:
            dates.append(dt.date.fromisoformat(row[0].strip()))
        except ValueError:
            raise MalformedDataError(f"not an ISO date: {row[0]!r}", row=n, column="date") from None
        try:
            counts.append(float(row[1]))
        except ValueError:
            raise MalformedDataError(f"not a number: {row[1]!r}", row=n, column="active_cases") from None
        if not math.isfinite(counts[-1]) or counts[-1] < 0:
            raise MalformedDataError(f"count must be finite and >= 0, got {row[1]!r}",
                                     row=n, column="active_cases")
    if not dates:
        raise MalformedDataError("no data rows", row=2)
    for n, a, b in zip(lines[1:], dates, dates[1:]):
        if not b > a:
            raise MalformedDataError(f"dates must be strictly increasing ({b} after {a})",
                                     row=n, column="date")
    return ReportedSeries(tuple(dates), np.array(counts))


def load_reported_csv(path) -> ReportedSeries:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ReportError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return parse_reported_csv(text)


@dataclass(frozen=True)
class Comparison:
    days: np.ndarray
    dates: tuple
    model: np.ndarray
    reported: np.ndarray
    residual: np.ndarray
    relative: np.ndarray
    window: tuple
    summary: dict

    def rows(self):
        for k in range(len(self.days)):
            yield (self.dates[k].isoformat(), int(self.days[k]), self.model[k], self.reported[k],
                   self.residual[k], self.relative[k])


COMPARISON_COLUMNS = ("date", "day", "model", "reported", "residual", "relative_residual")


def compare_with_reported(traj: Trajectory, series: ReportedSeries,
                          window: tuple[dt.date, dt.date] | None = None,
                          origin: dt.date = CALENDAR_ORIGIN) -> Comparison:
    """Align model N*i(t) with reported active cases by calendar date.

    Day ``d`` of the trajectory is ``origin + d``.  Only dates covered by
    both series are compared.  The residual is model minus reported, the
    relative residual divides by the reported count (nan where it is 0).
    Summary statistics cover ``window`` (inclusive dates), by default the
    second half of the overlap.
    """
    days = series.day_index(origin)
    horizon = int(traj.times[-1])
    keep = (days >= 0) & (days <= horizon)
    if not keep.any():
        raise MalformedDataError(
            f"reported dates {series.dates[0]}..{series.dates[-1]} do not overlap the "
            f"simulation window {origin}..{origin + dt.timedelta(days=horizon)}")
    d = days[keep]
    dates = tuple(day for k, day in zip(keep, series.dates) if k)
    model = traj.infected_count[d]
    reported = series.active_cases[keep]
    residual = model - reported
    with np.errstate(divide="ignore", invalid="ignore"):
        relative = np.where(reported > 0, residual / np.where(reported > 0, reported, 1.0), np.nan)
    if window is None:
        mid = d[0] + (d[-1] - d[0] + 1) // 2
        window = (origin + dt.timedelta(days=int(mid)), dates[-1])
    lo, hi = ((w - origin).days for w in window)
    if lo > hi:
        raise MalformedDataError(f"summary window starts after it ends: {window[0]} > {window[1]}")
    sel = (d >= lo) & (d <= hi)
    if not sel.any():
        raise MalformedDataError(f"summary window {window[0]}..{window[1]} holds no compared day")
    rel = np.abs(relative[sel])
    rel = rel[np.isfinite(rel)]
    summary = {
        "n_days": int(sel.sum()),
        "window_start": window[0].isoformat(),
        "window_end": window[1].isoformat(),
        "max_abs_residual": float(np.max(np.abs(residual[sel]))),
        "mean_abs_residual": float(np.mean(np.abs(residual[sel]))),
        "max_rel_residual": float(np.max(rel)) if rel.size else math.nan,
        "mean_rel_residual": float(np.mean(rel)) if rel.size else math.nan,
    }
    return Comparison(d, dates, model, reported, residual, relative, tuple(window), summary)


def reported_from_trajectory(traj: Trajectory, origin: dt.date = CALENDAR_ORIGIN,
                             shift: int = 0) -> ReportedSeries:
    """Synthetic reported series taken from the model itself, optionally shifted by ``shift`` days."""
    n_i = traj.infected_count
    days = np.arange(len(n_i))
    src = days - shift
    ok = (src >= 0) & (src < len(n_i))
    return ReportedSeries(tuple(origin + dt.timedelta(days=int(k)) for k in days[ok]), n_i[src[ok]])
