"""
Monthly series ingestion: CSV parsing, year-over-year growth, alignment and
the lagged regression design.

Dates are held as ``numpy.datetime64`` values at month resolution; day
components in the source files are discarded.
"""

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, RankDeficientError

MONTH = np.timedelta64(1, "M")
FRED_MISSING = "."

_DATE_RE = re.compile(r"^\s*(\d{4})-(\d{1,2})(?:-(\d{1,2}))?\s*$")


@dataclass(frozen=True)
class RawSeries:
    name: str
    dates: np.ndarray
    values: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        if len(self.dates) != len(self.values):
            raise DataError(f"{self.name}: dates and values differ in length")

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class AlignedPanel:
    """Series sharing one gap-free monthly date index.

    ``values`` is T x n with columns ordered as ``names``.  ``impulse`` names
    the column whose quantiles are perturbed; ``responses`` the others.
    """

    dates: np.ndarray
    names: tuple
    values: np.ndarray
    impulse: str
    responses: tuple

    def __post_init__(self):
        if len(self.names) < 2:
            raise DataError("a panel needs at least two series")
        if self.values.shape != (len(self.dates), len(self.names)):
            raise DataError("panel values do not match dates x names")
        if self.impulse not in self.names:
            raise DataError(f"impulse {self.impulse!r} is not a panel column")
        missing = [r for r in self.responses if r not in self.names]
        if missing:
            raise DataError(f"unknown response series {missing}")

    @property
    def T(self):
        return len(self.dates)

    @property
    def n(self):
        return len(self.names)

    def column(self, name):
        return self.values[:, self.names.index(name)]

    def window(self, start=None, stop=None):
        """Sub-panel with ``start <= date < stop`` (either bound optional)."""
        mask = np.ones(self.T, dtype=bool)
        if start is not None:
            mask &= self.dates >= to_month(start)
        if stop is not None:
            mask &= self.dates < to_month(stop)
        return AlignedPanel(self.dates[mask], self.names, self.values[mask],
                            self.impulse, self.responses)


@dataclass(frozen=True)
class LagDesign:
    """Regression design for horizon ``h`` with ``p`` lags.

    Row ``r`` of ``Z`` conditions on information at panel index
    ``origin[r]``; ``targets[(name, s)]`` holds the value of ``name`` at
    ``origin + s`` for ``s`` in ``horizons``.
    """

    Z: np.ndarray
    targets: dict
    p: int
    h: int
    names: tuple
    origin: np.ndarray
    dates: np.ndarray
    cond: float = field(default=float("nan"))

    @property
    def d(self):
        return self.Z.shape[1]

    @property
    def horizons(self):
        return tuple(sorted({s for _, s in self.targets}))

    def target(self, name, horizon):
        try:
            return self.targets[(name, horizon)]
        except KeyError:
            raise DataError(f"no target for {name!r} at horizon {horizon}") from None


def to_month(stamp):
    """Parse ``YYYY-MM`` or ``YYYY-MM-DD`` (or a datetime64) to a month."""
    if isinstance(stamp, np.datetime64):
        return stamp.astype("datetime64[M]")
    m = _DATE_RE.match(str(stamp))
    if not m:
        raise DataError(f"unparseable date {stamp!r}")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise DataError(f"unparseable date {stamp!r}")
    return np.datetime64(f"{year:04d}-{month:02d}", "M")


def format_month(d):
    return str(np.datetime64(d, "M"))


def _read_text(source):
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8-sig")
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise DataError(f"file not found: {path}")
        return path.read_bytes().decode("utf-8-sig")
    data = source.read()
    return data.decode("utf-8-sig") if isinstance(data, bytes) else data


def parse_csv(source, name=None, date_column=None, value_column=None):
    """
    Read one monthly series from CSV.

    Parameters
    ----------
    source : bytes, path or binary file object
        UTF-8 CSV with a header row.
    name : str, optional
        Series name; defaults to the value column header.
    date_column, value_column : str, optional
        Column headers; default to the first and second columns.

    Returns
    -------
    RawSeries
        Sorted by date.  Rows whose value is empty, non-numeric or the FRED
        missing marker are dropped and counted in ``dropped``.  Lines
        starting with ``#`` are comments.
    """
    lines = [ln for ln in _read_text(source).splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty CSV input") from None
    if len(header) < 2:
        raise DataError("CSV needs a date column and a value column")
    date_column = date_column or header[0]
    value_column = value_column or header[1]
    for col in (date_column, value_column):
        if col not in header:
            raise DataError(f"column {col!r} not in header {header}")
    di, vi = header.index(date_column), header.index(value_column)

    dates, values, dropped = [], [], 0
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        month = to_month(row[di])
        raw = row[vi].strip() if vi < len(row) else ""
        try:
            v = float(raw)
        except ValueError:
            v = float("nan")
        if raw == FRED_MISSING or not np.isfinite(v):
            dropped += 1
            continue
        dates.append(month)
        values.append(v)
    if not values:
        raise DataError(f"no usable rows in series {name or value_column!r}")

    dates = np.array(dates, dtype="datetime64[M]")
    values = np.array(values, dtype=float)
    order = np.argsort(dates, kind="stable")
    dates, values = dates[order], values[order]
    dup = dates[1:][dates[1:] == dates[:-1]]
    if dup.size:
        raise DataError(f"duplicate date {format_month(dup[0])} in {name or value_column!r}")
    return RawSeries(name or value_column, dates, values, dropped)


def to_yoy_growth(s):
    """Annual log growth in percent, ``100 * ln(x_t / x_{t-12})``.

    The lag is matched by calendar month, so a date is emitted only when the
    level twelve months earlier is also present.
    """
    if len(s) < 13:
        raise DataError(f"{s.name}: year-over-year growth needs at least 13 observations")
    if np.any(s.values <= 0):
        raise DataError(f"{s.name}: non-positive level, log growth undefined")
    lagged = s.dates - 12 * MONTH
    pos = np.searchsorted(s.dates, lagged)
    pos_c = np.minimum(pos, len(s) - 1)
    ok = (pos < len(s)) & (s.dates[pos_c] == lagged)
    growth = 100.0 * np.log(s.values[ok] / s.values[pos_c[ok]])
    if growth.size == 0:
        raise DataError(f"{s.name}: no twelve-month pairs available")
    return RawSeries(s.name, s.dates[ok], growth, s.dropped)


def align(series, impulse, responses=None):
    """Restrict series to their common date range.

    Raises DataError when the ranges do not intersect or when any series
    has a missing month inside the common range.
    """
    if len(series) < 2:
        raise DataError("alignment needs at least two series")
    names = tuple(s.name for s in series)
    if len(set(names)) != len(names):
        raise DataError(f"duplicate series names {names}")
    start = max(s.dates[0] for s in series)
    end = min(s.dates[-1] for s in series)
    if start > end:
        raise DataError("series date ranges do not overlap")
    dates = np.arange(start, end + MONTH, MONTH)
    cols = []
    for s in series:
        mask = (s.dates >= start) & (s.dates <= end)
        if mask.sum() != len(dates) or np.any(s.dates[mask] != dates):
            have = set(s.dates[mask].tolist())
            gap = next(d for d in dates if d.item() not in have)
            raise DataError(f"{s.name}: missing month {format_month(gap)} inside common range")
        cols.append(s.values[mask])
    if responses is None:
        responses = tuple(n for n in names if n != impulse)
    return AlignedPanel(dates, names, np.column_stack(cols), impulse, tuple(responses))


def build_design(panel, p, h, rank_tol=None):
    """
    Lagged design with intercept for horizon ``h``.

    Row ``r`` (panel index ``t = p - 1 + r``) is
    ``[1, y_1[t], ..., y_1[t-p+1], ..., y_n[t], ..., y_n[t-p+1]]``.
    Targets are provided for horizon 1 and horizon ``h`` on the same rows,
    so 1-step and h-step regressions share one conditioning sample.
    """
    if p < 1 or h < 1:
        raise DataError("lag count and horizon must be positive")
    T, n = panel.values.shape
    d = 1 + n * p
    if T < h + p + d:
        raise DataError(f"panel of length {T} too short for p={p}, h={h} (need {h + p + d})")
    origin = np.arange(p - 1, T - h)
    Y = panel.values
    cols = [np.ones(len(origin))]
    for i in range(n):
        for lag in range(p):
            cols.append(Y[origin - lag, i])
    Z = np.column_stack(cols)
    targets = {}
    for s in sorted({1, h}):
        for i, name in enumerate(panel.names):
            targets[(name, s)] = Y[origin + s, i].copy()

    sv = np.linalg.svd(Z, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    tol = rank_tol if rank_tol is not None else sv[0] * max(Z.shape) * np.finfo(float).eps
    if sv[-1] <= tol:
        raise RankDeficientError("design matrix is rank deficient", cond)
    return LagDesign(Z, targets, p, h, panel.names, origin, panel.dates[origin], cond)


def conditioning_row(panel, p, t=-1):
    """Regressor vector built from the ``p`` observations ending at index ``t``."""
    T = panel.T
    t = t % T
    if t < p - 1:
        raise DataError(f"index {t} has fewer than {p} observations of history")
    row = [1.0]
    for i in range(panel.n):
        row.extend(panel.values[t - lag, i] for lag in range(p))
    return np.array(row)
