"""Weekly surveillance series, series groups and seasonal covariates."""

from __future__ import annotations

import datetime as dt
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

PERIOD = 52
ENDEMIC, OUTBREAK, UNKNOWN = 0, 1, -1

_YW_RE = re.compile(r"^(\d{4})-W(\d{2})$")


def parse_year_week(text: str) -> dt.date:
    """Return the Monday of ISO week ``YYYY-Www``."""
    m = _YW_RE.match(text.strip())
    if m is None:
        raise DataError(f"bad year_week {text!r}; expected YYYY-Www")
    try:
        return dt.date.fromisocalendar(int(m.group(1)), int(m.group(2)), 1)
    except ValueError as exc:
        raise DataError(f"bad year_week {text!r}: {exc}") from None


def format_year_week(day: dt.date) -> str:
    year, week, _ = day.isocalendar()
    return f"{year:04d}-W{week:02d}"


def week_offset(start: str, other: str) -> int:
    """Number of weeks from ``start`` to ``other`` (0 when equal)."""
    return (parse_year_week(other) - parse_year_week(start)).days // 7


def shift_year_week(start: str, weeks: int) -> str:
    return format_year_week(parse_year_week(start) + dt.timedelta(weeks=weeks))


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SurveillanceSeries:
    """Weekly case counts of one region on a contiguous week grid.

    ``labels`` uses 0 (endemic), 1 (outbreak) and -1 (unknown). ``t_start``
    is the 1-based week index of the first element on the model grid, so
    windows cut from a longer series keep their absolute covariates.
    """

    series_id: str
    counts: np.ndarray
    labels: np.ndarray | None = None
    start_week: str = "2000-W01"
    t_start: int = 1

    def __post_init__(self):
        counts = _frozen(self.counts, np.int64)
        if counts.ndim != 1 or counts.size < 1:
            raise DataError(f"series {self.series_id}: counts must be a non-empty 1-D sequence")
        if np.any(counts < 0):
            raise DataError(f"series {self.series_id}: negative count")
        object.__setattr__(self, "counts", counts)
        if self.labels is not None:
            labels = _frozen(self.labels, np.int8)
            if labels.shape != counts.shape:
                raise DataError(
                    f"series {self.series_id}: {labels.size} labels for {counts.size} counts"
                )
            if not np.all(np.isin(labels, (ENDEMIC, OUTBREAK, UNKNOWN))):
                raise DataError(f"series {self.series_id}: labels must be 0, 1 or unknown")
            object.__setattr__(self, "labels", labels)
        if self.t_start < 1:
            raise DataError(f"series {self.series_id}: t_start must be >= 1")
        parse_year_week(self.start_week)

    @property
    def T(self) -> int:
        return int(self.counts.size)

    @property
    def t_end(self) -> int:
        return self.t_start + self.T - 1

    @property
    def weeks(self) -> np.ndarray:
        return np.arange(self.t_start, self.t_end + 1)

    def label_array(self) -> np.ndarray:
        if self.labels is None:
            return np.full(self.T, UNKNOWN, dtype=np.int8)
        return self.labels

    def window(self, t_from: int, t_to: int) -> "SurveillanceSeries":
        """Slice to absolute week indices ``[t_from, t_to]``."""
        if not (self.t_start <= t_from <= t_to <= self.t_end):
            raise DataError(
                f"series {self.series_id}: window [{t_from}, {t_to}] outside "
                f"[{self.t_start}, {self.t_end}]"
            )
        i, j = t_from - self.t_start, t_to - self.t_start + 1
        return SurveillanceSeries(
            self.series_id,
            self.counts[i:j],
            None if self.labels is None else self.labels[i:j],
            shift_year_week(self.start_week, i),
            t_from,
        )

    def with_labels(self, labels) -> "SurveillanceSeries":
        return SurveillanceSeries(self.series_id, self.counts, labels, self.start_week, self.t_start)

    def year_week(self, t: int) -> str:
        return shift_year_week(self.start_week, t - self.t_start)


@dataclass(frozen=True, eq=False)
class SeriesGroup:
    """Series sharing one model; all members lie on the same week grid."""

    group_id: str
    series: tuple = field(default_factory=tuple)

    def __post_init__(self):
        members = tuple(self.series)
        if not members:
            raise DataError(f"group {self.group_id}: needs at least one series")
        first = members[0]
        for s in members[1:]:
            if (s.start_week, s.T, s.t_start) != (first.start_week, first.T, first.t_start):
                raise DataError(
                    f"group {self.group_id}: series {s.series_id} is not on the grid of "
                    f"{first.series_id}"
                )
        object.__setattr__(self, "series", members)

    @property
    def N(self) -> int:
        return len(self.series)

    @property
    def T(self) -> int:
        return self.series[0].T

    @property
    def t_start(self) -> int:
        return self.series[0].t_start

    @property
    def t_end(self) -> int:
        return self.series[0].t_end

    @property
    def series_ids(self) -> list[str]:
        return [s.series_id for s in self.series]

    def n_outbreak_weeks(self) -> int:
        return int(sum(np.sum(s.label_array() == OUTBREAK) for s in self.series))


@dataclass(frozen=True)
class CovariateRow:
    t: int
    trend: float
    cos_term: float
    sin_term: float


def _harmonics(t):
    # t mod 52 keeps the harmonic exactly periodic (ISO week 53 wraps)
    angle = 2.0 * np.pi * (np.mod(t, PERIOD) / PERIOD)
    return np.cos(angle), np.sin(angle)


def build_covariates(t_start: int, t_end: int) -> list[CovariateRow]:
    if not (1 <= t_start <= t_end):
        raise ValueError(f"invalid week range [{t_start}, {t_end}]")
    out = []
    for t in range(t_start, t_end + 1):
        angle = 2.0 * math.pi * ((t % PERIOD) / PERIOD)
        out.append(CovariateRow(t, float(t), math.cos(angle), math.sin(angle)))
    return out


def covariate_matrix(t) -> np.ndarray:
    """Rows ``(t, cos(2 pi t/52), sin(2 pi t/52))`` for an array of week indices."""
    t = np.asarray(t, dtype=np.float64)
    c, s = _harmonics(t)
    return np.column_stack([t, c, s])


def train_test_split(group: SeriesGroup, current_week: int, window_years: int = 5,
                     holdout_u: int = 26):
    """Cut the training and inference windows for one evaluation week.

    The full window is the ``window_years * 52`` weeks ending at (and
    including) ``current_week``. The training group drops its final
    ``holdout_u`` weeks; in the full-window group those weeks carry the
    unknown label.
    """
    length = window_years * PERIOD
    if holdout_u < 0 or holdout_u >= length:
        raise ValueError(f"holdout_u must lie in [0, {length})")
    t_from = current_week - length + 1
    if t_from < group.t_start or current_week > group.t_end:
        have = current_week - group.t_start + 1
        raise DataError(
            f"group {group.group_id} (series {group.series[0].series_id}): week {current_week} "
            f"needs {length} weeks of history ending there, have {max(have, 0)} "
            f"(series covers weeks {group.t_start}..{group.t_end})"
        )
    t_train_end = current_week - holdout_u
    train, full = [], []
    for s in group.series:
        win = s.window(t_from, current_week)
        labels = win.label_array().copy()
        if holdout_u:
            labels[-holdout_u:] = UNKNOWN
        full.append(win.with_labels(labels))
        train.append(win.window(t_from, t_train_end))
    return SeriesGroup(group.group_id, tuple(train)), SeriesGroup(group.group_id, tuple(full))
