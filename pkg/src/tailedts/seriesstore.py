"""Core data model: aligned hourly view-count series and monthly tables.

Everything here is immutable after construction and safe to share across
threads. Storage formats live in `ingest`.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

__all__ = [
    "PageKey",
    "TimeSeries",
    "MonthTable",
    "CategoryPartition",
    "CATEGORY_BOUNDS",
    "total_views",
    "categorize",
    "slice_days",
]

# Popularity buckets by total monthly views, half-open on the right.
CATEGORY_BOUNDS: dict[str, tuple[int, int]] = {
    "O(10^2)": (10**2, 10**3),
    "O(10^3)": (10**3, 10**4),
    "O(10^4)": (10**4, 10**5),
}


@dataclass(frozen=True, order=True)
class PageKey:
    """Identity of one page: wiki project+platform code and title.

    Empty or missing fields collapse to the literal string "NA", matching
    the fill rule applied to the raw dumps. Ordering is plain tuple order
    on (domain_code, page_title), which for UTF-8 text coincides with
    byte order.
    """

    domain_code: str
    page_title: str

    def __post_init__(self) -> None:
        for name in ("domain_code", "page_title"):
            value = getattr(self, name)
            if value is None or value == "":
                object.__setattr__(self, name, "NA")
            elif not isinstance(value, str):
                object.__setattr__(self, name, str(value))


def _check_counts(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("values must be a non-empty 1-d sequence")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)):
            raise ValueError("counts must be finite")
        if np.any(arr != np.floor(arr)):
            raise ValueError("counts must be integers")
    elif arr.dtype.kind not in ("i", "u"):
        raise ValueError(f"counts must be numeric, got dtype {arr.dtype}")
    if np.any(arr.astype(np.int64, copy=False) < 0):
        raise ValueError("counts must be non-negative")
    if np.any(arr.astype(np.int64, copy=False) >= 2**32):
        raise ValueError("counts exceed 32-bit range")
    out = arr.astype(np.uint32)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class TimeSeries:
    """One page's hourly count sequence on a fixed UTC grid.

    `start` is the timestamp of values[0] and must be a top-of-hour UTC
    instant. Counts are stored as unsigned 32-bit integers; totals are
    computed in 64-bit.
    """

    key: PageKey
    start: datetime
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.start.tzinfo is None or self.start.utcoffset() != timedelta(0):
            raise ValueError("start must be an aware UTC timestamp")
        if self.start.minute or self.start.second or self.start.microsecond:
            raise ValueError("start must be a top-of-hour timestamp")
        object.__setattr__(self, "values", _check_counts(self.values))

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def t(self) -> int:
        return len(self)


def total_views(series: TimeSeries) -> int:
    """Sum of all counts in the series (64-bit safe)."""
    return int(np.sum(series.values, dtype=np.int64))


@dataclass(frozen=True)
class MonthTable:
    """A set of series sharing one hourly grid, plus a zero-cell diagnostic.

    T is always a whole number of days (24*D hours). `month` records the
    source (year, month) and is kept across day slicing.
    """

    month: tuple[int, int]
    series: tuple[TimeSeries, ...]
    start: datetime
    t: int
    zero_fraction: float

    def __post_init__(self) -> None:
        year, mon = self.month
        if not (1 <= mon <= 12):
            raise ValueError(f"month out of range: {self.month}")
        if self.t <= 0 or self.t % 24 != 0:
            raise ValueError("table span must be a positive whole number of days")
        for s in self.series:
            if s.start != self.start or len(s) != self.t:
                raise ValueError("all member series must share the table grid")

    @classmethod
    def build(cls, month: tuple[int, int], series, start: datetime | None = None,
              t: int | None = None) -> "MonthTable":
        series = tuple(series)
        if series:
            start = series[0].start if start is None else start
            t = len(series[0]) if t is None else t
        elif start is None or t is None:
            raise ValueError("empty table needs explicit start and t")
        zeros = sum(int(np.count_nonzero(s.values == 0)) for s in series)
        cells = len(series) * t
        zf = (zeros / cells) if cells else 0.0
        return cls(month=month, series=series, start=start, t=t, zero_fraction=zf)

    @property
    def rows(self) -> int:
        return len(self.series)

    @property
    def days(self) -> int:
        return self.t // 24

    def recompute_zero_fraction(self) -> float:
        zeros = sum(int(np.count_nonzero(s.values == 0)) for s in self.series)
        cells = self.rows * self.t
        return (zeros / cells) if cells else 0.0


@dataclass(frozen=True)
class CategoryPartition:
    """Row indices of a MonthTable bucketed by total monthly views.

    Buckets are disjoint; rows whose totals fall outside every interval
    belong to no bucket and are simply absent.
    """

    buckets: dict[str, tuple[int, ...]]

    def labels(self) -> list[str]:
        return [label for label in CATEGORY_BOUNDS if label in self.buckets]

    def __getitem__(self, label: str) -> tuple[int, ...]:
        return self.buckets[label]


def categorize(table: MonthTable) -> CategoryPartition:
    """Bucket rows by decade of total views: [10^2,10^3), [10^3,10^4), [10^4,10^5)."""
    if table.rows == 0:
        raise ValueError("cannot categorize an empty table")
    buckets: dict[str, list[int]] = {label: [] for label in CATEGORY_BOUNDS}
    for idx, s in enumerate(table.series):
        total = total_views(s)
        for label, (lo, hi) in CATEGORY_BOUNDS.items():
            if lo <= total < hi:
                buckets[label].append(idx)
                break
    return CategoryPartition({label: tuple(ix) for label, ix in buckets.items()})


def slice_days(table: MonthTable, first_day: int, last_day: int) -> MonthTable:
    """Restrict the table to hours [(first_day-1)*24, last_day*24).

    Day indices are 1-based and inclusive. Requesting the full covered
    range returns an equal table.
    """
    if not (1 <= first_day <= last_day <= table.days):
        raise ValueError(
            f"day range [{first_day}, {last_day}] outside table span of {table.days} days"
        )
    lo = (first_day - 1) * 24
    hi = last_day * 24
    new_start = table.start + timedelta(hours=lo)
    sliced = tuple(
        TimeSeries(key=s.key, start=new_start, values=s.values[lo:hi].copy())
        for s in table.series
    )
    return MonthTable.build(table.month, sliced, start=new_start, t=hi - lo)
