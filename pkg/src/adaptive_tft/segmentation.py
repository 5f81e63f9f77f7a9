"""Adaptive segmentation at thresholded relative maxima.

Extrema are located on the price path (``series.prices``).  A price index
``j`` corresponds to volatility index ``j - 1`` (the change that arrives at
price ``j``), so a segment that ends at a peak price ``j`` ends at volatility
index ``j - 1`` and the next segment starts at ``j``.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data_ingest import VolatilitySeries

MIN, MAX = "min", "max"


@dataclass(frozen=True)
class SegmentationConfig:
    threshold: float = 1.5
    neighborhood: int = 1

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be strictly positive")
        if int(self.neighborhood) != self.neighborhood or self.neighborhood < 1:
            raise ValueError("neighborhood must be an integer >= 1")


@dataclass(eq=False, slots=True)
class Subseries:
    """One market phase ``values[start_index:end_index + 1]`` ending at a peak.

    ``trough_index`` uses the volatility index convention, so the trough
    price is ``prices[trough_index + 1]``; it is ``-1`` when the trough is
    the very first price of the series.
    """

    start_index: int
    end_index: int
    trough_index: int
    rise: float
    peak_price: float
    parent: np.ndarray = field(repr=False)

    @property
    def values(self) -> np.ndarray:
        return self.parent[self.start_index:self.end_index + 1]

    def __len__(self) -> int:
        return self.end_index - self.start_index + 1

    def key(self) -> tuple:
        return (self.start_index, self.end_index, self.trough_index, self.rise, self.peak_price)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Subseries):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())


class SegmentationResult:
    """Completed subseries plus the unterminated tail.

    Boundaries are kept as plain tuples; :attr:`completed` materialises the
    :class:`Subseries` objects on first access.
    """

    def __init__(self, boundaries: list[tuple[int, int, int, float, float]], tail_start: int,
                 values: np.ndarray):
        self.boundaries = boundaries
        self.tail_start = tail_start
        self.values = values
        self._completed: list[Subseries] | None = None

    @property
    def completed(self) -> list[Subseries]:
        if self._completed is None:
            self._completed = [Subseries(*b, self.values) for b in self.boundaries]
        return self._completed

    @property
    def tail(self) -> np.ndarray:
        return self.values[self.tail_start:]

    @property
    def last_peak_index(self) -> int | None:
        return self.boundaries[-1][1] if self.boundaries else None

    def __eq__(self, other) -> bool:
        if not isinstance(other, SegmentationResult):
            return NotImplemented
        return (self.boundaries == other.boundaries and self.tail_start == other.tail_start
                and np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"SegmentationResult(k={len(self.boundaries)}, tail_start={self.tail_start})"


def compute_rise(prices, t_min: int, t_peak: int) -> float:
    """Percent gain from ``prices[t_min]`` to ``prices[t_peak]``."""
    n = len(prices)
    if not (0 <= t_min < n and 0 <= t_peak < n):
        raise IndexError(f"indices ({t_min}, {t_peak}) out of range for {n} prices")
    if t_min >= t_peak:
        raise ValueError("trough must precede peak")
    return (prices[t_peak] - prices[t_min]) / prices[t_min] * 100.0


def _runs(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    change = np.flatnonzero(v[1:] != v[:-1]) + 1
    return (np.concatenate(([0], change)),
            np.concatenate((change - 1, [len(v) - 1])))


_EMPTY = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool))


def _raw_extrema(v: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Extrema of flat runs without merging: ``(indices, is_max, starts_low)``.

    ``starts_low`` reports whether the leading run is a boundary minimum (the
    next ``n`` values are not lower); it never appears in ``indices``.
    """
    if n == 1:
        # consecutive runs always differ, so an extremum is a flip of the step sign
        d = v[1:] - v[:-1]
        nz = np.flatnonzero(d)
        up = d[nz] > 0
        hits = np.flatnonzero(up[:-1] != up[1:])
        return nz[hits] + 1, up[hits], bool(len(nz) and up[0])
    starts, ends = _runs(v)
    starts_low = bool(ends[0] + n <= len(v) - 1 and v[ends[0] + 1:ends[0] + n + 1].min() >= v[0])
    if len(v) < 2 * n + 1:
        return _EMPTY + (starts_low,)
    interior = (starts - n >= 0) & (ends + n <= len(v) - 1)
    starts, ends = starts[interior], ends[interior]
    if not len(starts):
        return _EMPTY + (starts_low,)
    win_max = sliding_window_view(v, n).max(axis=1)
    win_min = sliding_window_view(v, n).min(axis=1)
    val = v[starts]
    is_max = (win_max[starts - n] <= val) & (win_max[ends + 1] <= val)
    is_min = (win_min[starts - n] >= val) & (win_min[ends + 1] >= val)
    keep = is_max | is_min
    return starts[keep], is_max[keep], starts_low


def find_relative_extrema(values, neighborhood: int = 1) -> list[tuple[int, str]]:
    """Relative extrema of ``values`` within ``neighborhood`` on each side.

    A flat run counts once, at its first index.  Consecutive extrema of the
    same kind (possible for ``neighborhood > 1``) are merged, keeping the
    more extreme one (the earlier on ties), so the result alternates.
    """
    v = np.asarray(values, dtype=float)
    merged: list[tuple[int, str]] = []
    if not len(v):
        return merged
    idx, is_max, _ = _raw_extrema(v, int(neighborhood))
    for i, mx in zip(idx.tolist(), is_max.tolist()):
        kind = MAX if mx else MIN
        if merged and merged[-1][1] == kind:
            prev = merged[-1][0]
            if (v[i] > v[prev]) if mx else (v[i] < v[prev]):
                merged[-1] = (i, kind)
            continue
        merged.append((i, kind))
    return merged


def segment(series: VolatilitySeries, config: SegmentationConfig = SegmentationConfig()
            ) -> SegmentationResult:
    """Partition ``series.values`` into subseries ending at confirmed peaks.

    Walks the extrema in order: a minimum replaces the running trough when
    there is none or it is strictly lower; a maximum whose rise from the
    trough reaches ``config.threshold`` closes the current subseries and
    clears the trough.  Extrema are consumed as detected, so a confirmed peak
    is never revised by later data.
    """
    p = np.asarray(series.prices, dtype=float)
    n = config.neighborhood
    idx, is_max, starts_low = _raw_extrema(p, n)
    threshold = config.threshold
    bounds: list[tuple[int, int, int, float, float]] = []
    seg_start = 0
    t_min = low = None
    if starts_low:
        t_min, low = 0, float(p[0])
    for i, mx, price in zip(idx.tolist(), is_max.tolist(), p[idx].tolist()):
        if not mx:
            if low is None or price < low:
                t_min, low = i, price
        elif low is not None:
            rise = (price - low) / low * 100.0
            if rise >= threshold:
                bounds.append((seg_start, i - 1, t_min - 1, rise, price))
                seg_start = i
                t_min = low = None
    return SegmentationResult(bounds, seg_start, series.values)


class PeakTracker:
    """Streaming counterpart of :func:`segment`.

    Prices are appended one at a time; each flat run is classified once, as
    soon as ``neighborhood`` later prices are known, so history is never
    rescanned.  Single-owner: use :meth:`snapshot` to hand a copy to readers.
    """

    def __init__(self, config: SegmentationConfig = SegmentationConfig()):
        self.config = config
        self.prices: list[float] = []
        self._run_start = 0
        self._pending: deque[tuple[int, int]] = deque()
        self._t_min: int | None = None
        self._seg_start = 0
        self.segments: list[tuple[int, int, int, float]] = []

    @property
    def last_peak_index(self) -> int | None:
        return self.segments[-1][1] if self.segments else None

    @property
    def current_start(self) -> int:
        """Volatility index where the unterminated segment begins."""
        return self._seg_start

    def snapshot(self) -> "PeakTracker":
        return copy.deepcopy(self)

    def append(self, price: float) -> None:
        p = self.prices
        i = len(p)
        p.append(float(price))
        if i == 0:
            return
        if p[i] != p[i - 1]:
            self._pending.append((self._run_start, i - 1))
            self._run_start = i
        n = self.config.neighborhood
        while self._pending and self._pending[0][1] + n <= i:
            self._decide(*self._pending.popleft())

    def extend(self, prices) -> None:
        for x in prices:
            self.append(x)

    def _decide(self, start: int, end: int) -> None:
        p, n = self.prices, self.config.neighborhood
        val = p[start]
        right = p[end + 1:end + n + 1]
        if start == 0:
            if min(right) >= val:
                self._on_min(0)
            return
        if start - n < 0:
            return
        left = p[start - n:start]
        if max(left) <= val and max(right) <= val:
            self._on_max(start)
        elif min(left) >= val and min(right) >= val:
            self._on_min(start)

    def _on_min(self, idx: int) -> None:
        if self._t_min is None or self.prices[idx] < self.prices[self._t_min]:
            self._t_min = idx

    def _on_max(self, idx: int) -> None:
        if self._t_min is None:
            return
        rise = compute_rise(self.prices, self._t_min, idx)
        if rise >= self.config.threshold:
            self.segments.append((self._seg_start, idx - 1, self._t_min - 1, float(rise)))
            self._seg_start = idx
            self._t_min = None


def find_last_peak_index(series: VolatilitySeries,
                         config: SegmentationConfig = SegmentationConfig()) -> int | None:
    tracker = PeakTracker(config)
    tracker.extend(series.prices)
    return tracker.last_peak_index


def format_segments(result: SegmentationResult) -> str:
    lines = ["start_index,end_index,trough_index,rise_percent"]
    lines += [f"{s.start_index},{s.end_index},{s.trough_index},{s.rise!r}" for s in result.completed]
    return "\n".join(lines) + "\n"


def write_segments(result: SegmentationResult, path: str | Path) -> None:
    Path(path).write_text(format_segments(result))


def read_segments(path: str | Path) -> list[tuple[int, int, int, float]]:
    rows = Path(path).read_text().splitlines()[1:]
    out = []
    for row in rows:
        a, b, c, d = row.split(",")
        out.append((int(a), int(b), int(c), float(d)))
    return out
