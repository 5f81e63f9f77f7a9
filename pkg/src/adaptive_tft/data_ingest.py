"""Candle parsing, resampling and the volatility-rate transform."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .errors import CandleParseError, InsufficientDataError

CANDLE_HEADER = ("timestamp", "open", "high", "low", "close", "volume")
VOLATILITY_HEADER = ("timestamp", "price", "volatility")
DEFAULT_SOURCE_INTERVAL = 60


@dataclass(frozen=True)
class Candle:
    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float


@dataclass(frozen=True, eq=False)
class CandleSeries:
    """Column-oriented OHLCV bars at a fixed interval (seconds)."""

    interval: int
    timestamps: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i: int) -> Candle:
        return Candle(int(self.timestamps[i]), float(self.open[i]), float(self.high[i]),
                      float(self.low[i]), float(self.close[i]), float(self.volume[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, CandleSeries):
            return NotImplemented
        return self.interval == other.interval and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("timestamps",) + CANDLE_HEADER[1:])

    @classmethod
    def from_candles(cls, candles: Iterable[Candle], interval: int) -> "CandleSeries":
        rows = list(candles)
        return cls(
            interval=int(interval),
            timestamps=np.array([c.timestamp for c in rows], dtype=np.int64),
            open=np.array([c.open for c in rows], dtype=float),
            high=np.array([c.high for c in rows], dtype=float),
            low=np.array([c.low for c in rows], dtype=float),
            close=np.array([c.close for c in rows], dtype=float),
            volume=np.array([c.volume for c in rows], dtype=float),
        )

    def gap_positions(self) -> np.ndarray:
        """Indices ``i`` where ``timestamps[i+1] - timestamps[i] != interval``."""
        return np.flatnonzero(np.diff(self.timestamps) != self.interval)


@dataclass
class GapReport:
    """Audit record of a resampling pass.

    ``missing`` lists output buckets that received no source candle (they
    are omitted from the output).  ``incomplete`` maps the start of each
    emitted bucket to the number of source slots it was short of.  The
    written report lists every bucket start in either group.
    """

    interval: int
    missing: list[int] = field(default_factory=list)
    incomplete: dict[int, int] = field(default_factory=dict)

    def flagged(self) -> list[int]:
        return sorted(set(self.missing) | set(self.incomplete))

    def write(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{ts}\n" for ts in self.flagged()))


@dataclass(frozen=True, eq=False)
class VolatilitySeries:
    """Percent changes of consecutive closes, carried with the closes.

    ``values[t]`` is the change from ``prices[t]`` to ``prices[t + 1]``;
    ``timestamps`` stamps the prices, so value ``t`` is stamped by
    ``timestamps[t + 1]``.
    """

    values: np.ndarray
    prices: np.ndarray
    interval: int
    timestamps: np.ndarray

    def __post_init__(self):
        if len(self.prices) != len(self.values) + 1:
            raise ValueError("prices must have exactly one more entry than values")
        if len(self.timestamps) != len(self.prices):
            raise ValueError("timestamps must align with prices")

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VolatilitySeries):
            return NotImplemented
        return (self.interval == other.interval
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.prices, other.prices)
                and np.array_equal(self.timestamps, other.timestamps))

    @property
    def value_timestamps(self) -> np.ndarray:
        return self.timestamps[1:]

    @classmethod
    def from_prices(cls, prices, interval: int = 600, start: int = 0,
                    timestamps=None) -> "VolatilitySeries":
        p = np.asarray(prices, dtype=float)
        if timestamps is None:
            timestamps = start + interval * np.arange(len(p), dtype=np.int64)
        return cls(volatility_rate(p), p, int(interval), np.asarray(timestamps, dtype=np.int64))

    def split(self, m: int) -> tuple["VolatilitySeries", "VolatilitySeries"]:
        """Chronological split at value index ``m``; the boundary price is shared."""
        if not 0 < m < len(self.values):
            raise ValueError(f"split index {m} outside (0, {len(self.values)})")
        head = VolatilitySeries(self.values[:m], self.prices[:m + 1], self.interval,
                                self.timestamps[:m + 1])
        tail = VolatilitySeries(self.values[m:], self.prices[m:], self.interval,
                                self.timestamps[m:])
        return head, tail


def volatility_rate(prices) -> np.ndarray:
    p = np.asarray(prices, dtype=float)
    return (p[1:] / p[:-1] - 1.0) * 100.0


def reconstruct_prices(first_price: float, values) -> np.ndarray:
    """Inverse of :func:`volatility_rate` given the first close."""
    growth = 1.0 + np.asarray(values, dtype=float) / 100.0
    return first_price * np.concatenate([[1.0], np.cumprod(growth)])


def _parse_row(row: list[str], line: int) -> Candle:
    if len(row) != 6:
        raise CandleParseError(f"expected 6 fields, got {len(row)}", line)
    try:
        ts = int(row[0])
        o, h, l, c, v = (float(x) for x in row[1:])
    except ValueError as exc:
        raise CandleParseError(f"malformed field ({exc})", line) from None
    if not all(math.isfinite(x) for x in (o, h, l, c, v)):
        raise CandleParseError("non-finite value", line)
    if min(o, h, l, c) <= 0:
        raise CandleParseError("prices must be strictly positive", line)
    if v < 0:
        raise CandleParseError("volume must be non-negative", line)
    if l > min(o, c) or h < max(o, c):
        raise CandleParseError(f"inconsistent range low={l} high={h} for open={o} close={c}", line)
    return Candle(ts, o, h, l, c, v)


def parse_candles(stream: TextIO | Iterable[str], interval: int | None = None) -> CandleSeries:
    """Parse a ``timestamp,open,high,low,close,volume`` record stream.

    Rows are validated and sorted by timestamp.  When ``interval`` is not
    given it is inferred as the smallest timestamp step (60 s for fewer than
    two rows).
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise CandleParseError("missing header", 1) from None
    if tuple(h.strip() for h in header) != CANDLE_HEADER:
        raise CandleParseError(f"bad header {header!r}", 1)
    rows: list[Candle] = []
    lines: dict[int, int] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not f.strip() for f in row):
            continue
        candle = _parse_row(row, line)
        if candle.timestamp in lines:
            raise CandleParseError(
                f"duplicate timestamp {candle.timestamp} (first seen on line "
                f"{lines[candle.timestamp]})", line)
        lines[candle.timestamp] = line
        rows.append(candle)
    rows.sort(key=lambda c: c.timestamp)
    if interval is None:
        steps = np.diff([c.timestamp for c in rows])
        interval = int(steps.min()) if len(steps) else DEFAULT_SOURCE_INTERVAL
    return CandleSeries.from_candles(rows, interval)


def read_candles(path: str | Path, interval: int | None = None) -> CandleSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_candles(fh, interval)


def format_candles(series: CandleSeries) -> str:
    out = io.StringIO()
    out.write(",".join(CANDLE_HEADER) + "\n")
    for c in series:
        out.write(f"{c.timestamp},{c.open!r},{c.high!r},{c.low!r},{c.close!r},{c.volume!r}\n")
    return out.getvalue()


def write_candles(series: CandleSeries, path: str | Path) -> None:
    Path(path).write_text(format_candles(series), encoding="utf-8")


def resample(candles: CandleSeries, target_interval: int) -> tuple[CandleSeries, GapReport]:
    """Aggregate bars into epoch-aligned ``[k*T, (k+1)*T)`` buckets.

    Empty buckets are omitted and listed in the returned :class:`GapReport`.
    """
    target_interval = int(target_interval)
    if len(candles) == 0:
        raise InsufficientDataError("cannot resample an empty series")
    if target_interval <= 0 or target_interval % candles.interval:
        raise ValueError(f"target interval {target_interval}s is not a multiple of "
                         f"{candles.interval}s")
    slots = target_interval // candles.interval
    buckets = candles.timestamps // target_interval * target_interval
    starts = np.flatnonzero(np.r_[True, buckets[1:] != buckets[:-1]])
    ends = np.r_[starts[1:], len(buckets)]

    volume = np.array([math.fsum(candles.volume[a:b]) for a, b in zip(starts, ends)])
    out = CandleSeries(
        interval=target_interval,
        timestamps=buckets[starts].copy(),
        open=candles.open[starts].copy(),
        high=np.maximum.reduceat(candles.high, starts),
        low=np.minimum.reduceat(candles.low, starts),
        close=candles.close[ends - 1].copy(),
        volume=volume,
    )
    report = GapReport(interval=target_interval)
    present = set(out.timestamps.tolist())
    for ts in range(int(out.timestamps[0]), int(out.timestamps[-1]), target_interval):
        if ts not in present:
            report.missing.append(ts)
    for ts, count in zip(out.timestamps.tolist(), (ends - starts).tolist()):
        if count < slots:
            report.incomplete[ts] = slots - count
    return out, report


def compute_volatility(candles: CandleSeries) -> VolatilitySeries:
    if len(candles) < 2:
        raise InsufficientDataError("need at least 2 candles for a volatility series")
    return VolatilitySeries(volatility_rate(candles.close), candles.close.copy(),
                            candles.interval, candles.timestamps.copy())


def write_volatility(series: VolatilitySeries, path: str | Path) -> None:
    lines = [",".join(VOLATILITY_HEADER)]
    lines.append(f"{int(series.timestamps[0])},{float(series.prices[0])!r},")
    for ts, p, v in zip(series.timestamps[1:], series.prices[1:], series.values):
        lines.append(f"{int(ts)},{float(p)!r},{float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_volatility(path: str | Path, interval: int | None = None) -> VolatilitySeries:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != VOLATILITY_HEADER:
            raise CandleParseError(f"bad volatility header {header!r}", 1)
        ts, prices, values = [], [], []
        for row in reader:
            if not row:
                continue
            try:
                ts.append(int(row[0]))
                prices.append(float(row[1]))
                if len(ts) > 1:
                    values.append(float(row[2]))
            except (ValueError, IndexError) as exc:
                raise CandleParseError(f"malformed volatility row ({exc})", reader.line_num) from None
    if len(prices) < 2:
        raise InsufficientDataError(f"{path}: fewer than 2 prices")
    if interval is None:
        interval = int(np.diff(ts).min())
    return VolatilitySeries(np.array(values), np.array(prices), interval,
                            np.array(ts, dtype=np.int64))
