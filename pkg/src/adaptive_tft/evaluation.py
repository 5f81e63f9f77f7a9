"""Directional metrics, the all-in spot trading simulation, walk-forward
backtests and synthetic corpora with planted pattern responses."""

from __future__ import annotations

import configparser
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .categorization import PatternKey, encode_binary
from .data_ingest import CandleSeries, VolatilitySeries, compute_volatility
from .errors import HygieneError, InfeasibleSpecError, InsufficientDataError
from .forecaster import naive_predict
from .registry import AdaptivePredictor, ModelRegistry, PredictionOutcome, Status
from .segmentation import SegmentationConfig, segment

DEFAULT_CAPITAL = 100.0


class Direction(str, enum.Enum):
    UP = "Up"
    DOWN = "Down"
    NO_SIGNAL = "NoSignal"

    def __str__(self) -> str:
        return self.value


class Action(str, enum.Enum):
    BUY = "Buy"
    SELL = "Sell"
    HOLD = "Hold"


def direction_of(value: float) -> Direction:
    # zero counts as up, same as the pattern bits
    return Direction.UP if value >= 0 else Direction.DOWN


def directional_signal(outcome: PredictionOutcome) -> Direction:
    if outcome.status is not Status.FORECAST:
        return Direction.NO_SIGNAL
    return direction_of(float(outcome.forecast.median[0]))


@dataclass(frozen=True)
class DirectionalRecord:
    index: int
    predicted: Direction
    actual: Direction
    source_status: Status


def _pct(num: int, den: int) -> float | None:
    return 100.0 * num / den if den else None


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float | None
    precision: float | None
    recall: float | None
    specificity: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    no_signal: int

    @property
    def signaled(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self, model: str) -> dict:
        return {"model": model, "accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "specificity": self.specificity,
                "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                           "no_signal": self.no_signal}}


def confusion_metrics(records) -> MetricsReport:
    """Up is the positive class; NoSignal records are only counted."""
    tp = fp = tn = fn = skipped = 0
    for r in records:
        if r.predicted is Direction.NO_SIGNAL:
            skipped += 1
        elif r.predicted is Direction.UP:
            if r.actual is Direction.UP:
                tp += 1
            else:
                fp += 1
        elif r.actual is Direction.DOWN:
            tn += 1
        else:
            fn += 1
    n = tp + fp + tn + fn
    if n == 0:
        raise InsufficientDataError("no record carries a directional signal")
    return MetricsReport(_pct(tp + tn, n), _pct(tp, tp + fp), _pct(tp, tp + fn),
                         _pct(tn, tn + fp), tp, fp, tn, fn, skipped)


# ------------------------------------------------------------------ trading

@dataclass(frozen=True)
class TradeEvent:
    index: int
    action: Action
    price: float
    position: float
    cash: float

    @property
    def value(self) -> float:
        return self.cash + self.position * self.price


@dataclass
class TradeLedger:
    initial_capital: float
    events: list[TradeEvent]
    final_value: float

    @property
    def trades(self) -> list[TradeEvent]:
        return [e for e in self.events if e.action is not Action.HOLD]


def simulate_trading(signals, prices, initial_capital: float = DEFAULT_CAPITAL) -> TradeLedger:
    """All-in long/flat trading at the close of each signal's step, no fees.

    ``signals[i]`` is acted on at ``prices[i]``; ``prices[-1]`` only marks
    the final position.
    """
    p = np.asarray(prices, dtype=float)
    signals = list(signals)
    if len(signals) != len(p) - 1:
        raise ValueError(f"{len(signals)} signals for {len(p)} prices (need len(prices) - 1)")
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise ValueError("prices must be finite and positive")
    cash, position = float(initial_capital), 0.0
    events = []
    for i, sig in enumerate(signals):
        price = float(p[i])
        action = Action.HOLD
        if sig == Direction.UP and position == 0.0 and cash > 0.0:
            position, cash, action = cash / price, 0.0, Action.BUY
        elif sig == Direction.DOWN and position > 0.0:
            cash, position, action = position * price, 0.0, Action.SELL
        events.append(TradeEvent(i, action, price, position, cash))
    return TradeLedger(float(initial_capital), events, cash + position * float(p[-1]))


def buy_and_hold(prices, initial_capital: float = DEFAULT_CAPITAL) -> float:
    p = np.asarray(prices, dtype=float)
    if len(p) < 2:
        raise ValueError("buy-and-hold needs at least 2 prices")
    return float(initial_capital) * float(p[-1]) / float(p[0])


def perfect_foresight_signals(prices) -> list[Direction]:
    p = np.asarray(prices, dtype=float)
    return [direction_of(b - a) for a, b in zip(p[:-1], p[1:])]


# --------------------------------------------------------------- backtests

class PersistencePredictor:
    """Baseline with the predictor interface: forecasts the last observed value."""

    def __init__(self, horizon: int = 1, quantiles=(0.1, 0.5, 0.9)):
        self.horizon = horizon
        self.quantiles = tuple(quantiles)
        self.last_price: float | None = None
        self.values: list[float] = []

    def observe(self, price: float) -> None:
        if self.last_price is not None:
            self.values.append((price / self.last_price - 1.0) * 100.0)
        self.last_price = float(price)

    def observe_many(self, prices) -> None:
        for p in prices:
            self.observe(float(p))

    def predict(self) -> PredictionOutcome:
        if not self.values:
            return PredictionOutcome(Status.NO_PEAK_YET)
        fc = naive_predict(self.values[-1:], self.horizon, self.quantiles)
        return PredictionOutcome(Status.FORECAST, fc, partial_length=len(self.values))


@dataclass
class BacktestResult:
    model: str
    records: list[DirectionalRecord]
    metrics: MetricsReport | None
    ledger: TradeLedger
    buy_and_hold: float
    config: dict = field(default_factory=dict)
    provenance: dict | None = None

    def report(self) -> dict:
        return backtest_report(self)

    def status_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[str(r.source_status)] = out.get(str(r.source_status), 0) + 1
        return dict(sorted(out.items()))


def check_hygiene(registry: ModelRegistry, test_series: VolatilitySeries) -> None:
    prov = registry.provenance
    if prov is None or len(test_series) == 0:
        return
    first = int(test_series.value_timestamps[0])
    if first <= prov.end_timestamp:
        raise HygieneError(f"test range starts at {first}, inside the training range "
                           f"[{prov.start_timestamp}, {prov.end_timestamp}]")


def walk_forward_backtest(registry: ModelRegistry | None, test_series: VolatilitySeries,
                          horizon: int = 1, warmup: VolatilitySeries | None = None,
                          model: str = "adaptive", initial_capital: float = DEFAULT_CAPITAL,
                          forecaster=None) -> BacktestResult:
    """Stream ``test_series`` one close at a time and trade on each next-step call.

    The signal for step ``i`` is formed after observing ``prices[i]`` and
    compared with ``values[i]``.  ``warmup`` (normally the training series)
    primes the segmentation state; its last close must be the first test
    close, as produced by :meth:`VolatilitySeries.split`.
    """
    if model == "adaptive":
        if registry is None:
            raise ValueError("the adaptive backtest needs a registry")
        check_hygiene(registry, test_series)
        predictor = AdaptivePredictor(registry, horizon, forecaster)
        quantiles = registry.config.hp.quantiles
    elif model == "naive":
        quantiles = registry.config.hp.quantiles if registry else (0.1, 0.5, 0.9)
        predictor = PersistencePredictor(horizon, quantiles)
    else:
        raise ValueError(f"unknown model {model!r}")
    prices = np.asarray(test_series.prices, dtype=float)
    if warmup is not None:
        if warmup.prices[-1] != prices[0]:
            raise ValueError("warmup must end at the first test close")
        predictor.observe_many(warmup.prices[:-1])
    records, signals = [], []
    for i, actual in enumerate(test_series.values):
        predictor.observe(float(prices[i]))
        outcome = predictor.predict()
        sig = directional_signal(outcome)
        signals.append(sig)
        records.append(DirectionalRecord(i, sig, direction_of(float(actual)), outcome.status))
    ledger = simulate_trading(signals, prices, initial_capital)
    try:
        metrics = confusion_metrics(records)
    except InsufficientDataError:
        metrics = None
    config = registry.config.to_dict() if registry else {}
    prov = registry.provenance.to_dict() if registry and registry.provenance else None
    return BacktestResult(model, records, metrics, ledger, buy_and_hold(prices, initial_capital),
                          config, prov)


STRATEGY_NAMES = {"adaptive": "Adaptive TFT Trading", "naive": "Persistence Trading",
                  "buyhold": "Buy and Hold"}
MODEL_NAMES = {"adaptive": "Adaptive TFT", "naive": "Persistence"}


def _trading_row(strategy: str, capital: float, final: float) -> dict:
    return {"strategy": strategy, "initial_capital": capital, "final_asset_value": final}


def backtest_report(result: BacktestResult) -> dict:
    capital = result.ledger.initial_capital
    report = {
        "metrics": (result.metrics.to_dict(MODEL_NAMES[result.model])
                    if result.metrics else None),
        "trading": [_trading_row(STRATEGY_NAMES[result.model], capital, result.ledger.final_value),
                    _trading_row(STRATEGY_NAMES["buyhold"], capital, result.buy_and_hold)],
        "config": dict(result.config, model=result.model),
        "provenance": result.provenance,
        "statuses": result.status_counts(),
    }
    return report


def buyhold_report(prices, initial_capital: float = DEFAULT_CAPITAL, config=None) -> dict:
    return {"trading": [_trading_row(STRATEGY_NAMES["buyhold"], initial_capital,
                                     buy_and_hold(prices, initial_capital))],
            "config": dict(config or {}, model="buyhold"), "provenance": None}


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.2f}"


def render_report(report: dict) -> str:
    lines = []
    m = report.get("metrics")
    if m:
        c = m["counts"]
        lines += ["Directional performance",
                  f"{'Model':<24}{'Accuracy':>10}{'Precision':>11}{'Recall':>9}{'Specificity':>13}",
                  f"{m['model']:<24}{_fmt(m['accuracy']):>10}{_fmt(m['precision']):>11}"
                  f"{_fmt(m['recall']):>9}{_fmt(m['specificity']):>13}",
                  f"TP={c['tp']} FP={c['fp']} TN={c['tn']} FN={c['fn']} no_signal={c['no_signal']}",
                  ""]
    rows = report.get("trading") or []
    if rows:
        lines.append(f"Trading (initial capital {rows[0]['initial_capital']:.2f})")
        lines.append(f"{'Strategy':<28}{'Final asset value':>18}")
        for r in rows:
            lines.append(f"{r['strategy']:<28}{r['final_asset_value']:>18.2f}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, out_dir: str | Path, stem: str = "backtest") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jp, tp = out / f"{stem}.json", out / f"{stem}.txt"
    jp.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    tp.write_text(render_report(report))
    return jp, tp


# ---------------------------------------------------------------- synthetic

DEFAULT_RESPONSES = {
    "1101": (0.4, 0.4, 0.4),
    "0110": (0.3, -0.3, 0.3),
    "1010": (0.5, -0.3, 0.3),
    "0011": (0.3, -0.5, 0.5),
}


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted structure: every segment after key ``k`` opens with ``responses[k]``.

    A segment is a pullback step, the response of its category, a descent
    sized to pull the price back towards ``start_price`` and a run-up of
    ``p_len`` rising steps whose step-to-step changes spell the next key.
    """

    responses: dict = field(default_factory=lambda: dict(DEFAULT_RESPONSES))
    threshold: float = 2.5
    p_len: int = 5
    sigma: float = 0.0
    n_segments: int = 200
    seed: int = 0
    pullback: float = 0.8
    runup_base: float = 1.2
    runup_step: float = 0.6
    runup_floor: float = 0.8
    descent_steps: int = 2
    descent_floor: float = 0.5
    start_price: float = 100.0
    interval: int = 600
    start_timestamp: int = 1_700_000_400

    def __post_init__(self):
        table = {}
        for k, v in self.responses.items():
            key = k if isinstance(k, PatternKey) else PatternKey.parse(str(k))
            table[key] = tuple(float(x) for x in v)
        object.__setattr__(self, "responses", dict(sorted(table.items())))

    @property
    def keys(self) -> list[PatternKey]:
        return list(self.responses)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "responses"}
        d["responses"] = {str(k): list(v) for k, v in self.responses.items()}
        return d

    @classmethod
    def from_mapping(cls, items: dict) -> "SyntheticSpec":
        kwargs, responses = {}, {}
        types = {k: f.type for k, f in cls.__dataclass_fields__.items()}
        for k, v in items.items():
            if k.startswith("response."):
                responses[k.split(".", 1)[1]] = [float(x) for x in str(v).split(",") if x.strip()]
            elif k == "length":
                kwargs["n_segments"] = int(v)
            elif k in ("th", "t_h"):
                kwargs["threshold"] = float(v)
            elif k in types and k != "responses":
                kwargs[k] = int(v) if types[k] == "int" else float(v)
        if responses:
            kwargs["responses"] = responses
        return cls(**kwargs)

    @classmethod
    def read(cls, path: str | Path) -> "SyntheticSpec":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string("[spec]\n" + Path(path).read_text())
        return cls.from_mapping(dict(parser["spec"]))


def _runup(key: PatternKey, spec: SyntheticSpec) -> np.ndarray:
    steps = [spec.runup_step if b else -spec.runup_step for b in key.bits]
    v = spec.runup_base + np.concatenate([[0.0], np.cumsum(steps)])
    return v - min(0.0, v.min() - spec.runup_floor)


def _descent(level: float, ahead: float, spec: SyntheticSpec) -> np.ndarray:
    """Equal down steps so that ``level`` times the run-up growth lands near start."""
    target = spec.start_price / (level * ahead)
    per = 1.0 - target ** (1.0 / spec.descent_steps) if target < 1 else 0.0
    return -np.full(spec.descent_steps, max(per * 100.0, spec.descent_floor))


def _growth(values) -> float:
    return float(np.prod(1.0 + np.asarray(values) / 100.0))


@dataclass
class SyntheticCorpus:
    candles: CandleSeries
    truth: dict

    @property
    def series(self) -> VolatilitySeries:
        return compute_volatility(self.candles)

    def write(self, candles_path: str | Path, sidecar_path: str | Path | None = None) -> None:
        from .data_ingest import write_candles
        write_candles(self.candles, candles_path)
        if sidecar_path is None:
            sidecar_path = Path(str(candles_path) + ".truth.json")
        Path(sidecar_path).write_text(json.dumps(self.truth, indent=2, sort_keys=True) + "\n")


def generate_synthetic(spec: SyntheticSpec, seed: int | None = None) -> SyntheticCorpus:
    """Price path with planted segments; the sidecar records the construction."""
    if not spec.responses:
        raise InfeasibleSpecError("the response table is empty")
    if any(k.p_len != spec.p_len for k in spec.responses):
        raise InfeasibleSpecError(f"every planted key needs {spec.p_len - 1} bits")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    keys = spec.keys
    clean: list[float] = []
    bounds, seg_keys, categories = [], [], []
    level = 1.0
    prev_key = None
    for s in range(spec.n_segments):
        key = keys[int(rng.integers(len(keys)))]
        parts = [[-spec.pullback]]
        if prev_key is not None:
            parts.append(list(spec.responses[prev_key]))
        head = [x for part in parts for x in part]
        up = _runup(key, spec)
        down = _descent(level * _growth(head), _growth(up), spec)
        seg = head + down.tolist() + up.tolist()
        start = len(clean)
        clean.extend(seg)
        level *= _growth(seg)
        bounds.append([start, len(clean) - 1])
        seg_keys.append(str(key))
        categories.append(None if prev_key is None else str(prev_key))
        prev_key = key
    tail_start = len(clean)
    clean.extend([-spec.pullback] + list(spec.responses[prev_key]))
    clean = np.array(clean)

    prices0 = spec.start_price * np.concatenate([[1.0], np.cumprod(1.0 + clean / 100.0)])
    cfg = SegmentationConfig(spec.threshold)
    found = segment(VolatilitySeries.from_prices(prices0, spec.interval), cfg)
    got = [[b[0], b[1]] for b in found.boundaries]
    if got != bounds:
        agree = len({tuple(b) for b in got} & {tuple(b) for b in bounds})
        raise InfeasibleSpecError(
            f"noise-free path does not re-segment to the planted boundaries under "
            f"threshold {spec.threshold} ({agree} of {len(bounds)} agree)")
    for b, k in zip(got, seg_keys):
        if str(encode_binary(clean[b[1] - spec.p_len + 1:b[1] + 1])) != k:
            raise InfeasibleSpecError(f"run-up at {b} does not encode key {k}")

    values = clean + rng.normal(0.0, spec.sigma, size=len(clean)) if spec.sigma > 0 else clean
    prices = spec.start_price * np.concatenate([[1.0], np.cumprod(1.0 + values / 100.0)])
    if np.any(prices <= 0) or not np.all(np.isfinite(prices)):
        raise InfeasibleSpecError("generated prices left the positive range")
    candles = _candles_from_closes(prices, spec.interval, spec.start_timestamp)
    truth = {"spec": spec.to_dict(), "boundaries": bounds, "end_keys": seg_keys,
             "categories": categories, "tail_start": tail_start,
             "clean_values": clean.tolist()}
    return SyntheticCorpus(candles, truth)


def _candles_from_closes(closes, interval: int, start: int) -> CandleSeries:
    closes = np.asarray(closes, dtype=float)
    opens = np.concatenate([[closes[0]], closes[:-1]])
    return CandleSeries(
        interval=int(interval),
        timestamps=start + interval * np.arange(len(closes), dtype=np.int64),
        open=opens,
        high=np.maximum(opens, closes),
        low=np.minimum(opens, closes),
        close=closes,
        volume=np.ones(len(closes)),
    )


def split_index_for(series: VolatilitySeries, fraction: float) -> int:
    m = int(math.floor(len(series) * fraction))
    return min(max(m, 1), len(series) - 1)
