import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptive_tft.categorization import PatternKey, encode_binary, key_space
from adaptive_tft.errors import HygieneError, InfeasibleSpecError, InsufficientDataError
from adaptive_tft.evaluation import (Action, Direction, DirectionalRecord, SyntheticSpec,
                                     buy_and_hold, confusion_metrics, direction_of,
                                     directional_signal, generate_synthetic,
                                     perfect_foresight_signals, render_report, simulate_trading,
                                     split_index_for, walk_forward_backtest, write_report)
from adaptive_tft.forecaster import QuantileForecast
from adaptive_tft.registry import PredictionOutcome, Status, persistence_forecaster
from adaptive_tft.segmentation import SegmentationConfig, segment

from conftest import fake_registry
from helpers import series_from_values

U, D, N = Direction.UP, Direction.DOWN, Direction.NO_SIGNAL


def records(pred, actual):
    return [DirectionalRecord(i, p, a, Status.FORECAST) for i, (p, a) in enumerate(zip(pred, actual))]


# ------------------------------------------------------------------ signals

def outcome_with_median(m):
    fc = QuantileForecast(1, np.array([[m - 1, m, m + 1]]))
    return PredictionOutcome(Status.FORECAST, fc)


def test_signal_rules():
    assert directional_signal(outcome_with_median(0.3)) is U
    assert directional_signal(outcome_with_median(0.0)) is U
    assert directional_signal(outcome_with_median(-0.01)) is D
    assert directional_signal(PredictionOutcome(Status.UNSEEN_PATTERN)) is N
    assert direction_of(0.0) is U


# ------------------------------------------------------------------ metrics

def test_confusion_example():
    m = confusion_metrics(records([U, U, D, D], [U, D, D, U]))
    assert (m.tp, m.fp, m.tn, m.fn) == (1, 1, 1, 1)
    assert m.accuracy == m.precision == m.recall == m.specificity == 50.0


def test_all_correct_and_undefined_ratio():
    m = confusion_metrics(records([U, D, U], [U, D, U]))
    assert m.accuracy == m.precision == m.recall == m.specificity == 100.0
    m = confusion_metrics(records([U, U], [U, U]))
    assert m.specificity is None and m.to_dict("x")["specificity"] is None


def test_no_signal_is_counted_not_scored():
    m = confusion_metrics(records([U, N, N, D], [U, D, U, D]))
    assert m.no_signal == 2 and m.signaled == 2 and m.accuracy == 100.0
    with pytest.raises(InsufficientDataError):
        confusion_metrics(records([N], [U]))


direction_lists = st.lists(st.tuples(st.sampled_from([U, D, N]), st.sampled_from([U, D])),
                           min_size=1, max_size=60)


@settings(max_examples=200, deadline=None)
@given(direction_lists)
def test_metric_identities(pairs):
    recs = records([p for p, _ in pairs], [a for _, a in pairs])
    if all(p is N for p, _ in pairs):
        return
    m = confusion_metrics(recs)
    assert m.tp + m.fp + m.tn + m.fn + m.no_signal == len(pairs)
    rates = [r for r in (m.recall, m.specificity) if r is not None]
    assert min(rates) - 1e-9 <= m.accuracy <= max(rates) + 1e-9


# ------------------------------------------------------------------ trading

def test_hand_walked_ledger():
    led = simulate_trading([U, D, U], [100, 110, 99, 120])
    assert [e.action for e in led.events] == [Action.BUY, Action.SELL, Action.BUY]
    assert led.final_value == pytest.approx(100 * (110 / 100) * (120 / 99), rel=1e-12)
    assert round(led.final_value, 2) == 133.33


def test_all_up_and_all_down():
    prices = [100, 120, 90, 150, 200]
    assert simulate_trading([U] * 4, prices).final_value == pytest.approx(200.0, rel=1e-12)
    assert simulate_trading([U] * 4, prices).final_value == pytest.approx(buy_and_hold(prices))
    assert simulate_trading([D] * 4, prices).final_value == 100.0
    assert simulate_trading([N] * 4, prices).final_value == 100.0


def test_no_signal_holds_the_position():
    led = simulate_trading([U, N, N], [100, 50, 80, 120])
    assert led.final_value == pytest.approx(120.0)
    assert [e.action for e in led.events] == [Action.BUY, Action.HOLD, Action.HOLD]


def test_trading_errors():
    with pytest.raises(ValueError):
        simulate_trading([U], [1, 2, 3])
    with pytest.raises(ValueError):
        simulate_trading([U], [1, -2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40),
       st.lists(st.sampled_from([U, D, N]), min_size=40, max_size=40))
def test_value_only_moves_with_prices(steps, sigs):
    prices = 100 * np.cumprod(1 + np.asarray([0.0] + steps) / 100)
    led = simulate_trading(sigs[:len(steps)], prices)
    prev_pos, prev_cash = 0.0, 100.0
    for e in led.events:
        before = prev_cash + prev_pos * e.price
        assert e.value == pytest.approx(before, rel=1e-12, abs=1e-12)
        prev_pos, prev_cash = e.position, e.cash
    assert led.final_value == pytest.approx(prev_cash + prev_pos * prices[-1], rel=1e-12)


def test_buy_and_hold():
    assert buy_and_hold([100, 104.0, 108.32]) == pytest.approx(108.32, rel=1e-12)
    assert buy_and_hold([5, 7, 5]) == 100.0
    assert buy_and_hold([100, 50]) == 50.0
    with pytest.raises(ValueError):
        buy_and_hold([100])


def test_perfect_foresight_dominates():
    rng = np.random.default_rng(11)
    for _ in range(100):
        prices = 100 * np.cumprod(1 + rng.normal(0, 0.02, size=int(rng.integers(2, 80))))
        best = simulate_trading(perfect_foresight_signals(prices), prices).final_value
        assert best >= buy_and_hold(prices) * (1 - 1e-12)
        other = rng.choice([U, D, N], size=len(prices) - 1).tolist()
        assert best >= simulate_trading(other, prices).final_value * (1 - 1e-12)


# --------------------------------------------------------------- backtests

def test_naive_backtest_is_persistence():
    rng = np.random.default_rng(2)
    s = series_from_values(rng.normal(0, 1, 80).round(2))
    res = walk_forward_backtest(None, s, model="naive")
    sig = [r.predicted for r in res.records]
    assert sig[0] is N
    assert sig[1:] == [direction_of(v) for v in s.values[:-1]]


def test_adaptive_with_persistence_forecaster_follows_last_value():
    rng = np.random.default_rng(5)
    s = series_from_values(rng.normal(0, 1.2, 200).round(2))
    reg = fake_registry(key_space(5))
    res = walk_forward_backtest(reg, s, forecaster=persistence_forecaster)
    forecasts = [r for r in res.records if r.source_status is Status.FORECAST]
    assert forecasts
    for r in forecasts:
        assert r.predicted is direction_of(s.values[r.index - 1])


def test_hygiene_violation():
    s = series_from_values([0.5, -0.5, 1.0], start=0)
    reg = fake_registry([PatternKey((1, 1, 1, 1))], end_timestamp=600)
    with pytest.raises(HygieneError):
        walk_forward_backtest(reg, s)
    later = series_from_values([0.5, -0.5, 1.0], start=600)
    walk_forward_backtest(reg, later)


def test_warmup_must_join_the_test_range():
    s = series_from_values([0.5, -0.5, 1.0, 2.0, -1.0])
    a, b = s.split(2)
    reg = fake_registry([PatternKey((1, 1, 1, 1))], end_timestamp=-1)
    walk_forward_backtest(reg, b, warmup=a)
    with pytest.raises(ValueError):
        walk_forward_backtest(reg, b, warmup=series_from_values([1.0, 1.0]))


def test_report_shape(tmp_path):
    s = series_from_values(np.random.default_rng(1).normal(0, 1, 50).round(2))
    rep = walk_forward_backtest(None, s, model="naive").report()
    assert set(rep["metrics"]) == {"model", "accuracy", "precision", "recall", "specificity", "counts"}
    assert set(rep["metrics"]["counts"]) == {"tp", "fp", "tn", "fn", "no_signal"}
    assert [row["strategy"] for row in rep["trading"]] == ["Persistence Trading", "Buy and Hold"]
    assert all(row["initial_capital"] == 100.0 for row in rep["trading"])
    jp, tp = write_report(rep, tmp_path, "r")
    assert "Buy and Hold" in tp.read_text() and jp.read_text().endswith("\n")
    assert "Accuracy" in render_report(rep)


# --------------------------------------------------------------- synthetic

def test_single_pattern_recovers_exactly():
    spec = SyntheticSpec(responses={"1101": (0.4, 0.4, 0.4)}, n_segments=30)
    corpus = generate_synthetic(spec)
    found = segment(corpus.series, SegmentationConfig(spec.threshold))
    assert [[b[0], b[1]] for b in found.boundaries] == corpus.truth["boundaries"]
    assert set(corpus.truth["end_keys"]) == {"1101"}


def test_default_corpus_recovers_keys_and_categories():
    corpus = generate_synthetic(SyntheticSpec(n_segments=120, seed=3))
    found = segment(corpus.series, SegmentationConfig(2.5)).completed
    assert [[c.start_index, c.end_index] for c in found] == corpus.truth["boundaries"]
    assert [str(encode_binary(c.values[-5:])) for c in found] == corpus.truth["end_keys"]
    assert corpus.truth["categories"][1:] == corpus.truth["end_keys"][:-1]
    assert corpus.truth["categories"][0] is None


def test_seed_fixes_the_series():
    spec = SyntheticSpec(n_segments=40, sigma=0.2, seed=9)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a.candles == b.candles and a.truth == b.truth
    assert generate_synthetic(spec, seed=10).candles != a.candles


def test_planted_drift_is_detectable():
    sigma = 0.2
    spec = SyntheticSpec(n_segments=200, sigma=sigma, seed=4)
    corpus = generate_synthetic(spec)
    values = corpus.series.values
    starts = [b[0] for b, c in zip(corpus.truth["boundaries"], corpus.truth["categories"])
              if c == "1101"]
    # the first response step follows the one-step pullback
    sample = values[np.array(starts) + 1]
    n = len(sample)
    assert n >= 20
    assert abs(sample.mean() - 0.4) <= 3 * sigma / math.sqrt(n)


def test_infeasible_specs():
    with pytest.raises(InfeasibleSpecError):
        generate_synthetic(SyntheticSpec(responses={}))
    with pytest.raises(InfeasibleSpecError):
        generate_synthetic(SyntheticSpec(responses={"110": (0.1,)}))
    with pytest.raises(InfeasibleSpecError):
        generate_synthetic(SyntheticSpec(threshold=50.0, n_segments=5))


def test_spec_file_round_trip(tmp_path):
    path = tmp_path / "spec.cfg"
    path.write_text("response.1101 = 0.4,0.4,0.4\nlength = 12\nth = 2.5\nsigma = 0.1\nseed = 3\n")
    spec = SyntheticSpec.read(path)
    assert spec.responses == {PatternKey((1, 1, 0, 1)): (0.4, 0.4, 0.4)}
    assert (spec.n_segments, spec.threshold, spec.sigma, spec.seed) == (12, 2.5, 0.1, 3)


def test_sidecar(tmp_path):
    corpus = generate_synthetic(SyntheticSpec(n_segments=10))
    corpus.write(tmp_path / "s.csv")
    import json
    truth = json.loads((tmp_path / "s.csv.truth.json").read_text())
    assert len(truth["boundaries"]) == 10


def test_split_index_bounds():
    s = series_from_values([0.1] * 10)
    assert split_index_for(s, 0.7) == 7
    assert split_index_for(s, 0.0) == 1 and split_index_for(s, 1.0) == 9
