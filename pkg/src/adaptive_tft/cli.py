"""``adaptive-tft`` command line: ingest, segment, train, predict, backtest, synth, report.

Every option can come from a flat ``key = value`` config file (``--config``)
and is overridden by the same-named flag.  Exit codes: 0 success, 1 domain
error, 2 I/O or usage error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import statistics
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .categorization import group_by_pattern, write_category_report
from .data_ingest import (compute_volatility, read_candles, read_volatility, resample, write_candles,
                          write_volatility)
from .errors import AdaptiveTFTError, InsufficientDataError
from .forecaster import HyperParams
from .registry import load_registry, manifest_path, predict_next, save_registry, train_all
from .segmentation import SegmentationConfig, segment, write_segments


@dataclass(frozen=True)
class Option:
    name: str
    type: type
    default: object
    help: str
    commands: tuple[str, ...] = ()


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


ALL = ("ingest", "segment", "train", "predict", "backtest", "synth", "report")

OPTIONS = [
    Option("input", str, None, "raw candle CSV", ("ingest",)),
    Option("volatility", str, None, "volatility CSV (timestamp,price,volatility)",
           ("segment", "train", "backtest")),
    Option("registry", str, None, "registry archive path", ("predict", "backtest")),
    Option("history", str, None, "volatility CSV with the observed history", ("predict",)),
    Option("tail", str, None, "file with newly arrived volatility values, one per line",
           ("predict",)),
    Option("spec", str, None, "synthetic spec file (key = value)", ("synth",)),
    Option("reports", str, None, "comma-separated backtest report JSON files", ("report",)),
    Option("timeframe", int, 600, "bar length in seconds", ("ingest",)),
    Option("th", float, 1.5, "rise threshold T_h in percent", ("segment", "train")),
    Option("p_len", int, 5, "end-pattern length", ("segment", "train")),
    Option("neighborhood", int, 1, "extremum neighborhood", ("segment", "train")),
    Option("min_samples", int, 20, "minimum members per trained category", ("train",)),
    Option("quantiles", _floats, (0.1, 0.5, 0.9), "comma-separated quantile levels", ("train",)),
    Option("hidden_dim", int, HyperParams.hidden_dim, "model width", ("train",)),
    Option("num_heads", int, HyperParams.num_heads, "attention heads", ("train",)),
    Option("learning_rate", float, HyperParams.learning_rate, "optimizer step size", ("train",)),
    Option("max_epochs", int, HyperParams.max_epochs, "training epochs", ("train",)),
    Option("batch_size", int, HyperParams.batch_size, "mini-batch size", ("train",)),
    Option("dropout", float, HyperParams.dropout, "GRN dropout rate", ("train",)),
    Option("train_end", int, None, "last training value timestamp (inclusive)",
           ("train", "backtest")),
    Option("test_start", int, None, "first test value timestamp", ("backtest",)),
    Option("train_fraction", float, 0.7, "chronological split used when no timestamps are given",
           ("train", "backtest")),
    Option("horizon", int, 1, "forecast steps", ("predict", "backtest")),
    Option("capital", float, 100.0, "initial capital for the trading simulation", ("backtest",)),
    Option("model", str, "adaptive", "backtest model: adaptive, naive or buyhold", ("backtest",)),
]
GLOBAL_DEFAULTS = {"seed": 0, "out": "."}


class UsageError(Exception):
    pass


class Run:
    """Resolved settings: flag, then config file, then built-in default."""

    def __init__(self, args: argparse.Namespace):
        file_values: dict[str, str] = {}
        config = getattr(args, "config", None)
        if config:
            path = Path(config)
            if not path.is_file():
                raise FileNotFoundError(f"config file not found: {path}")
            parser = configparser.ConfigParser(interpolation=None)
            parser.optionxform = str
            parser.read_string("[run]\n" + path.read_text())
            file_values = dict(parser["run"])
        known = {o.name: o for o in OPTIONS}
        self.values: dict[str, object] = {}
        for name, default in GLOBAL_DEFAULTS.items():
            self.values[name] = default
        for o in OPTIONS:
            self.values[o.name] = o.default
        for k, v in file_values.items():
            if k in known:
                self.values[k] = self._convert(known[k], v)
            elif k in GLOBAL_DEFAULTS:
                self.values[k] = type(GLOBAL_DEFAULTS[k])(v)
            else:
                raise UsageError(f"unknown config key {k!r}")
        for k in list(known) + list(GLOBAL_DEFAULTS):
            v = getattr(args, k, None)
            if v is not None:
                self.values[k] = v
        self.explicit_seed = getattr(args, "seed", None) is not None or "seed" in file_values

    @staticmethod
    def _convert(opt: Option, text: str):
        try:
            return opt.type(text)
        except ValueError as exc:
            raise UsageError(f"bad value for {opt.name}: {text!r} ({exc})") from None

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def require(self, *names: str) -> None:
        missing = [n for n in names if self.values.get(n) is None]
        if missing:
            raise UsageError("missing required setting(s): " + ", ".join(f"--{n}" for n in missing))

    @property
    def out_dir(self) -> Path:
        out = Path(self.values["out"])
        out.mkdir(parents=True, exist_ok=True)
        return out

    def segmentation(self) -> SegmentationConfig:
        return SegmentationConfig(float(self.th), int(self.neighborhood))

    def hyperparams(self) -> HyperParams:
        return HyperParams(hidden_dim=self.hidden_dim, num_heads=self.num_heads, p_len=self.p_len,
                           quantiles=self.quantiles, learning_rate=self.learning_rate,
                           max_epochs=self.max_epochs, batch_size=self.batch_size,
                           dropout=self.dropout, seed=int(self.seed))


def _info(msg: str) -> None:
    print(msg)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def _split_for_training(run: Run, series):
    ts = series.value_timestamps
    if run.train_end is not None:
        m = int(np.searchsorted(ts, int(run.train_end), side="right"))
    else:
        m = ev.split_index_for(series, float(run.train_fraction))
    if m >= len(series):
        return series
    if m < 1:
        raise InsufficientDataError(f"no training values at or before {run.train_end}")
    return series.split(m)[0]


# ------------------------------------------------------------------ commands

def cmd_ingest(run: Run) -> int:
    run.require("input")
    raw = read_candles(_need_file(run.input))
    bars, gaps = resample(raw, int(run.timeframe))
    series = compute_volatility(bars)
    out = run.out_dir
    write_candles(bars, out / "candles.csv")
    write_volatility(series, out / "volatility.csv")
    gaps.write(out / "gaps.txt")
    _info(f"read {len(raw)} candles at {raw.interval}s")
    _info(f"wrote {len(bars)} candles at {bars.interval}s, {len(series)} volatility values")
    _info(f"{len(gaps.missing)} empty buckets, {len(gaps.incomplete)} incomplete buckets")
    return 0


def cmd_segment(run: Run) -> int:
    run.require("volatility")
    series = read_volatility(_need_file(run.volatility))
    result = segment(series, run.segmentation())
    grouping = group_by_pattern(result.completed, int(run.p_len))
    out = run.out_dir
    write_segments(result, out / "segments.csv")
    write_category_report(grouping, out / "categories.csv")
    k = len(result.completed)
    lengths = [len(s) for s in result.completed]
    _info(f"segments: {k}")
    if k:
        _info(f"mean length: {statistics.fmean(lengths):.3f}")
        _info(f"median length: {statistics.median(lengths)}")
    else:
        _warn(f"no peak reached the {run.th}% threshold")
    _info(f"categories: {len(grouping)}")
    _info(f"unpatternable: {grouping.skipped}")
    return 0


def cmd_train(run: Run) -> int:
    run.require("volatility")
    series = read_volatility(_need_file(run.volatility))
    train_series = _split_for_training(run, series)
    registry = train_all(train_series, run.segmentation(), int(run.p_len), run.hyperparams(),
                         int(run.min_samples))
    path = run.out_dir / "registry.bin"
    save_registry(registry, path)
    for key, n in sorted(registry.sample_counts.items()):
        if key in registry.models:
            _info(f"{key}: {n} samples, final loss {registry.models[key].final_loss!r}")
        else:
            _info(f"{key}: {n} samples, skipped")
    _info(f"trained {len(registry.models)} models, skipped {len(registry.skipped_categories)}")
    _info(f"wrote {path} and {manifest_path(path)}")
    return 0


def _read_tail(path) -> list[float]:
    lines = _need_file(path).read_text().split()
    try:
        return [float(x) for x in lines]
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_predict(run: Run) -> int:
    run.require("registry", "history")
    registry = load_registry(_need_file(run.registry))
    history = read_volatility(_need_file(run.history))
    tail = _read_tail(run.tail) if run.tail else []
    outcome = predict_next(registry, history, tail, int(run.horizon))
    text = outcome.render()
    sys.stdout.write(text)
    record = {"status": str(outcome.status), "last_peak_index": outcome.last_peak_index,
              "pattern": None if outcome.pattern is None else str(outcome.pattern),
              "partial_length": outcome.partial_length,
              "quantiles": list(outcome.forecast.quantiles) if outcome.forecast else None,
              "forecast": outcome.forecast.values.tolist() if outcome.forecast else None}
    (run.out_dir / "prediction.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return 0


def _test_split(run: Run, series, registry):
    ts = series.value_timestamps
    if run.test_start is not None:
        start = int(run.test_start)
    elif run.train_end is not None:
        start = int(run.train_end) + 1
    elif registry is not None and registry.provenance is not None:
        start = registry.provenance.end_timestamp + 1
    else:
        start = int(ts[ev.split_index_for(series, float(run.train_fraction))])
    m = int(np.searchsorted(ts, start, side="left"))
    if m >= len(series):
        raise InsufficientDataError(f"no test values at or after {start}")
    if m == 0:
        return None, series
    return series.split(m)


def cmd_backtest(run: Run) -> int:
    run.require("volatility")
    model = str(run.model)
    if model not in ("adaptive", "naive", "buyhold"):
        raise UsageError(f"--model must be adaptive, naive or buyhold, not {model!r}")
    series = read_volatility(_need_file(run.volatility))
    registry = None
    if model == "adaptive":
        run.require("registry")
        registry = load_registry(_need_file(run.registry))
    warmup, test = _test_split(run, series, registry)
    if model == "buyhold":
        report = ev.buyhold_report(test.prices, float(run.capital))
    else:
        result = ev.walk_forward_backtest(registry, test, int(run.horizon), warmup, model,
                                          float(run.capital))
        report = result.report()
    report["config"]["test_range"] = [int(test.value_timestamps[0]), int(test.value_timestamps[-1])]
    json_path, text_path = ev.write_report(report, run.out_dir, f"backtest_{model}")
    sys.stdout.write(ev.render_report(report))
    _info(f"wrote {json_path} and {text_path}")
    return 0


def cmd_synth(run: Run) -> int:
    spec = ev.SyntheticSpec.read(_need_file(run.spec)) if run.spec else ev.SyntheticSpec()
    seed = int(run.seed) if run.explicit_seed else spec.seed
    corpus = ev.generate_synthetic(spec, seed)
    out = run.out_dir
    path = out / "synthetic.csv"
    corpus.write(path)
    _info(f"wrote {len(corpus.candles)} candles to {path}")
    _info(f"planted segments: {len(corpus.truth['boundaries'])}")
    return 0


def cmd_report(run: Run) -> int:
    run.require("reports")
    reports = [json.loads(_need_file(p.strip()).read_text()) for p in str(run.reports).split(",")
               if p.strip()]
    metrics = [r["metrics"] for r in reports if r.get("metrics")]
    trading: dict[str, dict] = {}
    for r in reports:
        for row in r.get("trading", []):
            trading.setdefault(row["strategy"], row)
    summary = {"metrics": metrics, "trading": list(trading.values())}
    text = "".join(ev.render_report({"metrics": m, "trading": []}) for m in metrics)
    text += ev.render_report({"trading": summary["trading"]})
    out = run.out_dir
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return 0


COMMANDS = {"ingest": cmd_ingest, "segment": cmd_segment, "train": cmd_train,
            "predict": cmd_predict, "backtest": cmd_backtest, "synth": cmd_synth,
            "report": cmd_report}

HELP = {
    "ingest": "resample raw candles and compute the volatility series",
    "segment": "segment a volatility series and report pattern categories",
    "train": "train one model per pattern category and write the registry",
    "predict": "dispatch one prediction for the current partial segment",
    "backtest": "walk-forward directional and trading evaluation",
    "synth": "generate a synthetic corpus with planted pattern responses",
    "report": "merge backtest reports into one summary",
}


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=default, help="random seed (default: 0)")
    parser.add_argument("--out", default=default, help="output directory (default: .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-tft", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ALL:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        _global_flags(p, suppress=True)
        for o in OPTIONS:
            if name not in o.commands:
                continue
            shown = ",".join(map(str, o.default)) if isinstance(o.default, tuple) else o.default
            p.add_argument(f"--{o.name}", type=o.type, default=None,
                           help=f"{o.help} (default: {shown})")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = Run(args)
        return COMMANDS[args.command](run)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AdaptiveTFTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
