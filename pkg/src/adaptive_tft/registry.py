"""Per-pattern model registry: training every category and dispatching predictions."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import archive
from .categorization import PatternKey, encode_binary, group_by_pattern
from .data_ingest import VolatilitySeries
from .errors import InsufficientDataError, NoTrainableCategoriesError
from .forecaster import ForecastModel, HyperParams, NormStats, QuantileForecast, naive_predict, predict
from .forecaster.training import train
from .segmentation import PeakTracker, SegmentationConfig, segment

DEFAULT_MIN_SAMPLES = 20


class Status(str, enum.Enum):
    FORECAST = "Forecast"
    NO_PEAK_YET = "NoPeakYet"
    UNSEEN_PATTERN = "UnseenPattern"
    EMPTY_PARTIAL = "EmptyPartial"
    UNPATTERNABLE_PREDECESSOR = "UnpatternablePredecessor"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class PredictionOutcome:
    status: Status
    forecast: QuantileForecast | None = None
    last_peak_index: int | None = None
    pattern: PatternKey | None = None
    partial_length: int = 0

    def __post_init__(self):
        if (self.forecast is not None) != (self.status is Status.FORECAST):
            raise ValueError("a forecast is present exactly when status is Forecast")

    def render(self) -> str:
        lines = [f"status: {self.status}"]
        if self.last_peak_index is not None:
            lines.append(f"last_peak_index: {self.last_peak_index}")
        if self.pattern is not None:
            lines.append(f"pattern: {self.pattern}")
        lines.append(f"partial_length: {self.partial_length}")
        if self.forecast is not None:
            q = ",".join(str(x) for x in self.forecast.quantiles)
            lines.append(f"quantiles: {q}")
            for h, row in enumerate(self.forecast.values, 1):
                lines.append(f"step {h}: " + ",".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RegistryConfig:
    segmentation: SegmentationConfig = SegmentationConfig()
    p_len: int = 5
    hp: HyperParams = HyperParams()
    min_samples: int = DEFAULT_MIN_SAMPLES

    def to_dict(self) -> dict:
        return {"threshold": self.segmentation.threshold,
                "neighborhood": self.segmentation.neighborhood,
                "p_len": self.p_len, "min_samples": self.min_samples,
                "hyperparameters": self.hp.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RegistryConfig":
        return cls(SegmentationConfig(d["threshold"], d["neighborhood"]), d["p_len"],
                   HyperParams.from_dict(d["hyperparameters"]), d["min_samples"])


@dataclass(frozen=True)
class Provenance:
    """Span of the training data, by value index and by value timestamp."""

    start_index: int
    end_index: int
    start_timestamp: int
    end_timestamp: int
    seed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ModelRegistry:
    models: dict[PatternKey, ForecastModel]
    config: RegistryConfig
    skipped_categories: list[tuple[PatternKey, int]] = field(default_factory=list)
    provenance: Provenance | None = None
    sample_counts: dict[PatternKey, int] = field(default_factory=dict)
    unpatternable: int = 0

    def __len__(self) -> int:
        return len(self.models)

    def __contains__(self, key) -> bool:
        return key in self.models

    def manifest(self) -> dict:
        prov = self.provenance.to_dict() if self.provenance else None
        return {
            "format_version": archive.FORMAT_VERSION,
            "config": self.config.to_dict(),
            "threshold": self.config.segmentation.threshold,
            "p_len": self.config.p_len,
            "seed": self.config.hp.seed,
            "training_range": prov,
            "sample_counts": {str(k): n for k, n in sorted(self.sample_counts.items())},
            "trained": [str(k) for k in sorted(self.models)],
            "skipped": [[str(k), n] for k, n in self.skipped_categories],
            "unpatternable": self.unpatternable,
            "final_losses": {str(k): m.final_loss for k, m in sorted(self.models.items())},
        }


def train_all(series: VolatilitySeries, config: SegmentationConfig = SegmentationConfig(),
              p_len: int = 5, hp: HyperParams = HyperParams(),
              min_samples: int = DEFAULT_MIN_SAMPLES, log: Callable[[str], None] | None = None
              ) -> ModelRegistry:
    """Segment, group by predecessor pattern and fit one model per category."""
    result = segment(series, config)
    if len(result.completed) < 2:
        raise InsufficientDataError(
            f"need at least 2 completed segments, found {len(result.completed)}")
    grouping = group_by_pattern(result.completed, p_len)
    models, skipped, counts = {}, [], {}
    for key, ds in grouping.items():
        counts[key] = len(ds.members)
        if len(ds.members) < min_samples:
            skipped.append((key, len(ds.members)))
            continue
        models[key] = train(ds, hp)
        if log:
            log(f"category {key}: {len(ds.members)} samples, final loss {models[key].final_loss:.6f}")
    if not models:
        raise NoTrainableCategoriesError(
            f"no trainable categories: every category has fewer than {min_samples} samples",
            skipped)
    ts = series.value_timestamps
    prov = Provenance(0, len(series) - 1, int(ts[0]), int(ts[-1]), hp.seed)
    return ModelRegistry(models, RegistryConfig(config, p_len, hp, min_samples), skipped, prov,
                         counts, grouping.skipped)


Forecaster = Callable[[ForecastModel, np.ndarray, int], QuantileForecast]


def dispatch(registry: ModelRegistry, values, last_segment: tuple[int, int] | None,
             horizon: int = 1, forecaster: Forecaster | None = None) -> PredictionOutcome:
    """Route one prediction request given the last completed segment.

    ``last_segment`` is ``(start, end)`` in value indices, or ``None`` when no
    peak has been confirmed.  The partial subseries is everything after
    ``end``.
    """
    if last_segment is None:
        return PredictionOutcome(Status.NO_PEAK_YET, partial_length=len(values))
    start, end = last_segment
    partial = np.asarray(values[end + 1:], dtype=float)
    p_len = registry.config.p_len
    if end - start + 1 < p_len:
        return PredictionOutcome(Status.UNPATTERNABLE_PREDECESSOR, last_peak_index=end,
                                 partial_length=len(partial))
    key = encode_binary(values[end + 1 - p_len:end + 1])
    model = registry.models.get(key)
    if model is None:
        return PredictionOutcome(Status.UNSEEN_PATTERN, last_peak_index=end, pattern=key,
                                 partial_length=len(partial))
    if len(partial) == 0:
        return PredictionOutcome(Status.EMPTY_PARTIAL, last_peak_index=end, pattern=key)
    fc = (forecaster or predict)(model, partial, horizon)
    return PredictionOutcome(Status.FORECAST, fc, end, key, len(partial))


def persistence_forecaster(model: ForecastModel, partial, horizon: int) -> QuantileForecast:
    return naive_predict(partial, horizon, model.hp.quantiles)


class AdaptivePredictor:
    """Incremental prediction state for one price stream.

    Prices are fed with :meth:`observe`; :meth:`predict` dispatches on the
    segmentation state so far.  Every dispatch is appended to
    :attr:`dispatch_log` as ``(n_values, status, key)``.
    """

    def __init__(self, registry: ModelRegistry, horizon: int = 1,
                 forecaster: Forecaster | None = None):
        self.registry = registry
        self.horizon = horizon
        self.forecaster = forecaster
        self.tracker = PeakTracker(registry.config.segmentation)
        self.values: list[float] = []
        self.dispatch_log: list[tuple[int, Status, PatternKey | None]] = []

    def observe(self, price: float) -> None:
        prices = self.tracker.prices
        if prices:
            self.values.append((price / prices[-1] - 1.0) * 100.0)
        self.tracker.append(price)

    def observe_many(self, prices) -> None:
        for p in prices:
            self.observe(float(p))

    def predict(self) -> PredictionOutcome:
        segs = self.tracker.segments
        last = (segs[-1][0], segs[-1][1]) if segs else None
        out = dispatch(self.registry, self.values, last, self.horizon, self.forecaster)
        self.dispatch_log.append((len(self.values), out.status, out.pattern))
        return out


def predict_next(registry: ModelRegistry, history: VolatilitySeries, new_points=(),
                 horizon: int = 1, forecaster: Forecaster | None = None) -> PredictionOutcome:
    """Append ``new_points`` (volatility values) to ``history`` and dispatch once."""
    if not registry.models:
        raise ValueError("registry has no models")
    prices = np.asarray(history.prices, dtype=float)
    extra = np.asarray(list(new_points), dtype=float)
    if len(extra):
        prices = np.concatenate([prices, prices[-1] * np.cumprod(1.0 + extra / 100.0)])
    predictor = AdaptivePredictor(registry, horizon, forecaster)
    predictor.observe_many(prices)
    return predictor.predict()


# ------------------------------------------------------------- persistence

def _model_meta(model: ForecastModel) -> dict:
    return {"hyperparameters": model.hp.to_dict(),
            "norm_stats": {"mean": model.norm_stats.mean, "std": model.norm_stats.std},
            "loss_history": list(model.loss_history)}


def registry_bytes(registry: ModelRegistry) -> bytes:
    tensors, models = {}, {}
    for key, model in sorted(registry.models.items()):
        models[str(key)] = _model_meta(model)
        for name, arr in model.params.items():
            tensors[f"{key}/{name}"] = arr
    meta = {"kind": "model_registry", "config": registry.config.to_dict(), "models": models,
            "skipped": [[str(k), n] for k, n in registry.skipped_categories],
            "sample_counts": {str(k): n for k, n in sorted(registry.sample_counts.items())},
            "unpatternable": registry.unpatternable,
            "provenance": registry.provenance.to_dict() if registry.provenance else None}
    return archive.dumps(meta, tensors)


def save_registry(registry: ModelRegistry, path: str | Path, manifest: bool = True) -> bytes:
    """Write the archive (and ``<path>.manifest.json`` alongside)."""
    blob = registry_bytes(registry)
    path = Path(path)
    path.write_bytes(blob)
    if manifest:
        manifest_path(path).write_text(json.dumps(registry.manifest(), indent=2, sort_keys=True) + "\n")
    return blob


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def load_registry(path: str | Path) -> ModelRegistry:
    meta, tensors = archive.read(path)
    return _from_archive(meta, tensors)


def loads_registry(blob: bytes) -> ModelRegistry:
    return _from_archive(*archive.loads(blob))


def _from_archive(meta: dict, tensors: dict) -> ModelRegistry:
    config = RegistryConfig.from_dict(meta["config"])
    models = {}
    for text, m in meta["models"].items():
        key = PatternKey.parse(text)
        params = {name.split("/", 1)[1]: arr for name, arr in tensors.items()
                  if name.split("/", 1)[0] == text}
        ns = m["norm_stats"]
        models[key] = ForecastModel(params, HyperParams.from_dict(m["hyperparameters"]),
                                    NormStats(ns["mean"], ns["std"]), list(m["loss_history"]))
    prov = Provenance(**meta["provenance"]) if meta.get("provenance") else None
    skipped = [(PatternKey.parse(k), n) for k, n in meta.get("skipped", [])]
    counts = {PatternKey.parse(k): n for k, n in meta.get("sample_counts", {}).items()}
    return ModelRegistry(models, config, skipped, prov, counts, meta.get("unpatternable", 0))
