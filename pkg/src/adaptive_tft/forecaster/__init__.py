"""From-scratch numpy forecaster trained per pattern category."""

from .batching import MaskedBatch, pad_and_mask, relative_position
from .model import (ForecastModel, HyperParams, NormStats, QuantileForecast, naive_predict,
                    predict, quantile_loss)
from .training import train

__all__ = [
    "ForecastModel", "HyperParams", "MaskedBatch", "NormStats", "QuantileForecast",
    "naive_predict", "pad_and_mask", "predict", "quantile_loss", "relative_position", "train",
]
