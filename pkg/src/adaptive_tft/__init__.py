"""Adaptive, pattern-conditioned TFT forecasting for crypto price series."""

from .categorization import PatternKey, encode_binary, extract_end_pattern, group_by_pattern, key_space
from .data_ingest import (CandleSeries, GapReport, VolatilitySeries, compute_volatility, parse_candles,
                          read_candles, resample, volatility_rate)
from .registry import ModelRegistry, PredictionOutcome, Status, load_registry, predict_next, \
    save_registry, train_all
from .segmentation import PeakTracker, SegmentationConfig, compute_rise, find_last_peak_index, \
    find_relative_extrema, segment

__version__ = "0.1.0"
