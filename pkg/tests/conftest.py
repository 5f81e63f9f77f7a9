import numpy as np
import pytest

from adaptive_tft.categorization import key_space
from adaptive_tft.forecaster import HyperParams
from adaptive_tft.forecaster.model import ForecastModel, NormStats, init_params
from adaptive_tft.registry import ModelRegistry, RegistryConfig, Provenance
from adaptive_tft.segmentation import SegmentationConfig

_RESULTS: dict[int, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, [title, True])
    if report.failed:
        entry[1] = False


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, ok = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}")


def random_model(key_int: int, hp: HyperParams) -> ForecastModel:
    rng = np.random.default_rng(1000 + key_int)
    return ForecastModel(init_params(hp, rng), hp, NormStats(0.0, 1.0), [0.5])


def fake_registry(keys, p_len=5, threshold=1.5, hidden_dim=4, end_timestamp=0) -> ModelRegistry:
    """Registry of untrained models; enough for routing tests."""
    hp = HyperParams(hidden_dim=hidden_dim, num_heads=1, p_len=p_len, max_epochs=1)
    models = {k: random_model(k.as_int, hp) for k in keys}
    cfg = RegistryConfig(SegmentationConfig(threshold), p_len, hp, 1)
    return ModelRegistry(models, cfg, [], Provenance(0, 0, end_timestamp, end_timestamp, 0),
                         {k: 1 for k in keys})


@pytest.fixture
def all_keys_registry():
    return fake_registry(key_space(5))
