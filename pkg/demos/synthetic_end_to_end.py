"""Plant four pattern responses, train the registry and compare with persistence.

Takes under half a minute with the default hyperparameters.

    python3 demos/synthetic_end_to_end.py [sigma]
"""

import sys

from adaptive_tft.evaluation import SyntheticSpec, generate_synthetic, split_index_for, \
    walk_forward_backtest
from adaptive_tft.forecaster import HyperParams
from adaptive_tft.registry import train_all
from adaptive_tft.segmentation import SegmentationConfig

sigma = float(sys.argv[1]) if len(sys.argv) > 1 else 0.0
spec = SyntheticSpec(sigma=sigma, n_segments=200, seed=0)
corpus = generate_synthetic(spec)
series = corpus.series
print(f"{len(corpus.truth['boundaries'])} planted segments, {len(series)} steps, sigma {sigma}")

train, test = series.split(split_index_for(series, 0.7))
registry = train_all(train, SegmentationConfig(spec.threshold), spec.p_len, HyperParams(),
                     min_samples=20, log=print)

ours = walk_forward_backtest(registry, test, warmup=train)
base = walk_forward_backtest(None, test, warmup=train, model="naive")
for name, res in (("adaptive", ours), ("persistence", base)):
    m = res.metrics
    print(f"{name:12s} accuracy {m.accuracy:6.2f}%  on {m.signaled} signals  "
          f"final value {res.ledger.final_value:10.2f}")
