"""Walk a short price path through volatility, segmentation and pattern keys.

    python3 demos/segmentation_walkthrough.py
"""

import numpy as np

from adaptive_tft.categorization import encode_binary, group_by_pattern
from adaptive_tft.data_ingest import VolatilitySeries
from adaptive_tft.segmentation import PeakTracker, SegmentationConfig, segment

prices = [100, 99, 98.5, 99.2, 100.4, 101.9, 101.0, 100.2, 100.9, 102.6, 103.8, 103.1,
          102.0, 101.7, 102.4, 104.5, 104.0]
series = VolatilitySeries.from_prices(prices)
print("volatility (% per step):", np.round(series.values, 3).tolist())

cfg = SegmentationConfig(threshold=1.5)
result = segment(series, cfg)
for s in result.completed:
    print(f"segment [{s.start_index}, {s.end_index}]  trough {s.trough_index}  "
          f"rise {s.rise:.2f}%  end pattern {encode_binary(s.values[-5:])}")
print("partial tail starts at", result.tail_start, "->", np.round(result.tail, 3).tolist())

# the tracker sees one price at a time and agrees with the batch answer
tracker = PeakTracker(cfg)
for p in prices:
    tracker.append(p)
print("streaming last peak:", tracker.last_peak_index, "batch:", result.last_peak_index)

# each segment is filed under the pattern that closed the one before it
for key, ds in group_by_pattern(result.completed, 5).items():
    print(f"category {key}: {len(ds.members)} member(s)")
