"""
Preprocessing and rasterization
===============================

Build a synthetic series, run the preprocessing chain, and look at what the
vision stage actually sees: square window rasters and the annotated
full-series plot.
"""

from pathlib import Path

import numpy as np

from vistad.ingest import TimeSeries, detrend_linear, normalize_minmax, preprocess
from vistad.raster import AnnotatedPlotSpec, make_windows, render_full_annotated, render_window, window_segment
from vistad.synthetic import make_series

out = Path("demo_out/01")
out.mkdir(parents=True, exist_ok=True)

# a sinusoid with one spike and one level shift injected
rng = np.random.default_rng(0)
values, labels = make_series(rng, T=2000)
print(f"series of {len(values)} steps, ground truth anomalies at {labels}")

# preprocessing: scale to [0, 1], then remove the least-squares line.
# detrended values may leave [0, 1]; the renderer's shared y-limits absorb that.
series = TimeSeries("demo", values)
normalized = normalize_minmax(series)
detrended = detrend_linear(normalized)
print(f"after min-max:  range [{normalized.values.min():.3f}, {normalized.values.max():.3f}]")
print(f"after detrend:  range [{detrended.values.min():.3f}, {detrended.values.max():.3f}]"
      f", mean {detrended.values.mean():+.2e}")

# the one-call version of the same chain
x = preprocess(series).values

# slice into rolling windows: 224-px windows at quarter-window stride,
# plus a terminal window so the tail of the series is always covered
spec = make_windows(len(x), 224, 56)
print(f"{spec.N} windows, starts {spec.starts[:4]} ... {spec.starts[-1]}")

# every window is rendered with the SAME y-limits so identical shapes
# rasterize identically wherever they sit in the series
limits = (float(x.min()), float(x.max()))
for start in (spec.starts[0], spec.starts[len(spec.starts) // 2], spec.starts[-1]):
    seg = window_segment(x, start, 224)
    raster = render_window(seg, limits, 224, spec.valid_length(start))
    raster.save(out / f"win_{start}.png")
print(f"wrote 3 window rasters to {out}/")

# the verification stage sees one annotated plot of the whole series:
# x ticks labeled with time indices, y labeled at min/mid/max
plot = render_full_annotated(x, AnnotatedPlotSpec(width=1024, height=512, tick_count=11))
plot.save(out / "full.png")
print(f"wrote the annotated full-series plot to {out}/full.png")
