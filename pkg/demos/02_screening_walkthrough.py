"""
Screening, one step at a time
=============================

The same computation `screen_series` runs in one call, unrolled so every
intermediate tensor can be inspected: embeddings, multi-scale pooling,
cross-patch scores, harmonic fusion, the 2-D anomaly map, and the collapsed
1-D score with its Gaussian thresholds.
"""

import numpy as np

from vistad.embed import ReferenceProvider
from vistad.raster import make_windows, render_window, window_segment
from vistad.screen import (
    assemble_map,
    collapse,
    extract_intervals,
    flatten_grid,
    fuse_scales,
    median_reference_grid,
    cosine_dissimilarity,
    pool_multiscale,
    smooth_ewma,
    threshold,
)
from vistad.synthetic import make_series
from vistad.ingest import TimeSeries, preprocess

rng = np.random.default_rng(1)
values, labels = make_series(rng, T=2000)
x = preprocess(TimeSeries("walkthrough", values)).values
print(f"ground truth: {labels}")

provider = ReferenceProvider(patch_grid=14, input_side=224)
spec = make_windows(len(x), 224, 56)
limits = (float(x.min()), float(x.max()))

# 1. embed every window and pool at kernel sizes 1 (base), 2 and 3
grids = {1: [], 2: [], 3: []}
for start in spec.starts:
    seg = window_segment(x, start, 224)
    fmap = provider.embed(render_window(seg, limits, 224, spec.valid_length(start)))
    pooled = pool_multiscale(fmap, [1, 2, 3])
    for k, pk in pooled.items():
        grids[k].append(flatten_grid(pk))
print(f"{spec.N} windows embedded; base map {provider.id.patch_grid}x{provider.id.patch_grid}"
      f"x{provider.id.dim}, pooled sides {[14 - k + 1 for k in (1, 2, 3)]}")

# 2. median-reference scoring: one elementwise-median reference grid per
# scale, then every patch keeps its best cosine match against it
references = {k: median_reference_grid(g) for k, g in grids.items()}
fused_maps = []
for i in range(spec.N):
    per_scale = {
        k: cosine_dissimilarity(grids[k][i], references[k]).min(axis=1) for k in grids
    }
    # 3. harmonic fusion upsamples each scale back to 14x14 and lets small
    # (agreeing) scores dominate
    fused_maps.append(fuse_scales(per_scale, 14))

# 4. patch scores fold back onto the time axis, averaging window overlaps
amap = assemble_map(fused_maps, spec, 14)
print(f"anomaly map {amap.values.shape}, cell range [{amap.values.min():.4f}, {amap.values.max():.4f}]")

# 5. collapse rows to a 1-D score; the reference features are patch-local,
# so whitespace rows sit at exactly zero and we read a high row quantile
score = collapse(amap, q=0.75)
smoothed = smooth_ewma(score, span=10)

# 6. Gaussian tail thresholds and exceedance intervals
for alpha in (0.10, 0.01, 0.001):
    tau = threshold(smoothed, alpha)
    found = extract_intervals(smoothed, tau)
    print(f"alpha={alpha:<6} tau={tau:.5f} intervals={found.intervals}")
