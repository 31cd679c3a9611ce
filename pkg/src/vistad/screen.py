"""Visual screening: multi-scale cross-patch scoring of window rasters.

Pipeline per series: pool each window's patch feature map at several kernel
sizes, score every patch by its best cosine match against patches of other
windows (position-free), fuse the per-scale scores harmonically, fold the
patch scores back onto the time axis, collapse to a 1-D score with a row
quantile, smooth, threshold at Gaussian tail quantiles and extract the
exceedance intervals as anomaly proposals.

Two scoring variants exist: the all-pairs form matches against each other
window separately and takes the median across windows (more sensitive, keeps
every pairwise comparison alive), and the median-reference form matches once
against an element-wise median reference grid (much smaller working set).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter
from scipy.special import ndtri

from .detections import Detections, merge_intervals
from .errors import InsufficientWindowsError, InvalidArgumentError
from .raster import WindowSpec, make_windows, render_window, window_segment

log = logging.getLogger(__name__)

FUSE_EPS = 1e-8


def pool_multiscale(fmap: np.ndarray, kernels) -> dict[int, np.ndarray]:
    """Average-pool the P x P x D map with each kernel size at stride 1.

    Kernel k yields a (P-k+1) x (P-k+1) x D map whose cells are the
    arithmetic block means; k=1 is the unpooled base map.
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    P = fmap.shape[0]
    out: dict[int, np.ndarray] = {}
    for k in sorted({int(k) for k in kernels}):
        if k < 1 or k > P:
            raise InvalidArgumentError(f"kernel {k} outside [1, {P}]")
        if k == 1:
            out[k] = fmap
        else:
            windows = sliding_window_view(fmap, (k, k), axis=(0, 1))
            out[k] = windows.mean(axis=(-2, -1))
    return out


def flatten_grid(pooled: np.ndarray) -> np.ndarray:
    """Row-major flatten of an m x m x D map into (m*m, D) patch vectors."""
    m = pooled.shape[0]
    return pooled.reshape(m * m, pooled.shape[2])


def cosine_dissimilarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise 1 - cos between row vectors of a (n, D) and b (m, D).

    The cosine of a zero vector against anything is defined as 0, so its
    dissimilarity is 1.
    """
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.outer(na, nb)
    dots = a @ b.T
    cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    return 1.0 - cos


def score_all_pairs(grids: list[np.ndarray], i: int) -> np.ndarray:
    """Score each patch of window i as the median over other windows of its
    best (minimum) cosine dissimilarity to any patch there."""
    if len(grids) < 2:
        raise InsufficientWindowsError("all-pairs scoring needs at least 2 windows")
    mins = [
        cosine_dissimilarity(grids[i], grids[j]).min(axis=1)
        for j in range(len(grids))
        if j != i
    ]
    return np.median(np.stack(mins, axis=0), axis=0)


def median_reference_grid(grids: list[np.ndarray]) -> np.ndarray:
    """Element-wise median over windows, per patch slot and dimension."""
    return np.median(np.stack(grids, axis=0), axis=0)


def score_median_reference(grids: list[np.ndarray], i: int, exclude_self: bool = False) -> np.ndarray:
    """Score each patch of window i against the shared median reference grid.

    The reference median runs over all windows, window i included; pass
    exclude_self=True for the leave-one-out alternative. Even window counts
    use the lower-upper midpoint median.
    """
    if len(grids) < 2:
        raise InsufficientWindowsError("median-reference scoring needs at least 2 windows")
    pool = [g for j, g in enumerate(grids) if j != i] if exclude_self else grids
    reference = median_reference_grid(pool)
    return cosine_dissimilarity(grids[i], reference).min(axis=1)


def upsample_bilinear(grid: np.ndarray, out_side: int) -> np.ndarray:
    """Bilinear upsample of a square map with corner alignment (identity when
    sizes already match)."""
    m = grid.shape[0]
    if m == out_side:
        return grid.copy()
    if m == 1:
        return np.full((out_side, out_side), float(grid[0, 0]))
    src = np.arange(out_side, dtype=np.float64) * (m - 1) / (out_side - 1)
    i0 = np.minimum(np.floor(src).astype(int), m - 2)
    frac = src - i0
    rows = grid[i0, :] * (1 - frac)[:, None] + grid[i0 + 1, :] * frac[:, None]
    return rows[:, i0] * (1 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :]


def fuse_scales(scores: dict[int, np.ndarray], patch_grid: int) -> np.ndarray:
    """Harmonic fusion of per-scale score vectors into one P x P map.

    Each scale's vector is reshaped to its (P-k+1) square, upsampled to the
    base patch resolution, then combined as |K| / sum_k 1/(S_k + eps); the
    eps keeps exact zeros (duplicate windows) finite while still letting
    them dominate the fusion.
    """
    if not scores:
        raise InvalidArgumentError("no scales to fuse")
    upsampled = []
    for k, vec in scores.items():
        side = patch_grid - k + 1
        grid = np.asarray(vec, dtype=np.float64).reshape(side, side)
        upsampled.append(upsample_bilinear(grid, patch_grid))
    stack = np.stack(upsampled, axis=0)
    return len(upsampled) / np.sum(1.0 / (stack + FUSE_EPS), axis=0)


@dataclass
class AnomalyMap:
    """Patch-row scores unfolded onto the time axis.

    ``counts`` tracks how many window patches contributed to each cell;
    cells with count 0 (possible only for degenerate layouts) are excluded
    from downstream statistics.
    """

    values: np.ndarray  # (P, T)
    counts: np.ndarray  # (P, T)


def assemble_map(fused_maps: list[np.ndarray], spec: WindowSpec, patch_grid: int) -> AnomalyMap:
    """Map fused patch scores back to time indices, averaging overlaps.

    Patch column c of the window starting at w covers time indices
    [w + c*block, w + (c+1)*block) where block = window_length / patch_grid.
    Padded columns (when the series is shorter than one window) contribute
    nothing.
    """
    if spec.window_length % patch_grid != 0:
        raise InvalidArgumentError(
            f"window length {spec.window_length} not divisible by patch grid {patch_grid}"
        )
    if len(fused_maps) != spec.N:
        raise InvalidArgumentError("need one fused map per window")
    block = spec.window_length // patch_grid
    sums = np.zeros((patch_grid, spec.T))
    counts = np.zeros((patch_grid, spec.T))
    for fused, start in zip(fused_maps, spec.starts):
        limit = start + spec.valid_length(start)
        for c in range(patch_grid):
            t0 = start + c * block
            t1 = min(start + (c + 1) * block, limit)
            if t0 >= t1:
                break
            sums[:, t0:t1] += fused[:, c][:, None]
            counts[:, t0:t1] += 1.0
    values = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return AnomalyMap(values, counts)


def collapse(amap: AnomalyMap, q: float) -> np.ndarray:
    """Collapse the 2-D map to s(t) with the per-column row quantile q
    (linear interpolation at rank (n-1)q over the covered rows)."""
    if not 0.0 <= q <= 1.0:
        raise InvalidArgumentError(f"quantile must lie in [0, 1], got {q}")
    P, T = amap.values.shape
    if np.all(amap.counts > 0):
        # usual case: every cell covered, quantile over whole columns at once
        return np.quantile(amap.values, q, axis=0)
    s = np.zeros(T)
    for t in range(T):
        covered = amap.counts[:, t] > 0
        if not covered.any():
            log.warning("time index %d has no covering window; score set to 0", t)
            continue
        s[t] = np.quantile(amap.values[covered, t], q)
    return s


def smooth_ewma(s: np.ndarray, span: int) -> np.ndarray:
    """Recursive exponentially weighted moving average with weight 2/(span+1),
    seeded at the first sample (span=1 is the identity)."""
    if span < 1:
        raise InvalidArgumentError(f"span must be >= 1, got {span}")
    s = np.asarray(s, dtype=np.float64)
    w = 2.0 / (span + 1)
    if w == 1.0:
        return s.copy()
    y, _ = lfilter([w], [1.0, -(1.0 - w)], s, zi=[(1.0 - w) * s[0]])
    return y


def threshold(s: np.ndarray, alpha: float) -> float:
    """Gaussian tail threshold tau = mean + z_alpha * std of the score series.

    With zero variance tau equals the mean, so the strict exceedance test
    downstream flags nothing.
    """
    if not 0.0 < alpha < 0.5:
        raise InvalidArgumentError(f"alpha must lie in (0, 0.5), got {alpha}")
    s = np.asarray(s, dtype=np.float64)
    return float(s.mean() + ndtri(1.0 - alpha) * s.std())


def extract_intervals(s: np.ndarray, tau: float, gap_merge: int = 0) -> Detections:
    """Maximal runs of strict exceedance s(t) > tau, inclusive endpoints.

    Runs separated by <= gap_merge steps are merged; the default 0 merges
    nothing.
    """
    idx = np.flatnonzero(np.asarray(s) > tau)
    if idx.size == 0:
        return Detections([])
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    intervals = list(zip(starts.tolist(), ends.tolist()))
    return Detections(merge_intervals(intervals, gap_merge))


@dataclass
class ScreenResult:
    """Everything the screening stage produces for one series."""

    score: np.ndarray  # collapsed s(t), pre-smoothing
    smoothed: np.ndarray  # series actually thresholded
    taus: dict[float, float]
    proposals: dict[float, Detections]
    anomaly_map: AnomalyMap
    window_spec: WindowSpec


@dataclass
class ScreenSettings:
    """Knobs of the screening stage; defaults follow the main configuration."""

    window_length: int = 224
    stride: int | None = None  # None -> window_length // 4
    scales: tuple[int, ...] = (1, 2, 3)
    quantile_q: float = 0.25
    variant: str = "median-reference"  # or "all-pairs"
    exclude_self: bool = False
    ewma_enabled: bool = True
    ewma_span: int = 10
    alpha_list: tuple[float, ...] = (0.10, 0.01, 0.001)
    gap_merge: int = 0

    def __post_init__(self):
        if self.variant not in ("median-reference", "all-pairs"):
            raise InvalidArgumentError(f"unknown scoring variant {self.variant!r}")


def screen_series(
    values: np.ndarray,
    provider,
    settings: ScreenSettings | None = None,
    on_raster=None,
) -> ScreenResult:
    """Run the full screening stage on one (already preprocessed) series.

    ``on_raster(start, raster)`` is an optional callback for persisting the
    window rasters as they are produced.
    """
    settings = settings or ScreenSettings()
    values = np.asarray(values, dtype=np.float64)
    T = values.shape[0]
    spec = make_windows(T, settings.window_length, settings.stride)
    if spec.N < 2:
        raise InsufficientWindowsError(
            f"series of length {T} yields {spec.N} window(s); cross-window scoring needs >= 2"
        )

    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        hi = lo + 1.0

    patch_grid = provider.id.patch_grid
    grids: dict[int, list[np.ndarray]] = {int(k): [] for k in settings.scales}
    for start in spec.starts:
        seg = window_segment(values, start, settings.window_length)
        raster = render_window(seg, (lo, hi), settings.window_length, spec.valid_length(start))
        if on_raster is not None:
            on_raster(start, raster)
        fmap = provider.embed(raster)
        pooled = pool_multiscale(fmap, settings.scales)
        for k, pk in pooled.items():
            grids[k].append(flatten_grid(pk))

    references = None
    if settings.variant == "median-reference" and not settings.exclude_self:
        references = {k: median_reference_grid(g) for k, g in grids.items()}

    fused_maps = []
    for i in range(spec.N):
        scores = {}
        for k in grids:
            if settings.variant == "all-pairs":
                scores[k] = score_all_pairs(grids[k], i)
            elif references is not None:
                scores[k] = cosine_dissimilarity(grids[k][i], references[k]).min(axis=1)
            else:
                scores[k] = score_median_reference(grids[k], i, exclude_self=True)
        fused_maps.append(fuse_scales(scores, patch_grid))

    amap = assemble_map(fused_maps, spec, patch_grid)
    score = collapse(amap, settings.quantile_q)
    smoothed = smooth_ewma(score, settings.ewma_span) if settings.ewma_enabled else score.copy()

    taus: dict[float, float] = {}
    proposals: dict[float, Detections] = {}
    for alpha in settings.alpha_list:
        tau = threshold(smoothed, alpha)
        taus[alpha] = tau
        proposals[alpha] = extract_intervals(smoothed, tau, settings.gap_merge)
    return ScreenResult(score, smoothed, taus, proposals, amap, spec)
