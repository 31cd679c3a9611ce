"""Deterministic rasterization of series windows and the annotated full-series plot.

Screening rasters are square, axis-free line plots: one pixel column per time
step, dark line (0.0) on a light background (1.0), no anti-aliasing, so that
identical inputs produce bit-identical pixels on every platform. All windows of
a series share the same y-limits so that equal shapes rasterize equally
regardless of where they sit in the series.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import InvalidArgumentError

BG = 1.0  # background intensity (light)
FG = 0.0  # line intensity (dark)


@dataclass
class WindowSpec:
    """Rolling-window layout over a series of length T."""

    T: int
    window_length: int
    stride: int
    starts: list[int] = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.starts)

    def valid_length(self, start: int) -> int:
        """Number of real (non-padded) samples in the window at ``start``."""
        return min(self.window_length, self.T - start)


def make_windows(T: int, window_length: int, stride: int | None = None) -> WindowSpec:
    """Enumerate overlapping window starts covering every index in [0, T).

    Regular starts are 0, stride, 2*stride, ... up to T - window_length; when
    the last regular window stops short of T-1 a terminal window starting at
    T - window_length is appended so the tail is covered. A series shorter
    than one window yields a single (right-padded) window at start 0.
    """
    if T <= 0:
        raise InvalidArgumentError(f"series length must be positive, got {T}")
    if window_length < 8:
        raise InvalidArgumentError(f"window length must be >= 8, got {window_length}")
    if stride is None:
        stride = window_length // 4
    if stride < 1:
        raise InvalidArgumentError(f"stride must be >= 1, got {stride}")

    if T < window_length:
        return WindowSpec(T, window_length, stride, [0])

    last_regular = T - window_length
    starts = list(range(0, last_regular + 1, stride))
    if starts[-1] + window_length - 1 < T - 1:
        starts.append(T - window_length)
    return WindowSpec(T, window_length, stride, starts)


def window_segment(values: np.ndarray, start: int, window_length: int) -> np.ndarray:
    """Slice one window, right-padding with the last value when the series ends."""
    seg = values[start : start + window_length]
    if seg.shape[0] < window_length:
        pad = np.full(window_length - seg.shape[0], seg[-1])
        seg = np.concatenate([seg, pad])
    return seg


@dataclass
class RasterImage:
    """A grayscale pixel grid in [0, 1]; row 0 is the top.

    Stored single-channel; the three identical channels required by image
    encoders are produced on export. ``valid_width`` marks how many columns
    correspond to real samples (columns beyond it render padding).
    """

    pixels: np.ndarray
    valid_width: int | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise InvalidArgumentError("raster pixels must be a 2-D grid")
        if self.valid_width is None:
            self.valid_width = self.pixels.shape[1]

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    def to_rgb(self) -> np.ndarray:
        """H x W x 3 uint8 with identical channels."""
        gray = np.floor(self.pixels * 255.0 + 0.5).astype(np.uint8)
        return np.repeat(gray[:, :, None], 3, axis=2)

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.to_rgb(), mode="RGB").save(buf, format="PNG")
        return buf.getvalue()

    def save(self, path) -> None:
        Image.fromarray(self.to_rgb(), mode="RGB").save(path, format="PNG")

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "RasterImage":
        img = Image.open(io.BytesIO(data)).convert("RGB")
        arr = np.asarray(img, dtype=np.float64)[:, :, 0] / 255.0
        return cls(arr)

    def content_key(self) -> bytes:
        return self.pixels.tobytes()


def _value_to_row(value: float, lo: float, hi: float, height: int) -> int:
    """Map a value to a pixel row: hi -> 0 (top), lo -> height-1 (bottom).

    Rounds half up via floor(x + 0.5) to stay platform-deterministic."""
    frac = (hi - value) / (hi - lo)
    row = int(np.floor(frac * (height - 1) + 0.5))
    return min(max(row, 0), height - 1)


def render_window(
    segment: np.ndarray,
    y_limits: tuple[float, float],
    window_length: int,
    valid_length: int | None = None,
) -> RasterImage:
    """Rasterize one window as a square dark-on-light line plot.

    Sample c lands in pixel column c at the row given by its value under the
    shared y-limits. Consecutive samples are connected by filling, in the
    current column, the rows strictly between the previous and current row,
    so column c's dark pixels depend only on samples c-1 and c. No axes,
    ticks or legends are drawn.
    """
    segment = np.asarray(segment, dtype=np.float64)
    if segment.shape[0] != window_length:
        raise InvalidArgumentError(
            f"segment length {segment.shape[0]} != window length {window_length}"
        )
    lo, hi = float(y_limits[0]), float(y_limits[1])
    if not lo < hi:
        raise InvalidArgumentError(f"y-limits must satisfy lo < hi, got ({lo}, {hi})")

    pixels = np.full((window_length, window_length), BG)
    prev_row: int | None = None
    for c in range(window_length):
        row = _value_to_row(segment[c], lo, hi, window_length)
        pixels[row, c] = FG
        if prev_row is not None and abs(row - prev_row) > 1:
            lo_r, hi_r = sorted((prev_row, row))
            pixels[lo_r + 1 : hi_r, c] = FG
        prev_row = row
    return RasterImage(pixels, valid_width=valid_length if valid_length is not None else window_length)


@dataclass
class AnnotatedPlotSpec:
    """Canvas geometry for the full-series plot read by the verification model."""

    width: int = 1024
    height: int = 512
    tick_count: int = 11
    y_precision: int = 2

    def tick_positions(self, T: int) -> list[int]:
        """Evenly spaced time indices with endpoints pinned to 0 and T-1."""
        if self.tick_count < 2:
            raise InvalidArgumentError("tick count must be >= 2")
        span = T - 1
        return [int(np.floor(i * span / (self.tick_count - 1) + 0.5)) for i in range(self.tick_count)]


def render_full_annotated(values: np.ndarray, spec: AnnotatedPlotSpec | None = None) -> RasterImage:
    """Render the whole series onto one canvas with x ticks and y value labels.

    The series is down-mapped to the canvas width; each pixel column shows
    the min-max band of the samples it covers, so single-sample spikes stay
    visible at any compression ratio. X ticks are labeled with their time
    indices, the y axis with its min/mid/max values.
    """
    spec = spec or AnnotatedPlotSpec()
    if spec.width < 64 or spec.height < 64:
        raise InvalidArgumentError(f"canvas {spec.width}x{spec.height} below the 64x64 minimum")
    values = np.asarray(values, dtype=np.float64)
    T = values.shape[0]
    if T < 2:
        raise InvalidArgumentError("need at least 2 samples to plot")

    W, H = spec.width, spec.height
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        hi = lo + 1.0  # flat series: draw the midline

    # Per-column min-max band over the samples assigned to each column.
    cols = (np.arange(T, dtype=np.int64) * W) // T
    rows = np.array([_value_to_row(v, lo, hi, H) for v in values])
    band_lo = np.full(W, -1, dtype=np.int64)
    band_hi = np.full(W, -1, dtype=np.int64)
    for c, r in zip(cols, rows):
        if band_lo[c] < 0:
            band_lo[c] = band_hi[c] = r
        else:
            band_lo[c] = min(band_lo[c], r)
            band_hi[c] = max(band_hi[c], r)

    # Sparse series (T < W): interpolate empty columns between sampled ones.
    filled = np.flatnonzero(band_lo >= 0)
    for a, b in zip(filled[:-1], filled[1:]):
        if b - a > 1:
            ra = (band_lo[a] + band_hi[a]) / 2.0
            rb = (band_lo[b] + band_hi[b]) / 2.0
            for c in range(a + 1, b):
                frac = (c - a) / (b - a)
                r = int(np.floor(ra * (1 - frac) + rb * frac + 0.5))
                band_lo[c] = band_hi[c] = r

    pixels = np.full((H, W), BG)
    prev_lo = prev_hi = None
    for c in range(W):
        if band_lo[c] < 0:
            continue
        lo_r, hi_r = int(band_lo[c]), int(band_hi[c])
        pixels[lo_r : hi_r + 1, c] = FG
        # connect to the previous column's band when they do not touch
        if prev_lo is not None:
            if lo_r > prev_hi + 1:
                pixels[prev_hi + 1 : lo_r, c] = FG
            elif hi_r < prev_lo - 1:
                pixels[hi_r + 1 : prev_lo, c] = FG
        prev_lo, prev_hi = lo_r, hi_r

    img = Image.fromarray(np.floor(pixels * 255.0 + 0.5).astype(np.uint8), mode="L")
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()

    for t in spec.tick_positions(T):
        c = int((t * W) // T)
        c = min(c, W - 1)
        draw.line([(c, H - 6), (c, H - 1)], fill=0)
        label = str(t)
        tw = draw.textlength(label, font=font)
        x = min(max(c - tw / 2, 0), W - tw)
        draw.text((x, H - 20), label, fill=0, font=font)

    fmt = f"{{:.{spec.y_precision}f}}"
    for frac, v in ((0.0, hi), (0.5, (lo + hi) / 2.0), (1.0, lo)):
        y = int(frac * (H - 1))
        y = min(max(y - 6, 0), H - 13)
        draw.text((2, y), fmt.format(v), fill=0, font=font)

    out = np.asarray(img, dtype=np.float64) / 255.0
    return RasterImage(out)
