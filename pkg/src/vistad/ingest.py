"""Loading and preprocessing of univariate series.

The preprocessing chain is: min-max normalization to [0, 1], removal of a
least-squares linear trend, and (only when a changepoint is known) per-segment
standardization. Detrended values may leave [0, 1]; the renderer's shared
y-limits absorb the range, so no re-normalization happens here.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvalidArgumentError,
    InvalidValueError,
    MalformedInputError,
    SeriesTooShortError,
)


@dataclass
class TimeSeries:
    """A named 1-D real-valued signal sampled at integer steps 0..T-1."""

    id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise InvalidArgumentError(f"series {self.id!r} must be 1-D")

    @property
    def T(self) -> int:
        return int(self.values.shape[0])


@dataclass
class ManifestEntry:
    series: Path
    labels: Path | None = None
    changepoint: int | None = None
    dataset: str = "all"
    id: str | None = None

    @property
    def series_id(self) -> str:
        return self.id if self.id is not None else self.series.stem


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)


_MANIFEST_KEYS = {"series", "labels", "changepoint", "dataset", "id"}


def load_series(path: str | Path, format: str = "csv") -> TimeSeries:
    """Read a two-column ``timestamp,value`` CSV into a TimeSeries.

    Values keep file order; the timestamp column is only required to be
    present, not interpreted. Parse failures name the offending line.
    """
    if format != "csv":
        raise InvalidArgumentError(f"unsupported series format {format!r}")
    path = Path(path)
    if not path.exists():
        raise MalformedInputError(f"series file not found: {path}")

    values: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                continue  # header row
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise MalformedInputError(f"{path}: line {lineno}: expected 2 columns, got {len(row)}")
            try:
                values.append(float(row[1]))
            except ValueError:
                raise MalformedInputError(f"{path}: line {lineno}: non-numeric value {row[1]!r}") from None
    if len(values) < 2:
        raise SeriesTooShortError(f"{path}: series has {len(values)} samples, need at least 2")
    return TimeSeries(id=path.stem, values=np.array(values, dtype=np.float64))


def write_series(series: TimeSeries, path: str | Path) -> None:
    """Write ``timestamp,value`` CSV; floats use repr so load round-trips bit-exactly."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value"])
        for t, v in enumerate(series.values):
            writer.writerow([t, repr(float(v))])


def load_labels(path: str | Path) -> list[tuple[int, int]]:
    """Read ground-truth intervals from a JSON list of {"start", "end"} objects."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedInputError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, list):
        raise MalformedInputError(f"{path}: expected a JSON list of intervals")
    intervals = []
    for i, obj in enumerate(raw):
        try:
            s, e = int(obj["start"]), int(obj["end"])
        except (KeyError, TypeError, ValueError):
            raise MalformedInputError(f"{path}: entry {i} is not {{start, end}}") from None
        if s > e:
            raise MalformedInputError(f"{path}: entry {i} has start > end")
        intervals.append((s, e))
    return sorted(intervals)


def write_labels(intervals: list[tuple[int, int]], path: str | Path) -> None:
    Path(path).write_text(json.dumps([{"start": s, "end": e} for s, e in intervals], indent=2))


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a JSON manifest; relative paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedInputError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, list):
        raise MalformedInputError(f"{path}: manifest must be a JSON list")
    base = path.parent
    entries = []
    for i, obj in enumerate(raw):
        unknown = set(obj) - _MANIFEST_KEYS
        if unknown:
            raise MalformedInputError(f"{path}: entry {i} has unknown keys {sorted(unknown)}")
        if "series" not in obj:
            raise MalformedInputError(f"{path}: entry {i} is missing 'series'")
        series = base / obj["series"]
        labels = base / obj["labels"] if obj.get("labels") else None
        entries.append(
            ManifestEntry(
                series=series,
                labels=labels,
                changepoint=obj.get("changepoint"),
                dataset=obj.get("dataset", "all"),
                id=obj.get("id"),
            )
        )
    return DatasetManifest(entries)


def _require_finite(series: TimeSeries) -> None:
    if not np.all(np.isfinite(series.values)):
        raise InvalidValueError(f"series {series.id!r} contains non-finite values")


def normalize_minmax(series: TimeSeries) -> TimeSeries:
    """Scale to [0, 1]; a constant series maps to 0.5 everywhere."""
    _require_finite(series)
    x = series.values
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        out = np.full_like(x, 0.5)
    else:
        out = (x - lo) / (hi - lo)
    return TimeSeries(series.id, out)


def detrend_linear(series: TimeSeries) -> TimeSeries:
    """Subtract the ordinary least-squares line fitted over t = 0..T-1."""
    _require_finite(series)
    x = series.values
    t = np.arange(x.shape[0], dtype=np.float64)
    slope, intercept = np.polyfit(t, x, 1)
    return TimeSeries(series.id, x - (slope * t + intercept))


def standardize_segments(series: TimeSeries, changepoint: int) -> TimeSeries:
    """Independently standardize [0, changepoint) and [changepoint, T).

    Uses the population (1/N) standard deviation; a zero-variance segment
    maps to all zeros.
    """
    _require_finite(series)
    T = series.T
    if not 0 < changepoint < T:
        raise InvalidArgumentError(f"changepoint {changepoint} outside (0, {T})")
    out = series.values.copy()
    for seg in (slice(0, changepoint), slice(changepoint, T)):
        segment = out[seg]
        mu = segment.mean()
        sigma = segment.std()
        out[seg] = (segment - mu) / sigma if sigma > 0 else 0.0
    return TimeSeries(series.id, out)


def preprocess(series: TimeSeries, changepoint: int | None = None) -> TimeSeries:
    """Apply the full chain: normalize, detrend, then segment-standardize when a
    changepoint is supplied (changepoints are given, never detected)."""
    out = detrend_linear(normalize_minmax(series))
    if changepoint is not None:
        out = standardize_segments(out, changepoint)
    return out
