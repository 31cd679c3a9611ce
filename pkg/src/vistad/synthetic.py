"""Synthetic series with injected anomalies, for demos and self-contained tests."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .ingest import TimeSeries, write_labels, write_series


def make_series(
    rng: np.random.Generator,
    T: int = 2000,
    period: int = 500,
    amplitude: float = 0.25,
    base: float = 0.5,
    noise: float = 0.003,
    spike_height: float = 0.45,
    spike_width: int = 3,
    shift_height: float = 0.25,
    shift_len: int = 50,
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """A noisy sinusoid with one short spike and one flat level shift injected.

    The defaults keep the seasonal slope gentle (under a pixel per step at
    screening resolution) while both anomalies rise well above the band, so
    their rasters contain tall vertical strokes that no normal window can
    match. The two anomalies never overlap and keep away from the series
    edges. Returns (values, ground-truth intervals).
    """
    t = np.arange(T)
    phase = rng.uniform(0, 2 * np.pi)
    values = base + amplitude * np.sin(2 * np.pi * t / period + phase)
    values += rng.normal(0.0, noise, size=T)

    # one anomaly per half of the series (random order) keeps them apart for any T
    margin = min(max(100, period // 2), T // 6)
    buffer = T // 20
    half = T // 2
    first = (margin, half - buffer)
    second = (half + buffer, T - margin)
    if rng.random() < 0.5:
        first, second = second, first
    spike_at = int(rng.integers(first[0], first[1] - spike_width))
    shift_at = int(rng.integers(second[0], second[1] - shift_len))

    values[spike_at : spike_at + spike_width] = base + amplitude + spike_height
    values[shift_at : shift_at + shift_len] = (
        base + amplitude + shift_height + rng.normal(0.0, noise, size=shift_len)
    )

    labels = sorted(
        [(spike_at, spike_at + spike_width - 1), (shift_at, shift_at + shift_len - 1)]
    )
    return values, labels


def write_suite(
    root: str | Path,
    n_series: int = 20,
    T: int = 2000,
    seed: int = 7,
    dataset: str = "synthetic",
    **series_kwargs,
) -> Path:
    """Write n_series CSVs, their label files and a manifest; returns the
    manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_series):
        values, labels = make_series(rng, T=T, **series_kwargs)
        sid = f"series_{i:03d}"
        write_series(TimeSeries(sid, values), root / f"{sid}.csv")
        write_labels(labels, root / f"{sid}.labels.json")
        entries.append(
            {"series": f"{sid}.csv", "labels": f"{sid}.labels.json", "dataset": dataset}
        )
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=2))
    return manifest
