"""Result plots: score series with thresholds and detected vs true intervals."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def plot_detection(
    values: np.ndarray,
    score: np.ndarray,
    taus: dict[str, float],
    detected: list[tuple[int, int]],
    ground_truth: list[tuple[int, int]] | None,
    path,
    title: str = "",
) -> None:
    """Two stacked panels: the series with interval shading, and the score
    with one horizontal line per threshold."""
    fig, (ax_sig, ax_score) = plt.subplots(
        2, 1, figsize=(12, 5), sharex=True, height_ratios=[2, 1]
    )
    t = np.arange(len(values))
    ax_sig.plot(t, values, lw=0.7, color="black")
    for s, e in ground_truth or []:
        ax_sig.axvspan(s, e + 1, color="tab:red", alpha=0.25, lw=0)
    for s, e in detected:
        ax_sig.axvspan(s, e + 1, color="tab:blue", alpha=0.25, lw=0)
    ax_sig.set_ylabel("value")
    if title:
        ax_sig.set_title(title)

    ax_score.plot(np.arange(len(score)), score, lw=0.7, color="tab:purple")
    for key, tau in taus.items():
        ax_score.axhline(tau, lw=0.7, ls="--", color="gray")
        ax_score.annotate(f"a={key}", (len(score) - 1, tau), fontsize=6, ha="right")
    ax_score.set_ylabel("score")
    ax_score.set_xlabel("time step")

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
