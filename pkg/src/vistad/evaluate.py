"""Contextual precision/recall/F1 over anomaly intervals.

A predicted interval is a true positive when it shares at least one integer
index with any ground-truth interval; it is a false positive when it overlaps
none. A ground-truth interval overlapped by no prediction is a false
negative. No interval padding is applied. Note the asymmetry: TP counts
predicted intervals while FN counts ground-truth intervals, so recall mixes
bases; this is implemented exactly as defined, with a ground-truth-based TP
variant available for cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detections import Detections, intervals_overlap
from .errors import InvalidArgumentError
from .screen import extract_intervals, smooth_ewma, threshold

Interval = tuple[int, int]


def alpha_key(alpha: float) -> str:
    return repr(float(alpha))


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn}


def contextual_counts(pred, gt) -> Counts:
    """Count TP/FP over predicted intervals and FN over ground-truth intervals."""
    pred = list(pred)
    gt = list(gt)
    tp = sum(1 for p in pred if any(intervals_overlap(p, g) for g in gt))
    fp = len(pred) - tp
    fn = sum(1 for g in gt if not any(intervals_overlap(g, p) for p in pred))
    return Counts(tp, fp, fn)


def gt_based_counts(pred, gt) -> Counts:
    """Cross-check variant: TP counts ground-truth intervals hit by a prediction."""
    pred = list(pred)
    gt = list(gt)
    tp = sum(1 for g in gt if any(intervals_overlap(g, p) for p in pred))
    fp = sum(1 for p in pred if not any(intervals_overlap(p, g) for g in gt))
    fn = len(gt) - tp
    return Counts(tp, fp, fn)


def prf(counts: Counts) -> tuple[float, float, float]:
    """Precision, recall and F1 with the 0/0 -> 0 convention."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _metric_row(counts: Counts, extra: dict | None = None) -> dict:
    precision, recall, f1 = prf(counts)
    row = {**counts.to_json(), "precision": precision, "recall": recall, "f1": f1}
    if extra:
        row.update(extra)
    return row


def evaluate_score_series(
    score: np.ndarray,
    gt: list[Interval],
    alphas,
    ewma_span: int | None = None,
    gap_merge: int = 0,
) -> dict:
    """Sweep the Gaussian-threshold alphas over a continuous score series.

    Smoothing (when a span is given) happens once before the sweep; each
    alpha thresholds, extracts intervals and scores them. F1-max is the
    maximum F1 across the sweep.
    """
    if not len(list(alphas)):
        raise InvalidArgumentError("alpha sweep must be nonempty")
    s = smooth_ewma(np.asarray(score, dtype=np.float64), ewma_span) if ewma_span else np.asarray(score, dtype=np.float64)
    per_alpha = {}
    for alpha in alphas:
        tau = threshold(s, alpha)
        detected = extract_intervals(s, tau, gap_merge)
        counts = contextual_counts(detected.intervals, gt)
        per_alpha[alpha_key(alpha)] = _metric_row(
            counts, {"tau": tau, "intervals": detected.to_json()}
        )
    f1_max = max(row["f1"] for row in per_alpha.values())
    return {"per_alpha": per_alpha, "f1_max": f1_max}


def evaluate_detection_sets(per_alpha_sets: dict[str, Detections], gt: list[Interval]) -> dict:
    """Score already-binary detection sets (one per operating point) by raw F1."""
    per_alpha = {}
    for key, det in per_alpha_sets.items():
        counts = contextual_counts(det.intervals, gt)
        per_alpha[key] = _metric_row(counts, {"intervals": det.to_json()})
    f1_max = max((row["f1"] for row in per_alpha.values()), default=0.0)
    return {"per_alpha": per_alpha, "f1_max": f1_max}


def aggregate(series_results: list[dict]) -> dict:
    """Pool per-series counts into per-dataset metrics plus a mean/std summary.

    Each input row carries {"dataset", "series_id", "per_alpha": {key:
    {tp, fp, fn, ...}}}. Counts are pooled per dataset and alpha before
    computing precision/recall/F1, and the dataset's F1-max is the maximum
    pooled F1 over the sweep. The summary averages F1-max across datasets.
    """
    if not series_results:
        raise InvalidArgumentError("nothing to aggregate")
    datasets: dict[str, dict[str, Counts]] = {}
    series_count: dict[str, int] = {}
    for row in series_results:
        name = row.get("dataset", "all")
        bucket = datasets.setdefault(name, {})
        series_count[name] = series_count.get(name, 0) + 1
        for key, metrics in row["per_alpha"].items():
            counts = Counts(metrics["tp"], metrics["fp"], metrics["fn"])
            bucket[key] = bucket.get(key, Counts()) + counts

    out: dict = {"datasets": {}, "summary": {}}
    f1_maxes = []
    for name in sorted(datasets):
        per_alpha = {key: _metric_row(c) for key, c in sorted(datasets[name].items())}
        f1_max = max(row["f1"] for row in per_alpha.values())
        f1_maxes.append(f1_max)
        out["datasets"][name] = {
            "per_alpha": per_alpha,
            "f1_max": f1_max,
            "n_series": series_count[name],
        }
    arr = np.array(f1_maxes, dtype=np.float64)
    out["summary"] = {"f1_max_mean": float(arr.mean()), "f1_max_std": float(arr.std())}
    return out


def render_report_table(report: dict) -> str:
    """Aligned plain-text table: one dataset per row, F1 per alpha, then F1-max,
    with the mean/std summary line underneath."""
    alpha_keys: list[str] = []
    for info in report["datasets"].values():
        for key in info["per_alpha"]:
            if key not in alpha_keys:
                alpha_keys.append(key)
    alpha_keys.sort(key=lambda k: -float(k))

    header = ["dataset", "series"]
    header += [f"F1@a={k}" for k in alpha_keys]
    header += ["F1-max"]
    rows = [header]
    for name, info in report["datasets"].items():
        row = [name, str(info["n_series"])]
        for key in alpha_keys:
            cell = info["per_alpha"].get(key)
            row.append(f"{cell['f1']:.3f}" if cell else "-")
        row.append(f"{info['f1_max']:.3f}")
        rows.append(row)

    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    summary = report["summary"]
    lines.append("")
    lines.append(f"mean+/-std of F1-max across datasets: "
                 f"{summary['f1_max_mean']:.3f} +/- {summary['f1_max_std']:.3f}")
    return "\n".join(lines) + "\n"
