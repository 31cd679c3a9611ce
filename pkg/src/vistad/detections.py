"""Interval containers and set algebra shared by screening, verification and scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

Interval = tuple[int, int]


def intervals_overlap(a: Interval, b: Interval) -> bool:
    """True when the two inclusive intervals share at least one integer index."""
    return a[0] <= b[1] and b[0] <= a[1]


def sort_intervals(intervals: list[Interval]) -> list[Interval]:
    return sorted((int(s), int(e)) for s, e in intervals)


def merge_intervals(intervals: list[Interval], gap: int = 0) -> list[Interval]:
    """Merge sorted-or-unsorted intervals whose separation is <= gap steps.

    gap=0 merges only true overlaps (shared index); adjacent intervals
    (separation 1) stay distinct.
    """
    if not intervals:
        return []
    merged: list[Interval] = []
    for start, end in sort_intervals(intervals):
        if merged and start - merged[-1][1] - 1 <= gap:
            prev_s, prev_e = merged[-1]
            merged[-1] = (prev_s, max(prev_e, end))
        else:
            merged.append((start, end))
    return merged


def clamp_interval(start: int, end: int, t_max: int) -> Interval:
    """Clamp an inclusive interval into [0, t_max], swapping a reversed pair."""
    lo, hi = (start, end) if start <= end else (end, start)
    return (max(0, min(lo, t_max)), max(0, min(hi, t_max)))


@dataclass
class Detections:
    """An ordered, disjoint set of inclusive anomaly intervals.

    Confidences, when present, run parallel to ``intervals`` on the 1..3
    scale used by the verification stage.
    """

    intervals: list[Interval] = field(default_factory=list)
    confidences: list[int] | None = None

    def __post_init__(self):
        self.intervals = [(int(s), int(e)) for s, e in self.intervals]
        if self.confidences is not None:
            self.confidences = [int(c) for c in self.confidences]
            if len(self.confidences) != len(self.intervals):
                raise ValueError("confidence list length must match interval count")

    def __len__(self) -> int:
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def to_json(self) -> list[list[int]]:
        return [[s, e] for s, e in self.intervals]

    @classmethod
    def from_json(cls, pairs, confidences=None) -> "Detections":
        return cls([(int(p[0]), int(p[1])) for p in pairs], confidences)
