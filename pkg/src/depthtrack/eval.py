"""Detection and tracking scores against ground-truth boxes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .depth_io import Box, BoxRecord, GroundTruth


@dataclass(frozen=True)
class DetectionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("detection counts must be non-negative")

    def __add__(self, other: "DetectionCounts") -> "DetectionCounts":
        return DetectionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class SrCurve:
    points: tuple[tuple[float, float], ...]

    @property
    def thresholds(self) -> list[float]:
        return [r for r, _ in self.points]

    @property
    def rates(self) -> list[float]:
        return [sr for _, sr in self.points]

    def is_monotone(self) -> bool:
        return all(b <= a for a, b in zip(self.rates, self.rates[1:]))


def overlap_ratio(t: Box, g: Box) -> float:
    """Intersection over union of two pixel-aligned boxes."""
    if t.area <= 0 or g.area <= 0:
        raise ValueError("overlap ratio is undefined for zero-area boxes")
    iw = min(t.x + t.w, g.x + g.w) - max(t.x, g.x)
    ih = min(t.y + t.h, g.y + g.h) - max(t.y, g.y)
    inter = max(iw, 0) * max(ih, 0)
    return inter / (t.area + g.area - inter)


def _greedy_pairs(pred: Sequence[Box], gt: Sequence[Box]) -> list[tuple[int, int, float]]:
    """One-to-one pairs ``(pred_idx, gt_idx, r)`` by descending overlap, positive overlaps only."""
    scored = []
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            r = overlap_ratio(p, g)
            if r > 0:
                scored.append((-r, i, j))
    scored.sort()
    used_p, used_g, out = set(), set(), []
    for neg_r, i, j in scored:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        out.append((i, j, -neg_r))
    return out


def match_detections(pred: Sequence[Box], gt: Sequence[Box], r_min: float = 0.5) -> DetectionCounts:
    """Greedy one-to-one matching; a pair with overlap >= ``r_min`` is a true positive."""
    if not 0 < r_min <= 1:
        raise ValueError("r_min must lie in (0, 1]")
    tp = sum(1 for _, _, r in _greedy_pairs(pred, gt) if r >= r_min)
    return DetectionCounts(tp, len(pred) - tp, len(gt) - tp)


def f1_score(counts: DetectionCounts) -> tuple[float, float, float]:
    """``(precision, recall, f1)``; empty denominators count as 0."""
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    return p, r, f1_from(p, r)


def f1_from(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _by_frame(records: Iterable[BoxRecord]) -> dict[int, list[Box]]:
    out: dict[int, list[Box]] = {}
    for rec in records:
        if rec.status == "lost":
            continue
        out.setdefault(rec.frame_index, []).append(rec.box)
    return out


def frame_overlaps(tracks: Iterable[BoxRecord], gt: GroundTruth) -> list[float]:
    """Best-match overlap for every (frame, ground-truth object); 0 when unmatched."""
    if len(gt) == 0:
        raise ValueError("ground truth is empty")
    pred = _by_frame(tracks)
    out = []
    for f in gt.frame_indices():
        g = [box for _, box in gt.boxes(f)]
        got = [0.0] * len(g)
        for _, j, r in _greedy_pairs(pred.get(f, []), g):
            got[j] = r
        out.extend(got)
    return out


def success_rate(tracks: Iterable[BoxRecord], gt: GroundTruth, r_min: float = 0.5) -> float:
    """Fraction of (frame, object) pairs whose matched track box has overlap strictly above ``r_min``."""
    rs = frame_overlaps(tracks, gt)
    return sum(1 for r in rs if r > r_min) / len(rs)


def sr_curve(tracks: Iterable[BoxRecord], gt: GroundTruth, thresholds: Sequence[float]) -> SrCurve:
    if list(thresholds) != sorted(thresholds) or any(not 0 <= t <= 1 for t in thresholds):
        raise ValueError("thresholds must be ascending within [0, 1]")
    rs = frame_overlaps(list(tracks), gt)
    return SrCurve(tuple((float(t), sum(1 for r in rs if r > t) / len(rs)) for t in thresholds))


DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))
