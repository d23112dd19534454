"""Frame-to-frame region mapping, ROI detection and motion direction."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .noise_filter import Region, RegionSet


class Cardinal(enum.Enum):
    NORTH = "N"
    EAST = "E"
    SOUTH = "S"
    WEST = "W"


_ORDER = (Cardinal.NORTH, Cardinal.EAST, Cardinal.SOUTH, Cardinal.WEST)
_OPPOSITE = {
    Cardinal.NORTH: Cardinal.SOUTH,
    Cardinal.SOUTH: Cardinal.NORTH,
    Cardinal.EAST: Cardinal.WEST,
    Cardinal.WEST: Cardinal.EAST,
}


@dataclass(frozen=True)
class CardinalDirection:
    """One cardinal point or two adjacent ones (e.g. North-East)."""

    points: frozenset

    def __post_init__(self):
        pts = frozenset(self.points)
        object.__setattr__(self, "points", pts)
        if not 1 <= len(pts) <= 2 or not all(isinstance(p, Cardinal) for p in pts):
            raise ValueError("a direction holds one or two cardinal points")
        if len(pts) == 2:
            a, b = pts
            if _OPPOSITE[a] is b:
                raise ValueError(f"{a.name} and {b.name} are opposite, not adjacent")

    @classmethod
    def of(cls, *points: Cardinal) -> "CardinalDirection":
        return cls(frozenset(points))

    @classmethod
    def parse(cls, text: str) -> "CardinalDirection":
        return cls(frozenset(Cardinal(ch) for ch in text.upper()))

    def __contains__(self, point: Cardinal) -> bool:
        return point in self.points

    def __iter__(self):
        return (p for p in _ORDER if p in self.points)

    def __str__(self) -> str:
        return "".join(p.value for p in self)


def overlap(a: Region, b: Region) -> int:
    """Number of pixels shared by two regions of same-sized frames."""
    at, al, ab, ar = a.bbox
    bt, bl, bb, br = b.bbox
    t, l, btm, r = max(at, bt), max(al, bl), min(ab, bb), min(ar, br)
    if t >= btm or l >= r:
        return 0
    ma = a.mask[t - at : btm - at, l - al : r - al]
    mb = b.mask[t - bt : btm - bt, l - bl : r - bl]
    return int(np.count_nonzero(ma & mb))


def displacement(a: Region, b: Region) -> int:
    """Pixels of ``b`` not covered by ``a``: ``|mask(b) \\ mask(a)|``."""
    return b.area - overlap(a, b)


@dataclass(frozen=True)
class MappedPair:
    prev_id: int
    curr_id: int
    overlap: int
    displacement: int
    moving: bool


@dataclass
class RegionMapping:
    """Association of closed regions between two consecutive frames."""

    prev: RegionSet
    curr: RegionSet
    pairs: list[MappedPair] = field(default_factory=list)
    delta: float = 80

    @property
    def frames(self) -> tuple[int, int]:
        return self.prev.frame_index, self.curr.frame_index

    def forward(self) -> dict[int, MappedPair]:
        return {p.prev_id: p for p in self.pairs}

    def backward(self) -> dict[int, MappedPair]:
        return {p.curr_id: p for p in self.pairs}

    def unmatched_prev(self) -> list[int]:
        got = {p.prev_id for p in self.pairs}
        return [r.id for r in self.prev.closed() if r.id not in got]

    def unmatched_curr(self) -> list[int]:
        got = {p.curr_id for p in self.pairs}
        return [r.id for r in self.curr.closed() if r.id not in got]


def _closed_labels(rs: RegionSet) -> np.ndarray:
    closed = np.zeros(int(rs.labels.max()) + 1, dtype=bool)
    for r in rs.closed():
        closed[r.id] = True
    return np.where(closed[rs.labels], rs.labels, 0)


def overlap_table(prev: RegionSet, curr: RegionSet) -> dict[tuple[int, int], int]:
    """Pixel overlap of every intersecting ``(prev_id, curr_id)`` closed pair."""
    if prev.shape != curr.shape:
        raise ValueError("region sets come from differently sized frames")
    a = _closed_labels(prev).ravel().astype(np.int64)
    b = _closed_labels(curr).ravel().astype(np.int64)
    both = (a > 0) & (b > 0)
    if not both.any():
        return {}
    base = int(b.max()) + 1
    keys, counts = np.unique(a[both] * base + b[both], return_counts=True)
    return {(int(k // base), int(k % base)): int(c) for k, c in zip(keys, counts)}


def map_regions(prev: RegionSet, curr: RegionSet, delta: float = 80) -> RegionMapping:
    """Greedy one-to-one association by largest mask overlap.

    Pairs are taken in order of decreasing overlap, then smaller
    displacement, then lower ids. Only overlapping regions are associated.
    A pair is *moving* when its displacement exceeds ``delta``.
    """
    table = overlap_table(prev, curr)
    areas = {r.id: r.area for r in curr.closed()}
    ranked = sorted(
        ((ov, areas[c] - ov, p, c) for (p, c), ov in table.items()),
        key=lambda t: (-t[0], t[1], t[2], t[3]),
    )
    used_p, used_c = set(), set()
    pairs = []
    for ov, disp, p, c in ranked:
        if p in used_p or c in used_c:
            continue
        used_p.add(p)
        used_c.add(c)
        pairs.append(MappedPair(p, c, ov, disp, disp > delta))
    pairs.sort(key=lambda m: m.prev_id)
    return RegionMapping(prev, curr, pairs, delta)


def estimate_direction(prev: Region, curr: Region) -> CardinalDirection | None:
    """Direction of motion from ``prev`` to ``curr`` on the 4-point compass.

    The pixels gained (``curr`` minus ``prev``) are reduced to their centroid
    and compared with the centroid of ``curr``. Offsets within 22.5 degrees
    of an axis give one cardinal point, others the two adjacent ones. North
    is decreasing row, East increasing column. Returns ``None`` when the
    gained pixels are balanced around the centre (pure growth).

    Raises:
        ValueError: if ``curr`` gains no pixels over ``prev``.
    """
    t = min(prev.top, curr.top)
    l = min(prev.left, curr.left)
    b = max(prev.bbox[2], curr.bbox[2])
    r = max(prev.bbox[3], curr.bbox[3])
    shape = (b - t, r - l)
    pm = np.zeros(shape, dtype=bool)
    cm = np.zeros(shape, dtype=bool)
    pm[prev.top - t : prev.bbox[2] - t, prev.left - l : prev.bbox[3] - l] = prev.mask
    cm[curr.top - t : curr.bbox[2] - t, curr.left - l : curr.bbox[3] - l] = curr.mask
    gained = cm & ~pm
    if not gained.any():
        raise ValueError("zero displacement: no direction of motion")
    gr, gc = np.nonzero(gained)
    cr, cc = np.nonzero(cm)
    north = -(gr.mean() - cr.mean())
    east = gc.mean() - cc.mean()
    if math.hypot(north, east) < 1e-6:
        return None
    angle = math.degrees(math.atan2(north, east)) % 360.0
    # sector centres: E=0, N=90, W=180, S=270
    axes = [(0.0, Cardinal.EAST), (90.0, Cardinal.NORTH), (180.0, Cardinal.WEST), (270.0, Cardinal.SOUTH), (360.0, Cardinal.EAST)]
    for centre, point in axes:
        if abs(angle - centre) <= 22.5:
            return CardinalDirection.of(point)
    if angle < 90:
        return CardinalDirection.of(Cardinal.NORTH, Cardinal.EAST)
    if angle < 180:
        return CardinalDirection.of(Cardinal.NORTH, Cardinal.WEST)
    if angle < 270:
        return CardinalDirection.of(Cardinal.SOUTH, Cardinal.WEST)
    return CardinalDirection.of(Cardinal.SOUTH, Cardinal.EAST)


@dataclass
class RoiCandidate:
    """A chain of mapped regions and the displacement accumulated along it."""

    lineage: list[tuple[int, int]]
    steps: list[int]
    roi_threshold: float
    direction: CardinalDirection | None = None

    @property
    def accumulated(self) -> int:
        return sum(self.steps)

    @property
    def is_roi(self) -> bool:
        return self.accumulated > self.roi_threshold

    @property
    def last(self) -> tuple[int, int]:
        return self.lineage[-1]


def detect_rois(mappings: Sequence[RegionMapping], roi_threshold: float = 70) -> list[RoiCandidate]:
    """Chain consecutive mappings into lineages and flag ROIs.

    Each lineage sums the per-step displacement of its mapped pairs; it is an
    ROI when the sum exceeds ``roi_threshold``. A region missing from the next
    mapping ends its lineage; regions first seen mid-window start new ones.
    """
    if not mappings:
        raise ValueError("ROI detection needs at least two frames")
    open_lineages: dict[int, RoiCandidate] = {}
    finished: list[RoiCandidate] = []
    last_step: dict[int, tuple[Region, Region]] = {}
    for m in mappings:
        f0, f1 = m.frames
        nxt: dict[int, RoiCandidate] = {}
        for pair in m.pairs:
            cand = open_lineages.pop(pair.prev_id, None)
            if cand is None:
                cand = RoiCandidate([(f0, pair.prev_id)], [], roi_threshold)
            cand.lineage.append((f1, pair.curr_id))
            cand.steps.append(pair.displacement)
            if pair.displacement > 0:
                last_step[id(cand)] = (m.prev[pair.prev_id], m.curr[pair.curr_id])
            nxt[pair.curr_id] = cand
        finished.extend(open_lineages.values())
        open_lineages = nxt
    result = finished + list(open_lineages.values())
    for cand in result:
        step = last_step.get(id(cand))
        if step is not None:
            cand.direction = estimate_direction(*step)
    result.sort(key=lambda c: (c.lineage[0][0], c.last[0], c.last[1]))
    return result
