"""Graph-guided ROI tracking with periodic ROI refresh and occlusion detection."""

from __future__ import annotations

import enum
import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .depth_io import Box, BoxRecord
from .noise_filter import EIGHT, Region, RegionSet
from .region_graph import RegionGraph, assign_weights, build_graph, candidate_regions, node_table
from .roi_detect import (
    CardinalDirection,
    RegionMapping,
    RoiCandidate,
    detect_rois,
    estimate_direction,
    map_regions,
    overlap,
)

logger = logging.getLogger(__name__)


class Status(enum.Enum):
    ACTIVE = "active"
    OCCLUDED = "occluded"
    LOST = "lost"


@dataclass
class TrackFrame:
    frame_index: int
    region: Region
    status: Status = Status.ACTIVE

    @property
    def area(self) -> int:
        return self.region.area

    @property
    def box(self) -> Box:
        return self.region.box


@dataclass
class RoiTrack:
    """One tracked ROI and its per-frame history."""

    track_id: int
    frames: list[TrackFrame] = field(default_factory=list)
    directions: list[CardinalDirection | None] = field(default_factory=list)
    status: Status = Status.ACTIVE
    region_id: int | None = None
    occluded_by: int | None = None
    occluded_since: int | None = None
    lost_at: int | None = None

    @property
    def current(self) -> TrackFrame:
        return self.frames[-1]

    @property
    def direction(self) -> CardinalDirection | None:
        return self.directions[-1] if self.directions else None

    @property
    def areas(self) -> list[int]:
        return [f.area for f in self.frames]

    def append(self, frame_index: int, region: Region, status: Status, direction=None) -> None:
        if self.frames and frame_index != self.frames[-1].frame_index + 1:
            raise ValueError(f"track {self.track_id}: frame {frame_index} does not extend its history")
        self.frames.append(TrackFrame(frame_index, region, status))
        self.directions.append(direction)

    def frame(self, frame_index: int) -> TrackFrame | None:
        if not self.frames:
            return None
        i = frame_index - self.frames[0].frame_index
        if 0 <= i < len(self.frames):
            return self.frames[i]
        return None

    def mask_at(self, frame_index: int, shape: tuple[int, int]) -> np.ndarray | None:
        tf = self.frame(frame_index)
        return None if tf is None else tf.region.full_mask(shape)


@dataclass
class OcclusionReport:
    frame_index: int
    occludee: int
    occluder: int
    gap: float
    area_change: float
    occluder_pixels: int
    occludee_pixels: int
    od: float
    flagged: bool


@dataclass(frozen=True)
class TrackParams:
    k: int = 5
    delta: float = 80
    roi_threshold: float = 70
    iota: float = 0.4
    optimize: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("K must be >= 2")
        if self.delta <= 0 or self.roi_threshold <= 0:
            raise ValueError("delta and roi_threshold must be positive")
        if not 0 < self.iota < 1:
            raise ValueError("iota must lie in (0, 1)")


@dataclass
class SearchStats:
    frame_index: int
    track_id: int
    full: int
    pruned: int
    examined: int


@dataclass
class TrackerState:
    params: TrackParams
    frame_index: int = -1
    tracks: dict[int, RoiTrack] = field(default_factory=dict)
    counter: int = 0
    history: deque = field(default_factory=deque)
    mappings: deque = field(default_factory=deque)
    reports: list[OcclusionReport] = field(default_factory=list)
    search: list[SearchStats] = field(default_factory=list)
    next_id: int = 1
    _graph: RegionGraph | None = None

    def active(self) -> list[RoiTrack]:
        return [t for _, t in sorted(self.tracks.items()) if t.status is Status.ACTIVE]

    def occluded(self) -> list[RoiTrack]:
        return [t for _, t in sorted(self.tracks.items()) if t.status is Status.OCCLUDED]

    def records(self) -> list[BoxRecord]:
        """Every (frame, track) record, ordered by frame then track id."""
        out = []
        for tr in self.tracks.values():
            for tf in tr.frames:
                out.append(BoxRecord(tf.frame_index, tr.track_id, tf.box, tf.status.value))
            if tr.lost_at is not None:
                out.append(BoxRecord(tr.lost_at, tr.track_id, tr.current.box, Status.LOST.value))
        out.sort(key=lambda r: (r.frame_index, r.object_id, r.status != Status.LOST.value))
        return out


# ---------------------------------------------------------------------------
# occlusion geometry


def _canvas(a: Region, b: Region, pad: int = 1):
    t = min(a.top, b.top) - pad
    l = min(a.left, b.left) - pad
    btm = max(a.bbox[2], b.bbox[2]) + pad
    r = max(a.bbox[3], b.bbox[3]) + pad
    shape = (btm - t, r - l)

    def paste(reg: Region) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        m[reg.top - t : reg.bbox[2] - t, reg.left - l : reg.bbox[3] - l] = reg.mask
        return m

    return paste(a), paste(b)


def region_gap(a: Region, b: Region) -> float:
    """Smallest centre distance between boundary pixels; 0 when the masks touch or overlap."""
    ma, mb = _canvas(a, b)
    if (ndimage.binary_dilation(ma, structure=EIGHT) & mb).any():
        return 0.0
    ba = np.argwhere(ma & ~ndimage.binary_erosion(ma, structure=EIGHT))
    bb = np.argwhere(mb & ~ndimage.binary_erosion(mb, structure=EIGHT))
    dist, _ = cKDTree(bb).query(ba, k=1)
    return float(dist.min())


def euclidean_gap(a: RoiTrack, b: RoiTrack) -> float:
    return region_gap(a.current.region, b.current.region)


def area_change(track: RoiTrack) -> int:
    """Absolute change of area between the last two frames of ``track``."""
    if len(track.frames) < 2:
        raise ValueError(f"track {track.track_id} needs two frames of history")
    return abs(track.frames[-1].area - track.frames[-2].area)


def relative_area_change(track: RoiTrack) -> float:
    """:func:`area_change` as a fraction of the previous area."""
    return area_change(track) / track.frames[-2].area


def occlusion_score(area_delta: float, gap: float) -> float:
    return area_delta / (math.exp(-abs(gap)) + 1.0)


def detect_occlusion(a: RoiTrack, b: RoiTrack, iota: float = 0.4, frame_index: int | None = None) -> OcclusionReport:
    """Score a pair of tracks for occlusion.

    The track whose area changed more is the occludee (ties go to the lower
    id). The score is computed from the occluder's relative area change, so
    it stays small while the occluder keeps a steady size. The pair is
    flagged when the masks touch, the score is below ``iota`` and the
    occludee's area changed strictly more than the occluder's.
    """
    da, db = area_change(a), area_change(b)
    if da > db or (da == db and a.track_id < b.track_id):
        occludee, occluder, d_occludee, d_occluder = a, b, da, db
    else:
        occludee, occluder, d_occludee, d_occluder = b, a, db, da
    gap = euclidean_gap(a, b)
    rel = relative_area_change(occluder)
    od = occlusion_score(rel, gap)
    flagged = gap == 0 and od < iota and d_occludee > d_occluder
    if frame_index is None:
        frame_index = a.current.frame_index
    return OcclusionReport(
        frame_index, occludee.track_id, occluder.track_id, gap, rel, d_occluder, d_occludee, od, flagged
    )


# ---------------------------------------------------------------------------
# tracking


def _spawn(state: TrackerState, cand: RoiCandidate) -> RoiTrack:
    by_frame = {rs.frame_index: rs for rs in state.history}
    track = RoiTrack(state.next_id)
    state.next_id += 1
    prev_region = None
    for f, rid in cand.lineage:
        region = by_frame[f][rid]
        direction = None
        if prev_region is not None and overlap(prev_region, region) < region.area:
            direction = estimate_direction(prev_region, region)
        elif track.directions:
            direction = track.directions[-1]
        track.append(f, region, Status.ACTIVE, direction)
        prev_region = region
    track.region_id = cand.last[1]
    state.tracks[track.track_id] = track
    logger.debug("frame %d: new track %d from region %d", state.frame_index, track.track_id, track.region_id)
    return track


def _window_rois(state: TrackerState) -> list[RoiCandidate]:
    mappings = list(state.mappings)[-(state.params.k - 1) :]
    cands = detect_rois(mappings, state.params.roi_threshold)
    return [c for c in cands if c.is_roi and c.last[0] == state.frame_index]


def init_tracker(frames: Sequence[RegionSet], params: TrackParams = TrackParams()) -> TrackerState:
    """Detect ROIs over the first K frames and track through frame K+1.

    Any frames beyond the first K+1 are stepped through as well.
    """
    k = params.k
    if len(frames) < k + 1:
        raise ValueError(f"need at least K+1 = {k + 1} frames, got {len(frames)}")
    state = TrackerState(params, history=deque(maxlen=k), mappings=deque(maxlen=k - 1))
    for i, rs in enumerate(frames[:k]):
        if state.history:
            state.mappings.append(map_regions(state.history[-1], rs, params.delta))
        state.history.append(rs)
        state.frame_index = rs.frame_index
    for cand in _window_rois(state):
        _spawn(state, cand)
    for rs in frames[k:]:
        step(state, rs)
    return state


def _whole_frame_candidates(curr: RegionSet) -> list[int]:
    return [r.id for r in curr.closed()]


def _propose(state: TrackerState, track: RoiTrack, prev: RegionSet, curr: RegionSet, mapping: RegionMapping):
    """Pick the region of ``curr`` that continues ``track``.

    Returns ``(region_id or None, overlap, SearchStats)``.
    """
    params = state.params
    last = track.current.region
    roi = track.region_id
    graph = state._graph
    full: set[int] = set()
    pruned: set[int] = set()
    if roi is not None and graph is not None and roi in graph:
        wg = assign_weights(graph, node_table(graph, roi))
        full = candidate_regions(wg, roi)
        pruned = candidate_regions(wg, roi, track.direction) if params.optimize else full
    if pruned:
        area = np.isin(graph.cells, sorted(pruned | {roi}))
        ids = np.unique(curr.labels[area])
        candidates = [int(i) for i in ids if i != 0 and curr[int(i)].is_closed]
    else:
        candidates = _whole_frame_candidates(curr)
    partner = mapping.forward().get(roi) if roi is not None else None
    if partner is not None and partner.curr_id not in candidates:
        candidates.append(partner.curr_id)
    best, best_key = None, None
    for cid in candidates:
        ov = overlap(last, curr[cid])
        if ov == 0:
            continue
        key = (-ov, curr[cid].area - ov, cid)
        if best_key is None or key < best_key:
            best, best_key = cid, key
    stats = SearchStats(curr.frame_index, track.track_id, len(full), len(pruned), len(candidates))
    return best, (0 if best_key is None else -best_key[0]), stats


def step(state: TrackerState, regions: RegionSet) -> tuple[TrackerState, list[BoxRecord]]:
    """Advance every track to the next frame's region set."""
    params = state.params
    prev = state.history[-1]
    if regions.shape != prev.shape:
        raise ValueError(f"frame size {regions.shape} differs from {prev.shape}")
    if state._graph is None:
        state._graph = build_graph(prev)
    mapping = map_regions(prev, regions, params.delta)
    f = regions.frame_index

    active = state.active()
    if params.workers > 1 and len(active) > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as pool:
            proposals = list(pool.map(lambda t: _propose(state, t, prev, regions, mapping), active))
    else:
        proposals = [_propose(state, t, prev, regions, mapping) for t in active]

    claimed: dict[int, int] = {}
    newly_lost: list[RoiTrack] = []
    order = sorted(range(len(active)), key=lambda i: (-proposals[i][1], active[i].track_id))
    for i in order:
        track, (best, _, stats) = active[i], proposals[i]
        state.search.append(stats)
        if best is None:
            track.status = Status.LOST
            track.lost_at = f
            track.region_id = None
            newly_lost.append(track)
            continue
        if best in claimed:
            track.status = Status.OCCLUDED
            track.occluded_by = claimed[best]
            track.occluded_since = f
            track.region_id = None
            track.append(f, track.current.region, Status.OCCLUDED, track.direction)
            continue
        claimed[best] = track.track_id
        region = regions[best]
        prev_region = track.current.region
        direction = track.direction
        if overlap(prev_region, region) < region.area:
            direction = estimate_direction(prev_region, region) or direction
        track.append(f, region, Status.ACTIVE, direction)
        track.region_id = best

    for track in state.occluded():
        if track.current.frame_index == f:
            continue
        frozen = track.current.region
        options = []
        for r in regions.closed():
            if r.id in claimed:
                continue
            ov = overlap(frozen, r)
            if ov > 0:
                options.append((-ov, r.id))
        occluder = state.tracks.get(track.occluded_by)
        reacquired = None
        for _, rid in sorted(options):
            if occluder is None or occluder.status is not Status.ACTIVE or region_gap(regions[rid], occluder.current.region) > 0:
                reacquired = rid
                break
        if reacquired is not None:
            claimed[reacquired] = track.track_id
            track.status = Status.ACTIVE
            track.occluded_by = track.occluded_since = None
            track.region_id = reacquired
            track.append(f, regions[reacquired], Status.ACTIVE, track.direction)
        elif f - track.occluded_since >= params.k:
            track.status = Status.LOST
            track.lost_at = f
            newly_lost.append(track)
        else:
            track.append(f, frozen, Status.OCCLUDED, track.direction)

    state.history.append(regions)
    state.mappings.append(mapping)
    state.frame_index = f
    state._graph = None
    _check_occlusions(state)

    state.counter += 1
    if state.counter >= params.k:
        refresh_rois(state)

    out = [
        BoxRecord(f, t.track_id, t.current.box, t.current.status.value)
        for _, t in sorted(state.tracks.items())
        if t.frames and t.current.frame_index == f
    ]
    out += [BoxRecord(f, t.track_id, t.current.box, Status.LOST.value) for t in newly_lost]
    return state, out


def _check_occlusions(state: TrackerState) -> None:
    tracks = [t for t in state.active() if len(t.frames) >= 2]
    busy: set[int] = set()
    for i, a in enumerate(tracks):
        for b in tracks[i + 1 :]:
            if a.track_id in busy or b.track_id in busy:
                continue
            report = detect_occlusion(a, b, state.params.iota, state.frame_index)
            state.reports.append(report)
            if report.flagged:
                victim = state.tracks[report.occludee]
                victim.status = Status.OCCLUDED
                victim.occluded_by = report.occluder
                victim.occluded_since = state.frame_index
                victim.region_id = None
                victim.frames[-1].status = Status.OCCLUDED
                busy.add(victim.track_id)
                logger.debug(
                    "frame %d: track %d occluded by %d (OD %.3f)",
                    state.frame_index, report.occludee, report.occluder, report.od,
                )


def refresh_rois(state: TrackerState) -> TrackerState:
    """Re-run ROI detection over the retained window.

    New ROIs become new tracks, active tracks whose region is no longer an
    ROI are lost, surviving tracks keep their ids.
    """
    state.counter = 0
    if len(state.mappings) < 1:
        return state
    rois = _window_rois(state)
    roi_regions = {c.last[1] for c in rois}
    owned = {}
    for track in state.active():
        if track.region_id in roi_regions:
            owned[track.region_id] = track.track_id
        else:
            track.status = Status.LOST
            track.lost_at = state.frame_index
            track.region_id = None
    latest = state.history[-1]
    frozen = [t.current.region for t in state.occluded()]
    for cand in rois:
        rid = cand.last[1]
        if rid in owned:
            continue
        if any(overlap(fr, latest[rid]) > 0 for fr in frozen):
            continue
        owned[rid] = _spawn(state, cand).track_id
    return state
