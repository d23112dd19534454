"""Spatial smoothing, watershed regions and area-threshold noise suppression."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from skimage.morphology import local_minima, reconstruction
from skimage.segmentation import watershed

from .depth_io import Box, DepthMap

FOUR = ndimage.generate_binary_structure(2, 1)
EIGHT = ndimage.generate_binary_structure(2, 2)


class Category(enum.Enum):
    BACKGROUND = "background"
    ENCLOSED = "enclosed"
    ENCLOSING = "enclosing"
    INDEPENDENT = "independent"


@dataclass
class Region:
    """A labelled region stored as a mask cropped to its bounding box."""

    id: int
    top: int
    left: int
    mask: np.ndarray
    category: Category = Category.INDEPENDENT
    enclosed_by: int | None = None

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """``(top, left, bottom, right)`` with exclusive bottom/right."""
        return self.top, self.left, self.top + self.mask.shape[0], self.left + self.mask.shape[1]

    @property
    def box(self) -> Box:
        return Box.from_mask(self.mask, (self.top, self.left))

    @property
    def centroid(self) -> tuple[float, float]:
        rows, cols = np.nonzero(self.mask)
        return float(rows.mean() + self.top), float(cols.mean() + self.left)

    @property
    def is_closed(self) -> bool:
        return self.category is not Category.BACKGROUND

    def full_mask(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        t, l, b, r = self.bbox
        out[t:b, l:r] = self.mask
        return out

    @classmethod
    def from_mask(cls, region_id: int, mask: np.ndarray, **kwargs) -> "Region":
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        if rows.size == 0:
            raise ValueError("region mask is empty")
        crop = mask[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1].copy()
        return cls(region_id, int(rows[0]), int(cols[0]), crop, **kwargs)


@dataclass
class RegionSet:
    """Categorised regions of one frame plus the label map they came from.

    ``labels`` holds 0 for unassigned pixels (suppressed noise) and the
    region id elsewhere.
    """

    frame_index: int
    labels: np.ndarray
    regions: dict[int, Region] = field(default_factory=dict)
    tau: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def closed(self) -> list[Region]:
        return [r for _, r in sorted(self.regions.items()) if r.is_closed]

    def background(self) -> list[Region]:
        return [r for _, r in sorted(self.regions.items()) if not r.is_closed]

    def __getitem__(self, region_id: int) -> Region:
        return self.regions[region_id]

    def __contains__(self, region_id: int) -> bool:
        return region_id in self.regions

    def mask(self, region_id: int) -> np.ndarray:
        return self.labels == region_id

    def boundary(self, region_id: int) -> np.ndarray:
        """Pixels of the region that touch another label or the image edge."""
        m = self.mask(region_id)
        outside = ndimage.binary_dilation(~m, structure=EIGHT, border_value=1)
        return m & outside

    @classmethod
    def from_labels(
        cls,
        labels: np.ndarray,
        frame_index: int = 0,
        categories: dict[int, Category] | None = None,
    ) -> "RegionSet":
        """Wrap a label map, defaulting every region to ``INDEPENDENT``."""
        labels = np.asarray(labels, dtype=np.int32)
        regions = {}
        for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            crop = labels[sl] == idx
            cat = (categories or {}).get(idx, Category.INDEPENDENT)
            regions[idx] = Region(idx, sl[0].start, sl[1].start, crop, cat)
        return cls(frame_index, labels, regions)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Unnormalised 1-D Gaussian taps with radius ``ceil(3 * sigma)``."""
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-(x**2) / (2 * sigma**2))


def gaussian_smooth_values(frame: DepthMap, sigma: float) -> np.ndarray:
    """Hole-aware Gaussian smoothing returning floating point depths.

    Holes carry no weight in the average and stay 0. Out-of-frame taps are
    treated like holes, so the kernel renormalises at the borders.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    k = gaussian_kernel(sigma)
    v = frame.values.astype(np.float64)
    valid = (v > 0).astype(np.float64)
    num = v * valid
    den = valid
    for axis in (0, 1):
        num = ndimage.correlate1d(num, k, axis=axis, mode="constant", cval=0.0)
        den = ndimage.correlate1d(den, k, axis=axis, mode="constant", cval=0.0)
    out = np.zeros_like(v)
    ok = valid > 0
    out[ok] = num[ok] / den[ok]
    return out


def gaussian_smooth(frame: DepthMap, sigma: float = 1.0) -> DepthMap:
    out = gaussian_smooth_values(frame, sigma)
    return DepthMap(np.clip(np.rint(out), 0, 65535).astype(np.uint16), frame.frame_index)


def gradient_magnitude(frame: DepthMap) -> np.ndarray:
    gy, gx = np.gradient(frame.values.astype(np.float64))
    return np.hypot(gx, gy)


def watershed_segment(frame: DepthMap, min_dynamic: float = 50.0) -> np.ndarray:
    """Partition ``frame`` into catchment basins of its depth-gradient magnitude.

    Basins are flooded from the regional minima of the gradient whose
    dynamic (depth of the basin, in depth units per pixel) is at least
    ``min_dynamic``; shallower minima come from sensor noise and are merged
    into their surroundings. Returns a label map with ids ``1..n``, each label
    4-connected.
    """
    grad = gradient_magnitude(frame)
    if float(grad.max() - grad.min()) <= min_dynamic:
        return np.ones(frame.shape, dtype=np.int32)
    # h-minima transform: fill every basin shallower than min_dynamic, then
    # seed one marker per flat regional minimum of the filled relief
    filled = reconstruction(grad + min_dynamic, grad, method="erosion")
    seeds = local_minima(filled, connectivity=1, allow_borders=True)
    markers, n = ndimage.label(seeds, structure=FOUR)
    if n == 0:
        return np.ones(frame.shape, dtype=np.int32)
    labels = watershed(grad, markers, connectivity=1)
    return labels.astype(np.int32)


def _border_counts(labels: np.ndarray) -> np.ndarray:
    h, w = labels.shape
    edge = np.zeros(labels.shape, dtype=bool)
    edge[0, :] = edge[-1, :] = True
    edge[:, 0] = edge[:, -1] = True
    return np.bincount(labels[edge].ravel(), minlength=int(labels.max()) + 1)


def categorize_regions(labels: np.ndarray, border_points: int = 20, frame_index: int = 0) -> RegionSet:
    """Assign every region a :class:`Category`.

    A region with at least ``border_points`` pixels on the image border is
    background. A closed region whose outer boundary (the boundary of its
    hole-filled mask) touches exactly one other closed region is enclosed by
    that region.
    """
    if border_points < 1:
        raise ValueError("border_points must be >= 1")
    labels = np.asarray(labels, dtype=np.int32)
    h, w = labels.shape
    border = _border_counts(labels)
    regions: dict[int, Region] = {}
    slices = ndimage.find_objects(labels)
    for idx, sl in enumerate(slices, start=1):
        if sl is None:
            continue
        crop = labels[sl] == idx
        cat = Category.BACKGROUND if border[idx] >= border_points else Category.INDEPENDENT
        regions[idx] = Region(idx, sl[0].start, sl[1].start, crop, cat)

    for idx, region in regions.items():
        if region.category is Category.BACKGROUND or border[idx] > 0:
            continue
        t, l, b, r = region.bbox
        t0, l0, b0, r0 = max(t - 1, 0), max(l - 1, 0), min(b + 1, h), min(r + 1, w)
        window = labels[t0:b0, l0:r0]
        m = window == idx
        filled = ndimage.binary_fill_holes(m)
        ring = ndimage.binary_dilation(filled, structure=EIGHT) & ~filled
        neighbours = np.unique(window[ring])
        if neighbours.size != 1:
            continue
        host = int(neighbours[0])
        if host != 0 and host in regions and regions[host].category is not Category.BACKGROUND:
            region.enclosed_by = host

    for region in regions.values():
        if region.enclosed_by is not None:
            region.category = Category.ENCLOSED
            host = regions[region.enclosed_by]
            if host.enclosed_by is None:
                host.category = Category.ENCLOSING
    return RegionSet(frame_index, labels, regions)


def _root(regions: dict[int, Region], idx: int) -> int:
    seen = set()
    while regions[idx].enclosed_by is not None and idx not in seen:
        seen.add(idx)
        idx = regions[idx].enclosed_by
    return idx


def merge_enclosed(regions: RegionSet) -> RegionSet:
    """Fold every enclosed region into its outermost enclosing region."""
    if not any(r.category is Category.ENCLOSED for r in regions.regions.values()):
        return regions
    labels = regions.labels.copy()
    lut = np.arange(labels.max() + 1, dtype=np.int32)
    roots = set()
    for idx, r in regions.regions.items():
        if r.category is Category.ENCLOSED:
            root = _root(regions.regions, idx)
            lut[idx] = root
            roots.add(root)
    labels = lut[labels]
    out = {}
    for idx, r in regions.regions.items():
        if r.category is Category.ENCLOSED:
            continue
        if idx in roots:
            merged = Region.from_mask(idx, labels == idx, category=Category.INDEPENDENT)
            out[idx] = merged
        elif r.category is Category.ENCLOSING:
            out[idx] = replace(r, category=Category.INDEPENDENT)
        else:
            out[idx] = r
    return RegionSet(regions.frame_index, labels, out, regions.tau)


def suppress_noise(regions: RegionSet, keep_ratio: float = 0.5) -> RegionSet:
    """Remove closed regions whose area does not exceed the mean closed area.

    The threshold ``tau`` is the mean area of the closed (non-background)
    regions. A region survives when its area is strictly above ``tau``.
    Regions at least ``keep_ratio`` times the size of the largest closed
    region are always kept, so the largest region is never removed and
    comparably sized objects are not split by the mean. Background regions
    are never touched. With no closed regions the input is returned as is.
    """
    closed = regions.closed()
    if not closed:
        return regions
    areas = {r.id: r.area for r in closed}
    tau = sum(areas.values()) / len(areas)
    largest = max(areas.values())
    removed = [
        rid for rid, a in areas.items() if not (a > tau or a >= keep_ratio * largest)
    ]
    labels = regions.labels
    if removed:
        labels = labels.copy()
        labels[np.isin(labels, removed)] = 0
    kept = {rid: r for rid, r in regions.regions.items() if rid not in removed}
    return RegionSet(regions.frame_index, labels, kept, tau)


@dataclass(frozen=True)
class FilterParams:
    sigma: float = 1.0
    border_points: int = 20
    min_dynamic: float = 50.0
    keep_ratio: float = 0.5


def process_frame(frame: DepthMap, params: FilterParams = FilterParams()) -> RegionSet:
    """Smooth, segment, categorise, merge and suppress one frame."""
    smooth = gaussian_smooth(frame, params.sigma)
    labels = watershed_segment(smooth, params.min_dynamic)
    rs = categorize_regions(labels, params.border_points, frame.frame_index)
    rs = merge_enclosed(rs)
    return suppress_noise(rs, params.keep_ratio)
