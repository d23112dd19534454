"""Depth frame I/O, ground truth files, synthetic scenes and overlays.

Depth frames are stored as binary 16-bit portable graymaps (``P5`` with a
maxval above 255, big-endian samples). A sample value of 0 marks a hole.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

logger = logging.getLogger(__name__)

BACKGROUND_DEPTH = 8000
MAX_DEPTH = 65535


class DepthIOError(ValueError):
    """Raised for unreadable, malformed or inconsistent depth inputs."""


class SceneSpecError(ValueError):
    """Raised when a synthetic scene description violates its invariants."""


@dataclass
class DepthMap:
    """One single-channel depth frame in millimetres (0 = hole)."""

    values: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise DepthIOError(f"depth map must be a non-empty 2-D grid, got shape {values.shape}")
        if values.size and (values.min() < 0 or values.max() > MAX_DEPTH):
            raise DepthIOError("depth samples must lie in [0, 65535]")
        if self.frame_index < 0:
            raise DepthIOError("frame_index must be >= 0")
        self.values = values.astype(np.uint16, copy=False)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def holes(self) -> np.ndarray:
        return self.values == 0


class Box(NamedTuple):
    """Axis-aligned pixel box: top-left corner plus width and height."""

    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h

    @classmethod
    def from_mask(cls, mask: np.ndarray, offset: tuple[int, int] = (0, 0)) -> "Box":
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        if rows.size == 0:
            raise ValueError("cannot bound an empty mask")
        return cls(
            int(cols[0] + offset[1]),
            int(rows[0] + offset[0]),
            int(cols[-1] - cols[0] + 1),
            int(rows[-1] - rows[0] + 1),
        )


class BoxRecord(NamedTuple):
    frame_index: int
    object_id: int
    box: Box
    status: str | None = None


@dataclass
class GroundTruth:
    """Per-frame ``(object_id, box)`` lists."""

    frames: dict[int, list[tuple[int, Box]]] = field(default_factory=dict)

    def add(self, frame_index: int, object_id: int, box: Box) -> None:
        self.frames.setdefault(frame_index, []).append((object_id, box))

    def boxes(self, frame_index: int) -> list[tuple[int, Box]]:
        return self.frames.get(frame_index, [])

    def frame_indices(self) -> list[int]:
        return sorted(self.frames)

    def __len__(self) -> int:
        return sum(len(v) for v in self.frames.values())

    def check_bounds(self, width: int, height: int) -> None:
        for f, items in self.frames.items():
            for oid, b in items:
                if b.x < 0 or b.y < 0 or b.x + b.w > width or b.y + b.h > height:
                    raise DepthIOError(f"box of object {oid} in frame {f} leaves the {width}x{height} frame")


# ---------------------------------------------------------------------------
# PGM files


def _read_header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DepthIOError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def load_depth_frame(path: str | os.PathLike, frame_index: int = 0) -> DepthMap:
    """Read a 16-bit binary PGM depth frame.

    Raises:
        DepthIOError: if the file is unreadable, is not a 16-bit ``P5`` file,
            or carries a different number of samples than its header declares.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DepthIOError(f"cannot read depth frame {path}: {exc}") from exc
    if not data.startswith(b"P5"):
        raise DepthIOError(f"{path}: not a binary PGM (P5) file")
    tokens, offset = _read_header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise DepthIOError(f"{path}: malformed PGM header") from exc
    if width <= 0 or height <= 0:
        raise DepthIOError(f"{path}: invalid dimensions {width}x{height}")
    if maxval < 256 or maxval > MAX_DEPTH:
        raise DepthIOError(f"{path}: unsupported bit depth (maxval {maxval}); expected 16-bit samples")
    raster = data[offset:]
    expected = width * height * 2
    if len(raster) != expected:
        raise DepthIOError(
            f"{path}: header declares {width}x{height} ({width * height} samples) "
            f"but file holds {len(raster) // 2}"
        )
    values = np.frombuffer(raster, dtype=">u2").reshape(height, width).astype(np.uint16)
    return DepthMap(values, frame_index)


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    _atomic_write_bytes(Path(path), text.encode("utf-8"))


def save_depth_frame(frame: DepthMap, path: str | os.PathLike) -> None:
    header = f"P5\n{frame.width} {frame.height}\n{MAX_DEPTH}\n".encode("ascii")
    _atomic_write_bytes(Path(path), header + frame.values.astype(">u2").tobytes())


# ---------------------------------------------------------------------------
# Ground truth / box records


def format_box_records(records: Iterable[BoxRecord]) -> str:
    lines = []
    for r in records:
        b = r.box
        if r.status is None:
            lines.append(f"{r.frame_index} {r.object_id} {b.x} {b.y} {b.w} {b.h}")
        else:
            lines.append(f"{r.frame_index} {r.object_id} {r.status} {b.x} {b.y} {b.w} {b.h}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_box_records(text: str, source: str = "<string>") -> list[BoxRecord]:
    """Parse ground-truth style lines.

    Six fields are ``frame id x y w h``; seven fields carry a status token in
    third position (the track output layout). Blank lines and ``#`` comments
    are skipped.
    """
    records = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) == 6:
                f, oid, x, y, w, h = (int(p) for p in parts)
                status = None
            elif len(parts) == 7:
                status = parts[2]
                f, oid, x, y, w, h = (int(p) for p in parts[:2] + parts[3:])
            else:
                raise ValueError(f"expected 6 or 7 fields, got {len(parts)}")
        except ValueError as exc:
            raise DepthIOError(f"{source}:{lineno}: {exc}") from exc
        records.append(BoxRecord(f, oid, Box(x, y, w, h), status))
    return records


def read_box_records(path: str | os.PathLike) -> list[BoxRecord]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DepthIOError(f"cannot read {path}: {exc}") from exc
    return parse_box_records(text, str(path))


def records_to_ground_truth(records: Iterable[BoxRecord], skip_status: Sequence[str] = ("lost",)) -> GroundTruth:
    gt = GroundTruth()
    for r in records:
        if r.status is not None and r.status in skip_status:
            continue
        gt.add(r.frame_index, r.object_id, r.box)
    return gt


def load_ground_truth(path: str | os.PathLike) -> GroundTruth:
    return records_to_ground_truth(read_box_records(path))


def write_ground_truth(gt: GroundTruth, path: str | os.PathLike) -> None:
    records = [BoxRecord(f, oid, b) for f in gt.frame_indices() for oid, b in gt.boxes(f)]
    atomic_write_text(path, format_box_records(records))


# ---------------------------------------------------------------------------
# Manifests and sequences


@dataclass
class Manifest:
    frame_paths: list[Path]
    gt_path: Path | None = None


def read_manifest(path: str | os.PathLike) -> Manifest:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DepthIOError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    frames: list[Path] = []
    gt_path = None
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("gt:"):
            gt_path = base / line[3:].strip()
            continue
        frames.append(base / line)
    if not frames:
        raise DepthIOError(f"manifest {path} lists no frames")
    missing = [p for p in frames if not p.is_file()]
    if missing:
        raise DepthIOError(f"manifest {path}: missing frame file {missing[0]}")
    if gt_path is not None and not gt_path.is_file():
        raise DepthIOError(f"manifest {path}: missing ground-truth file {gt_path}")
    return Manifest(frames, gt_path)


def _iter_frames(paths: Sequence[Path]) -> Iterator[DepthMap]:
    shape = None
    for i, p in enumerate(paths):
        frame = load_depth_frame(p, frame_index=i)
        if shape is None:
            shape = frame.shape
        elif frame.shape != shape:
            raise DepthIOError(
                f"{p}: frame size {frame.width}x{frame.height} differs from sequence size {shape[1]}x{shape[0]}"
            )
        yield frame


def load_sequence(manifest: str | os.PathLike) -> tuple[Iterator[DepthMap], GroundTruth | None]:
    """Open a manifest and return a lazy frame stream plus optional ground truth.

    Frames are yielded in manifest order with ``frame_index`` 0, 1, 2, ...
    A frame whose size differs from the first raises :class:`DepthIOError`
    when it is reached.
    """
    m = read_manifest(manifest)
    gt = load_ground_truth(m.gt_path) if m.gt_path is not None else None
    return _iter_frames(m.frame_paths), gt


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass
class Actor:
    """A synthetic moving object.

    ``x``/``y`` give the top-left corner of the actor's bounding box at frame
    0. ``velocity`` is either one ``(vx, vy)`` pair applied every frame or a
    list with one pair per frame step. ``growth`` widens the box by
    ``(dw, dh)`` pixels per frame about its centre. The actor is visible on
    frames ``appear <= t < vanish``.
    """

    shape: str
    x: float
    y: float
    width: float
    height: float
    depth: int = 2000
    velocity: object = (0.0, 0.0)
    growth: tuple[float, float] = (0.0, 0.0)
    appear: int = 0
    vanish: int | None = None

    def _step(self, t: int) -> tuple[float, float]:
        v = self.velocity
        if len(v) == 2 and not isinstance(v[0], (list, tuple)):
            return float(v[0]), float(v[1])
        if t < len(v):
            return float(v[t][0]), float(v[t][1])
        return 0.0, 0.0

    def visible(self, t: int) -> bool:
        return t >= self.appear and (self.vanish is None or t < self.vanish)

    def box_at(self, t: int) -> tuple[int, int, int, int]:
        """Integer ``(top, left, bottom, right)`` of the actor at frame ``t`` (exclusive)."""
        dx = dy = 0.0
        for s in range(t):
            vx, vy = self._step(s)
            dx += vx
            dy += vy
        w = self.width + self.growth[0] * t
        h = self.height + self.growth[1] * t
        left = self.x + dx - (w - self.width) / 2
        top = self.y + dy - (h - self.height) / 2
        left_i = math.floor(left + 0.5)
        top_i = math.floor(top + 0.5)
        return top_i, left_i, top_i + math.floor(h + 0.5), left_i + math.floor(w + 0.5)

    def mask_at(self, t: int, shape: tuple[int, int]) -> np.ndarray:
        top, left, bottom, right = self.box_at(t)
        mask = np.zeros(shape, dtype=bool)
        if bottom <= top or right <= left:
            return mask
        if self.shape == "rectangle":
            mask[max(top, 0) : bottom, max(left, 0) : right] = True
            return mask
        rr, cc = np.mgrid[top:bottom, left:right]
        cy = (top + bottom) / 2
        cx = (left + right) / 2
        ry = (bottom - top) / 2
        rx = (right - left) / 2
        inside = ((cc + 0.5 - cx) / rx) ** 2 + ((rr + 0.5 - cy) / ry) ** 2 <= 1.0
        ok = (rr >= 0) & (rr < shape[0]) & (cc >= 0) & (cc < shape[1]) & inside
        mask[rr[ok], cc[ok]] = True
        return mask


@dataclass
class NoiseRecipe:
    sensor_sigma: float = 0.0
    blob_count: int = 0
    blob_area: tuple[int, int] = (100, 3000)
    blob_depth: tuple[int, int] = (500, 6500)
    hole_probability: float = 0.0
    blob_margin: int = 6


@dataclass
class SceneSpec:
    frames: int
    width: int = 320
    height: int = 240
    actors: list[Actor] = field(default_factory=list)
    noise: NoiseRecipe = field(default_factory=NoiseRecipe)
    background_depth: int = BACKGROUND_DEPTH

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        try:
            actors = [Actor(**a) for a in data.get("actors", [])]
            noise = NoiseRecipe(**data.get("noise", {}))
            rest = {k: v for k, v in data.items() if k not in ("actors", "noise")}
            spec = cls(actors=actors, noise=noise, **rest)
        except TypeError as exc:
            raise SceneSpecError(f"malformed scene spec: {exc}") from exc
        spec.validate()
        return spec

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "SceneSpec":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SceneSpecError(f"cannot parse scene spec {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.frames < 1 or self.width <= 0 or self.height <= 0:
            raise SceneSpecError("scene needs >= 1 frame and a positive size")
        smallest = None
        for i, actor in enumerate(self.actors):
            if actor.shape not in ("rectangle", "disc"):
                raise SceneSpecError(f"actor {i}: unknown shape {actor.shape!r}")
            if not 0 < actor.depth <= MAX_DEPTH:
                raise SceneSpecError(f"actor {i}: depth must lie in (0, 65535]")
            for t in range(self.frames):
                if not actor.visible(t):
                    continue
                top, left, bottom, right = actor.box_at(t)
                if bottom <= top or right <= left:
                    raise SceneSpecError(f"actor {i} degenerates to zero area at frame {t}")
                if top < 0 or left < 0 or bottom > self.height or right > self.width:
                    raise SceneSpecError(f"actor {i} leaves the frame at frame {t}")
            area = int(actor.mask_at(actor.appear, (self.height, self.width)).sum())
            if area == 0:
                raise SceneSpecError(f"actor {i} has zero area")
            smallest = area if smallest is None else min(smallest, area)
        n = self.noise
        if n.blob_count > 0:
            lo, hi = n.blob_area
            if lo < 1 or hi < lo:
                raise SceneSpecError("noise blob area range must satisfy 1 <= min <= max")
            if smallest is not None and hi >= smallest:
                raise SceneSpecError(
                    f"noise blobs up to {hi} px must stay below the smallest actor area {smallest} px"
                )
        if not 0.0 <= n.hole_probability < 1.0 or n.sensor_sigma < 0:
            raise SceneSpecError("invalid noise recipe")


@dataclass
class SyntheticScene:
    frames: list[DepthMap]
    ground_truth: GroundTruth
    owners: list[np.ndarray]
    """Per-frame actor ownership maps (-1 = no actor, else actor index)."""


def _place_blob(rng: np.random.Generator, occupied: np.ndarray, recipe: NoiseRecipe) -> np.ndarray | None:
    h, w = occupied.shape
    for _ in range(50):
        area = rng.integers(recipe.blob_area[0], recipe.blob_area[1] + 1)
        aspect = rng.uniform(0.5, 2.0)
        bw = max(1, int(round(math.sqrt(area * aspect))))
        bh = max(1, int(round(area / bw)))
        if bw + 2 * recipe.blob_margin >= w or bh + 2 * recipe.blob_margin >= h:
            continue
        left = rng.integers(recipe.blob_margin, w - bw - recipe.blob_margin + 1)
        top = rng.integers(recipe.blob_margin, h - bh - recipe.blob_margin + 1)
        m = recipe.blob_margin
        if occupied[top - m : top + bh + m, left - m : left + bw + m].any():
            continue
        mask = np.zeros_like(occupied)
        mask[top : top + bh, left : left + bw] = True
        return mask
    return None


def synthesize_scene(spec: SceneSpec, seed: int) -> SyntheticScene:
    """Render a deterministic depth sequence with exact ground truth.

    Actors are drawn far-to-near over a flat background so nearer actors hide
    farther ones. Ground-truth boxes tightly bound the visible pixels of
    each actor. Noise blobs are placed away from every actor.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    shape = (spec.height, spec.width)
    order = sorted(range(len(spec.actors)), key=lambda i: (-spec.actors[i].depth, i))
    frames, owners = [], []
    gt = GroundTruth()
    for t in range(spec.frames):
        depth = np.full(shape, float(spec.background_depth))
        owner = np.full(shape, -1, dtype=np.int32)
        occupied = np.zeros(shape, dtype=bool)
        for i in order:
            actor = spec.actors[i]
            if not actor.visible(t):
                continue
            m = actor.mask_at(t, shape)
            depth[m] = actor.depth
            owner[m] = i
            occupied |= m
        for _ in range(spec.noise.blob_count):
            blob = _place_blob(rng, occupied, spec.noise)
            if blob is None:
                logger.debug("frame %d: could not place a noise blob", t)
                continue
            depth[blob] = rng.integers(spec.noise.blob_depth[0], spec.noise.blob_depth[1] + 1)
            occupied |= blob
        if spec.noise.sensor_sigma > 0:
            depth += rng.normal(0.0, spec.noise.sensor_sigma, size=shape)
        values = np.clip(np.rint(depth), 1, MAX_DEPTH).astype(np.uint16)
        if spec.noise.hole_probability > 0:
            values[rng.random(shape) < spec.noise.hole_probability] = 0
        frames.append(DepthMap(values, t))
        owners.append(owner)
        for i in range(len(spec.actors)):
            m = owner == i
            if m.any():
                gt.add(t, i + 1, Box.from_mask(m))
    return SyntheticScene(frames, gt, owners)


def write_sequence(scene: SyntheticScene, out_dir: str | os.PathLike) -> Path:
    """Write frames, ``gt.txt`` and ``manifest.txt``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for frame in scene.frames:
        name = f"{frame.frame_index:06d}.pgm"
        save_depth_frame(frame, out / name)
        names.append(name)
    write_ground_truth(scene.ground_truth, out / "gt.txt")
    manifest = out / "manifest.txt"
    atomic_write_text(manifest, "gt: gt.txt\n" + "\n".join(names) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# Overlays

PALETTE = [
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (0, 128, 128),
]


def track_color(track_id: int) -> tuple[int, int, int]:
    return PALETTE[(track_id - 1) % len(PALETTE)]


def render_overlay(frame: DepthMap, outlines: Iterable[tuple[int, np.ndarray]]) -> np.ndarray:
    """Grayscale depth with one coloured outline per ``(track_id, mask)``."""
    v = frame.values.astype(np.float64)
    valid = v > 0
    gray = np.zeros(frame.shape, dtype=np.uint8)
    if valid.any():
        lo, hi = v[valid].min(), v[valid].max()
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        # near = bright
        gray[valid] = np.clip(255 - (v[valid] - lo) * scale, 0, 255).astype(np.uint8)
        if scale == 0.0:
            gray[valid] = 128
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    for track_id, mask in outlines:
        if mask.shape != frame.shape:
            raise ValueError("track mask does not match the frame size")
        edge = mask & ~ndimage.binary_erosion(mask, border_value=0)
        rgb[edge] = track_color(track_id)
    return rgb


def write_overlay(frame: DepthMap, tracks: Sequence, path: str | os.PathLike) -> Path:
    """Write an 8-bit RGB PNG of ``frame`` with each track's outline.

    ``tracks`` holds objects exposing ``track_id`` and
    ``mask_at(frame_index, shape)`` (``None`` when absent on that frame).
    """
    outlines = []
    for tr in tracks:
        m = tr.mask_at(frame.frame_index, frame.shape)
        if m is not None:
            outlines.append((tr.track_id, m))
    rgb = render_overlay(frame, outlines)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".png")
        os.close(fd)
        Image.fromarray(rgb).save(tmp, format="PNG")
        os.replace(tmp, path)
    except OSError as exc:
        raise DepthIOError(f"cannot write overlay {path}: {exc}") from exc
    return path
