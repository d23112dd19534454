"""Command line entry point: ``depthtrack {synth,detect,track,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

from .depth_io import (
    BoxRecord,
    DepthIOError,
    DepthMap,
    GroundTruth,
    SceneSpec,
    SceneSpecError,
    atomic_write_text,
    format_box_records,
    load_ground_truth,
    load_sequence,
    synthesize_scene,
    write_overlay,
    write_sequence,
)
from .eval import DEFAULT_THRESHOLDS, DetectionCounts, f1_score, match_detections, sr_curve, success_rate
from .noise_filter import FilterParams, RegionSet, process_frame
from .roi_detect import detect_rois, map_regions
from .tracker import TrackerState, TrackParams, init_tracker

logger = logging.getLogger("depthtrack")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    sigma: float = 1.0
    border_points: int = 20
    k: int = 5
    delta: float = 80
    roi_threshold: float = 70
    iota: float = 0.4
    r_min: float = 0.5
    optimize: bool = True
    min_dynamic: float = 50.0
    keep_ratio: float = 0.5
    workers: int = 1
    seed: int = 0
    manifest: str | None = None
    gt: str | None = None
    out: str | None = None

    def validate(self) -> "PipelineConfig":
        positive = ("sigma", "delta", "roi_threshold", "min_dynamic")
        for name in positive:
            if getattr(self, name) <= 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        if self.border_points < 1:
            raise UsageError("--border-points must be >= 1")
        if self.k < 2:
            raise UsageError("--k must be >= 2")
        if not 0 < self.iota < 1:
            raise UsageError("--iota must lie in (0, 1)")
        if not 0 < self.r_min < 1:
            raise UsageError("--r-min must lie in (0, 1)")
        if not 0 < self.keep_ratio <= 1:
            raise UsageError("--keep-ratio must lie in (0, 1]")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        return self

    @property
    def filter_params(self) -> FilterParams:
        return FilterParams(self.sigma, self.border_points, self.min_dynamic, self.keep_ratio)

    @property
    def track_params(self) -> TrackParams:
        return TrackParams(self.k, self.delta, self.roi_threshold, self.iota, self.optimize, self.workers)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_mapping(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)


def read_config(path: str) -> dict:
    """Config values from a JSON file or from the ``# config:`` header of a report."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for line in text.splitlines():
        if line.startswith("# config:"):
            text = line[len("# config:") :]
            break
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not a config file ({exc})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return data


# ---------------------------------------------------------------------------
# pipeline helpers


def load_frames(cfg: PipelineConfig) -> tuple[list[DepthMap], GroundTruth | None]:
    if not cfg.manifest:
        raise UsageError("--manifest is required")
    if not Path(cfg.manifest).is_file():
        raise UsageError(f"manifest not found: {cfg.manifest}")
    frames, gt = load_sequence(cfg.manifest)
    frames = list(frames)
    if cfg.gt:
        gt = load_ground_truth(cfg.gt)
    if gt is not None:
        gt.check_bounds(frames[0].width, frames[0].height)
    return frames, gt


def filter_frames(frames: Sequence[DepthMap], params: FilterParams) -> list[RegionSet]:
    return [process_frame(f, params) for f in frames]


def sequence_name(cfg: PipelineConfig) -> str:
    return Path(cfg.manifest).resolve().parent.name if cfg.manifest else "-"


class Report:
    """Tab-separated ``metric, sequence, value`` rows under a config header."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.rows: list[tuple[str, str, str]] = []

    def add(self, metric: str, value) -> None:
        if isinstance(value, float):
            value = f"{value:.6f}"
        self.rows.append((metric, sequence_name(self.cfg), str(value)))

    def text(self) -> str:
        lines = [f"# config: {self.cfg.to_json()}", "metric\tsequence\tvalue"]
        lines += ["\t".join(r) for r in self.rows]
        return "\n".join(lines) + "\n"


def _out_dir(cfg: PipelineConfig) -> Path:
    if not cfg.out:
        raise UsageError("--out is required")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


class _RegionOutline:
    """Adapter so detected regions can be drawn like tracks."""

    def __init__(self, track_id: int, frame_index: int, region):
        self.track_id = track_id
        self.frame_index = frame_index
        self.region = region

    def mask_at(self, frame_index, shape):
        return self.region.full_mask(shape) if frame_index == self.frame_index else None


# ---------------------------------------------------------------------------
# subcommands


def detect_sequence(regions: Sequence[RegionSet], cfg: PipelineConfig) -> list[tuple[BoxRecord, object]]:
    """Sliding-window ROI detection; one record per ROI from frame K-1 onward."""
    k = cfg.k
    mappings = [map_regions(a, b, cfg.delta) for a, b in zip(regions, regions[1:])]
    out = []
    for end in range(k - 1, len(regions)):
        window = mappings[end - k + 1 : end]
        for cand in detect_rois(window, cfg.roi_threshold):
            f, rid = cand.last
            if cand.is_roi and f == regions[end].frame_index:
                region = regions[end][rid]
                out.append((BoxRecord(f, rid, region.box), region))
    return out


def cmd_detect(cfg: PipelineConfig, overlays: bool = False) -> int:
    frames, gt = load_frames(cfg)
    if len(frames) < cfg.k:
        raise UsageError(f"detection needs at least K={cfg.k} frames, got {len(frames)}")
    t0 = time.perf_counter()
    regions = filter_frames(frames, cfg.filter_params)
    found = detect_sequence(regions, cfg)
    elapsed = time.perf_counter() - t0
    records = [rec for rec, _ in found]

    report = Report(cfg)
    report.add("frames", len(frames))
    report.add("detections", len(records))
    if gt is not None:
        counts = DetectionCounts()
        for f in range(cfg.k - 1, len(frames)):
            pred = [r.box for r in records if r.frame_index == f]
            truth = [b for _, b in gt.boxes(f)]
            counts = counts + match_detections(pred, truth, cfg.r_min)
        p, r, f1 = f1_score(counts)
        report.add("tp", counts.tp)
        report.add("fp", counts.fp)
        report.add("fn", counts.fn)
        report.add("precision", p)
        report.add("recall", r)
        report.add("f1", f1)
    logger.info("detect: %d frames in %.2fs", len(frames), elapsed)

    out = _out_dir(cfg)
    atomic_write_text(out / "detections.txt", format_box_records(records))
    if overlays:
        for frame in frames:
            shapes = [_RegionOutline(rec.object_id, rec.frame_index, reg) for rec, reg in found if rec.frame_index == frame.frame_index]
            write_overlay(frame, shapes, out / "overlays" / f"{frame.frame_index:06d}.png")
    atomic_write_text(out / "report.txt", report.text())
    return 0


def run_tracker(regions: Sequence[RegionSet], params: TrackParams) -> TrackerState:
    if len(regions) < params.k + 1:
        raise UsageError(f"tracking needs at least K+1={params.k + 1} frames, got {len(regions)}")
    return init_tracker(regions, params)


def format_occlusions(state: TrackerState) -> str:
    lines = ["frame\toccludee\toccluder\tgap\tarea_change\tod\tflagged"]
    for r in state.reports:
        lines.append(
            f"{r.frame_index}\t{r.occludee}\t{r.occluder}\t{r.gap:.3f}\t{r.area_change:.6f}\t{r.od:.6f}\t{int(r.flagged)}"
        )
    return "\n".join(lines) + "\n"


def cmd_track(cfg: PipelineConfig, overlays: bool = False) -> int:
    frames, gt = load_frames(cfg)
    regions = filter_frames(frames, cfg.filter_params)
    state = run_tracker(regions, cfg.track_params)
    records = state.records()

    report = Report(cfg)
    report.add("frames", len(frames))
    report.add("tracks", len(state.tracks))
    flagged = [r for r in state.reports if r.flagged]
    report.add("occlusion_events", len(flagged))
    for r in flagged:
        report.add("occlusion", f"frame={r.frame_index} occludee={r.occludee} occluder={r.occluder} od={r.od:.6f}")
    if gt is not None:
        report.add(f"sr@{cfg.r_min}", success_rate(records, gt, cfg.r_min))
        for t, sr in sr_curve(records, gt, DEFAULT_THRESHOLDS).points:
            report.add(f"sr_curve@{t}", sr)

    out = _out_dir(cfg)
    atomic_write_text(out / "tracks.txt", format_box_records(records))
    atomic_write_text(out / "occlusions.txt", format_occlusions(state))
    if overlays:
        tracks = [state.tracks[i] for i in sorted(state.tracks)]
        for frame in frames:
            write_overlay(frame, tracks, out / "overlays" / f"{frame.frame_index:06d}.png")
    atomic_write_text(out / "report.txt", report.text())
    return 0


@dataclass
class BenchResult:
    mode: str
    ms_per_frame: float
    track_ms_per_frame: float
    mean_candidates: float
    records: list


def bench_mode(frames: Sequence[DepthMap], cfg: PipelineConfig, optimize: bool) -> tuple[BenchResult, TrackerState]:
    params = replace(cfg.track_params, optimize=optimize)
    t0 = time.perf_counter()
    regions = filter_frames(frames, cfg.filter_params)
    t1 = time.perf_counter()
    state = run_tracker(regions, params)
    t2 = time.perf_counter()
    n = len(frames)
    sizes = [s.pruned if optimize else s.full for s in state.search]
    mean = sum(sizes) / len(sizes) if sizes else 0.0
    name = "optimized" if optimize else "full"
    return BenchResult(name, 1000 * (t2 - t0) / n, 1000 * (t2 - t1) / n, mean, state.records()), state


def cmd_bench(cfg: PipelineConfig) -> int:
    frames, _ = load_frames(cfg)
    full, _ = bench_mode(frames, cfg, optimize=False)
    opt, state = bench_mode(frames, cfg, optimize=True)
    bad = [s for s in state.search if s.pruned > s.full]
    if bad:
        raise RuntimeError(f"pruned candidate set larger than full set at frame {bad[0].frame_index}")
    report = Report(cfg)
    for res in (full, opt):
        report.add(f"ms_per_frame[{res.mode}]", res.ms_per_frame)
        report.add(f"track_ms_per_frame[{res.mode}]", res.track_ms_per_frame)
        report.add(f"mean_candidates[{res.mode}]", res.mean_candidates)
    report.add("speedup", full.ms_per_frame / opt.ms_per_frame if opt.ms_per_frame else 0.0)
    report.add("identical_tracks", int(full.records == opt.records))
    out = _out_dir(cfg)
    atomic_write_text(out / "bench.txt", report.text())
    return 0


def cmd_synth(spec_path: str, seed: int, out: str) -> int:
    try:
        spec = SceneSpec.from_json(spec_path)
    except SceneSpecError as exc:
        raise UsageError(str(exc)) from exc
    scene = synthesize_scene(spec, seed)
    manifest = write_sequence(scene, out)
    logger.info("wrote %d frames, manifest %s", len(scene.frames), manifest)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


_FLAG_TYPES = {
    "sigma": float,
    "border_points": int,
    "k": int,
    "delta": float,
    "roi_threshold": float,
    "iota": float,
    "r_min": float,
    "min_dynamic": float,
    "keep_ratio": float,
    "workers": int,
    "seed": int,
}


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="frame manifest (one path per line, optional 'gt: <path>')")
    p.add_argument("--gt", help="ground-truth file, overrides the manifest header")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="JSON config or a previous report to reproduce")
    for name, typ in _FLAG_TYPES.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--optimize", dest="optimize", action="store_true", default=None)
    p.add_argument("--no-optimize", dest="optimize", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthtrack", description="Detect and track moving objects in depth video.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect ROIs and score them against ground truth")
    _add_pipeline_flags(p)
    p.add_argument("--overlays", action="store_true", help="write one PNG per frame")

    p = sub.add_parser("track", help="track ROIs through the sequence")
    _add_pipeline_flags(p)
    p.add_argument("--overlays", action="store_true", help="write one PNG per frame")

    p = sub.add_parser("bench", help="time the search with and without direction pruning")
    _add_pipeline_flags(p)

    p = sub.add_parser("synth", help="render a synthetic scene from a JSON spec")
    p.add_argument("spec", help="scene spec (JSON)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    values: dict = {}
    if args.config:
        values.update(read_config(args.config))
    for name in list(_FLAG_TYPES) + ["optimize", "manifest", "gt", "out"]:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    for key in ("manifest", "gt", "out"):
        if values.get(key) is not None:
            values[key] = str(values[key])
    try:
        return PipelineConfig.from_mapping(values).validate()
    except TypeError as exc:
        raise UsageError(f"bad config: {exc}") from exc


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args.spec, args.seed, args.out)
        cfg = config_from_args(args)
        if args.command == "detect":
            return cmd_detect(cfg, args.overlays)
        if args.command == "track":
            return cmd_track(cfg, args.overlays)
        return cmd_bench(cfg)
    except UsageError as exc:
        parser.error(str(exc))
    except (DepthIOError, ValueError, RuntimeError, OSError) as exc:
        print(f"depthtrack: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
