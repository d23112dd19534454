"""Multi-object detection and tracking in depth video."""

from .depth_io import Box, BoxRecord, DepthMap, GroundTruth, SceneSpec, load_depth_frame, load_sequence, synthesize_scene
from .eval import f1_score, match_detections, overlap_ratio, sr_curve, success_rate
from .noise_filter import FilterParams, RegionSet, process_frame
from .tracker import TrackParams, TrackerState, init_tracker, refresh_rois, step

__all__ = [
    "Box",
    "BoxRecord",
    "DepthMap",
    "FilterParams",
    "GroundTruth",
    "RegionSet",
    "SceneSpec",
    "TrackParams",
    "TrackerState",
    "f1_score",
    "init_tracker",
    "load_depth_frame",
    "load_sequence",
    "match_detections",
    "overlap_ratio",
    "process_frame",
    "refresh_rois",
    "sr_curve",
    "step",
    "success_rate",
    "synthesize_scene",
]
__version__ = "0.1.0"
