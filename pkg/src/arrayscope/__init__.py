"""arrayscope: planar multi-camera array microscope toolkit.

Design math (magnification regimes, resolution and FOV budgets), a
synthetic per-camera forward renderer, translation-model stitching with
feathered compositing and tile pyramids, stereoscopic depth from camera
pairs, tiled-scan planning with focus stacking, and acquisition throughput
models.
"""

__version__ = "0.1.0"

from .geometry import (ArrayConfig, ArrayLayout, LensSpec, Regime,
                       RegimeReport, SensorSpec, camera_object_fov,
                       cameras_for_multiview_area, classify_regime,
                       continuous_magnification, image_distance,
                       object_distance, pixel_limited_resolution, scan_grid,
                       total_fov_extent)
from .presets import PRESETS, preset
from .render import (CameraFrame, FrameSet, apply_binning, render_array,
                     render_camera, render_focal_stack)
from .scene import (ResolutionTargetSpec, Scene, make_resolution_target,
                    make_textured_scene)
from .stitching import (Composite, StitchCalibration, build_pyramid,
                        calibrate, composite, estimate_pairwise_offset,
                        measure_resolution, nominal_calibration,
                        solve_global_poses)
from .depth import (DepthExperimentReport, HeightMap, MatchSet,
                    build_height_map, match_features, run_depth_sweep,
                    triangulate)
from .acquisition import (FocusDecision, ScanPlan, ThroughputReport,
                          assemble_tiled_composite, frame_bytes,
                          laplacian_focus_metric, max_frame_rate,
                          plan_tiled_scan, recording_capacity, select_focus,
                          throughput_report)

__all__ = [
    "__version__",
    "ArrayConfig", "ArrayLayout", "LensSpec", "Regime", "RegimeReport",
    "SensorSpec", "camera_object_fov", "cameras_for_multiview_area",
    "classify_regime", "continuous_magnification", "image_distance",
    "object_distance", "pixel_limited_resolution", "scan_grid",
    "total_fov_extent",
    "PRESETS", "preset",
    "CameraFrame", "FrameSet", "apply_binning", "render_array",
    "render_camera", "render_focal_stack",
    "ResolutionTargetSpec", "Scene", "make_resolution_target",
    "make_textured_scene",
    "Composite", "StitchCalibration", "build_pyramid", "calibrate",
    "composite", "estimate_pairwise_offset", "measure_resolution",
    "nominal_calibration", "solve_global_poses",
    "DepthExperimentReport", "HeightMap", "MatchSet", "build_height_map",
    "match_features", "run_depth_sweep", "triangulate",
    "FocusDecision", "ScanPlan", "ThroughputReport",
    "assemble_tiled_composite", "frame_bytes", "laplacian_focus_metric",
    "max_frame_rate", "plan_tiled_scan", "recording_capacity",
    "select_focus", "throughput_report",
]
