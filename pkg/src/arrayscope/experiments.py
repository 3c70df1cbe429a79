"""Desk-scale synthetic experiments exercising the full tool chain.

Full-scale captures of the reference hardware run to gigapixels; these
drivers shrink sensor counts and board pitch while preserving pixel pitch
and magnification, which leaves resolution, regime and depth math intact.
Scaling rule: multiplying sensor pixel counts and board pitch by the same
factor preserves every regime ratio s/p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import acquisition, depth, stitching
from .geometry import (ArrayConfig, ArrayLayout, LensSpec, Regime, SensorSpec,
                       camera_axis_positions, classify_regime,
                       pixel_limited_resolution)
from .render import render_array, render_focal_stack
from .scene import (ResolutionTargetSpec, make_resolution_target,
                    make_textured_scene)
from .stitching import (Composite, StitchCalibration, calibrate, composite,
                        measure_resolution, nominal_calibration)

__all__ = [
    "ResolutionResult",
    "desk_resolution_config",
    "resolution_experiment",
    "desk_stereo_config",
    "stereo_depth_experiment",
    "desk_tiled_config",
    "tiled_scan_experiment",
    "focus_trial",
]

_PIXEL_UM = 1.1


def _lens_for_pitch(pitch_mm: float) -> LensSpec:
    # Reference optics; the barrel shrinks with desk-scale pitches so the
    # packing constraint stays satisfiable.
    return LensSpec.from_mm(25.05, 4.0, min(13.0, pitch_mm))


@dataclass(frozen=True)
class ResolutionResult:
    """Outcome of one render-stitch-measure run."""

    magnification: float
    r_pix_um: float
    resolved_um: float
    contrasts: dict[float, float]
    composite: Composite
    calibration: StitchCalibration


def desk_resolution_config(magnification: float) -> ArrayConfig:
    """A 2x2 sub-array sized so a desk machine can render and stitch it.

    The board pitch shrinks with the sensor so the coverage regime of the
    full-size design at this magnification is preserved where it matters:
    overlapping for M <= 0.2, gapped (tiled) at M = 1.
    """
    if magnification >= 0.5:
        sensor = SensorSpec(_PIXEL_UM, pixels_x=1040, pixels_y=784)
        pitch_mm = 2.0
    elif magnification > 0.15:
        sensor = SensorSpec(_PIXEL_UM, pixels_x=2104, pixels_y=1560)
        pitch_mm = 8.0
    else:
        sensor = SensorSpec(_PIXEL_UM, pixels_x=2104, pixels_y=1560)
        pitch_mm = 13.5
    layout = ArrayLayout.from_mm(2, 2, pitch_mm)
    return ArrayConfig(sensor, _lens_for_pitch(pitch_mm), layout, magnification)


def _exclusive_rect(config: ArrayConfig, extent_um: tuple[float, float],
                    margin_um: float) -> tuple[float, float, float, float]:
    """Region seen by the reference camera and by no other, within the scene."""
    axes = camera_axis_positions(config)
    ax, ay = axes[0, 0]
    half_x, half_y = config.fov_x_um / 2.0, config.fov_y_um / 2.0
    x_lo = max(ax - half_x, -extent_um[0] / 2.0) + margin_um
    y_lo = max(ay - half_y, -extent_um[1] / 2.0) + margin_um
    x_hi = min(ax + half_x, extent_um[0] / 2.0) - margin_um
    y_hi = min(ay + half_y, extent_um[1] / 2.0) - margin_um
    if config.layout.cols > 1:
        x_hi = min(x_hi, axes[0, 1][0] - half_x - margin_um)
    if config.layout.rows > 1:
        y_hi = min(y_hi, axes[1, 0][1] - half_y - margin_um)
    if x_hi <= x_lo or y_hi <= y_lo:
        raise ValueError("no camera-exclusive region; overlap too large "
                         "for this scene extent")
    return x_lo, y_lo, x_hi, y_hi


def _aligned_bar_phase(config: ArrayConfig, target_x_um: float,
                       spacing_um: float) -> float:
    """Bar phase such that a bright-bar center hits a reference pixel center.

    Returns the object-plane x where the group's first bright bar starts.
    """
    w = config.composite_pixel_um
    ax = camera_axis_positions(config)[0, 0][0]
    nx = config.sensor.pixels_x
    u = round((target_x_um - ax) / w + (nx - 1) / 2.0)
    center = ax + (u - (nx - 1) / 2.0) * w
    return center - spacing_um / 4.0


def resolution_experiment(magnification: float, *, seed: int = 0,
                          scene_extent_mm: tuple[float, float] | None = None,
                          config: ArrayConfig | None = None,
                          contrast_threshold: float = 0.26,
                          threads: int = 1) -> ResolutionResult:
    """Render a two-group bar target, stitch it, and measure resolution.

    The target carries one group at the pixel-limited resolution 2*delta/M
    and one at half that spacing (delta/M, beyond the pixel limit). Groups
    sit in the reference camera's exclusive region with bright bars aligned
    to its pixel grid. Calibration comes from a textured sibling scene when
    the regime allows stitching, otherwise from nominal board geometry.
    """
    if config is None:
        config = desk_resolution_config(magnification)
    delta = config.sensor.pixel_pitch_um
    m = config.magnification
    r_pix = pixel_limited_resolution(delta, m)
    spacings = (r_pix, r_pix / 2.0)      # 2*delta/M and delta/M

    if scene_extent_mm is None:
        scene_extent_mm = (30.0, 30.0) if m < 0.5 else (3.0, 3.0)
    extent = (scene_extent_mm[0] * 1e3, scene_extent_mm[1] * 1e3)
    sample_pitch = delta / (2.0 * m)     # supersampling at the guard limit

    margin = max(100.0 * sample_pitch, 4.0 * r_pix)
    x_lo, y_lo, x_hi, y_hi = _exclusive_rect(config, extent, margin)
    target_x = (x_lo + x_hi) / 2.0
    gap = max(6.0 * r_pix, 24.0 * sample_pitch)
    bar_len = min(400.0 * sample_pitch, (y_hi - y_lo - gap) / 2.0 * 0.8)
    y_start = (y_lo + y_hi) / 2.0 - bar_len - gap / 2.0

    spec = ResolutionTargetSpec(spacings, bars_per_group=8)
    phases = {s: _aligned_bar_phase(config, target_x, s) for s in spacings}
    scene, groups = make_resolution_target(
        spec, extent, sample_pitch, origin_um=(target_x, y_start),
        bar_length_um=bar_len, group_gap_um=gap, group_phase_um=phases)

    frameset = render_array(scene, config, seed=seed, threads=threads)
    regime = classify_regime(config).aggregate
    if regime is Regime.TILED:
        cal = nominal_calibration(config)
    else:
        # Calibrate on a textured sibling scene at the same depth, then
        # reuse the solve for the target frames. The sibling only needs to
        # span the pair-correlation windows around each overlap center.
        cpx = config.composite_pixel_um
        twin_half_x = config.layout.pitch_x_um / 2.0 + 600.0 * cpx
        twin_half_y = config.layout.pitch_y_um / 2.0 + 600.0 * cpx
        twin_extent = (min(extent[0], 2.0 * twin_half_x),
                       min(extent[1], 2.0 * twin_half_y))
        textured = make_textured_scene(twin_extent, sample_pitch, seed + 1)
        cal_frames = render_array(textured, config, seed=seed, threads=threads)
        cal = calibrate(cal_frames, config)
    comp = composite(frameset, cal)

    contrasts = {g.spacing_um: stitching._group_contrast(comp, g)
                 for g in groups}
    resolved = measure_resolution(comp, groups,
                                  contrast_threshold=contrast_threshold)
    return ResolutionResult(m, r_pix, resolved, contrasts, comp, cal)


def desk_stereo_config(pixels_y: int = 256) -> ArrayConfig:
    """One multi-view camera pair at the reference optics and pitch.

    The pairing axis keeps the full 4208-pixel width (the overlap needs
    it); the other axis shrinks to keep renders cheap.
    """
    sensor = SensorSpec(_PIXEL_UM, pixels_x=4208, pixels_y=pixels_y)
    layout = ArrayLayout.from_mm(rows=1, cols=2, pitch_x_mm=13.5)
    return ArrayConfig(sensor, _lens_for_pitch(13.5), layout, magnification=0.1)


def stereo_depth_experiment(z_min_um: float = -3000.0,
                            z_max_um: float = 3000.0,
                            step_um: float = 100.0, *, seed: int = 0,
                            config: ArrayConfig | None = None,
                            analytic: bool = False,
                            ) -> depth.DepthExperimentReport:
    """The axial accuracy sweep: displace a flat target, triangulate it back."""
    if config is None:
        config = desk_stereo_config()
    if analytic:
        return depth.run_depth_sweep(config, z_min_um, z_max_um, step_um,
                                     analytic=True)
    extent = (config.layout.pitch_x_um + config.fov_x_um + 2e3,
              config.fov_y_um + 1e3)
    pitch = config.sensor.pixel_pitch_um / (2.0 * config.magnification)
    scene = make_textured_scene(extent, pitch, seed,
                                feature_scale_um=6.0 * pitch)
    return depth.run_depth_sweep(config, z_min_um, z_max_um, step_um, scene,
                                 seed=seed)


def desk_tiled_config() -> ArrayConfig:
    sensor = SensorSpec(_PIXEL_UM, pixels_x=520, pixels_y=392)
    layout = ArrayLayout.from_mm(2, 2, 1.0)
    return ArrayConfig(sensor, _lens_for_pitch(1.0), layout, magnification=1.0)


def tiled_scan_experiment(*, seed: int = 0, overlap: float = 0.1,
                          n_slices: int = 4, slice_step_um: float = 10.0,
                          config: ArrayConfig | None = None, threads: int = 1):
    """Tiled scan with a focus stack at every position, fused and stitched.

    Returns (plan, composite, coverage, decisions). The scene is textured
    and flat but offset axially, so focus selection has a true optimum.
    """
    if config is None:
        config = desk_tiled_config()
    plan = acquisition.plan_tiled_scan(config, overlap)
    extent = (config.layout.pitch_x_um + config.fov_x_um + 200.0,
              config.layout.pitch_y_um + config.fov_y_um + 200.0)
    pitch = config.sensor.pixel_pitch_um / (2.0 * config.magnification)
    scene = make_textured_scene(extent, pitch, seed)
    focus_at = slice_step_um * ((n_slices - 1) // 2)
    scene = scene.with_height_map(
        np.full(scene.intensity.shape, focus_at, dtype=np.float32))
    z_offsets = [slice_step_um * k for k in range(n_slices)]

    cal = nominal_calibration(config)
    scans = []
    decisions = []
    for offset in plan.lateral_offsets_um:
        stage = (offset[0], offset[1], 0.0)
        stacks = render_focal_stack(scene, config, z_offsets, stage,
                                    seed, threads=threads)
        fused, decs = acquisition.fuse_focal_stacks(stacks)
        scans.append(((offset[0], offset[1]), fused))
        decisions.append(decs)
    comp = acquisition.assemble_tiled_composite(scans, cal)
    coverage = acquisition.coverage_report(config, plan)
    return plan, comp, coverage, decisions


def focus_trial(trial_seed: int, *, n_slices: int = 10,
                slice_step_um: float = 10.0) -> tuple[int, int]:
    """One focus-selection trial: returns (true slice, chosen slice).

    A flat textured scene is parked at the height of a randomly drawn
    slice; the stack sweeps the focus plane across all slices.
    """
    rng = np.random.default_rng(trial_seed)
    true_slice = int(rng.integers(0, n_slices))
    sensor = SensorSpec(_PIXEL_UM, pixels_x=160, pixels_y=160)
    layout = ArrayLayout.from_mm(1, 1, 1.0)
    config = ArrayConfig(sensor, _lens_for_pitch(13.0), layout,
                         magnification=1.0)

    pitch = _PIXEL_UM / 2.0
    extent = (config.fov_x_um + 100.0, config.fov_y_um + 100.0)
    scene = make_textured_scene(extent, pitch, trial_seed,
                                feature_scale_um=5.0 * pitch)
    scene = scene.with_height_map(np.full(
        scene.intensity.shape, true_slice * slice_step_um, dtype=np.float32))
    z_offsets = [slice_step_um * k for k in range(n_slices)]
    stacks = render_focal_stack(scene, config, z_offsets)
    stack = [fs.frames[0] for fs in stacks]
    decision = acquisition.select_focus(stack)
    return true_slice, decision.chosen_index
