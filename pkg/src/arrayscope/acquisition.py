"""Tiled-scan planning, focus-stack selection, and data-path throughput.

In the tiled regime the array only has to scan across one inter-camera
pitch to fill the FOV gaps, an N-fold travel saving over single-objective
scanning. Focus stacks are reduced per camera and position by the variance
of the discrete Laplacian; the throughput model is ideal-bandwidth
arithmetic with a single efficiency knob for real-world overheads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import (ArrayConfig, SensorSpec, camera_axis_positions,
                       pixel_limited_resolution, scan_grid)
from .render import CameraFrame, FrameSet
from .stitching import Composite, StitchCalibration, blend_tiles, _ramp_px

__all__ = [
    "ScanPlan",
    "FocusDecision",
    "ThroughputReport",
    "CoverageReport",
    "plan_tiled_scan",
    "coverage_report",
    "laplacian_focus_metric",
    "select_focus",
    "fuse_focal_stacks",
    "assemble_tiled_composite",
    "frame_bytes",
    "max_frame_rate",
    "recording_capacity",
    "throughput_report",
]


@dataclass(frozen=True)
class ScanPlan:
    """Ordered lateral stage positions (and optional axial ones), in um."""

    lateral_offsets_um: list[tuple[float, float]]
    axial_offsets_um: list[float]
    overlap: float
    grid_shape: tuple[int, int]      # (count_x, count_y)

    def __post_init__(self):
        if len(set(self.lateral_offsets_um)) != len(self.lateral_offsets_um):
            raise ValueError("scan offsets must be unique")

    @property
    def n_positions(self) -> int:
        return len(self.lateral_offsets_um)

    @property
    def max_travel_um(self) -> tuple[float, float]:
        xs = [abs(o[0]) for o in self.lateral_offsets_um]
        ys = [abs(o[1]) for o in self.lateral_offsets_um]
        return max(xs), max(ys)


@dataclass(frozen=True)
class FocusDecision:
    """Chosen slice of one focus stack, with the metric per slice."""

    chosen_index: int
    metrics: np.ndarray
    featureless: bool = False


@dataclass(frozen=True)
class ThroughputReport:
    """Data-path arithmetic for one acquisition configuration."""

    frame_bytes: int
    max_fps: float
    buffer_frames: int
    max_duration_s: float
    bandwidth_bytes_s: float
    efficiency: float


@dataclass(frozen=True)
class CoverageReport:
    """Dense-grid check that planned footprints tile the target rectangle."""

    covered_fraction: float
    has_gaps: bool
    grid_step_um: float


def plan_tiled_scan(config: ArrayConfig, overlap: float = 0.1, *,
                    serpentine: bool = True, uniform_step: bool = False,
                    axial_offsets_um: list[float] | None = None) -> ScanPlan:
    """Plan the lateral scan that fills tiled-regime FOV gaps.

    Steps are the camera FOV shrunk by ``overlap``; counts per axis come
    from :func:`arrayscope.geometry.scan_grid`. With ``uniform_step`` both
    axes use the short-axis step, trading extra snapshots for an isotropic
    overlap (the convention that yields a 5 x 5 scan on the reference
    tiled setup at 10 % overlap). Offsets never exceed one pitch per axis.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    count_x, count_y = scan_grid(config, overlap)   # validates the regime
    step_x = config.fov_x_um * (1.0 - overlap)
    step_y = config.fov_y_um * (1.0 - overlap)
    if uniform_step:
        step_x = step_y = min(step_x, step_y)
        count_x = max(1, math.ceil(config.layout.pitch_x_um / step_x - 1e-12))
        count_y = max(1, math.ceil(config.layout.pitch_y_um / step_y - 1e-12))

    offsets: list[tuple[float, float]] = []
    for iy in range(count_y):
        xs = range(count_x)
        if serpentine and iy % 2:
            xs = reversed(xs)
        for ix in xs:
            offsets.append((ix * step_x, iy * step_y))
    return ScanPlan(offsets, list(axial_offsets_um or []), overlap,
                    (count_x, count_y))


def _is_product_set(offsets: np.ndarray) -> bool:
    ux = np.unique(offsets[:, 0])
    uy = np.unique(offsets[:, 1])
    if len(ux) * len(uy) != len(offsets):
        return False
    have = {(float(x), float(y)) for x, y in offsets}
    return all((float(x), float(y)) in have for x in ux for y in uy)


def coverage_report(config: ArrayConfig, plan: ScanPlan,
                    grid_step_um: float | None = None) -> CoverageReport:
    """Check that planned footprints cover the array's total FOV rectangle.

    Complete grid plans factorize: covering every x sample and every y
    sample separately is equivalent to 2-D coverage, so each axis is
    checked densely at ``grid_step_um`` (default half the pixel-limited
    resolution). Irregular offset sets (a skipped position, say) do not
    factorize and fall back to an exact slab sweep over the footprint
    rectangles.
    """
    if grid_step_um is None:
        grid_step_um = pixel_limited_resolution(
            config.sensor.pixel_pitch_um, config.magnification) / 2.0
    axes = camera_axis_positions(config).reshape(-1, 2)
    half_x = config.fov_x_um / 2.0
    half_y = config.fov_y_um / 2.0
    x0 = axes[:, 0].min() - half_x
    x1 = axes[:, 0].max() + half_x
    y0 = axes[:, 1].min() - half_y
    y1 = axes[:, 1].max() + half_y
    offs = np.asarray(plan.lateral_offsets_um, dtype=np.float64)

    if _is_product_set(offs):
        gx = np.arange(x0 + grid_step_um / 2, x1, grid_step_um)
        gy = np.arange(y0 + grid_step_um / 2, y1, grid_step_um)
        covered_x = np.zeros(len(gx), dtype=bool)
        covered_y = np.zeros(len(gy), dtype=bool)
        for c in np.unique(np.add.outer(axes[:, 0], offs[:, 0])):
            covered_x |= np.abs(gx - c) <= half_x
        for c in np.unique(np.add.outer(axes[:, 1], offs[:, 1])):
            covered_y |= np.abs(gy - c) <= half_y
        frac = float(covered_x.mean() * covered_y.mean())
        return CoverageReport(frac, frac < 1.0, grid_step_um)

    # Exact area of the union of footprint rectangles within the target.
    cx = np.add.outer(axes[:, 0], offs[:, 0]).ravel()
    cy = np.add.outer(axes[:, 1], offs[:, 1]).ravel()
    rx0, rx1 = cx - half_x, cx + half_x
    ry0, ry1 = np.maximum(cy - half_y, y0), np.minimum(cy + half_y, y1)
    edges = np.unique(np.clip(np.concatenate([rx0, rx1, [x0, x1]]), x0, x1))
    area = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        spanning = (rx0 <= a + 1e-9) & (rx1 >= b - 1e-9)
        if not spanning.any():
            continue
        ivs = sorted(zip(ry0[spanning], ry1[spanning]))
        length = 0.0
        cursor = y0
        for iy0, iy1 in ivs:
            lo = max(iy0, cursor)
            if iy1 > lo:
                length += iy1 - lo
                cursor = iy1
        area += (b - a) * length
    frac = area / ((x1 - x0) * (y1 - y0))
    frac = min(frac, 1.0)
    return CoverageReport(float(frac), frac < 1.0 - 1e-12, grid_step_um)


def laplacian_focus_metric(frame: CameraFrame | np.ndarray,
                           region: tuple[slice, slice] | None = None) -> float:
    """Variance of the 3x3 discrete Laplacian over a frame region.

    Zero on uniform frames; scales with the square of any global intensity
    gain, so argmax comparisons are gain-invariant. The region defaults to
    the central 50 % of the frame, away from corner aberrations.
    """
    img = frame.pixels if isinstance(frame, CameraFrame) else frame
    ny, nx = img.shape
    if region is None:
        region = (slice(ny // 4, ny - ny // 4), slice(nx // 4, nx - nx // 4))
    crop = img[region]
    if crop.shape[0] < 16 or crop.shape[1] < 16:
        raise ValueError("focus metric region must be at least 16x16 px")
    lap = ndimage.laplace(crop.astype(np.float64), mode="nearest")
    # Drop the border ring where the stencil straddles the crop edge.
    return float(lap[1:-1, 1:-1].var())


def select_focus(stack: list[CameraFrame],
                 region: tuple[slice, slice] | None = None) -> FocusDecision:
    """Pick the sharpest slice of a focus stack by the Laplacian metric.

    Ties break toward the stack center (the lower of the two middle
    indices for even-length stacks); an all-zero metric flags the stack
    featureless and defaults to the center slice.
    """
    if len(stack) < 2:
        raise ValueError("a focus stack needs at least two slices")
    metrics = np.array([laplacian_focus_metric(f, region) for f in stack])
    center = (len(stack) - 1) / 2.0
    if np.all(metrics == 0.0):
        return FocusDecision(int(math.floor(center)), metrics, True)
    best = metrics.max()
    candidates = np.nonzero(metrics == best)[0]
    chosen = min(candidates, key=lambda i: (abs(i - center), i))
    return FocusDecision(int(chosen), metrics, False)


def fuse_focal_stacks(stacks: list[FrameSet],
                      region: tuple[slice, slice] | None = None,
                      ) -> tuple[FrameSet, list[FocusDecision]]:
    """Reduce per-focus FrameSets to one all-in-focus FrameSet per camera."""
    if len(stacks) < 2:
        raise ValueError("need at least two focus slices")
    config = stacks[0].config
    decisions = []
    frames = []
    for k in range(config.layout.camera_count):
        stack = [fs.frames[k] for fs in stacks]
        decision = select_focus(stack, region)
        decisions.append(decision)
        chosen = stack[decision.chosen_index]
        frames.append(chosen if chosen.exposure_id == 0 else
                      _with_exposure(chosen, 0))
    return FrameSet(frames, config, stacks[0].stage_offset_um), decisions


def _with_exposure(frame: CameraFrame, exposure_id: int) -> CameraFrame:
    from dataclasses import replace
    return replace(frame, exposure_id=exposure_id)


def assemble_tiled_composite(scans: list[tuple[tuple[float, float], FrameSet]],
                             calibration: StitchCalibration | list[StitchCalibration],
                             ) -> Composite:
    """Blend scan positions x cameras into one mosaic.

    Each entry pairs a lateral stage offset (um) with the in-focus FrameSet
    captured there; anchors shift opposite the stage motion because moving
    the sample by +d slides its image content by -d in scene coordinates.
    ``calibration`` may be shared or given per scan position.
    """
    if not scans:
        raise ValueError("no scan positions supplied")
    calibs = calibration if isinstance(calibration, list) \
        else [calibration] * len(scans)
    if len(calibs) != len(scans):
        raise ValueError("need one calibration per scan position")

    config = scans[0][1].config
    cpx = calibs[0].composite_pixel_um
    rasters, anchors, gains = [], [], []
    for (offset, fs), cal in zip(scans, calibs):
        shift = np.array([offset[0] / cpx, offset[1] / cpx])
        for k, frame in enumerate(fs.frames):
            rasters.append(frame.pixels)
            anchors.append(cal.tile_positions[k] - shift)
            gains.append(cal.gains[k])
    raster, wsum, (ox, oy) = blend_tiles(rasters, np.asarray(anchors),
                                         np.asarray(gains), _ramp_px(config))
    ref = scans[0][1].frames[calibs[0].reference_index]
    ny, nx = ref.pixels.shape
    origin_x = ref.optical_axis_um[0] + (ox - (nx - 1) / 2.0) * cpx
    origin_y = ref.optical_axis_um[1] + (oy - (ny - 1) / 2.0) * cpx
    return Composite(raster, origin_x, origin_y, cpx, wsum, True)


def frame_bytes(sensor: SensorSpec, n_cameras: int = 1, binning: int = 1,
                crop: tuple[int, int] | None = None) -> int:
    """Raw bytes of one synchronized snapshot across the array."""
    if n_cameras < 1:
        raise ValueError("camera count must be >= 1")
    px_x, px_y = sensor.pixels_x, sensor.pixels_y
    if crop is not None:
        cx, cy = crop
        if not (1 <= cx <= px_x and 1 <= cy <= px_y):
            raise ValueError(f"crop {crop} exceeds sensor {px_x}x{px_y}")
        px_x, px_y = cx, cy
    if binning < 1 or px_x % binning or px_y % binning:
        raise ValueError(f"binning {binning} does not divide {px_x}x{px_y}")
    pixels = (px_x // binning) * (px_y // binning)
    bits = n_cameras * pixels * sensor.bit_depth
    return bits // 8


def max_frame_rate(frame_bytes_: int, bandwidth_bytes_s: float) -> float:
    """Frames per second the link can sustain: bandwidth / frame size."""
    if frame_bytes_ <= 0 or bandwidth_bytes_s <= 0:
        raise ValueError("frame size and bandwidth must be positive")
    return bandwidth_bytes_s / frame_bytes_


def recording_capacity(frame_bytes_: int, fps: float,
                       buffer_bytes: float) -> tuple[int, float]:
    """How many frames fit in the buffer and how long that lasts."""
    if frame_bytes_ <= 0 or fps <= 0 or buffer_bytes < 0:
        raise ValueError("inputs must be positive")
    frames = int(buffer_bytes // frame_bytes_)
    return frames, frames / fps


def throughput_report(sensor: SensorSpec, n_cameras: int,
                      bandwidth_bytes_s: float = 5e9,
                      buffer_bytes: float = 128e9, *,
                      binning: int = 1, crop: tuple[int, int] | None = None,
                      efficiency: float = 1.0) -> ThroughputReport:
    """Assemble the full data-path summary for one configuration.

    ``efficiency`` scales the ideal bandwidth to absorb per-frame padding,
    link and drive overheads that raw arithmetic does not model.
    """
    if not 0.0 < efficiency <= 1.0:
        raise ValueError("efficiency must lie in (0, 1]")
    fb = frame_bytes(sensor, n_cameras, binning, crop)
    fps = max_frame_rate(fb, bandwidth_bytes_s * efficiency)
    frames, duration = recording_capacity(fb, fps, buffer_bytes)
    return ThroughputReport(fb, fps, frames, duration,
                            bandwidth_bytes_s, efficiency)
