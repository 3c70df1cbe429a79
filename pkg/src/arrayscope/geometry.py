"""Geometry and design math for planar multi-camera array microscopes.

All lengths are stored in micrometers. Convenience ``from_mm`` constructors
are provided for the quantities normally quoted in millimeters (pitch, focal
length). Axis convention throughout the package:

* ``x`` is the horizontal axis (image width, array columns),
* ``y`` is the vertical axis (image height, array rows),
* rasters are indexed ``[y, x]`` (row-major, like any image array).

A lens-sensor pair images an object-plane region of size ``s/M`` per axis,
where ``s`` is the active sensor width and ``M`` the magnification. The
selected magnification drives three coverage regimes per axis:

* multi-view:   M <= s/(2p)   every point seen by at least two cameras,
* continuous:   s/(2p) < M <= s/p   gap-free single coverage,
* tiled:        M > s/p   gaps appear and must be filled by scanning,

with ``p`` the center-to-center camera pitch along that axis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SensorSpec",
    "LensSpec",
    "ArrayLayout",
    "ArrayConfig",
    "Regime",
    "RegimeReport",
    "FovExtent",
    "continuous_magnification",
    "pixel_limited_resolution",
    "classify_regime",
    "camera_object_fov",
    "total_fov_extent",
    "cameras_for_multiview_area",
    "scan_grid",
    "image_distance",
    "object_distance",
    "camera_axis_positions",
    "design_report_rows",
]

# Relative slack for regime-boundary comparisons. Wide enough to absorb the
# rounding of M = s/p computed in doubles (~2e-16), narrow enough that a
# 1e-9 relative excursion past the boundary classifies as the next regime.
_BOUNDARY_RTOL = 1e-12


@dataclass(frozen=True)
class SensorSpec:
    """One CMOS sensor: pixel pitch (um) and active pixel counts.

    ``pixels_x`` counts along the image width, ``pixels_y`` along the
    height; active widths are derived, never stored.
    """

    pixel_pitch_um: float
    pixels_x: int
    pixels_y: int
    bit_depth: int = 8

    def __post_init__(self):
        if self.pixel_pitch_um <= 0:
            raise ValueError("pixel pitch must be positive")
        if self.pixels_x < 1 or self.pixels_y < 1:
            raise ValueError("pixel counts must be >= 1")
        if self.bit_depth not in (8, 10, 12, 14, 16):
            raise ValueError("bit depth must be one of 8, 10, 12, 14, 16")

    @property
    def width_x_um(self) -> float:
        return self.pixels_x * self.pixel_pitch_um

    @property
    def width_y_um(self) -> float:
        return self.pixels_y * self.pixel_pitch_um

    @property
    def pixel_count(self) -> int:
        return self.pixels_x * self.pixels_y


@dataclass(frozen=True)
class LensSpec:
    """A micro-camera objective, thin-lens model."""

    focal_length_um: float
    f_number: float
    outer_diameter_um: float

    def __post_init__(self):
        if self.focal_length_um <= 0:
            raise ValueError("focal length must be positive")
        if self.f_number <= 0:
            raise ValueError("f-number must be positive")
        if self.outer_diameter_um <= 0:
            raise ValueError("outer diameter must be positive")

    @classmethod
    def from_mm(cls, focal_length_mm: float, f_number: float,
                outer_diameter_mm: float) -> "LensSpec":
        return cls(focal_length_mm * 1e3, f_number, outer_diameter_mm * 1e3)

    @property
    def aperture_um(self) -> float:
        return self.focal_length_um / self.f_number


@dataclass(frozen=True)
class ArrayLayout:
    """Regular camera grid: rows stack along y, columns along x."""

    rows: int
    cols: int
    pitch_x_um: float
    pitch_y_um: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("layout must contain at least one camera")
        if self.pitch_x_um <= 0 or self.pitch_y_um <= 0:
            raise ValueError("pitch must be positive")

    @classmethod
    def from_mm(cls, rows: int, cols: int, pitch_x_mm: float,
                pitch_y_mm: float | None = None) -> "ArrayLayout":
        if pitch_y_mm is None:
            pitch_y_mm = pitch_x_mm
        return cls(rows, cols, pitch_x_mm * 1e3, pitch_y_mm * 1e3)

    @property
    def camera_count(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class ArrayConfig:
    """Full array description plus the chosen magnification.

    The single source of geometric truth: image/object distances, per-camera
    FOV and composite pixel size are all derived from these fields.
    """

    sensor: SensorSpec
    lens: LensSpec
    layout: ArrayLayout
    magnification: float

    def __post_init__(self):
        if self.magnification <= 0:
            raise ValueError("magnification must be positive")
        # Sensors cannot physically overlap on the board.
        if self.layout.cols > 1 and self.sensor.width_x_um > self.layout.pitch_x_um:
            raise ValueError("sensor width exceeds pitch along x")
        if self.layout.rows > 1 and self.sensor.width_y_um > self.layout.pitch_y_um:
            raise ValueError("sensor width exceeds pitch along y")
        if self.layout.camera_count > 1 and self.lens.outer_diameter_um > max(
                self.layout.pitch_x_um, self.layout.pitch_y_um):
            raise ValueError("lens does not fit within the array pitch")

    @property
    def image_distance_um(self) -> float:
        return image_distance(self.lens, self.magnification)

    @property
    def object_distance_um(self) -> float:
        return object_distance(self.lens, self.magnification)

    @property
    def fov_x_um(self) -> float:
        return self.sensor.width_x_um / self.magnification

    @property
    def fov_y_um(self) -> float:
        return self.sensor.width_y_um / self.magnification

    @property
    def composite_pixel_um(self) -> float:
        """Object-plane size of one sensor pixel, delta/M."""
        return self.sensor.pixel_pitch_um / self.magnification


class Regime(enum.Enum):
    MULTI_VIEW = "multi_view"
    CONTINUOUS = "continuous"
    TILED = "tiled"


# Coverage ordering, weakest last.
_REGIME_RANK = {Regime.MULTI_VIEW: 0, Regime.CONTINUOUS: 1, Regime.TILED: 2}


@dataclass(frozen=True)
class RegimeReport:
    """Per-axis coverage classification of a configuration.

    ``overlap_fraction`` is 1 - p*M/s: positive means adjacent FOVs overlap
    by that fraction, negative means a gap. ``views_per_point`` is
    floor(s/(M*p)), the number of cameras that see a generic interior point
    along that axis (0 in the tiled regime).
    """

    regime_x: Regime
    regime_y: Regime
    overlap_fraction_x: float
    overlap_fraction_y: float
    views_per_point_x: int
    views_per_point_y: int

    @property
    def aggregate(self) -> Regime:
        """The weaker coverage of the two axes."""
        return max((self.regime_x, self.regime_y), key=_REGIME_RANK.get)


@dataclass(frozen=True)
class FovExtent:
    """Object-plane extent spanned by the array, with gap flags per axis."""

    extent_x_um: float
    extent_y_um: float
    has_gaps_x: bool
    has_gaps_y: bool

    @property
    def has_gaps(self) -> bool:
        return self.has_gaps_x or self.has_gaps_y


def continuous_magnification(sensor_width_um: float, pitch_um: float) -> float:
    """Magnification at which one camera's FOV exactly equals the pitch.

    M = s/p; always <= 1 because sensors must fit within the pitch.
    """
    if sensor_width_um <= 0 or pitch_um <= 0:
        raise ValueError("sensor width and pitch must be positive")
    if sensor_width_um > pitch_um:
        raise ValueError("sensor width cannot exceed the camera pitch")
    return sensor_width_um / pitch_um


def pixel_limited_resolution(pixel_pitch_um: float, magnification: float) -> float:
    """Pixel-limited full-pitch resolution 2*delta/M, in object-plane um."""
    if pixel_pitch_um <= 0 or magnification <= 0:
        raise ValueError("pixel pitch and magnification must be positive")
    return 2.0 * pixel_pitch_um / magnification


def _classify_axis(sensor_width_um: float, pitch_um: float,
                   magnification: float) -> tuple[Regime, float, int]:
    # t = p*M/s is the fraction of the FOV consumed by one pitch step.
    t = pitch_um * magnification / sensor_width_um
    if t > 1.0 + _BOUNDARY_RTOL:
        regime = Regime.TILED
    elif t > 0.5 * (1.0 + _BOUNDARY_RTOL):
        regime = Regime.CONTINUOUS
    else:
        regime = Regime.MULTI_VIEW
    overlap = 1.0 - t
    views = math.floor((1.0 / t) * (1.0 + _BOUNDARY_RTOL)) if regime is not Regime.TILED else 0
    return regime, overlap, views


def classify_regime(config: ArrayConfig) -> RegimeReport:
    """Classify the coverage regime of each axis for a configuration."""
    rx, ox, vx = _classify_axis(config.sensor.width_x_um,
                                config.layout.pitch_x_um, config.magnification)
    ry, oy, vy = _classify_axis(config.sensor.width_y_um,
                                config.layout.pitch_y_um, config.magnification)
    return RegimeReport(rx, ry, ox, oy, vx, vy)


def camera_object_fov(config: ArrayConfig) -> tuple[float, float]:
    """Object-plane FOV (x, y) of a single lens-sensor pair, in um."""
    return config.fov_x_um, config.fov_y_um


def total_fov_extent(config: ArrayConfig) -> FovExtent:
    """Object-plane extent covered by the whole array.

    Per axis the extent is (n-1)*p + s/M. In the tiled regime the rectangle
    contains unobserved gaps, flagged rather than raised.
    """
    report = classify_regime(config)
    ext_x = (config.layout.cols - 1) * config.layout.pitch_x_um + config.fov_x_um
    ext_y = (config.layout.rows - 1) * config.layout.pitch_y_um + config.fov_y_um
    return FovExtent(
        ext_x,
        ext_y,
        report.regime_x is Regime.TILED and config.layout.cols > 1,
        report.regime_y is Regime.TILED and config.layout.rows > 1,
    )


def cameras_for_multiview_area(area_um2: float, pitch_um: float) -> int:
    """Cameras needed to multi-view image an area: ceil(A / (4 p^2))."""
    if area_um2 <= 0 or pitch_um <= 0:
        raise ValueError("area and pitch must be positive")
    return math.ceil(area_um2 / (4.0 * pitch_um * pitch_um))


def scan_grid(config: ArrayConfig, overlap: float = 0.0) -> tuple[int, int]:
    """Lateral scan positions per axis needed to fill tiled-regime gaps.

    The step per axis is the camera FOV shrunk by the requested snapshot
    overlap; the count is ceil(p / step). With zero overlap this reduces to
    ceil(p*M/s). Configurations whose FOVs genuinely overlap on every axis
    have no gaps to fill and raise; the exact FOV = pitch boundary is
    scannable with a single position per axis.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    report = classify_regime(config)
    if min(report.overlap_fraction_x, report.overlap_fraction_y) > 1e-9:
        raise ValueError("configuration has no FOV gaps to scan over "
                         "(non-tiled regime)")

    def axis_count(fov_um: float, pitch_um: float) -> int:
        step = fov_um * (1.0 - overlap)
        return max(1, math.ceil(pitch_um / step - _BOUNDARY_RTOL))

    return (axis_count(config.fov_x_um, config.layout.pitch_x_um),
            axis_count(config.fov_y_um, config.layout.pitch_y_um))


def image_distance(lens: LensSpec, magnification: float) -> float:
    """Thin-lens image distance I_d = f (1 + M), in um."""
    if magnification <= 0:
        raise ValueError("magnification must be positive")
    return lens.focal_length_um * (1.0 + magnification)


def object_distance(lens: LensSpec, magnification: float) -> float:
    """Thin-lens object distance O_d = f (1 + 1/M), in um.

    O_d / I_d = 1/M holds exactly for all magnifications.
    """
    if magnification <= 0:
        raise ValueError("magnification must be positive")
    return lens.focal_length_um * (1.0 + 1.0 / magnification)


def camera_axis_positions(config: ArrayConfig) -> np.ndarray:
    """Object-plane optical-axis position of every camera, shape (rows, cols, 2).

    The array is centered on the origin; the last dimension is (x, y) in um.
    """
    lay = config.layout
    cx = (np.arange(lay.cols) - (lay.cols - 1) / 2.0) * lay.pitch_x_um
    cy = (np.arange(lay.rows) - (lay.rows - 1) / 2.0) * lay.pitch_y_um
    pos = np.empty((lay.rows, lay.cols, 2))
    pos[:, :, 0] = cx[None, :]
    pos[:, :, 1] = cy[:, None]
    return pos


def design_report_rows(config: ArrayConfig) -> list[dict]:
    """Per-axis design summary rows: regime, overlap, FOV and resolution.

    Matches the CSV export header axis,regime,overlap_fraction,fov_mm,r_pix_um.
    """
    report = classify_regime(config)
    r_pix = pixel_limited_resolution(config.sensor.pixel_pitch_um,
                                     config.magnification)
    return [
        {
            "axis": "x",
            "regime": report.regime_x.value,
            "overlap_fraction": report.overlap_fraction_x,
            "fov_mm": config.fov_x_um / 1e3,
            "r_pix_um": r_pix,
        },
        {
            "axis": "y",
            "regime": report.regime_y.value,
            "overlap_fraction": report.overlap_fraction_y,
            "fov_mm": config.fov_y_um / 1e3,
            "r_pix_um": r_pix,
        },
    ]
