"""Synthetic ground-truth scenes: what the camera array images.

A :class:`Scene` is a supersampled object-plane intensity raster in [0, 1]
plus a co-registered height map (um above the nominal focal plane). Scenes
are centered on the object-plane origin, which coincides with the center of
the camera array.

Texel ``(i, j)`` covers the half-open square
``[x0 + j*dx, x0 + (j+1)*dx) x [y0 + i*dx, y0 + (i+1)*dx)`` with
``dx = sample_pitch_um`` and ``(x0, y0)`` the bottom corner
``(-extent_x/2, -extent_y/2)``. Bar targets are rasterized by exact area
coverage, so bar edges are not snapped to the texel grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Scene",
    "ResolutionTargetSpec",
    "BarGroup",
    "make_resolution_target",
    "make_textured_scene",
    "make_plateau_scene",
]


@dataclass(frozen=True)
class Scene:
    """Ground-truth intensity and height over a physical extent."""

    intensity: np.ndarray            # float32 raster in [0, 1], shape (ny, nx)
    sample_pitch_um: float           # object-plane size of one texel
    height_map: np.ndarray | None = None   # um, same shape; None means flat 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.intensity.ndim != 2:
            raise ValueError("intensity raster must be 2-D")
        if self.sample_pitch_um <= 0:
            raise ValueError("sample pitch must be positive")
        if self.height_map is not None:
            if self.height_map.shape != self.intensity.shape:
                raise ValueError("height map shape must match intensity")
            if not np.all(np.isfinite(self.height_map)):
                raise ValueError("height map must be finite everywhere")

    @property
    def extent_x_um(self) -> float:
        return self.intensity.shape[1] * self.sample_pitch_um

    @property
    def extent_y_um(self) -> float:
        return self.intensity.shape[0] * self.sample_pitch_um

    @property
    def origin_x_um(self) -> float:
        """Object-plane x of the left edge of texel column 0."""
        return -self.extent_x_um / 2.0

    @property
    def origin_y_um(self) -> float:
        return -self.extent_y_um / 2.0

    def with_height_map(self, height_map: np.ndarray) -> "Scene":
        return replace(self, height_map=np.asarray(height_map, dtype=np.float32),
                       _cache={})

    def integral_image(self) -> np.ndarray:
        """Zero-padded cumulative sum of the intensity raster (lazy, cached).

        ``sat[i, j]`` is the integral of the raster over texels
        ``[0:i, 0:j]``; evaluating it with bilinear interpolation at real
        coordinates gives exact box integrals of the piecewise-constant
        scene. Cached only for moderate rasters; larger scenes are cropped
        and summed per render instead.
        """
        sat = self._cache.get("sat")
        if sat is None and self.intensity.size <= 48_000_000:
            sat = _integral_image(self.intensity)
            self._cache["sat"] = sat
        return sat


def _integral_image(raster: np.ndarray) -> np.ndarray:
    ny, nx = raster.shape
    sat = np.zeros((ny + 1, nx + 1), dtype=np.float64)
    np.cumsum(raster, axis=0, dtype=np.float64, out=sat[1:, 1:])
    np.cumsum(sat[1:, 1:], axis=1, out=sat[1:, 1:])
    return sat


@dataclass(frozen=True)
class ResolutionTargetSpec:
    """Bar-target recipe: one group of line pairs per requested spacing.

    ``bar_groups_um`` lists full-pitch spacings (one dark + one bright bar)
    in strictly decreasing order. ``orientation`` selects whether bars vary
    along x ("vertical" bars), along y ("horizontal"), or both.
    """

    bar_groups_um: tuple[float, ...]
    bars_per_group: int = 8
    orientation: str = "vertical"    # vertical | horizontal | both

    def __post_init__(self):
        if not self.bar_groups_um:
            raise ValueError("at least one bar group is required")
        if any(b <= 0 for b in self.bar_groups_um):
            raise ValueError("bar spacings must be positive")
        if list(self.bar_groups_um) != sorted(self.bar_groups_um, reverse=True):
            raise ValueError("bar spacings must be strictly decreasing")
        if len(set(self.bar_groups_um)) != len(self.bar_groups_um):
            raise ValueError("bar spacings must be strictly decreasing")
        if self.bars_per_group < 1:
            raise ValueError("bars_per_group must be >= 1")
        if self.orientation not in ("vertical", "horizontal", "both"):
            raise ValueError("orientation must be vertical, horizontal or both")


@dataclass(frozen=True)
class BarGroup:
    """Placement record for one rendered bar group (object-plane um)."""

    spacing_um: float
    orientation: str                 # vertical | horizontal
    x0_um: float                     # group bounding box
    y0_um: float
    x1_um: float
    y1_um: float
    phase_um: float                  # object coordinate where the first bright bar starts


def _coverage_profile(n_texels: int, origin_um: float, pitch_um: float,
                      start_um: float, period_um: float, n_periods: int) -> np.ndarray:
    """Fraction of each texel covered by the bright bars of a square wave.

    Bright bars occupy [start + k*period, start + k*period + period/2) for
    k in [0, n_periods). Exact area coverage, vectorized over texels.
    """
    edges = origin_um + np.arange(n_texels + 1) * pitch_um
    lo, hi = edges[:-1], edges[1:]
    cover = np.zeros(n_texels)
    half = period_um / 2.0
    for k in range(n_periods):
        b0 = start_um + k * period_um
        b1 = b0 + half
        cover += np.clip(np.minimum(hi, b1) - np.maximum(lo, b0), 0.0, None)
    return cover / pitch_um


def make_resolution_target(spec: ResolutionTargetSpec,
                           extent_um: tuple[float, float],
                           sample_pitch_um: float,
                           *,
                           origin_um: tuple[float, float] | None = None,
                           bar_length_um: float | None = None,
                           group_gap_um: float | None = None,
                           group_phase_um: dict[float, float] | None = None,
                           background: float = 0.0,
                           ) -> tuple[Scene, list[BarGroup]]:
    """Rasterize a bar target scene and return it with placement metadata.

    Groups are stacked top to bottom starting at ``origin_um`` (defaults to
    a corner margin). ``group_phase_um`` optionally pins the object-plane x
    (or y, for horizontal bars) where a given group's first bright bar
    starts, which lets callers align bars with a chosen camera's pixel grid.
    The height map is flat zero.
    """
    if any(s < 2.0 * sample_pitch_um * (1.0 - 1e-12) for s in spec.bar_groups_um):
        raise ValueError("bar spacing below 2x sample pitch is unrepresentable")

    ext_x, ext_y = extent_um
    nx = int(round(ext_x / sample_pitch_um))
    ny = int(round(ext_y / sample_pitch_um))
    if nx < 1 or ny < 1:
        raise ValueError("extent too small for the sample pitch")
    raster = np.full((ny, nx), background, dtype=np.float32)
    x_edge = -nx * sample_pitch_um / 2.0
    y_edge = -ny * sample_pitch_um / 2.0

    orientations = (["vertical", "horizontal"] if spec.orientation == "both"
                    else [spec.orientation])
    widest = max(spec.bar_groups_um)
    if bar_length_um is None:
        bar_length_um = max(10.0 * widest, 40.0 * sample_pitch_um)
    if group_gap_um is None:
        group_gap_um = max(2.0 * widest, 8.0 * sample_pitch_um)
    if origin_um is None:
        origin_um = (x_edge + group_gap_um, y_edge + group_gap_um)

    groups: list[BarGroup] = []
    gy = origin_um[1]
    for orientation in orientations:
        for spacing in spec.bar_groups_um:
            run = spec.bars_per_group * spacing
            phase = None if group_phase_um is None else group_phase_um.get(spacing)
            if orientation == "vertical":
                gx = origin_um[0] if phase is None else phase
                w, h = run, bar_length_um
                profile = _coverage_profile(nx, x_edge, sample_pitch_um,
                                            gx, spacing, spec.bars_per_group)
                i0 = int(np.floor((gy - y_edge) / sample_pitch_um))
                i1 = int(np.ceil((gy + h - y_edge) / sample_pitch_um))
                i0, i1 = max(i0, 0), min(i1, ny)
                raster[i0:i1, :] = np.maximum(raster[i0:i1, :],
                                              profile[None, :].astype(np.float32))
                groups.append(BarGroup(spacing, orientation, gx, gy,
                                       gx + w, gy + h, gx))
            else:
                gx = origin_um[0]
                g0 = gy if phase is None else phase
                w, h = bar_length_um, run
                profile = _coverage_profile(ny, y_edge, sample_pitch_um,
                                            g0, spacing, spec.bars_per_group)
                j0 = int(np.floor((gx - x_edge) / sample_pitch_um))
                j1 = int(np.ceil((gx + w - x_edge) / sample_pitch_um))
                j0, j1 = max(j0, 0), min(j1, nx)
                raster[:, j0:j1] = np.maximum(raster[:, j0:j1],
                                              profile[:, None].astype(np.float32))
                groups.append(BarGroup(spacing, orientation, gx, g0,
                                       gx + w, g0 + h, g0))
            if gy + bar_length_um + group_gap_um > ny * sample_pitch_um / 2.0 + abs(y_edge):
                raise ValueError("extent too small for the requested groups")
            gy += bar_length_um + group_gap_um

    return Scene(raster, sample_pitch_um), groups


def make_textured_scene(extent_um: tuple[float, float], sample_pitch_um: float,
                        seed: int, *, feature_scale_um: float | None = None,
                        lo: float = 0.1, hi: float = 0.9) -> Scene:
    """Band-limited random texture, good for registration and matching.

    Two octaves of Gaussian-filtered white noise, rescaled into [lo, hi].
    ``feature_scale_um`` sets the dominant blob size (defaults to 12 texels).
    """
    from scipy import ndimage

    ext_x, ext_y = extent_um
    nx = int(round(ext_x / sample_pitch_um))
    ny = int(round(ext_y / sample_pitch_um))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((ny, nx), dtype=np.float32)
    sigma = (feature_scale_um / sample_pitch_um / 2.0 if feature_scale_um
             else 6.0)
    tex = ndimage.gaussian_filter(noise, sigma, mode="wrap")
    tex += 0.5 * ndimage.gaussian_filter(noise, sigma / 3.0, mode="wrap")
    sub = tex[::4, ::4] if tex.size > 4_000_000 else tex
    t_lo, t_hi = np.percentile(sub, [1.0, 99.0])
    tex = np.clip((tex - t_lo) / max(t_hi - t_lo, 1e-9), 0.0, 1.0)
    return Scene((lo + (hi - lo) * tex).astype(np.float32), sample_pitch_um)


def make_plateau_scene(extent_um: tuple[float, float], sample_pitch_um: float,
                       seed: int, *, height_left_um: float,
                       height_right_um: float) -> Scene:
    """Textured scene whose left/right halves sit at two distinct heights."""
    scene = make_textured_scene(extent_um, sample_pitch_um, seed)
    heights = np.full(scene.intensity.shape, height_left_um, dtype=np.float32)
    heights[:, scene.intensity.shape[1] // 2:] = height_right_um
    return scene.with_height_map(heights)
