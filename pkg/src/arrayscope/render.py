"""Per-camera forward rendering of synthetic scenes.

The model is a thin-lens pinhole projection: a sample point at lateral
position ``X`` and height ``h`` above the focal plane projects, for the
camera whose optical axis crosses the object plane at ``a``, to the image
plane position ``x_img = (X - a) * I_d / (O_d - h)``. Each sensor pixel
integrates the scene over its back-projected footprint (exact box average
via integral images), then defocus is applied as a Gaussian whose sigma is
half the image-side circle of confusion

    CoC_img = (f / f_number) * M * |h - z_focus| / O_d,

followed by optional additive Gaussian read noise. Rasters are float32 in
[0, 1]; the sensor bit depth is applied when frames are exported.

``stage_offset`` displaces the sample: ``(dx, dy)`` shift it laterally and
``dz`` raises it toward the lenses (adding to every height). ``z_offset``
instead moves the plane of best focus, leaving geometry untouched, which is
how focal stacks are swept.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .geometry import ArrayConfig, camera_axis_positions
from .scene import Scene, _integral_image

__all__ = [
    "CameraFrame",
    "FrameSet",
    "render_camera",
    "render_array",
    "render_focal_stack",
    "apply_binning",
]

# Blur below this sigma (sensor px) is invisible next to pixel integration.
_MIN_SIGMA_PX = 0.02
_MAX_BLUR_LEVELS = 6


@dataclass(frozen=True)
class CameraFrame:
    """One rendered exposure of one micro-camera."""

    pixels: np.ndarray               # float32 (ny, nx) in [0, 1]
    camera_index: tuple[int, int]    # (row, col) in the array grid
    optical_axis_um: tuple[float, float]   # object-plane (x, y)
    z_offset_um: float = 0.0         # focus-plane position when rendered
    exposure_id: int = 0
    binning: int = 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class FrameSet:
    """All camera frames of one synchronized snapshot."""

    frames: list[CameraFrame]        # row-major camera order
    config: ArrayConfig
    stage_offset_um: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        expected = self.config.layout.camera_count
        if len(self.frames) != expected:
            raise ValueError(
                f"expected {expected} frames, got {len(self.frames)}")
        ids = {f.exposure_id for f in self.frames}
        if len(ids) > 1:
            raise ValueError("all frames in a set must share an exposure id")

    def frame(self, row: int, col: int) -> CameraFrame:
        return self.frames[row * self.layout_cols + col]

    @property
    def layout_cols(self) -> int:
        return self.config.layout.cols

    @property
    def exposure_id(self) -> int:
        return self.frames[0].exposure_id


def _sat_rows(sat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Interpolate integral-image rows at continuous y, vectorized."""
    iy = np.clip(y.astype(np.int64), 0, sat.shape[0] - 2)
    fy = y - iy
    return sat[iy] * (1.0 - fy)[:, None] + sat[iy + 1] * fy[:, None]


def _cols_at(rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Interpolate the row-combined array at continuous x per column."""
    ix = np.clip(x.astype(np.int64), 0, rows.shape[1] - 2)
    fx = x - ix
    return rows[:, ix] * (1.0 - fx)[None, :] + rows[:, ix + 1] * fx[None, :]


def _box_average_grid(sat: np.ndarray, x_lo, x_hi, y_lo, y_hi,
                      area: float) -> np.ndarray:
    """Exact box averages on a separable grid of footprints (flat scenes)."""
    ny_s, nx_s = sat.shape[0] - 1, sat.shape[1] - 1
    y1 = np.clip(y_lo, 0.0, ny_s)
    y2 = np.clip(y_hi, 0.0, ny_s)
    x1 = np.clip(x_lo, 0.0, nx_s)
    x2 = np.clip(x_hi, 0.0, nx_s)
    # Row interpolation only needs the column span the frame touches.
    j0 = max(0, int(np.floor(x1.min())))
    j1 = min(nx_s, int(np.ceil(x2.max())) + 1)
    view = sat[:, j0:j1 + 1]
    rows = _sat_rows(view, y2) - _sat_rows(view, y1)
    integral = _cols_at(rows, x2 - j0) - _cols_at(rows, x1 - j0)
    return integral / area


def _sat_point(sat: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    iy = np.clip(y.astype(np.int64), 0, sat.shape[0] - 2)
    ix = np.clip(x.astype(np.int64), 0, sat.shape[1] - 2)
    fy, fx = y - iy, x - ix
    s00 = sat[iy, ix]
    s01 = sat[iy, ix + 1]
    s10 = sat[iy + 1, ix]
    s11 = sat[iy + 1, ix + 1]
    top = s00 * (1.0 - fx) + s01 * fx
    bot = s10 * (1.0 - fx) + s11 * fx
    return top * (1.0 - fy) + bot * fy


def _box_average_points(sat: np.ndarray, x_lo, x_hi, y_lo, y_hi,
                        area) -> np.ndarray:
    """Exact box averages at per-pixel footprints (height-varying scenes)."""
    ny_s, nx_s = sat.shape[0] - 1, sat.shape[1] - 1
    y1 = np.clip(y_lo, 0.0, ny_s)
    y2 = np.clip(y_hi, 0.0, ny_s)
    x1 = np.clip(x_lo, 0.0, nx_s)
    x2 = np.clip(x_hi, 0.0, nx_s)
    integral = (_sat_point(sat, y2, x2) - _sat_point(sat, y1, x2)
                - _sat_point(sat, y2, x1) + _sat_point(sat, y1, x1))
    return integral / area


def _scene_sat_window(scene: Scene, x_range, y_range):
    """Integral image covering the requested object window.

    Returns (sat, j0, i0) where (j0, i0) are the texel offsets of the
    window. Uses the scene-wide cached integral image when available,
    otherwise builds one over the cropped window only.
    """
    full = scene.integral_image()
    if full is not None:
        return full, 0, 0
    pitch = scene.sample_pitch_um
    ny, nx = scene.intensity.shape
    j0 = max(0, int(np.floor((x_range[0] - scene.origin_x_um) / pitch)) - 2)
    j1 = min(nx, int(np.ceil((x_range[1] - scene.origin_x_um) / pitch)) + 2)
    i0 = max(0, int(np.floor((y_range[0] - scene.origin_y_um) / pitch)) - 2)
    i1 = min(ny, int(np.ceil((y_range[1] - scene.origin_y_um) / pitch)) + 2)
    j0, j1 = min(j0, nx), max(j1, j0 + 1)
    i0, i1 = min(i0, ny), max(i1, i0 + 1)
    return _integral_image(scene.intensity[i0:i1, j0:j1]), j0, i0


def _variable_blur(img: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Gaussian blur with a per-pixel sigma, via interpolated blur levels."""
    s_min, s_max = float(sigma.min()), float(sigma.max())
    if s_max < _MIN_SIGMA_PX:
        return img
    if s_max - s_min < 0.05:
        return ndimage.gaussian_filter(img, 0.5 * (s_min + s_max),
                                       mode="nearest")
    levels = np.linspace(s_min, s_max, _MAX_BLUR_LEVELS)
    stack = [img if s < _MIN_SIGMA_PX else
             ndimage.gaussian_filter(img, s, mode="nearest") for s in levels]
    idx = np.clip((sigma - s_min) / (levels[1] - levels[0]), 0,
                  _MAX_BLUR_LEVELS - 1 - 1e-9)
    lo = idx.astype(np.int64)
    frac = (idx - lo).astype(np.float32)
    out = np.empty_like(img)
    for k in range(_MAX_BLUR_LEVELS - 1):
        mask = lo == k
        if np.any(mask):
            out[mask] = (stack[k][mask] * (1.0 - frac[mask])
                         + stack[k + 1][mask] * frac[mask])
    return out


def render_camera(scene: Scene, config: ArrayConfig,
                  camera_index: tuple[int, int],
                  stage_offset_um: tuple[float, float, float] = (0.0, 0.0, 0.0),
                  rng_seed: int | None = None, *,
                  z_offset_um: float = 0.0,
                  noise_std: float = 0.0,
                  exposure_id: int = 0) -> CameraFrame:
    """Render what one micro-camera sees of the scene.

    Deterministic given (scene, config, camera_index, stage, seed); the
    noise stream is keyed by (seed, exposure, row, col) so frames do not
    depend on render order.
    """
    row, col = camera_index
    lay = config.layout
    if not (0 <= row < lay.rows and 0 <= col < lay.cols):
        raise ValueError(f"camera index {camera_index} outside layout")
    if noise_std > 0.0 and rng_seed is None:
        raise ValueError("a seed is required when rendering with noise")

    sensor = config.sensor
    o_d = config.object_distance_um
    i_d = config.image_distance_um
    pitch = scene.sample_pitch_um

    # Aliasing guard: the scene must supersample the pixel footprint.
    footprint = sensor.pixel_pitch_um * o_d / i_d
    if pitch > footprint / 2.0 * (1.0 + 1e-9):
        raise ValueError(
            f"scene sample pitch {pitch:.4g} um is too coarse for the "
            f"{footprint:.4g} um back-projected pixel (needs <= half)")

    axis = camera_axis_positions(config)[row, col]
    sx, sy, sz = stage_offset_um
    ny, nx = sensor.pixels_y, sensor.pixels_x
    cx = (np.arange(nx) - (nx - 1) / 2.0) * sensor.pixel_pitch_um
    cy = (np.arange(ny) - (ny - 1) / 2.0) * sensor.pixel_pitch_um

    flat = scene.height_map is None or np.ptp(scene.height_map) == 0.0
    h_base = 0.0 if scene.height_map is None else float(scene.height_map.flat[0])

    if flat:
        h_eff = h_base + sz
        scale = (o_d - h_eff) / i_d
        obj_x = axis[0] + cx * scale
        obj_y = axis[1] + cy * scale
        half = sensor.pixel_pitch_um * scale / 2.0
        sat, j_off, i_off = _scene_sat_window(
            scene, (obj_x[0] - half, obj_x[-1] + half),
            (obj_y[0] - half, obj_y[-1] + half))
        tx = (obj_x - sx - scene.origin_x_um) / pitch - j_off
        ty = (obj_y - sy - scene.origin_y_um) / pitch - i_off
        half_t = half / pitch
        area = (2.0 * half_t) ** 2
        img = _box_average_grid(sat, tx - half_t, tx + half_t,
                                ty - half_t, ty + half_t, area)
        sigma_px = _defocus_sigma_px(config, np.float64(h_eff), z_offset_um)
        if sigma_px > _MIN_SIGMA_PX:
            img = ndimage.gaussian_filter(img, float(sigma_px), mode="nearest")
    else:
        # Height-dependent projection: fixed point on X = a + x_img*(O_d-h)/I_d.
        heights = scene.height_map
        gx = cx[None, :]
        gy = cy[:, None]
        h = np.full((ny, nx), h_base + sz)
        for _ in range(3):
            scale = (o_d - h) / i_d
            obj_x = axis[0] + gx * scale
            obj_y = axis[1] + gy * scale
            tcx = (obj_x - sx - scene.origin_x_um) / pitch - 0.5
            tcy = (obj_y - sy - scene.origin_y_um) / pitch - 0.5
            h = ndimage.map_coordinates(heights, [tcy, tcx], order=1,
                                        mode="nearest") + sz
        scale = (o_d - h) / i_d
        obj_x = axis[0] + gx * scale
        obj_y = axis[1] + gy * scale
        half = sensor.pixel_pitch_um * scale / 2.0
        sat, j_off, i_off = _scene_sat_window(
            scene, (obj_x.min() - half.max(), obj_x.max() + half.max()),
            (obj_y.min() - half.max(), obj_y.max() + half.max()))
        tx = (obj_x - sx - scene.origin_x_um) / pitch - j_off
        ty = (obj_y - sy - scene.origin_y_um) / pitch - i_off
        half_t = half / pitch
        area = (2.0 * half_t) ** 2
        img = _box_average_points(sat, tx - half_t, tx + half_t,
                                  ty - half_t, ty + half_t, area)
        sigma_px = _defocus_sigma_px(config, h, z_offset_um)
        img = _variable_blur(img, np.asarray(sigma_px))

    img = img.astype(np.float32)
    if noise_std > 0.0:
        rng = np.random.default_rng([rng_seed, exposure_id, row, col])
        img = img + rng.normal(0.0, noise_std, img.shape).astype(np.float32)
        np.clip(img, 0.0, 1.0, out=img)

    return CameraFrame(img, (row, col), (float(axis[0]), float(axis[1])),
                       z_offset_um, exposure_id)


def _defocus_sigma_px(config: ArrayConfig, h_eff, z_offset_um: float):
    """Gaussian blur sigma in sensor pixels, half the image-side CoC."""
    coc_img = (config.lens.aperture_um * config.magnification
               * np.abs(h_eff - z_offset_um) / config.object_distance_um)
    return coc_img / (2.0 * config.sensor.pixel_pitch_um)


def render_array(scene: Scene, config: ArrayConfig,
                 stage_offset_um: tuple[float, float, float] = (0.0, 0.0, 0.0),
                 seed: int | None = None, *,
                 z_offset_um: float = 0.0,
                 noise_std: float = 0.0,
                 exposure_id: int = 0,
                 threads: int = 1) -> FrameSet:
    """Render every camera in the array for one snapshot.

    Bit-identical output for a given seed regardless of ``threads``.
    """
    lay = config.layout
    indices = [(r, c) for r in range(lay.rows) for c in range(lay.cols)]

    def one(idx):
        return render_camera(scene, config, idx, stage_offset_um, seed,
                             z_offset_um=z_offset_um, noise_std=noise_std,
                             exposure_id=exposure_id)

    if threads > 1 and len(indices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            frames = list(pool.map(one, indices))
    else:
        frames = [one(idx) for idx in indices]
    return FrameSet(frames, config, stage_offset_um)


def render_focal_stack(scene: Scene, config: ArrayConfig,
                       z_offsets_um: list[float],
                       stage_offset_um: tuple[float, float, float] = (0.0, 0.0, 0.0),
                       seed: int | None = None, *,
                       noise_std: float = 0.0,
                       threads: int = 1) -> list[FrameSet]:
    """Render one FrameSet per focus position."""
    if not all(np.isfinite(z) for z in z_offsets_um):
        raise ValueError("focus offsets must be finite")
    return [
        render_array(scene, config, stage_offset_um, seed,
                     z_offset_um=z, noise_std=noise_std, exposure_id=k,
                     threads=threads)
        for k, z in enumerate(z_offsets_um)
    ]


def apply_binning(frame: CameraFrame, factor: int) -> CameraFrame:
    """Average factor x factor pixel blocks, shrinking the raster."""
    if factor < 1:
        raise ValueError("binning factor must be >= 1")
    if factor == 1:
        return frame
    ny, nx = frame.pixels.shape
    if ny % factor or nx % factor:
        raise ValueError(
            f"raster {ny}x{nx} is not divisible by binning factor {factor}")
    blocks = frame.pixels.reshape(ny // factor, factor, nx // factor, factor)
    binned = blocks.mean(axis=(1, 3), dtype=np.float64).astype(np.float32)
    return replace(frame, pixels=binned, binning=frame.binning * factor)
