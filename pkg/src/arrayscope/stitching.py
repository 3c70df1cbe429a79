"""Calibrate-then-stitch pipeline for array snapshots.

Tile motion is translation-only: the array is coplanar and calibration is
valid for one sample depth, so each camera contributes a single anchor in
the shared composite grid plus a multiplicative gain. Pairwise offsets come
from frequency-domain normalized cross-correlation with quadratic sub-pixel
refinement; anchors and gains are then solved globally by weighted linear
least squares with the reference camera pinned at the origin.

Composite pixels live on the reference camera's grid (pixel size delta/M).
The composite origin is snapped to that grid, so the reference tile is
placed without resampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DisconnectedArrayError
from .geometry import ArrayConfig, Regime, camera_axis_positions, classify_regime
from .render import CameraFrame, FrameSet
from .scene import BarGroup, Scene

__all__ = [
    "PairOffset",
    "StitchCalibration",
    "Composite",
    "Pyramid",
    "estimate_pairwise_offset",
    "solve_global_poses",
    "calibrate",
    "nominal_calibration",
    "composite",
    "blend_tiles",
    "feather_weight_map",
    "build_pyramid",
    "measure_resolution",
    "scene_as_composite",
]

# Pairs with a correlation peak ratio below this are replaced by their
# nominal grid offset at this weight in the global solve.
CONFIDENT_PEAK_RATIO = 1.15
_FALLBACK_WEIGHT = 0.05
_MIN_OVERLAP_PX = 32
_MAX_CORR_PX = 1024
_FLAT_VARIANCE = 1e-10


@dataclass(frozen=True)
class PairOffset:
    """Measured residual displacement between two overlapping frames.

    ``offset`` is the sub-pixel (x, y) correction to the nominal grid
    offset ``nominal`` (both as anchor differences ``t_b - t_a`` in
    composite px). ``peak_ratio`` is main/second correlation peak (>= 1);
    ``confidence``  is ``1 - 1/peak_ratio``, clipped to [0, 1].
    """

    cameras: tuple[tuple[int, int], tuple[int, int]]
    nominal: tuple[float, float]
    offset: tuple[float, float]
    peak_ratio: float
    confidence: float
    mean_a: float
    mean_b: float

    @property
    def measured(self) -> tuple[float, float]:
        return (self.nominal[0] + self.offset[0],
                self.nominal[1] + self.offset[1])


@dataclass(frozen=True)
class StitchCalibration:
    """Solved tile anchors and photometric gains for one sample depth."""

    tile_positions: np.ndarray       # (n, 2) anchor of pixel (0,0), (x, y) px
    gains: np.ndarray                # (n,) multiplicative, geometric mean 1
    composite_pixel_um: float
    valid_for_depth_um: float
    rows: int
    cols: int
    reference_index: int = 0

    def position(self, row: int, col: int) -> np.ndarray:
        return self.tile_positions[row * self.cols + col]


@dataclass(frozen=True)
class Composite:
    """Blended mosaic on the reference camera's pixel grid."""

    raster: np.ndarray               # float32 (ny, nx)
    origin_x_um: float               # object-plane position of pixel (0,0) center
    origin_y_um: float
    pixel_size_um: float
    weight_sum: np.ndarray | None = None
    weight_map_used: bool = True

    def object_to_pixel(self, x_um, y_um):
        return ((np.asarray(x_um) - self.origin_x_um) / self.pixel_size_um,
                (np.asarray(y_um) - self.origin_y_um) / self.pixel_size_um)


@dataclass(frozen=True)
class Pyramid:
    """Power-of-two reduction stack of a composite, level 0 full size."""

    levels: list[np.ndarray]
    tile_px: int
    origin_x_um: float
    origin_y_um: float
    pixel_size_um: float             # at level 0; doubles per level


def _parabolic(c_m, c_0, c_p) -> float:
    denom = c_m - 2.0 * c_0 + c_p
    if denom >= 0.0:
        return 0.0
    return float(np.clip(0.5 * (c_m - c_p) / denom, -1.0, 1.0))


def _ncc_shift(a: np.ndarray, b: np.ndarray, max_shift: int):
    """Peak of the circular zero-mean NCC of two equal-shape crops.

    Returns (dx, dy, peak_ratio). The shift maps b onto a, i.e.
    b(v) = a(v + d).
    """
    a = a.astype(np.float64) - a.mean()
    b = b.astype(np.float64) - b.mean()
    norm = math.sqrt(float((a * a).sum()) * float((b * b).sum()))
    if norm <= _FLAT_VARIANCE:
        return 0.0, 0.0, 1.0
    fa = np.fft.rfft2(a)
    fb = np.fft.rfft2(b)
    corr = np.fft.irfft2(fa * np.conj(fb), s=a.shape) / norm
    corr = np.fft.fftshift(corr)
    cy, cx = a.shape[0] // 2, a.shape[1] // 2

    my = min(max_shift, cy - 1) if a.shape[0] > 3 else 0
    mx = min(max_shift, cx - 1) if a.shape[1] > 3 else 0
    window = corr[cy - my:cy + my + 1, cx - mx:cx + mx + 1]
    iy, ix = np.unravel_index(int(np.argmax(window)), window.shape)
    peak = float(window[iy, ix])

    dy = iy - my
    dx = ix - mx
    if 0 < iy < window.shape[0] - 1:
        dy += _parabolic(window[iy - 1, ix], peak, window[iy + 1, ix])
    if 0 < ix < window.shape[1] - 1:
        dx += _parabolic(window[iy, ix - 1], peak, window[iy, ix + 1])

    # Second peak outside the main lobe. Smooth content widens the lobe,
    # so the exclusion zone follows the measured half-maximum support.
    half = 0.5 * peak
    rx = 2
    while ix + rx < window.shape[1] and ix - rx >= 0 \
            and max(window[iy, ix + rx], window[iy, ix - rx]) > half:
        rx += 1
    ry = 2
    while iy + ry < window.shape[0] and iy - ry >= 0 \
            and max(window[iy + ry, ix], window[iy - ry, ix]) > half:
        ry += 1
    guard = window.copy()
    y0, y1 = max(0, iy - 2 * ry), min(window.shape[0], iy + 2 * ry + 1)
    x0, x1 = max(0, ix - 2 * rx), min(window.shape[1], ix + 2 * rx + 1)
    guard[y0:y1, x0:x1] = -np.inf
    second = float(guard.max()) if np.isfinite(guard).any() else -np.inf
    if not np.isfinite(second) or second <= 0.0:
        ratio = np.inf if peak > 0 else 1.0
    else:
        ratio = peak / second
    return float(dx), float(dy), float(ratio)


def estimate_pairwise_offset(a: CameraFrame, b: CameraFrame,
                             nominal: tuple[float, float], *,
                             max_residual_px: float = 16.0) -> PairOffset:
    """Measure the sub-pixel offset of frame b relative to frame a.

    ``nominal`` is the expected anchor difference ``t_b - t_a`` in pixels;
    the returned offset is the correction to it. Overlap regions smaller
    than 32 px per axis, or with no texture, yield a zero offset flagged
    with confidence 0 rather than an error.
    """
    ny, nx = a.pixels.shape
    if b.pixels.shape != (ny, nx):
        raise ValueError("frames must share a shape")
    n_int = (int(round(nominal[0])), int(round(nominal[1])))
    frac = (nominal[0] - n_int[0], nominal[1] - n_int[1])

    # Predicted overlap window in a's pixel coordinates.
    xa0, xa1 = max(0, n_int[0]), min(nx, nx + n_int[0])
    ya0, ya1 = max(0, n_int[1]), min(ny, ny + n_int[1])
    flagged = PairOffset((a.camera_index, b.camera_index), tuple(nominal),
                         (0.0, 0.0), 1.0, 0.0,
                         float(a.pixels.mean()), float(b.pixels.mean()))
    if xa1 - xa0 < _MIN_OVERLAP_PX or ya1 - ya0 < _MIN_OVERLAP_PX:
        return flagged

    # Center-crop very large overlaps; correlation cost stays bounded.
    if xa1 - xa0 > _MAX_CORR_PX:
        cx = (xa0 + xa1) // 2
        xa0, xa1 = cx - _MAX_CORR_PX // 2, cx + _MAX_CORR_PX // 2
    if ya1 - ya0 > _MAX_CORR_PX:
        cy = (ya0 + ya1) // 2
        ya0, ya1 = cy - _MAX_CORR_PX // 2, cy + _MAX_CORR_PX // 2

    crop_a = a.pixels[ya0:ya1, xa0:xa1]
    crop_b = b.pixels[ya0 - n_int[1]:ya1 - n_int[1],
                      xa0 - n_int[0]:xa1 - n_int[0]]
    if float(crop_a.var()) <= _FLAT_VARIANCE or float(crop_b.var()) <= _FLAT_VARIANCE:
        return flagged

    max_shift = int(math.ceil(max_residual_px + 2))
    dx, dy, ratio = _ncc_shift(crop_a, crop_b, max_shift)
    offset = (dx - frac[0], dy - frac[1])
    confidence = max(0.0, 1.0 - 1.0 / ratio) if np.isfinite(ratio) else 1.0
    return PairOffset((a.camera_index, b.camera_index), tuple(nominal),
                      offset, ratio, confidence,
                      float(crop_a.mean()), float(crop_b.mean()))


def _connected_components(n: int, edges: list[tuple[int, int]]) -> list[set]:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    comps: dict[int, set] = {}
    for i in range(n):
        comps.setdefault(find(i), set()).add(i)
    return list(comps.values())


def _weighted_lsq(n: int, rows: list[tuple[int, int, float, float]],
                  ref: int, ref_value: float) -> np.ndarray:
    """Solve w*(t_j - t_i) = w*b for tile scalars with t_ref pinned."""
    free = [k for k in range(n) if k != ref]
    col = {k: c for c, k in enumerate(free)}
    a_mat = np.zeros((len(rows), len(free)))
    b_vec = np.zeros(len(rows))
    for r, (i, j, b, w) in enumerate(rows):
        b_vec[r] = w * b
        if i == ref:
            b_vec[r] += w * ref_value
        else:
            a_mat[r, col[i]] = -w
        if j == ref:
            b_vec[r] -= w * ref_value
        else:
            a_mat[r, col[j]] = w
    sol, *_ = np.linalg.lstsq(a_mat, b_vec, rcond=None)
    out = np.empty(n)
    out[ref] = ref_value
    for k, c in col.items():
        out[k] = sol[c]
    return out


def solve_global_poses(offsets: list[PairOffset], rows: int, cols: int, *,
                       composite_pixel_um: float = float("nan"),
                       valid_for_depth_um: float = 0.0,
                       nominal_positions: np.ndarray | None = None,
                       ) -> StitchCalibration:
    """Global least-squares anchor and gain solve over pairwise offsets.

    Pairs below the confidence threshold fall back to their nominal offset
    at a small weight. Raises :class:`DisconnectedArrayError` when the
    confident pairs do not connect every camera.
    """
    n = rows * cols

    def flat(camera):
        return camera[0] * cols + camera[1]

    confident_edges = [(flat(o.cameras[0]), flat(o.cameras[1]))
                       for o in offsets if o.peak_ratio >= CONFIDENT_PEAK_RATIO]
    components = _connected_components(n, confident_edges)
    if len(components) > 1:
        raise DisconnectedArrayError(components)

    pos_rows: dict[int, list] = {0: [], 1: []}
    gain_rows: list[tuple[int, int, float, float]] = []
    for o in offsets:
        i, j = flat(o.cameras[0]), flat(o.cameras[1])
        if o.peak_ratio >= CONFIDENT_PEAK_RATIO:
            w = max(o.confidence, 1e-3)
            measured = o.measured
        else:
            w = _FALLBACK_WEIGHT
            measured = o.nominal
        for axis in (0, 1):
            pos_rows[axis].append((i, j, measured[axis], w))
        if o.mean_a > 1e-9 and o.mean_b > 1e-9:
            gain_rows.append((i, j, math.log(o.mean_a / o.mean_b), w))

    if nominal_positions is None:
        nominal_positions = np.zeros((n, 2))
    ref = 0
    tx = _weighted_lsq(n, pos_rows[0], ref, float(nominal_positions[ref, 0]))
    ty = _weighted_lsq(n, pos_rows[1], ref, float(nominal_positions[ref, 1]))

    if gain_rows:
        log_g = _weighted_lsq(n, gain_rows, ref, 0.0)
        log_g -= log_g.mean()          # geometric mean 1
        gains = np.exp(log_g)
    else:
        gains = np.ones(n)

    return StitchCalibration(np.stack([tx, ty], axis=1), gains,
                             composite_pixel_um, valid_for_depth_um,
                             rows, cols, ref)


def _nominal_anchor_px(config: ArrayConfig) -> np.ndarray:
    """Anchor of every tile's pixel (0,0), relative to the reference tile."""
    axes = camera_axis_positions(config).reshape(-1, 2)
    cpx = config.composite_pixel_um
    return (axes - axes[0]) / cpx


def nominal_calibration(config: ArrayConfig,
                        valid_for_depth_um: float = 0.0) -> StitchCalibration:
    """Calibration straight from the board geometry, gains all 1."""
    lay = config.layout
    return StitchCalibration(_nominal_anchor_px(config),
                             np.ones(lay.camera_count),
                             config.composite_pixel_um, valid_for_depth_um,
                             lay.rows, lay.cols, 0)


def calibrate(frameset: FrameSet, config: ArrayConfig) -> StitchCalibration:
    """Solve the stitching calibration from one snapshot.

    Runs pairwise offset estimation over every 4-connected neighbor pair,
    then the global solve. Valid in the multi-view and continuous regimes;
    the tiled path calibrates per scan position from nominal geometry.
    """
    report = classify_regime(config)
    lay = config.layout
    # Only axes with neighbors need overlap; a single row has no y pairs.
    tiled_x = lay.cols > 1 and report.regime_x is Regime.TILED
    tiled_y = lay.rows > 1 and report.regime_y is Regime.TILED
    if tiled_x or tiled_y:
        raise ValueError("tiled regime has no inter-camera overlap to "
                         "calibrate from; use nominal_calibration per scan "
                         "position")
    nominal = _nominal_anchor_px(config)
    offsets = []
    for r in range(lay.rows):
        for c in range(lay.cols):
            i = r * lay.cols + c
            for (r2, c2) in ((r, c + 1), (r + 1, c)):
                if r2 >= lay.rows or c2 >= lay.cols:
                    continue
                j = r2 * lay.cols + c2
                rel = tuple(nominal[j] - nominal[i])
                offsets.append(estimate_pairwise_offset(
                    frameset.frame(r, c), frameset.frame(r2, c2), rel))
    return solve_global_poses(offsets, lay.rows, lay.cols,
                              composite_pixel_um=config.composite_pixel_um,
                              valid_for_depth_um=0.0,
                              nominal_positions=nominal)


def feather_weight_map(shape: tuple[int, int],
                       ramp_px: tuple[float, float]) -> np.ndarray:
    """Separable linear edge-distance feather for one tile, values (0, 1].

    The ramp rises over ``ramp_px`` pixels from each edge; pixels further
    in carry weight 1. Every pixel keeps a strictly positive weight so a
    lone tile still covers its full footprint.
    """
    ny, nx = shape
    ramp_x = max(float(ramp_px[0]), 1.0)
    ramp_y = max(float(ramp_px[1]), 1.0)
    dx = np.minimum(np.arange(nx), np.arange(nx)[::-1]) + 0.5
    dy = np.minimum(np.arange(ny), np.arange(ny)[::-1]) + 0.5
    wx = np.clip(dx / ramp_x, None, 1.0)
    wy = np.clip(dy / ramp_y, None, 1.0)
    return wy[:, None] * wx[None, :]


def _feather_at(u: np.ndarray, n: int, ramp: float) -> np.ndarray:
    d = np.minimum(u, (n - 1) - u) + 0.5
    return np.clip(d / max(ramp, 1.0), 1e-6, 1.0)


def blend_tiles(rasters: list[np.ndarray], anchors: np.ndarray,
                gains: np.ndarray, ramp_px: tuple[float, float],
                ) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    """Feather-blend translated tiles onto a common integer grid.

    Returns (raster, weight_sum, origin_px) where ``origin_px`` is the
    integer grid position of output pixel (0,0) in anchor coordinates.
    Output pixels with zero total weight are background 0.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    heights = np.array([r.shape[0] for r in rasters])
    widths = np.array([r.shape[1] for r in rasters])
    ox = math.floor(anchors[:, 0].min())
    oy = math.floor(anchors[:, 1].min())
    nx = int(math.ceil((anchors[:, 0] + widths).max()) - ox)
    ny = int(math.ceil((anchors[:, 1] + heights).max()) - oy)

    acc = np.zeros((ny, nx), dtype=np.float64)
    wsum = np.zeros((ny, nx), dtype=np.float64)
    for raster, anchor, gain in zip(rasters, anchors, gains):
        h, w = raster.shape
        ax, ay = anchor[0] - ox, anchor[1] - oy
        # A tile physically extends half a pixel beyond its border pixel
        # centers; cover that fringe too (edge-clamped), so abutting
        # zero-overlap tiles leave no seam.
        qx0, qx1 = math.ceil(ax - 0.5), math.floor(ax + w - 0.5)
        qy0, qy1 = math.ceil(ay - 0.5), math.floor(ay + h - 0.5)
        if qx1 < qx0 or qy1 < qy0:
            continue
        ux = np.clip(np.arange(qx0, qx1 + 1, dtype=np.float64) - ax,
                     0.0, w - 1.0)
        uy = np.clip(np.arange(qy0, qy1 + 1, dtype=np.float64) - ay,
                     0.0, h - 1.0)
        jx = np.minimum(ux.astype(np.int64), w - 2) if w > 1 else np.zeros(len(ux), np.int64)
        iy = np.minimum(uy.astype(np.int64), h - 2) if h > 1 else np.zeros(len(uy), np.int64)
        fx = (ux - jx)[None, :]
        fy = (uy - iy)[:, None]
        r64 = raster.astype(np.float64)
        if w > 1 and h > 1:
            tile = ((r64[np.ix_(iy, jx)] * (1 - fx) + r64[np.ix_(iy, jx + 1)] * fx) * (1 - fy)
                    + (r64[np.ix_(iy + 1, jx)] * (1 - fx) + r64[np.ix_(iy + 1, jx + 1)] * fx) * fy)
        else:
            tile = r64[np.ix_(iy, jx)]
        weight = (_feather_at(uy, h, ramp_px[1])[:, None]
                  * _feather_at(ux, w, ramp_px[0])[None, :])
        acc[qy0:qy1 + 1, qx0:qx1 + 1] += weight * (gain * tile)
        wsum[qy0:qy1 + 1, qx0:qx1 + 1] += weight

    out = np.zeros_like(acc)
    covered = wsum > 0.0
    out[covered] = acc[covered] / wsum[covered]
    return out.astype(np.float32), wsum.astype(np.float32), (ox, oy)


def _ramp_px(config: ArrayConfig) -> tuple[float, float]:
    # Half the nominal overlap width, floored at 8 px.
    cpx = config.composite_pixel_um
    over_x = config.sensor.pixels_x - config.layout.pitch_x_um / cpx
    over_y = config.sensor.pixels_y - config.layout.pitch_y_um / cpx
    return max(8.0, over_x / 2.0), max(8.0, over_y / 2.0)


def composite(frameset: FrameSet, calibration: StitchCalibration) -> Composite:
    """Blend a snapshot into a mosaic using a solved calibration."""
    n = calibration.rows * calibration.cols
    if len(frameset.frames) != n:
        raise ValueError("calibration camera count does not match frame set")
    config = frameset.config
    raster, wsum, (ox, oy) = blend_tiles(
        [f.pixels for f in frameset.frames], calibration.tile_positions,
        calibration.gains, _ramp_px(config))

    cpx = calibration.composite_pixel_um
    ref = frameset.frames[calibration.reference_index]
    nyx = ref.pixels.shape
    # Pixel q of the composite sits at the object position of reference
    # pixel (q + origin_px), offset by any stage displacement baked into
    # the anchors by the caller.
    origin_x = ref.optical_axis_um[0] + (ox - (nyx[1] - 1) / 2.0) * cpx
    origin_y = ref.optical_axis_um[1] + (oy - (nyx[0] - 1) / 2.0) * cpx
    return Composite(raster, origin_x, origin_y, cpx, wsum, True)


def build_pyramid(comp: Composite, tile_px: int = 256) -> Pyramid:
    """Box-downsampled viewing pyramid; levels halve until one tile covers.

    Odd dimensions are edge-padded by one pixel before halving.
    """
    if tile_px < 1 or tile_px & (tile_px - 1):
        raise ValueError("tile size must be a power of two")
    levels = [comp.raster]
    while max(levels[-1].shape) > tile_px:
        cur = levels[-1]
        ny, nx = cur.shape
        if ny % 2 or nx % 2:
            cur = np.pad(cur, ((0, ny % 2), (0, nx % 2)), mode="edge")
            ny, nx = cur.shape
        down = cur.reshape(ny // 2, 2, nx // 2, 2).mean(axis=(1, 3),
                                                        dtype=np.float64)
        levels.append(down.astype(np.float32))
    return Pyramid(levels, tile_px, comp.origin_x_um, comp.origin_y_um,
                   comp.pixel_size_um)


def measure_resolution(comp: Composite, target_layout: list[BarGroup], *,
                       contrast_threshold: float = 0.26) -> float:
    """Finest bar spacing resolved in a composite of a bar target.

    A group counts as resolved when the Michelson contrast of its profile
    (averaged along the bars) reaches the threshold. Returns the smallest
    passing full-pitch spacing, or ``inf`` when no group passes.
    """
    resolved = math.inf
    for group in target_layout:
        contrast = _group_contrast(comp, group)
        if contrast >= contrast_threshold:
            resolved = min(resolved, group.spacing_um)
    return resolved


def _group_contrast(comp: Composite, group: BarGroup) -> float:
    px = comp.pixel_size_um
    x0, y0 = comp.object_to_pixel(group.x0_um, group.y0_um)
    x1, y1 = comp.object_to_pixel(group.x1_um, group.y1_um)
    # Trim the ends of the bars and one pixel off the run to stay inside.
    if group.orientation == "vertical":
        lo, hi = y0 + 0.1 * (y1 - y0), y1 - 0.1 * (y1 - y0)
        j0, j1 = math.ceil(x0), math.floor(x1)
        i0, i1 = math.ceil(lo), math.floor(hi)
    else:
        lo, hi = x0 + 0.1 * (x1 - x0), x1 - 0.1 * (x1 - x0)
        j0, j1 = math.ceil(lo), math.floor(hi)
        i0, i1 = math.ceil(y0), math.floor(y1)
    ny, nx = comp.raster.shape
    i0, i1 = max(i0, 0), min(i1, ny)
    j0, j1 = max(j0, 0), min(j1, nx)
    if i1 - i0 < 1 or j1 - j0 < 1:
        return 0.0
    region = comp.raster[i0:i1, j0:j1].astype(np.float64)
    profile = region.mean(axis=0) if group.orientation == "vertical" \
        else region.mean(axis=1)
    if profile.size < 2:
        return 0.0
    hi_v, lo_v = float(profile.max()), float(profile.min())
    if hi_v + lo_v <= 0.0:
        return 0.0
    return (hi_v - lo_v) / (hi_v + lo_v)


def scene_as_composite(scene: Scene) -> Composite:
    """View a ground-truth scene as a composite on its own texel grid."""
    return Composite(scene.intensity,
                     scene.origin_x_um + scene.sample_pitch_um / 2.0,
                     scene.origin_y_um + scene.sample_pitch_um / 2.0,
                     scene.sample_pitch_um, None, False)
