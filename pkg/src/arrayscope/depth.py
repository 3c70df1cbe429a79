"""Stereoscopic depth from overlapping micro-camera pairs.

A scene point seen by two cameras whose optical axes are a baseline ``p``
apart sits at lateral disparities ``d1`` and ``d2`` from the respective
axes; its distance from the lens plane follows from triangulation,

    depth = p * I_d / (d1 + d2),

with ``I_d`` the image-plane distance. Disparities are measured against
each camera's optical-axis pixel, and the effective baseline is taken from
the solved stitching calibration so assembly tolerances are absorbed.
Heights are reported relative to the calibrated focal plane,
``h = O_d - depth``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

import numpy as np
from scipy import ndimage

from .geometry import ArrayConfig, camera_axis_positions
from .render import CameraFrame, render_array, render_camera
from .scene import Scene
from .stitching import StitchCalibration, calibrate, estimate_pairwise_offset

__all__ = [
    "MatchSet",
    "HeightMap",
    "DepthExperimentReport",
    "match_features",
    "triangulate",
    "triangulate_matches",
    "run_depth_sweep",
    "build_height_map",
]

_MIN_MATCHES = 8


@dataclass(frozen=True)
class MatchSet:
    """Sub-pixel correspondences between one camera pair.

    Points are image coordinates in pixels relative to each camera's
    optical-axis pixel. ``baseline_axis`` is the unit vector from camera a
    toward camera b in the object plane; the signed disparity sum of match
    ``k`` is ``dot(points_a[k] - points_b[k], baseline_axis)``.
    """

    camera_a: tuple[int, int]
    camera_b: tuple[int, int]
    points_a: np.ndarray             # (k, 2) px, (x, y)
    points_b: np.ndarray
    baseline_axis: tuple[float, float]
    baseline_px: float               # calibrated axis separation, px
    scores: np.ndarray               # (k,) correlation scores

    def __post_init__(self):
        dr = abs(self.camera_a[0] - self.camera_b[0])
        dc = abs(self.camera_a[1] - self.camera_b[1])
        if self.camera_a != self.camera_b and (dr > 1 or dc > 1):
            raise ValueError("matched cameras must be adjacent or diagonal")

    def __len__(self) -> int:
        return len(self.points_a)

    @property
    def sparse(self) -> bool:
        return len(self.points_a) < _MIN_MATCHES

    @property
    def disparity_sums_px(self) -> np.ndarray:
        e = np.asarray(self.baseline_axis)
        return (self.points_a - self.points_b) @ e


@dataclass(frozen=True)
class HeightMap:
    """Gridded heights (um) on composite coordinates with a validity mask."""

    grid: np.ndarray                 # float32, um
    mask: np.ndarray                 # bool, True where valid
    method: str                      # sparse_triangulated | interpolated
    origin_x_um: float
    origin_y_um: float
    grid_pitch_um: float


@dataclass(frozen=True)
class DepthExperimentReport:
    """Per-plane sweep results and their aggregate RMSE."""

    true_z_um: np.ndarray
    est_z_um: np.ndarray
    n_matches: np.ndarray
    rmse_um: float

    @classmethod
    def from_planes(cls, true_z, est_z, n_matches) -> "DepthExperimentReport":
        true_z = np.asarray(true_z, dtype=np.float64)
        est_z = np.asarray(est_z, dtype=np.float64)
        rmse = float(np.sqrt(np.mean((est_z - true_z) ** 2)))
        return cls(true_z, est_z, np.asarray(n_matches, dtype=np.int64), rmse)


def triangulate(d1_um, d2_um, baseline_um, image_distance_um):
    """Object depth from a disparity pair: p * I_d / (d1 + d2).

    Accepts floats or exact rationals (``fractions.Fraction``); rational
    inputs are evaluated exactly. The disparity sum must be positive for a
    point at finite depth in front of the array.
    """
    total = d1_um + d2_um
    if total <= 0:
        raise ValueError("disparity sum must be positive for finite depth")
    if isinstance(total, Rational):
        return Fraction(baseline_um) * Fraction(image_distance_um) / total
    return baseline_um * image_distance_um / total


def _interest_points(img: np.ndarray, max_points: int, margin: int,
                     min_distance: int = 10) -> np.ndarray:
    """Shi-Tomasi style corners: minimum eigenvalue of the structure tensor."""
    f = img.astype(np.float64)
    if f.var() < 1e-10:
        return np.empty((0, 2), dtype=np.int64)
    gx = ndimage.gaussian_filter(f, 1.2, order=(0, 1), mode="nearest")
    gy = ndimage.gaussian_filter(f, 1.2, order=(1, 0), mode="nearest")
    axx = ndimage.gaussian_filter(gx * gx, 2.0, mode="nearest")
    axy = ndimage.gaussian_filter(gx * gy, 2.0, mode="nearest")
    ayy = ndimage.gaussian_filter(gy * gy, 2.0, mode="nearest")
    trace = axx + ayy
    root = np.sqrt((axx - ayy) ** 2 + 4.0 * axy * axy)
    resp = 0.5 * (trace - root)

    resp[:margin, :] = 0.0
    resp[-margin:, :] = 0.0
    resp[:, :margin] = 0.0
    resp[:, -margin:] = 0.0
    peaks = (resp == ndimage.maximum_filter(resp, size=7)) \
        & (resp > 0.02 * resp.max())
    ys, xs = np.nonzero(peaks)
    if len(ys) == 0:
        return np.empty((0, 2), dtype=np.int64)
    order = np.argsort(resp[ys, xs])[::-1]
    taken: list[tuple[int, int]] = []
    occupied = np.zeros((img.shape[0] // min_distance + 2,
                         img.shape[1] // min_distance + 2), dtype=bool)
    for k in order:
        y, x = int(ys[k]), int(xs[k])
        cell = (y // min_distance, x // min_distance)
        if occupied[cell]:
            continue
        occupied[cell] = True
        taken.append((x, y))
        if len(taken) >= max_points:
            break
    return np.asarray(taken, dtype=np.int64)


def _refine_match(crop_a: np.ndarray, crop_b: np.ndarray, pa: np.ndarray,
                  pb_pred: np.ndarray, half: int, search: int):
    """Integer NCC search around the prediction plus quadratic sub-pixel fit."""
    ax, ay = int(pa[0]), int(pa[1])
    w = crop_a[ay - half:ay + half + 1, ax - half:ax + half + 1]
    bx, by = int(round(pb_pred[0])), int(round(pb_pred[1]))
    r = half + search
    if (by - r < 0 or by + r + 1 > crop_b.shape[0]
            or bx - r < 0 or bx + r + 1 > crop_b.shape[1]):
        return None
    region = crop_b[by - r:by + r + 1, bx - r:bx + r + 1]
    win = np.lib.stride_tricks.sliding_window_view(region,
                                                   (2 * half + 1, 2 * half + 1))
    wm = w - w.mean()
    wn = math.sqrt(float((wm * wm).sum()))
    if wn < 1e-9:
        return None
    means = win.mean(axis=(2, 3), keepdims=True)
    centered = win - means
    denom = np.sqrt((centered * centered).sum(axis=(2, 3))) * wn
    scores = np.where(denom > 1e-12,
                      np.einsum("ijkl,kl->ij", centered, wm) / np.maximum(denom, 1e-12),
                      0.0)
    iy, ix = np.unravel_index(int(np.argmax(scores)), scores.shape)
    best = float(scores[iy, ix])
    dy = iy - search
    dx = ix - search
    sub_x = sub_y = 0.0
    if 0 < ix < scores.shape[1] - 1:
        denom_x = scores[iy, ix - 1] - 2 * best + scores[iy, ix + 1]
        if denom_x < 0:
            sub_x = float(np.clip(0.5 * (scores[iy, ix - 1] - scores[iy, ix + 1])
                                  / denom_x, -1, 1))
    if 0 < iy < scores.shape[0] - 1:
        denom_y = scores[iy - 1, ix] - 2 * best + scores[iy + 1, ix]
        if denom_y < 0:
            sub_y = float(np.clip(0.5 * (scores[iy - 1, ix] - scores[iy + 1, ix])
                                  / denom_y, -1, 1))
    return np.array([bx + dx + sub_x, by + dy + sub_y]), best


def match_features(a: CameraFrame, b: CameraFrame,
                   calibration: StitchCalibration, *,
                   window: int = 15, search: int = 4,
                   max_features: int = 96,
                   min_score: float = 0.5,
                   max_residual_px: float = 16.0) -> MatchSet:
    """Find sub-pixel correspondences in the shared region of two frames.

    Corner-like interest points are detected in frame a's side of the
    overlap, matched by normalized cross-correlation of local windows
    around a globally estimated shift, and refined by a quadratic fit.
    Returned points are relative to each camera's optical-axis pixel.
    Fewer than 8 matches flags the result sparse rather than raising.
    """
    ny, nx = a.pixels.shape
    if b.pixels.shape != (ny, nx):
        raise ValueError("frames must share a shape")
    half = window // 2
    ta = calibration.position(*a.camera_index)
    tb = calibration.position(*b.camera_index)
    rel = tb - ta

    # Predicted overlap of the two footprints, in a's pixel coordinates.
    xa0 = max(0, int(math.ceil(rel[0])))
    xa1 = min(nx, int(math.floor(rel[0] + nx)))
    ya0 = max(0, int(math.ceil(rel[1])))
    ya1 = min(ny, int(math.floor(rel[1] + ny)))
    need = 2 * (half + search) + 8
    if xa1 - xa0 < need or ya1 - ya0 < need:
        raise ValueError("camera pair overlap too small for matching")

    # Global shift at this plane refines the calibrated prediction.
    global_off = estimate_pairwise_offset(a, b, (float(rel[0]), float(rel[1])),
                                          max_residual_px=max_residual_px)
    measured = np.asarray(global_off.measured) if global_off.confidence > 0 \
        else np.asarray(rel, dtype=np.float64)

    crop_a = a.pixels[ya0:ya1, xa0:xa1]
    margin = half + search + 2
    feats = _interest_points(crop_a, max_features, margin)

    pts_a, pts_b, scores = [], [], []
    for fx, fy in feats:
        ua = np.array([xa0 + fx, ya0 + fy], dtype=np.float64)
        ub_pred = ua - measured
        got = _refine_match(a.pixels, b.pixels, ua, ub_pred, half, search)
        if got is None:
            continue
        ub, score = got
        if score < min_score:
            continue
        pts_a.append(ua)
        pts_b.append(ub)
        scores.append(score)

    center = np.array([(nx - 1) / 2.0, (ny - 1) / 2.0])
    pts_a = np.asarray(pts_a, dtype=np.float64).reshape(-1, 2) - center
    pts_b = np.asarray(pts_b, dtype=np.float64).reshape(-1, 2) - center
    norm = float(np.hypot(*rel))
    if norm > 0:
        axis = (float(rel[0] / norm), float(rel[1] / norm))
    else:
        axis = (1.0, 0.0)
    return MatchSet(a.camera_index, b.camera_index, pts_a, pts_b, axis,
                    norm, np.asarray(scores, dtype=np.float64))


def triangulate_matches(mset: MatchSet, config: ArrayConfig,
                        calibration: StitchCalibration,
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Heights (um) and composite positions (px) for every match.

    The baseline comes from the calibrated anchors, the disparity from the
    matched points; heights are O_d - depth wrt the calibrated focal plane.
    """
    delta = config.sensor.pixel_pitch_um
    i_d = config.image_distance_um
    o_d = config.object_distance_um
    p_um = mset.baseline_px * calibration.composite_pixel_um
    d_sum_um = mset.disparity_sums_px * delta
    if np.any(d_sum_um <= 0):
        raise ValueError("non-positive disparity sum in match set")
    depth = p_um * i_d / d_sum_um
    heights = o_d - depth

    ta = calibration.position(*mset.camera_a)
    tb = calibration.position(*mset.camera_b)
    ny = config.sensor.pixels_y
    nx = config.sensor.pixels_x
    center = np.array([(nx - 1) / 2.0, (ny - 1) / 2.0])
    scale = (depth / i_d)[:, None] * (delta / calibration.composite_pixel_um)
    qa = ta + center + mset.points_a * scale
    qb = tb + center + mset.points_b * scale
    return heights, (qa + qb) / 2.0


def run_depth_sweep(config: ArrayConfig, z_min_um: float, z_max_um: float,
                    step_um: float, scene: Scene | None = None, *,
                    pair: tuple[tuple[int, int], tuple[int, int]] = ((0, 0), (0, 1)),
                    seed: int = 0, analytic: bool = False,
                    calibration: StitchCalibration | None = None,
                    match_kwargs: dict | None = None,
                    ) -> DepthExperimentReport:
    """Sweep a flat scene through a range of axial displacements.

    At each plane the scene is rendered for one camera pair, features are
    matched and triangulated, and the plane height is estimated as the
    median match height. With ``analytic=True`` the matcher is bypassed:
    disparities follow the projection model evaluated in exact rational
    arithmetic, demonstrating that triangulation inverts it exactly.
    """
    if step_um <= 0:
        raise ValueError("step must be positive")
    n_planes = int(round((z_max_um - z_min_um) / step_um)) + 1
    true_z = z_min_um + step_um * np.arange(n_planes)

    cam_a, cam_b = pair
    if analytic:
        dr = abs(cam_a[0] - cam_b[0])
        dc = abs(cam_a[1] - cam_b[1])
        if dr and dc:
            raise ValueError("analytic sweep requires an axis-aligned pair")
        # Exact rational evaluation: the forward disparity model and its
        # triangulated inverse cancel identically, plane by plane.
        i_d = Fraction(config.image_distance_um)
        o_d = Fraction(config.object_distance_um)
        baseline = Fraction(config.layout.pitch_x_um) * dc \
            + Fraction(config.layout.pitch_y_um) * dr
        est = []
        for z in true_z:
            d_sum = baseline * i_d / (o_d - Fraction(float(z)))
            depth = triangulate(d_sum / 2, d_sum / 2, baseline, i_d)
            est.append(float(o_d - depth))
        return DepthExperimentReport.from_planes(true_z, np.array(est),
                                                 np.zeros(n_planes, np.int64))

    if scene is None:
        raise ValueError("a scene is required unless analytic=True")
    if calibration is None:
        fs0 = render_array(scene, config, (0.0, 0.0, 0.0), seed)
        calibration = calibrate(fs0, config)
    o_d = config.object_distance_um
    kwargs = dict(match_kwargs or {})
    if "max_residual_px" not in kwargs:
        # Widen the global search to the disparity drift across the sweep.
        i_d = config.image_distance_um
        p_max = max(config.layout.pitch_x_um, config.layout.pitch_y_um)
        z_far = max(abs(z_min_um), abs(z_max_um))
        drift = p_max * i_d * (1.0 / (o_d - z_far) - 1.0 / (o_d + z_far)) \
            / config.sensor.pixel_pitch_um
        kwargs["max_residual_px"] = abs(drift) / 2.0 + 12.0
    est_z = np.empty(n_planes)
    n_matches = np.zeros(n_planes, dtype=np.int64)
    for k, z in enumerate(true_z):
        stage = (0.0, 0.0, float(z))
        fa = render_camera(scene, config, cam_a, stage, seed)
        fb = render_camera(scene, config, cam_b, stage, seed)
        mset = match_features(fa, fb, calibration, **kwargs)
        if len(mset) == 0:
            est_z[k] = np.nan
            continue
        heights, _ = triangulate_matches(mset, config, calibration)
        est_z[k] = float(np.median(heights))
        n_matches[k] = len(mset)
    return DepthExperimentReport.from_planes(true_z, est_z, n_matches)


def build_height_map(matches: list[MatchSet], config: ArrayConfig,
                     calibration: StitchCalibration,
                     grid_pitch_um: float) -> HeightMap:
    """Grid sparse triangulated heights by linear interpolation.

    The grid covers the bounding box of the sparse points at
    ``grid_pitch_um`` spacing in composite coordinates; cells outside the
    convex hull of the points are masked invalid, never extrapolated.
    """
    from scipy.interpolate import griddata
    from scipy.spatial import QhullError

    if grid_pitch_um <= 0:
        raise ValueError("grid pitch must be positive")
    pts, heights = [], []
    for mset in matches:
        h, q = triangulate_matches(mset, config, calibration)
        pts.append(q)
        heights.append(h)
    if not pts:
        raise ValueError("no matches supplied")
    pts = np.concatenate(pts)
    heights = np.concatenate(heights)
    if len(pts) < 3:
        raise ValueError("at least 3 sparse points are required")

    cpx = calibration.composite_pixel_um
    step = grid_pitch_um / cpx
    x0, y0 = pts[:, 0].min(), pts[:, 1].min()
    x1, y1 = pts[:, 0].max(), pts[:, 1].max()
    gx = np.arange(x0, x1 + step / 2, step)
    gy = np.arange(y0, y1 + step / 2, step)
    mx, my = np.meshgrid(gx, gy)
    try:
        grid = griddata(pts, heights, (mx, my), method="linear")
    except QhullError as exc:
        raise ValueError(f"degenerate match geometry: {exc}") from None
    if np.all(np.isnan(grid)):
        raise ValueError("degenerate match geometry: all points collinear")
    mask = np.isfinite(grid)
    grid = np.where(mask, grid, 0.0).astype(np.float32)

    # Grid origin in object-plane um, same mapping as Composite pixels.
    ref_axis = camera_axis_positions(config)[0, 0]
    ref_t = calibration.position(0, 0)
    origin_x = ref_axis[0] + (float(gx[0]) - ref_t[0]
                              - (config.sensor.pixels_x - 1) / 2.0) * cpx
    origin_y = ref_axis[1] + (float(gy[0]) - ref_t[1]
                              - (config.sensor.pixels_y - 1) / 2.0) * cpx
    return HeightMap(grid, mask, "interpolated", origin_x, origin_y,
                     grid_pitch_um)
