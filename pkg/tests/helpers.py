"""Independent oracles used by the tests.

Everything here is deliberately written against different primitives than
the library uses, so a test failure points at the library and not at a
shared helper.
"""

import numpy as np


def pinhole_image_position(lateral_um, height_um, object_distance_um,
                           image_distance_um):
    """Image position of a point by explicit two-line intersection.

    The point sits at (lateral, -(O_d - h)); the ray through the pinhole at
    the origin is intersected with the sensor plane z = +I_d. Returns the
    magnitude of the image-plane offset (the rendering model folds the
    optical inversion into its coordinates).
    """
    p = np.array([lateral_um, -(object_distance_um - height_um)])
    direction = -p
    t = (image_distance_um - p[1]) / direction[1]
    hit = p + t * direction
    return abs(float(hit[0]))


def box_average_profile(bar_start_um, period_um, n_periods, centers_um,
                        width_um):
    """Analytic box average of a 0/1 square wave over pixel footprints.

    Bright bars occupy [start + k*period, start + k*period + period/2).
    Evaluated by direct interval-overlap arithmetic per pixel.
    """
    lo = np.asarray(centers_um) - width_um / 2.0
    hi = np.asarray(centers_um) + width_um / 2.0
    total = np.zeros_like(lo)
    half = period_um / 2.0
    for k in range(n_periods):
        b0 = bar_start_um + k * period_um
        b1 = b0 + half
        total += np.clip(np.minimum(hi, b1) - np.maximum(lo, b0), 0.0, None)
    return total / width_um


def downsample_to_grid(scene_raster, scene_pitch_um, scene_origin_um,
                       centers_x_um, centers_y_um, pixel_um):
    """Area-average a scene onto arbitrary pixel centers, independently.

    Uses per-axis cumulative sums with np.interp instead of the library's
    bilinear integral-image sampling.
    """
    r = np.asarray(scene_raster, dtype=np.float64)
    ny, nx = r.shape

    # Integrate along y first: per-column cumulative sums interpolated at
    # the pixel edges give exact integrals of the piecewise-constant scene.
    cs_y = np.zeros((ny + 1, nx))
    np.cumsum(r, axis=0, out=cs_y[1:])
    edges_y = scene_origin_um[1] + np.arange(ny + 1) * scene_pitch_um
    lo = np.asarray(centers_y_um) - pixel_um / 2.0
    hi = np.asarray(centers_y_um) + pixel_um / 2.0
    rows = np.empty((len(centers_y_um), nx))
    for j in range(nx):
        rows[:, j] = (np.interp(hi, edges_y, cs_y[:, j])
                      - np.interp(lo, edges_y, cs_y[:, j]))

    # Then along x. Integrals accumulate in texel units per axis, so the
    # box average divides by (pixel width in texels) squared.
    cs_x = np.zeros((rows.shape[0], nx + 1))
    np.cumsum(rows, axis=1, out=cs_x[:, 1:])
    edges_x = scene_origin_um[0] + np.arange(nx + 1) * scene_pitch_um
    lo = np.asarray(centers_x_um) - pixel_um / 2.0
    hi = np.asarray(centers_x_um) + pixel_um / 2.0
    out = np.empty((len(centers_y_um), len(centers_x_um)))
    for i in range(rows.shape[0]):
        out[i] = (np.interp(hi, edges_x, cs_x[i])
                  - np.interp(lo, edges_x, cs_x[i]))
    return out / (pixel_um / scene_pitch_um) ** 2 / scene_pitch_um * scene_pitch_um


def michelson(profile):
    profile = np.asarray(profile, dtype=np.float64)
    hi, lo = profile.max(), profile.min()
    return (hi - lo) / (hi + lo) if hi + lo > 0 else 0.0


def shift_frame(base, dy, dx, shape):
    """Two crops of one raster whose sampling windows differ by (dx, dy).

    Frame b's window sits (dx, dy) further along each axis, so its anchor
    relative to a is exactly (dx, dy): b(v) = a(v + (dx, dy)).
    """
    ny, nx = shape
    m = max(abs(dy), abs(dx)) + 1
    a = base[m:m + ny, m:m + nx]
    b = base[m + dy:m + dy + ny, m + dx:m + dx + nx]
    return a, b
