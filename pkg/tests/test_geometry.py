import math

import numpy as np
import pytest

from arrayscope.geometry import (ArrayConfig, ArrayLayout, LensSpec, Regime,
                                 SensorSpec, camera_axis_positions,
                                 camera_object_fov,
                                 cameras_for_multiview_area, classify_regime,
                                 continuous_magnification, image_distance,
                                 object_distance, pixel_limited_resolution,
                                 scan_grid, total_fov_extent)

LENS = LensSpec.from_mm(25.05, 4.0, 13.0)


def make_config(pixels_x, pixels_y, rows, cols, pitch_mm, m, pixel_um=1.1):
    sensor = SensorSpec(pixel_um, pixels_x, pixels_y)
    layout = ArrayLayout.from_mm(rows, cols, pitch_mm)
    lens = LensSpec.from_mm(25.05, 4.0, min(13.0, pitch_mm))
    return ArrayConfig(sensor, lens, layout, m)


class TestContinuousMagnification:
    def test_prototype_short_axis(self):
        # 3120 px * 1.1 um = 3432 um sensor width on a 13.5 mm pitch
        assert continuous_magnification(3432.0, 13500.0) == 3432.0 / 13500.0
        assert continuous_magnification(3432.0, 13500.0) == pytest.approx(
            0.2542, abs=5e-4)

    def test_prototype_long_axis(self):
        assert continuous_magnification(4628.8, 13500.0) == pytest.approx(
            0.3429, abs=5e-4)

    def test_abutting_sensors_limit(self):
        assert continuous_magnification(13500.0, 13500.0) == 1.0

    @pytest.mark.parametrize("s,p", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0),
                                     (2.0, 1.0)])
    def test_domain_errors(self, s, p):
        with pytest.raises(ValueError):
            continuous_magnification(s, p)


class TestPixelLimitedResolution:
    def test_multiview_value(self):
        assert pixel_limited_resolution(1.1, 0.1) == pytest.approx(22.0)

    def test_unit_magnification(self):
        assert pixel_limited_resolution(1.1, 1.0) == pytest.approx(2.2)

    def test_quarter_magnification(self):
        # 2 * 1.1 / 0.25 = 8.8 um lower bound
        assert pixel_limited_resolution(1.1, 0.25) == pytest.approx(8.8)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            pixel_limited_resolution(0.0, 1.0)
        with pytest.raises(ValueError):
            pixel_limited_resolution(1.1, 0.0)

    def test_strictly_decreasing_in_magnification(self):
        ms = np.linspace(0.05, 2.0, 40)
        vals = [pixel_limited_resolution(1.1, m) for m in ms]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestClassifyRegime:
    def test_prototype_multiview(self, prototype_config):
        report = classify_regime(prototype_config)
        # 0.1 <= 3432 / (2 * 13500) = 0.1271 on the short (y) axis
        assert 0.1 <= 3432.0 / 27000.0
        assert report.regime_x is Regime.MULTI_VIEW
        assert report.regime_y is Regime.MULTI_VIEW
        assert report.aggregate is Regime.MULTI_VIEW
        assert report.views_per_point_x == 3
        assert report.views_per_point_y == 2

    def test_prototype_continuous(self, prototype_config):
        cfg = ArrayConfig(prototype_config.sensor, prototype_config.lens,
                          prototype_config.layout, 0.2)
        report = classify_regime(cfg)
        # short axis: 0.1271 < 0.2 <= 0.2542
        assert report.regime_y is Regime.CONTINUOUS
        assert report.regime_x is Regime.CONTINUOUS

    def test_prototype_tiled(self, prototype_config):
        cfg = ArrayConfig(prototype_config.sensor, prototype_config.lens,
                          prototype_config.layout, 1.0)
        report = classify_regime(cfg)
        assert report.regime_x is Regime.TILED
        assert report.regime_y is Regime.TILED
        assert report.overlap_fraction_x == pytest.approx(
            1.0 - 13500.0 / 4628.8)
        assert report.views_per_point_x == 0

    def test_boundary_exactness(self, rng):
        for _ in range(200):
            px = int(rng.integers(100, 5000))
            pixel = float(rng.uniform(0.5, 10.0))
            s = px * pixel
            p = s * float(rng.uniform(1.0, 4.0))
            cfg = make_config(px, px, 2, 2, p / 1e3, s / p, pixel)
            r = classify_regime(cfg)
            assert r.regime_x is Regime.CONTINUOUS
            assert r.views_per_point_x == 1
            cfg2 = make_config(px, px, 2, 2, p / 1e3, (s / p) * (1 + 1e-9),
                               pixel)
            assert classify_regime(cfg2).regime_x is Regime.TILED
            cfg3 = make_config(px, px, 2, 2, p / 1e3, s / (2 * p), pixel)
            r3 = classify_regime(cfg3)
            assert r3.regime_x is Regime.MULTI_VIEW
            assert r3.views_per_point_x == 2

    def test_overlap_sign_consistency(self, rng):
        # Coverage equivalence: non-tiled regime along an axis iff the
        # overlap fraction is non-negative, iff a dense 1-D sweep of the
        # footprint finds at least one covering camera everywhere.
        for _ in range(300):
            px = int(rng.integers(64, 4000))
            pixel = float(rng.uniform(0.5, 8.0))
            s = px * pixel
            p = s * float(rng.uniform(1.001, 5.0))
            m = float(rng.uniform(0.02, 2.0))
            # Stay off the knife edges; boundaries get their own test.
            if min(abs(m - s / p), abs(m - s / (2 * p))) < 1e-6 * m:
                continue
            cfg = make_config(px, px, 1, 3, p / 1e3, m, pixel)
            r = classify_regime(cfg)
            covered = r.regime_x in (Regime.MULTI_VIEW, Regime.CONTINUOUS)
            assert covered == (r.overlap_fraction_x >= 0.0)
            axes = camera_axis_positions(cfg)[0, :, 0]
            half = cfg.fov_x_um / 2.0
            xs = np.linspace(axes[0], axes[-1], 2001)
            hits = (np.abs(xs[:, None] - axes[None, :]) <= half).sum(axis=1)
            assert (hits.min() >= 1) == covered

    def test_multiview_four_camera_guarantee(self, prototype_config):
        # Interior points at least 2p from the footprint edge see >= 4
        # cameras when both axes are multi-view.
        cfg = prototype_config
        axes = camera_axis_positions(cfg).reshape(-1, 2)
        ext = total_fov_extent(cfg)
        p = cfg.layout.pitch_x_um
        xs = np.linspace(-ext.extent_x_um / 2 + 2 * p,
                         ext.extent_x_um / 2 - 2 * p, 41)
        ys = np.linspace(-ext.extent_y_um / 2 + 2 * p,
                         ext.extent_y_um / 2 - 2 * p, 31)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        inside = ((np.abs(pts[:, None, 0] - axes[None, :, 0])
                   <= cfg.fov_x_um / 2)
                  & (np.abs(pts[:, None, 1] - axes[None, :, 1])
                     <= cfg.fov_y_um / 2))
        assert inside.sum(axis=1).min() >= 4


class TestFov:
    def test_camera_fov_values(self, prototype_config):
        fx, fy = camera_object_fov(prototype_config)
        assert fy == pytest.approx(34.32e3)     # short axis, ~32 mm nominal
        assert fx == pytest.approx(46.288e3)

    def test_camera_fov_other_magnifications(self, prototype_config):
        cfg = ArrayConfig(prototype_config.sensor, prototype_config.lens,
                          prototype_config.layout, 0.2)
        assert camera_object_fov(cfg)[1] == pytest.approx(17.16e3)
        cfg = ArrayConfig(prototype_config.sensor, prototype_config.lens,
                          prototype_config.layout, 1.0)
        assert camera_object_fov(cfg)[1] == pytest.approx(3.432e3)

    def test_total_extent_prototype(self, prototype_config):
        ext = total_fov_extent(prototype_config)
        # (6-1)*13.5 + 34.32 short axis, (9-1)*13.5 + 46.288 long axis
        assert ext.extent_y_um == pytest.approx(101.82e3)
        assert ext.extent_x_um == pytest.approx(154.288e3)
        assert not ext.has_gaps

    def test_total_extent_continuous(self, prototype_config):
        cfg = ArrayConfig(prototype_config.sensor, prototype_config.lens,
                          prototype_config.layout, 0.2)
        ext = total_fov_extent(cfg)
        assert ext.extent_y_um == pytest.approx(84.66e3)
        assert ext.extent_x_um == pytest.approx(131.144e3)

    def test_single_camera_extent_is_fov(self):
        cfg = make_config(480, 360, 1, 1, 13.5, 0.1)
        ext = total_fov_extent(cfg)
        fx, fy = camera_object_fov(cfg)
        assert ext.extent_x_um == pytest.approx(fx)
        assert ext.extent_y_um == pytest.approx(fy)

    def test_tiled_extent_flags_gaps(self, prototype_config):
        cfg = ArrayConfig(prototype_config.sensor, prototype_config.lens,
                          prototype_config.layout, 1.0)
        assert total_fov_extent(cfg).has_gaps

    def test_extent_strictly_decreasing_in_magnification(self,
                                                         prototype_config):
        ms = np.linspace(0.05, 1.5, 30)
        vals = [total_fov_extent(ArrayConfig(
            prototype_config.sensor, prototype_config.lens,
            prototype_config.layout, m)).extent_x_um for m in ms]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestCameraCount:
    def test_reference_area(self):
        # 13500 mm^2 at 13.5 mm pitch: ceil(13500 / 729) = 19
        assert cameras_for_multiview_area(13500e6, 13500.0) == 19

    def test_single_camera_area(self):
        p = 7000.0
        assert cameras_for_multiview_area(4 * p * p, p) == 1

    def test_inverse_of_formula(self):
        p = 13500.0
        assert cameras_for_multiview_area(54 * 4 * p * p, p) == 54

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            cameras_for_multiview_area(0.0, 1.0)
        with pytest.raises(ValueError):
            cameras_for_multiview_area(1.0, -1.0)


class TestScanGrid:
    def test_prototype_zero_overlap(self, prototype_config):
        cfg = ArrayConfig(prototype_config.sensor, prototype_config.lens,
                          prototype_config.layout, 1.0)
        # ceil(13.5 / 4.6288) = 3 along x, ceil(13.5 / 3.432) = 4 along y
        assert scan_grid(cfg, 0.0) == (3, 4)

    def test_fov_equals_pitch_single_position(self):
        # FOV = s/M = pitch exactly: one snapshot covers each gap.
        px, pixel = 1000, 1.1
        s = px * pixel
        p_mm = 2.0
        m = s / (p_mm * 1e3)
        cfg = make_config(px, px, 2, 2, p_mm, m, pixel)
        assert scan_grid(cfg, 0.0) == (1, 1)

    def test_non_tiled_raises(self, prototype_config):
        with pytest.raises(ValueError):
            scan_grid(prototype_config, 0.0)

    def test_overlap_range(self, prototype_config):
        cfg = ArrayConfig(prototype_config.sensor, prototype_config.lens,
                          prototype_config.layout, 1.0)
        with pytest.raises(ValueError):
            scan_grid(cfg, 1.0)
        with pytest.raises(ValueError):
            scan_grid(cfg, -0.1)


class TestThinLens:
    def test_multiview_distances(self):
        assert image_distance(LENS, 0.1) == pytest.approx(27.555e3)
        assert object_distance(LENS, 0.1) == pytest.approx(275.55e3)

    def test_continuous_working_distance(self):
        assert object_distance(LENS, 0.2) == pytest.approx(150.3e3)

    def test_unit_magnification_4f(self):
        assert image_distance(LENS, 1.0) == pytest.approx(2 * 25.05e3)
        assert object_distance(LENS, 1.0) == pytest.approx(2 * 25.05e3)

    def test_ratio_is_inverse_magnification(self):
        for m in np.geomspace(1e-3, 10.0, 50):
            ratio = object_distance(LENS, m) / image_distance(LENS, m)
            assert ratio == pytest.approx(1.0 / m, rel=1e-12)

    def test_zero_magnification_raises(self):
        with pytest.raises(ValueError):
            image_distance(LENS, 0.0)
        with pytest.raises(ValueError):
            object_distance(LENS, 0.0)


class TestTypes:
    def test_sensor_invariants(self):
        with pytest.raises(ValueError):
            SensorSpec(0.0, 100, 100)
        with pytest.raises(ValueError):
            SensorSpec(1.1, 0, 100)
        s = SensorSpec(1.1, 4208, 3120)
        assert s.width_x_um == pytest.approx(4628.8)
        assert s.width_y_um == pytest.approx(3432.0)

    def test_layout_invariants(self):
        with pytest.raises(ValueError):
            ArrayLayout(0, 1, 1000.0, 1000.0)
        with pytest.raises(ValueError):
            ArrayLayout(1, 1, -5.0, 5.0)

    def test_sensors_cannot_overlap(self):
        sensor = SensorSpec(1.1, 4208, 3120)
        layout = ArrayLayout.from_mm(2, 2, 4.0)   # pitch < sensor width
        with pytest.raises(ValueError):
            ArrayConfig(sensor, LensSpec.from_mm(25.05, 4.0, 4.0), layout, 0.5)

    def test_lens_must_fit_pitch(self):
        sensor = SensorSpec(1.1, 400, 300)
        layout = ArrayLayout.from_mm(2, 2, 5.0)
        with pytest.raises(ValueError):
            ArrayConfig(sensor, LENS, layout, 0.5)   # 13 mm barrel, 5 mm pitch

    def test_camera_axes_centered(self, prototype_config):
        axes = camera_axis_positions(prototype_config)
        assert axes.shape == (6, 9, 2)
        assert axes.mean(axis=(0, 1)) == pytest.approx((0.0, 0.0))
        assert axes[0, 1, 0] - axes[0, 0, 0] == pytest.approx(13.5e3)
        assert axes[1, 0, 1] - axes[0, 0, 1] == pytest.approx(13.5e3)
