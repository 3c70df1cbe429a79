import numpy as np
import pytest

from arrayscope.errors import DisconnectedArrayError
from arrayscope.render import CameraFrame, FrameSet, render_array
from arrayscope.scene import make_textured_scene
from arrayscope.stitching import (PairOffset, blend_tiles, build_pyramid,
                                  calibrate, composite,
                                  estimate_pairwise_offset,
                                  feather_weight_map, nominal_calibration,
                                  solve_global_poses)

from helpers import downsample_to_grid, shift_frame


def frame_of(pixels, index=(0, 0)):
    return CameraFrame(np.asarray(pixels, dtype=np.float32), index,
                       (0.0, 0.0))


@pytest.fixture(scope="module")
def texture():
    return make_textured_scene((2000.0, 2000.0), 2.0, seed=3).intensity


class TestPairwiseOffset:
    def test_integer_shift_recovered(self, texture):
        a, b = shift_frame(texture, dy=-3, dx=5, shape=(300, 400))
        po = estimate_pairwise_offset(frame_of(a), frame_of(b, (0, 1)),
                                      (0.0, 0.0))
        assert po.offset[0] == pytest.approx(5.0, abs=0.05)
        assert po.offset[1] == pytest.approx(-3.0, abs=0.05)
        assert po.peak_ratio > 1.15

    def test_identical_frames_zero_offset_max_confidence(self, texture):
        a = frame_of(texture[:300, :400])
        b = frame_of(texture[:300, :400], (0, 1))
        po = estimate_pairwise_offset(a, b, (0.0, 0.0))
        assert po.offset == (0.0, 0.0)
        assert po.peak_ratio > 2.0
        assert 0.0 <= po.confidence <= 1.0

    def test_subpixel_shift_recovered(self, small_config, small_scene):
        # Render the same camera with the sample shifted by 2.5 px worth
        # of object distance: a genuinely resampled sub-pixel shift.
        from arrayscope.render import render_camera
        cpx = small_config.composite_pixel_um
        f0 = render_camera(small_scene, small_config, (0, 0))
        f1 = render_camera(small_scene, small_config, (0, 0),
                           stage_offset_um=(2.5 * cpx, 0.0, 0.0))
        po = estimate_pairwise_offset(f0, f1, (0.0, 0.0))
        # content moves opposite the stage: anchor shift = -2.5 px
        assert po.offset[0] == pytest.approx(-2.5, abs=0.1)
        assert po.offset[1] == pytest.approx(0.0, abs=0.1)

    def test_antisymmetry(self, texture):
        a, b = shift_frame(texture, dy=2, dx=-4, shape=(300, 400))
        fa, fb = frame_of(a), frame_of(b, (0, 1))
        ab = estimate_pairwise_offset(fa, fb, (0.0, 0.0))
        ba = estimate_pairwise_offset(fb, fa, (0.0, 0.0))
        assert ab.offset[0] + ba.offset[0] == pytest.approx(0.0, abs=0.05)
        assert ab.offset[1] + ba.offset[1] == pytest.approx(0.0, abs=0.05)

    def test_flat_overlap_flagged_not_raised(self):
        a = frame_of(np.full((200, 200), 0.5))
        b = frame_of(np.full((200, 200), 0.5), (0, 1))
        po = estimate_pairwise_offset(a, b, (0.0, 0.0))
        assert po.confidence == 0.0
        assert po.offset == (0.0, 0.0)

    def test_tiny_overlap_flagged(self, texture):
        a = frame_of(texture[:200, :200])
        b = frame_of(texture[:200, :200], (0, 1))
        po = estimate_pairwise_offset(a, b, (190.0, 0.0))
        assert po.confidence == 0.0


class TestGlobalSolve:
    def test_two_tiles_exact(self):
        po = PairOffset(((0, 0), (0, 1)), nominal=(100.0, 0.0),
                        offset=(0.4, -0.3), peak_ratio=5.0, confidence=0.8,
                        mean_a=0.5, mean_b=0.5)
        cal = solve_global_poses([po], rows=1, cols=2)
        np.testing.assert_allclose(cal.tile_positions[0], (0.0, 0.0))
        np.testing.assert_allclose(cal.tile_positions[1], (100.4, -0.3),
                                   atol=1e-9)

    def _grid_offsets(self, rows, cols, true_pos, noise, rng):
        offsets = []
        for r in range(rows):
            for c in range(cols):
                i = r * cols + c
                for (r2, c2) in ((r, c + 1), (r + 1, c)):
                    if r2 >= rows or c2 >= cols:
                        continue
                    j = r2 * cols + c2
                    nominal = (float(100 * (c2 - c)), float(80 * (r2 - r)))
                    measured = true_pos[j] - true_pos[i]
                    res = measured - nominal + rng.normal(0, noise, 2)
                    offsets.append(PairOffset(
                        ((r, c), (r2, c2)), nominal, tuple(res),
                        peak_ratio=3.0, confidence=0.7,
                        mean_a=0.5, mean_b=0.5))
        return offsets

    def test_monte_carlo_grid_recovery(self, rng):
        # Ensemble RMSE over trials and tiles with measurement noise
        # sigma = 0.2 px: the solve averages it down below 0.2 px.
        rows = cols = 3
        sq_errors = []
        for _ in range(40):
            true = np.zeros((9, 2))
            for r in range(3):
                for c in range(3):
                    true[r * 3 + c] = (100.0 * c, 80.0 * r)
            true[1:] += rng.normal(0, 2.0, (8, 2))
            offsets = self._grid_offsets(rows, cols, true, 0.2, rng)
            cal = solve_global_poses(offsets, rows, cols)
            sq_errors.append(((cal.tile_positions - true) ** 2).mean())
        assert float(np.sqrt(np.mean(sq_errors))) < 0.2

    def test_cycle_consistent_offsets_zero_residual(self, rng):
        true = np.array([[0.0, 0.0], [100.0, 1.0], [0.5, 80.0],
                         [100.5, 81.0]])
        offsets = self._grid_offsets(2, 2, true, 0.0, rng)
        cal = solve_global_poses(offsets, 2, 2)
        for o in offsets:
            i = o.cameras[0][0] * 2 + o.cameras[0][1]
            j = o.cameras[1][0] * 2 + o.cameras[1][1]
            got = cal.tile_positions[j] - cal.tile_positions[i]
            np.testing.assert_allclose(got, o.measured, atol=1e-9)

    def test_disconnected_graph_lists_components(self):
        po = PairOffset(((0, 0), (0, 1)), (100.0, 0.0), (0.0, 0.0),
                        peak_ratio=3.0, confidence=0.7, mean_a=0.5,
                        mean_b=0.5)
        with pytest.raises(DisconnectedArrayError) as err:
            solve_global_poses([po], rows=1, cols=3)
        assert len(err.value.components) == 2

    def test_low_confidence_pairs_fall_back_to_nominal(self):
        good = PairOffset(((0, 0), (0, 1)), (100.0, 0.0), (0.5, 0.0),
                          peak_ratio=3.0, confidence=0.7, mean_a=0.5,
                          mean_b=0.5)
        bad = PairOffset(((0, 1), (0, 2)), (100.0, 0.0), (25.0, 9.0),
                         peak_ratio=1.05, confidence=0.05, mean_a=0.5,
                         mean_b=0.5)
        anchor = PairOffset(((0, 0), (0, 2)), (200.0, 0.0), (0.5, 0.0),
                            peak_ratio=3.0, confidence=0.7, mean_a=0.5,
                            mean_b=0.5)
        cal = solve_global_poses([good, bad, anchor], rows=1, cols=3)
        # the junk residual of the weak pair must not drag tile 2 around
        assert cal.tile_positions[2][0] == pytest.approx(200.5, abs=0.2)

    def test_gain_solve_geometric_mean_one(self):
        offsets = [
            PairOffset(((0, 0), (0, 1)), (100.0, 0.0), (0.0, 0.0), 3.0, 0.7,
                       mean_a=0.5, mean_b=0.25),
            PairOffset(((0, 1), (0, 2)), (100.0, 0.0), (0.0, 0.0), 3.0, 0.7,
                       mean_a=0.25, mean_b=0.5),
        ]
        cal = solve_global_poses(offsets, 1, 3)
        assert np.prod(cal.gains) == pytest.approx(1.0, rel=1e-9)
        # tile 1 is twice as dim as its neighbors: gain ratio 2
        assert cal.gains[1] / cal.gains[0] == pytest.approx(2.0, rel=1e-6)


class TestCalibrateAndComposite:
    def test_calibrate_matches_geometry(self, grid3_config, grid3_scene):
        fs = render_array(grid3_scene, grid3_config, seed=1)
        cal = calibrate(fs, grid3_config)
        nom = nominal_calibration(grid3_config)
        err = cal.tile_positions - nom.tile_positions
        assert float(np.sqrt((err ** 2).mean())) < 0.2
        assert np.prod(cal.gains) == pytest.approx(1.0, rel=1e-6)

    def test_tiled_regime_refuses_calibration(self):
        from arrayscope.geometry import (ArrayConfig, ArrayLayout, LensSpec,
                                         SensorSpec)
        sensor = SensorSpec(1.1, 200, 150)
        layout = ArrayLayout.from_mm(2, 2, 1.0)
        cfg = ArrayConfig(sensor, LensSpec.from_mm(25.05, 4.0, 1.0), layout,
                          1.0)
        frames = [CameraFrame(np.zeros((150, 200), np.float32), (r, c),
                              (0.0, 0.0)) for r in range(2) for c in range(2)]
        with pytest.raises(ValueError, match="tiled"):
            calibrate(FrameSet(frames, cfg), cfg)

    def test_uniform_frames_give_uniform_composite(self, small_config):
        frames = [CameraFrame(np.full((360, 480), 0.61, np.float32), (r, c),
                              (0.0, 0.0)) for r in range(2) for c in range(2)]
        fs = FrameSet(frames, small_config)
        comp = composite(fs, nominal_calibration(small_config))
        covered = comp.weight_sum > 0
        np.testing.assert_allclose(comp.raster[covered], 0.61, atol=1e-6)

    def test_composite_matches_downsampled_ground_truth(self, small_config,
                                                        small_scene):
        fs = render_array(small_scene, small_config, seed=1)
        cal = calibrate(fs, small_config)
        comp = composite(fs, cal)
        ny, nx = comp.raster.shape
        ys = np.arange(0, ny, 3)
        xs = np.arange(0, nx, 3)
        ref = downsample_to_grid(
            small_scene.intensity, small_scene.sample_pitch_um,
            (small_scene.origin_x_um, small_scene.origin_y_um),
            comp.origin_x_um + xs * comp.pixel_size_um,
            comp.origin_y_um + ys * comp.pixel_size_um,
            comp.pixel_size_um)
        got = comp.raster[np.ix_(ys, xs)]
        wsum = comp.weight_sum[np.ix_(ys, xs)]
        mask = wsum > 0.5
        rms = float(np.sqrt(((got - ref) ** 2)[mask].mean()))
        assert rms < 0.02     # 2 % of the unit dynamic range

    def test_gain_invariance_under_global_scaling(self, small_config,
                                                  small_scene):
        fs = render_array(small_scene, small_config, seed=1)
        cal1 = calibrate(fs, small_config)
        scaled = FrameSet(
            [CameraFrame(0.5 * f.pixels, f.camera_index, f.optical_axis_um,
                         f.z_offset_um, f.exposure_id)
             for f in fs.frames], small_config)
        cal2 = calibrate(scaled, small_config)
        np.testing.assert_allclose(cal2.gains, cal1.gains, rtol=1e-6)
        c1 = composite(fs, cal1)
        c2 = composite(scaled, cal2)
        covered = c1.weight_sum > 0
        np.testing.assert_allclose(c2.raster[covered],
                                   0.5 * c1.raster[covered], atol=1e-6)

    def test_translation_equivariance_of_content(self, small_config,
                                                 small_scene):
        cpx = small_config.composite_pixel_um
        fs0 = render_array(small_scene, small_config, seed=1)
        fs1 = render_array(small_scene, small_config, seed=1,
                           stage_offset_um=(3.0 * cpx, 0.0, 0.0))
        cal0 = calibrate(fs0, small_config)
        cal1 = calibrate(fs1, small_config)
        # pinned reference: anchors identical
        np.testing.assert_allclose(cal1.tile_positions, cal0.tile_positions,
                                   atol=0.05)
        c0 = composite(fs0, cal0).raster
        c1 = composite(fs1, cal1).raster
        # scene shifted +3 px: content appears 3 px earlier along x
        a = c0[:, :-3]
        b = c1[:, 3:]
        m = (composite(fs0, cal0).weight_sum[:, :-3] > 0.5) \
            & (composite(fs1, cal1).weight_sum[:, 3:] > 0.5)
        am, bm = a[m] - a[m].mean(), b[m] - b[m].mean()
        corr = float((am * bm).sum()
                     / np.sqrt((am * am).sum() * (bm * bm).sum()))
        assert corr >= 0.999

    def test_dropped_frame_leaves_hole_only_where_uncovered(self,
                                                            small_config):
        rng = np.random.default_rng(0)
        frames = [rng.random((360, 480)).astype(np.float32)
                  for _ in range(4)]
        cal = nominal_calibration(small_config)
        full, w_full, _ = blend_tiles(frames, cal.tile_positions, cal.gains,
                                      (8.0, 8.0))
        partial, w_part, _ = blend_tiles(frames[:3], cal.tile_positions[:3],
                                         cal.gains[:3], (8.0, 8.0))
        assert (w_part == 0).sum() > (w_full == 0).sum()
        assert partial[w_part == 0].max() == 0.0

    def test_calibration_reuse_on_second_scene(self, small_config,
                                               small_scene):
        # Calibrate on one flat scene, stitch a different one at the same
        # depth: the composite still matches that scene's ground truth.
        other = make_textured_scene((4600.0, 4100.0), 2.75, seed=99)
        fs_cal = render_array(small_scene, small_config, seed=1)
        cal = calibrate(fs_cal, small_config)
        fs = render_array(other, small_config, seed=2)
        comp = composite(fs, cal)
        ny, nx = comp.raster.shape
        ys = np.arange(ny // 4, 3 * ny // 4, 5)
        xs = np.arange(nx // 4, 3 * nx // 4, 5)
        ref = downsample_to_grid(
            other.intensity, other.sample_pitch_um,
            (other.origin_x_um, other.origin_y_um),
            comp.origin_x_um + xs * comp.pixel_size_um,
            comp.origin_y_um + ys * comp.pixel_size_um,
            comp.pixel_size_um)
        got = comp.raster[np.ix_(ys, xs)]
        rms = float(np.sqrt(((got - ref) ** 2).mean()))
        assert rms < 0.02


class TestFeather:
    def test_partition_of_unity_after_normalization(self):
        w1 = feather_weight_map((50, 60), (8.0, 8.0))
        w2 = feather_weight_map((50, 60), (8.0, 8.0))
        total = w1 + w2
        np.testing.assert_allclose(w1 / total + w2 / total, 1.0, rtol=1e-12)

    def test_weights_positive_and_capped(self):
        w = feather_weight_map((40, 40), (8.0, 8.0))
        assert w.min() > 0.0
        assert w.max() <= 1.0
        assert w[20, 20] == 1.0
        assert w[0, 20] < 0.1


class TestPyramid:
    def test_reference_level_counts(self):
        from arrayscope.stitching import Composite
        comp = Composite(np.random.default_rng(0).random((1024, 1024))
                         .astype(np.float32), 0.0, 0.0, 1.0)
        pyr = build_pyramid(comp, 256)
        assert len(pyr.levels) == 3
        shapes = [lvl.shape for lvl in pyr.levels]
        assert shapes == [(1024, 1024), (512, 512), (256, 256)]
        # 16, 4, 1 tiles of 256 px
        assert [(s[0] // 256) * (s[1] // 256) for s in shapes] == [16, 4, 1]

    def test_single_tile_input_single_level(self):
        from arrayscope.stitching import Composite
        comp = Composite(np.zeros((200, 200), np.float32), 0.0, 0.0, 1.0)
        assert len(build_pyramid(comp, 256).levels) == 1

    def test_mean_preserved(self):
        from arrayscope.stitching import Composite
        raster = np.random.default_rng(1).random((512, 512)).astype(np.float32)
        pyr = build_pyramid(Composite(raster, 0.0, 0.0, 1.0), 128)
        means = [float(lvl.mean(dtype=np.float64)) for lvl in pyr.levels]
        for m in means[1:]:
            assert abs(m - means[0]) < 1e-6

    def test_tile_size_must_be_power_of_two(self):
        from arrayscope.stitching import Composite
        comp = Composite(np.zeros((64, 64), np.float32), 0.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            build_pyramid(comp, 100)
