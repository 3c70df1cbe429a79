import hashlib
import json
from pathlib import Path

import pytest

from arrayscope.cli import main as cli_main
from arrayscope.errors import ConfigError
from arrayscope.pipeline import run, validate_config

SMALL_ARRAY = {
    "pixel_um": 1.1, "pixels_x": 480, "pixels_y": 360, "bit_depth": 8,
    "focal_mm": 25.05, "f_number": 4.0, "outer_diameter_mm": 1.6,
    "rows": 2, "cols": 2, "pitch_x_mm": 1.6, "magnification": 0.2,
}


def stitch_config(**extra):
    cfg = {
        "mode": "stitch", "seed": 11, "array": dict(SMALL_ARRAY),
        "scene": {"kind": "texture", "extent_x_mm": 4.5, "extent_y_mm": 4.0},
    }
    cfg.update(extra)
    return cfg


def tree_hashes(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(
                path.read_bytes()).hexdigest()
    return out


class TestValidateConfig:
    def test_missing_seed_names_field(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"mode": "render", "preset": "continuous"})
        assert any("seed" in e for e in err.value.errors)

    def test_nonpositive_magnification_reported(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"mode": "design", "preset": "continuous",
                             "array": {"magnification": -0.5}})
        assert any("magnification" in e for e in err.value.errors)

    def test_unknown_keys_rejected_everywhere(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"mode": "design", "preset": "continuous",
                             "pitchmm": 5, "array": {"pitch": 5},
                             "scene": {"size": 3}})
        msgs = "\n".join(err.value.errors)
        assert "pitchmm" in msgs
        assert "array: unknown key 'pitch'" in msgs
        assert "scene: unknown key 'size'" in msgs

    def test_all_errors_reported_at_once(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"mode": "render", "preset": "nope",
                             "overlap": 2.0, "binning": 0})
        assert len(err.value.errors) >= 4

    def test_preset_override_precedence(self):
        rc = validate_config({"mode": "design", "preset": "continuous",
                              "array": {"magnification": 0.3}})
        assert rc.config.magnification == 0.3
        assert rc.config.layout.rows == 6     # preset value survives

    def test_invalid_json_rejected(self):
        with pytest.raises(ConfigError, match="JSON"):
            validate_config("{not json")

    def test_flag_overrides_win(self):
        rc = validate_config({"mode": "design", "preset": "continuous",
                              "seed": 1}, seed=7)
        assert rc.seed == 7

    def test_array_required_without_preset(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"mode": "design"})
        assert any("array" in e for e in err.value.errors)

    def test_crop_validated(self):
        with pytest.raises(ConfigError, match="crop"):
            validate_config({"mode": "throughput", "preset": "continuous",
                             "crop": [0, 100]})


class TestRunModes:
    def test_design_summary(self):
        rc = validate_config({"mode": "design", "preset": "multi_view"})
        summary = run(rc)
        d = summary["design"]
        assert d["r_pix_um"] == pytest.approx(22.0)
        assert d["regime"] == "multi_view"
        assert d["fov_y_mm"] == pytest.approx(34.32)

    def test_render_mode_writes_frames(self, tmp_path):
        rc = validate_config(stitch_config(mode="render",
                                           out_dir=str(tmp_path)))
        summary = run(rc)
        assert summary["render"]["frames"] == 4
        assert (tmp_path / "frames" / "r0c0_z0_t0.png").exists()
        assert (tmp_path / "manifest.json").exists()

    def test_stitch_mode_outputs(self, tmp_path):
        rc = validate_config(stitch_config(out_dir=str(tmp_path)))
        summary = run(rc)
        assert summary["stitch"]["levels"] >= 1
        assert (tmp_path / "calibration.json").exists()
        assert (tmp_path / "pyramid" / "pyramid.json").exists()

    def test_manifest_covers_every_file(self, tmp_path):
        rc = validate_config(stitch_config(out_dir=str(tmp_path)))
        run(rc)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        listed = {e["path"] for e in manifest["files"]}
        on_disk = {str(p.relative_to(tmp_path))
                   for p in tmp_path.rglob("*") if p.is_file()}
        assert on_disk == listed | {"manifest.json"}

    def test_throughput_mode(self):
        rc = validate_config({"mode": "throughput", "preset": "continuous",
                              "binning": 2})
        summary = run(rc)
        assert summary["throughput"]["frame_bytes"] == 177_240_960
        assert summary["throughput"]["max_fps"] == pytest.approx(28.21,
                                                                 abs=0.01)

    def test_tiled_mode_requires_tiled_config(self):
        rc = validate_config({"mode": "tiled", "seed": 1,
                              "preset": "continuous"})
        with pytest.raises(ValueError, match="gaps"):
            run(rc)

    def test_reproducible_across_threads(self, tmp_path):
        dirs = []
        for name, threads in (("a", 1), ("b", 8), ("c", 1)):
            out = tmp_path / name
            rc = validate_config(stitch_config(out_dir=str(out)),
                                 threads=threads)
            run(rc)
            dirs.append(tree_hashes(out))
        assert dirs[0] == dirs[1] == dirs[2]


class TestCliExitCodes:
    def test_design_ok(self, capsys):
        assert cli_main(["design", "--preset", "continuous"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["design"]["r_pix_um"] == pytest.approx(11.0)

    def test_config_error_exit_2(self, capsys):
        assert cli_main(["render", "--preset", "continuous"]) == 2
        assert "seed" in capsys.readouterr().err

    def test_domain_error_exit_3(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"mode": "tiled", "seed": 1,
                                   "preset": "continuous"}))
        assert cli_main(["tiled", "--config", str(cfg)]) == 3

    def test_no_mode_prints_help(self, capsys):
        assert cli_main([]) == 2

    def test_unknown_preset_rejected_by_argparse(self):
        with pytest.raises(SystemExit):
            cli_main(["design", "--preset", "bogus"])
