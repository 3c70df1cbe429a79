"""Run configuration, validation, and artifact orchestration.

A run is described by a JSON document (or flag overrides) with explicit
unit suffixes on every length key. Unknown keys are rejected, every
validation problem is reported at once, and any stochastic path demands a
seed. Each run writes its artifacts under one output directory and commits
a manifest last, so a directory with a manifest is always complete.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__, acquisition, fileio
from .depth import build_height_map, match_features
from .errors import ConfigError
from .experiments import (desk_stereo_config, resolution_experiment,
                          stereo_depth_experiment, tiled_scan_experiment)
from .geometry import (ArrayConfig, ArrayLayout, LensSpec, Regime, SensorSpec,
                       classify_regime, design_report_rows,
                       pixel_limited_resolution, total_fov_extent)
from .presets import PRESETS, preset
from .render import render_array, render_camera
from .scene import Scene, make_textured_scene
from .stitching import build_pyramid, calibrate, composite, nominal_calibration

__all__ = ["RunConfig", "validate_config", "run", "MODES"]

MODES = ("design", "render", "stitch", "depth", "tiled", "throughput",
         "pipeline")
_SEEDED_MODES = ("render", "stitch", "depth", "tiled", "pipeline")

_ARRAY_KEYS = {
    "pixel_um": float, "pixels_x": int, "pixels_y": int, "bit_depth": int,
    "focal_mm": float, "f_number": float, "outer_diameter_mm": float,
    "rows": int, "cols": int, "pitch_x_mm": float, "pitch_y_mm": float,
    "magnification": float,
}
_SCENE_KEYS = {
    "kind": str, "extent_x_mm": float, "extent_y_mm": float,
    "sample_pitch_um": float, "path": str, "name": str, "feature_scale_um": float,
}
_DEPTH_KEYS = {"z_min_mm": float, "z_max_mm": float, "step_um": float}
_TOP_KEYS = {
    "mode": str, "preset": str, "seed": int, "out_dir": str, "threads": int,
    "overlap": float, "binning": int, "efficiency": float, "noise_std": float,
    "bandwidth_gb_s": float, "buffer_gb": float, "crop": list,
    "contrast_threshold": float, "array": dict, "scene": dict, "depth": dict,
}


@dataclass(frozen=True)
class RunConfig:
    """Validated description of one tool invocation."""

    mode: str
    config: ArrayConfig
    out_dir: Path | None
    seed: int | None
    threads: int = 1
    overlap: float = 0.1
    binning: int = 1
    efficiency: float = 1.0
    noise_std: float = 0.0
    bandwidth_bytes_s: float = 5e9
    buffer_bytes: float = 128e9
    crop: tuple[int, int] | None = None
    contrast_threshold: float = 0.26
    scene_spec: dict = field(default_factory=dict)
    depth_spec: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _check_section(raw: dict, allowed: dict, section: str,
                   errors: list[str]) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in allowed:
            errors.append(f"{section}: unknown key {key!r}")
            continue
        want = allowed[key]
        if want is float and isinstance(value, (int, float)) \
                and not isinstance(value, bool):
            out[key] = float(value)
        elif want is int and isinstance(value, int) \
                and not isinstance(value, bool):
            out[key] = value
        elif isinstance(value, want) and not isinstance(value, bool):
            out[key] = value
        else:
            errors.append(f"{section}.{key}: expected {want.__name__}, "
                          f"got {type(value).__name__}")
    return out


def _resolve_array(preset_name: str | None, overrides: dict,
                   errors: list[str]) -> ArrayConfig | None:
    base = None
    if preset_name is not None:
        if preset_name not in PRESETS:
            errors.append(f"preset: unknown name {preset_name!r} "
                          f"(have: {', '.join(sorted(PRESETS))})")
            return None
        base = preset(preset_name)
    merged = fileio.config_summary(base) if base else {}
    merged.update(overrides)          # explicit keys win over the preset

    required = ("pixel_um", "pixels_x", "pixels_y", "focal_mm", "f_number",
                "outer_diameter_mm", "rows", "cols", "pitch_x_mm",
                "magnification")
    missing = [k for k in required if k not in merged]
    if missing:
        errors.append("array: missing required keys "
                      + ", ".join(sorted(missing)))
        return None
    merged.setdefault("pitch_y_mm", merged["pitch_x_mm"])
    merged.setdefault("bit_depth", 8)
    try:
        sensor = SensorSpec(merged["pixel_um"], merged["pixels_x"],
                            merged["pixels_y"], merged["bit_depth"])
        lens = LensSpec.from_mm(merged["focal_mm"], merged["f_number"],
                                merged["outer_diameter_mm"])
        layout = ArrayLayout.from_mm(merged["rows"], merged["cols"],
                                     merged["pitch_x_mm"],
                                     merged["pitch_y_mm"])
        return ArrayConfig(sensor, lens, layout, merged["magnification"])
    except ValueError as exc:
        errors.append(f"array: {exc}")
        return None


def validate_config(raw, **flag_overrides) -> RunConfig:
    """Parse and validate a config document plus CLI flag overrides.

    ``raw`` may be a JSON string, a dict, or None (flags only). Raises
    :class:`ConfigError` carrying every problem found.
    """
    errors: list[str] = []
    if raw is None:
        data: dict = {}
    elif isinstance(raw, str):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config is not valid JSON: {exc}"]) from None
        if not isinstance(data, dict):
            raise ConfigError(["config root must be a JSON object"])
    else:
        data = dict(raw)

    for key, value in flag_overrides.items():
        if value is not None:
            data[key] = value

    top = _check_section(data, _TOP_KEYS, "config", errors)
    mode = top.get("mode")
    if mode is None:
        errors.append("mode: required (one of %s)" % ", ".join(MODES))
    elif mode not in MODES:
        errors.append(f"mode: unknown mode {mode!r}")

    array_over = _check_section(top.get("array", {}), _ARRAY_KEYS, "array",
                                errors)
    scene_spec = _check_section(top.get("scene", {}), _SCENE_KEYS, "scene",
                                errors)
    depth_spec = _check_section(top.get("depth", {}), _DEPTH_KEYS, "depth",
                                errors)
    config = _resolve_array(top.get("preset"), array_over, errors)

    seed = top.get("seed")
    if mode in _SEEDED_MODES and seed is None:
        errors.append(f"seed: required for mode {mode!r} "
                      "(stochastic rendering path)")

    overlap = top.get("overlap", 0.1)
    if not 0.0 <= overlap < 1.0:
        errors.append("overlap: must lie in [0, 1)")
    binning = top.get("binning", 1)
    if binning < 1:
        errors.append("binning: must be >= 1")
    efficiency = top.get("efficiency", 1.0)
    if not 0.0 < efficiency <= 1.0:
        errors.append("efficiency: must lie in (0, 1]")
    noise_std = top.get("noise_std", 0.0)
    if noise_std < 0.0:
        errors.append("noise_std: must be >= 0")
    threads = top.get("threads", 1)
    if threads < 0:
        errors.append("threads: must be >= 0 (0 means auto)")
    crop = top.get("crop")
    if crop is not None:
        if (len(crop) != 2 or not all(isinstance(v, int) and v > 0
                                      for v in crop)):
            errors.append("crop: expected two positive integers [x, y]")
            crop = None
        else:
            crop = (crop[0], crop[1])
    kind = scene_spec.get("kind", "texture")
    if kind not in ("texture", "png"):
        errors.append(f"scene.kind: unknown kind {kind!r}")

    if errors:
        raise ConfigError(errors)
    if threads == 0:
        import os
        threads = os.cpu_count() or 1
    return RunConfig(
        mode=mode, config=config,
        out_dir=Path(top["out_dir"]) if "out_dir" in top else None,
        seed=seed, threads=threads, overlap=overlap, binning=binning,
        efficiency=efficiency, noise_std=noise_std,
        bandwidth_bytes_s=top.get("bandwidth_gb_s", 5.0) * 1e9,
        buffer_bytes=top.get("buffer_gb", 128.0) * 1e9,
        crop=crop, contrast_threshold=top.get("contrast_threshold", 0.26),
        scene_spec=scene_spec, depth_spec=depth_spec, raw=data)


def _build_scene(rc: RunConfig) -> Scene:
    spec = rc.scene_spec
    kind = spec.get("kind", "texture")
    if kind == "png":
        if "path" not in spec:
            raise ConfigError(["scene.path: required for scene.kind=png"])
        return fileio.import_scene(spec["path"], spec.get("name", "scene"))
    config = rc.config
    extent = (spec.get("extent_x_mm", 10.0) * 1e3,
              spec.get("extent_y_mm", 10.0) * 1e3)
    pitch = spec.get("sample_pitch_um",
                     config.sensor.pixel_pitch_um / (2 * config.magnification))
    return make_textured_scene(extent, pitch, rc.seed or 0,
                               feature_scale_um=spec.get("feature_scale_um"))


def _design_summary(config: ArrayConfig) -> dict:
    report = classify_regime(config)
    extent = total_fov_extent(config)
    return {
        "regime_x": report.regime_x.value,
        "regime_y": report.regime_y.value,
        "regime": report.aggregate.value,
        "overlap_fraction_x": report.overlap_fraction_x,
        "overlap_fraction_y": report.overlap_fraction_y,
        "views_per_point_x": report.views_per_point_x,
        "views_per_point_y": report.views_per_point_y,
        "r_pix_um": pixel_limited_resolution(config.sensor.pixel_pitch_um,
                                             config.magnification),
        "fov_x_mm": config.fov_x_um / 1e3,
        "fov_y_mm": config.fov_y_um / 1e3,
        "extent_x_mm": extent.extent_x_um / 1e3,
        "extent_y_mm": extent.extent_y_um / 1e3,
        "has_gaps": extent.has_gaps,
        "working_distance_mm": config.object_distance_um / 1e3,
        "image_distance_mm": config.image_distance_um / 1e3,
        "gigapixels_per_snapshot":
            config.sensor.pixel_count * config.layout.camera_count / 1e9,
    }


def run(rc: RunConfig) -> dict:
    """Execute one mode and return its machine-readable summary.

    When ``out_dir`` is set, artifacts land there and a manifest is
    committed last; the summary is also written as ``summary.json``.
    """
    out = rc.out_dir
    files: list[Path] = []
    summary: dict = {"mode": rc.mode,
                     "config": fileio.config_summary(rc.config)}

    if rc.mode == "design":
        summary["design"] = _design_summary(rc.config)
        if out:
            files.append(fileio.design_report_csv(
                out / "design_report.csv", design_report_rows(rc.config)))

    elif rc.mode == "render":
        scene = _build_scene(rc)
        frameset = render_array(scene, rc.config, seed=rc.seed,
                                noise_std=rc.noise_std, threads=rc.threads)
        if rc.binning > 1:
            from .render import apply_binning
            frameset = type(frameset)(
                [apply_binning(f, rc.binning) for f in frameset.frames],
                rc.config, frameset.stage_offset_um)
        summary["render"] = {"frames": len(frameset.frames),
                             "frame_shape": list(frameset.frames[0].shape)}
        if out:
            files += fileio.export_frameset(out / "frames", frameset)

    elif rc.mode == "stitch":
        summary["stitch"] = _run_stitch(rc, out, files)

    elif rc.mode == "depth":
        summary["depth"] = _run_depth(rc, out, files)

    elif rc.mode == "tiled":
        summary["tiled"] = _run_tiled(rc, out, files)

    elif rc.mode == "throughput":
        report = acquisition.throughput_report(
            rc.config.sensor, rc.config.layout.camera_count,
            rc.bandwidth_bytes_s, rc.buffer_bytes, binning=rc.binning,
            crop=rc.crop, efficiency=rc.efficiency)
        summary["throughput"] = {
            "frame_bytes": report.frame_bytes,
            "max_fps": report.max_fps,
            "buffer_frames": report.buffer_frames,
            "max_duration_s": report.max_duration_s,
        }
        if out:
            files.append(fileio.throughput_csv(out / "throughput.csv", report))

    elif rc.mode == "pipeline":
        summary["design"] = _design_summary(rc.config)
        if out:
            files.append(fileio.design_report_csv(
                out / "design_report.csv", design_report_rows(rc.config)))
        res = resolution_experiment(rc.config.magnification, seed=rc.seed,
                                    contrast_threshold=rc.contrast_threshold,
                                    threads=rc.threads)
        summary["resolution"] = {
            "r_pix_um": res.r_pix_um,
            "resolved_um": res.resolved_um,
            "contrasts": {f"{k:.6g}": v for k, v in res.contrasts.items()},
        }
        if out:
            files += fileio.export_pyramid(out / "resolution_pyramid",
                                           build_pyramid(res.composite))
        report = classify_regime(rc.config)
        if report.regime_x is Regime.MULTI_VIEW:
            dep = _run_depth(rc, out, files)
            summary["depth"] = dep
        if report.aggregate is Regime.TILED:
            summary["tiled"] = _run_tiled(rc, out, files)
        through = acquisition.throughput_report(
            rc.config.sensor, rc.config.layout.camera_count,
            rc.bandwidth_bytes_s, rc.buffer_bytes, binning=rc.binning,
            crop=rc.crop, efficiency=rc.efficiency)
        summary["throughput"] = {"frame_bytes": through.frame_bytes,
                                 "max_fps": through.max_fps}
        if out:
            files.append(fileio.throughput_csv(out / "throughput.csv",
                                               through))

    if out:
        out.mkdir(parents=True, exist_ok=True)
        spath = out / "summary.json"
        spath.write_text(json.dumps(summary, sort_keys=True, indent=2,
                                    default=str) + "\n")
        files.append(spath)
        # Worker count and output path are execution knobs, not part of the
        # experiment identity; manifests must match across --threads.
        payload = {k: v for k, v in rc.raw.items()
                   if k not in ("threads", "out_dir")}
        fileio.write_manifest(out, payload, files, __version__)
    return summary


def _run_stitch(rc: RunConfig, out, files) -> dict:
    scene = _build_scene(rc)
    frameset = render_array(scene, rc.config, seed=rc.seed,
                            noise_std=rc.noise_std, threads=rc.threads)
    regime = classify_regime(rc.config).aggregate
    cal = (nominal_calibration(rc.config) if regime is Regime.TILED
           else calibrate(frameset, rc.config))
    comp = composite(frameset, cal)
    pyramid = build_pyramid(comp)
    info = {
        "composite_shape": list(comp.raster.shape),
        "pixel_size_um": comp.pixel_size_um,
        "levels": len(pyramid.levels),
        "gains": [float(g) for g in cal.gains],
    }
    if out:
        fileio.save_calibration(out / "calibration.json", cal)
        files.append(out / "calibration.json")
        files += fileio.export_pyramid(out / "pyramid", pyramid)
    return info


def _run_depth(rc: RunConfig, out, files) -> dict:
    spec = rc.depth_spec
    z_min = spec.get("z_min_mm", -3.0) * 1e3
    z_max = spec.get("z_max_mm", 3.0) * 1e3
    step = spec.get("step_um", 100.0)
    # Stereo triangulation needs the multi-view geometry; the desk pair
    # keeps the reference pitch and optics at M = 0.1.
    config = desk_stereo_config()
    report = stereo_depth_experiment(z_min, z_max, step, seed=rc.seed,
                                     config=config)

    # Height map from the in-focus plane's matches.
    extent = (config.layout.pitch_x_um + config.fov_x_um + 2e3,
              config.fov_y_um + 1e3)
    pitch = config.sensor.pixel_pitch_um / (2.0 * config.magnification)
    scene = make_textured_scene(extent, pitch, rc.seed,
                                feature_scale_um=6.0 * pitch)
    cal = calibrate(render_array(scene, config, seed=rc.seed), config)
    fa = render_camera(scene, config, (0, 0), rng_seed=rc.seed)
    fb = render_camera(scene, config, (0, 1), rng_seed=rc.seed)
    mset = match_features(fa, fb, cal)
    hmap = build_height_map([mset], config, cal,
                            grid_pitch_um=20.0 * config.composite_pixel_um)
    info = {"rmse_um": report.rmse_um, "planes": len(report.true_z_um),
            "height_grid": list(hmap.grid.shape)}
    if out:
        files.append(fileio.depth_report_csv(out / "depth_report.csv",
                                             report))
        files += fileio.export_heightmap(out, hmap)
    return info


def _run_tiled(rc: RunConfig, out, files) -> dict:
    # Plan for the requested configuration first; non-tiled configs raise
    # here. The rendered fusion demo runs on desk-scale geometry.
    full_plan = acquisition.plan_tiled_scan(rc.config, rc.overlap,
                                            uniform_step=True)
    plan, comp, coverage, _ = tiled_scan_experiment(
        seed=rc.seed, overlap=rc.overlap, threads=rc.threads)
    info = {
        "positions": full_plan.n_positions,
        "grid": list(full_plan.grid_shape),
        "desk_positions": plan.n_positions,
        "desk_grid": list(plan.grid_shape),
        "covered_fraction": coverage.covered_fraction,
        "composite_shape": list(comp.raster.shape),
    }
    if out:
        files.append(fileio.scan_plan_csv(out / "scan_plan.csv", full_plan))
        files += fileio.export_pyramid(out / "tiled_pyramid",
                                       build_pyramid(comp))
    return info
