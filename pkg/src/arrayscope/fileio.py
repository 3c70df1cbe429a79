"""File interchange: PNG rasters with JSON sidecars, CSV tables, manifests.

Rasters travel as 8- or 16-bit grayscale PNG. Quantities that PNG cannot
carry (physical extents, pixel sizes, height scale/offset) ride in JSON
sidecars next to the images. All writers are deterministic: no timestamps,
keys sorted, so identical runs produce byte-identical artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .depth import DepthExperimentReport, HeightMap
from .geometry import ArrayConfig
from .render import CameraFrame, FrameSet
from .scene import Scene
from .stitching import Pyramid, StitchCalibration
from .acquisition import ScanPlan, ThroughputReport

__all__ = [
    "save_png",
    "load_png",
    "export_scene",
    "import_scene",
    "export_frameset",
    "export_pyramid",
    "export_heightmap",
    "save_calibration",
    "load_calibration",
    "write_csv",
    "design_report_csv",
    "scan_plan_csv",
    "depth_report_csv",
    "throughput_csv",
    "config_summary",
    "config_hash",
    "write_manifest",
]

CALIBRATION_FORMAT_VERSION = 1


def save_png(path, raster01: np.ndarray, bit_depth: int = 16) -> None:
    """Write a [0, 1] float raster as 8- or 16-bit grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clipped = np.clip(np.asarray(raster01, dtype=np.float64), 0.0, 1.0)
    if bit_depth == 8:
        img = Image.fromarray(np.round(clipped * 255).astype(np.uint8))
    elif bit_depth == 16:
        img = Image.fromarray(np.round(clipped * 65535).astype(np.uint16))
    else:
        raise ValueError("PNG export supports 8 or 16 bit only")
    img.save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read a grayscale PNG back to float32 in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected grayscale, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    return arr.astype(np.float32) / 65535.0


def _write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def export_scene(directory, scene: Scene, name: str = "scene") -> list[Path]:
    """Scene intensity (16-bit PNG) plus sidecar; heights alongside if any."""
    directory = Path(directory)
    files = []
    png = directory / f"{name}.png"
    save_png(png, scene.intensity, 16)
    files.append(png)
    meta = {
        "extent_x_um": scene.extent_x_um,
        "extent_y_um": scene.extent_y_um,
        "sample_pitch_um": scene.sample_pitch_um,
        "has_height_map": scene.height_map is not None,
    }
    side = directory / f"{name}.json"
    _write_json(side, meta)
    files.append(side)
    if scene.height_map is not None:
        files += _save_height_raster(directory / f"{name}_heights",
                                     scene.height_map)
    return files


def _save_height_raster(prefix: Path, heights: np.ndarray) -> list[Path]:
    h_min = float(heights.min())
    h_max = float(heights.max())
    scale = (h_max - h_min) / 65535.0 if h_max > h_min else 1.0
    png = prefix.with_suffix(".png")
    save_png(png, (heights - h_min) / (scale * 65535.0), 16)
    side = prefix.with_suffix(".json")
    _write_json(side, {"scale_um": scale, "offset_um": h_min})
    return [png, side]


def import_scene(directory, name: str = "scene") -> Scene:
    directory = Path(directory)
    meta = json.loads((directory / f"{name}.json").read_text())
    intensity = load_png(directory / f"{name}.png")
    pitch = float(meta["sample_pitch_um"])
    heights = None
    if meta.get("has_height_map"):
        hmeta = json.loads((directory / f"{name}_heights.json").read_text())
        h01 = load_png(directory / f"{name}_heights.png")
        heights = (h01 * 65535.0 * hmeta["scale_um"]
                   + hmeta["offset_um"]).astype(np.float32)
    return Scene(intensity, pitch, heights)


def _frame_name(frame: CameraFrame) -> str:
    r, c = frame.camera_index
    z = int(round(frame.z_offset_um))
    return f"r{r}c{c}_z{z}_t{frame.exposure_id}.png"


def export_frameset(directory, frameset: FrameSet) -> list[Path]:
    """One PNG per camera named r{row}c{col}_z{um}_t{exposure}, plus manifest."""
    directory = Path(directory)
    files = []
    for frame in frameset.frames:
        path = directory / _frame_name(frame)
        save_png(path, frame.pixels, 16)
        files.append(path)
    manifest = {
        "config": config_summary(frameset.config),
        "stage_offset_um": list(frameset.stage_offset_um),
        "exposure_id": frameset.exposure_id,
        "frames": [_frame_name(f) for f in frameset.frames],
    }
    path = directory / "frameset.json"
    _write_json(path, manifest)
    files.append(path)
    return files


def export_pyramid(directory, pyramid: Pyramid) -> list[Path]:
    """Tiled 16-bit pyramid: level{L}/x{i}_y{j}.png plus a manifest."""
    directory = Path(directory)
    files = []
    tp = pyramid.tile_px
    level_meta = []
    for lvl, raster in enumerate(pyramid.levels):
        ny, nx = raster.shape
        tiles_x = (nx + tp - 1) // tp
        tiles_y = (ny + tp - 1) // tp
        for j in range(tiles_y):
            for i in range(tiles_x):
                tile = raster[j * tp:(j + 1) * tp, i * tp:(i + 1) * tp]
                path = directory / f"level{lvl}" / f"x{i}_y{j}.png"
                save_png(path, tile, 16)
                files.append(path)
        level_meta.append({"level": lvl, "shape": [ny, nx],
                           "tiles": [tiles_x, tiles_y],
                           "pixel_size_um": pyramid.pixel_size_um * 2 ** lvl})
    manifest = {
        "origin_x_um": pyramid.origin_x_um,
        "origin_y_um": pyramid.origin_y_um,
        "pixel_size_um": pyramid.pixel_size_um,
        "tile_px": tp,
        "levels": level_meta,
    }
    path = directory / "pyramid.json"
    _write_json(path, manifest)
    files.append(path)
    return files


def export_heightmap(directory, hm: HeightMap, name: str = "heightmap") -> list[Path]:
    directory = Path(directory)
    files = _save_height_raster(directory / name, hm.grid)
    mask_png = directory / f"{name}_mask.png"
    save_png(mask_png, hm.mask.astype(np.float32), 8)
    files.append(mask_png)
    meta_path = directory / f"{name}_grid.json"
    _write_json(meta_path, {
        "origin_x_um": hm.origin_x_um,
        "origin_y_um": hm.origin_y_um,
        "grid_pitch_um": hm.grid_pitch_um,
        "method": hm.method,
    })
    files.append(meta_path)
    return files


def save_calibration(path, cal: StitchCalibration) -> None:
    """Versioned text record: camera index -> anchor px and gain."""
    tiles = []
    for r in range(cal.rows):
        for c in range(cal.cols):
            k = r * cal.cols + c
            tiles.append({
                "row": r, "col": c,
                "x_px": float(cal.tile_positions[k, 0]),
                "y_px": float(cal.tile_positions[k, 1]),
                "gain": float(cal.gains[k]),
            })
    _write_json(path, {
        "format_version": CALIBRATION_FORMAT_VERSION,
        "rows": cal.rows,
        "cols": cal.cols,
        "reference_index": cal.reference_index,
        "composite_pixel_um": cal.composite_pixel_um,
        "valid_for_depth_um": cal.valid_for_depth_um,
        "tiles": tiles,
    })


def load_calibration(path) -> StitchCalibration:
    data = json.loads(Path(path).read_text())
    if data.get("format_version") != CALIBRATION_FORMAT_VERSION:
        raise ValueError(f"unsupported calibration format: "
                         f"{data.get('format_version')!r}")
    n = data["rows"] * data["cols"]
    pos = np.zeros((n, 2))
    gains = np.ones(n)
    for tile in data["tiles"]:
        k = tile["row"] * data["cols"] + tile["col"]
        pos[k] = (tile["x_px"], tile["y_px"])
        gains[k] = tile["gain"]
    return StitchCalibration(pos, gains, data["composite_pixel_um"],
                             data["valid_for_depth_um"], data["rows"],
                             data["cols"], data["reference_index"])


def write_csv(path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def design_report_csv(path, rows: list[dict]) -> Path:
    return write_csv(path,
                     ["axis", "regime", "overlap_fraction", "fov_mm", "r_pix_um"],
                     [[r["axis"], r["regime"], f"{r['overlap_fraction']:.6g}",
                       f"{r['fov_mm']:.6g}", f"{r['r_pix_um']:.6g}"]
                      for r in rows])


def scan_plan_csv(path, plan: ScanPlan) -> Path:
    rows = []
    index = 0
    axial = plan.axial_offsets_um or [0.0]
    for dx, dy in plan.lateral_offsets_um:
        for dz in axial:
            rows.append([index, f"{dx:.6g}", f"{dy:.6g}", f"{dz:.6g}"])
            index += 1
    return write_csv(path, ["index", "dx_um", "dy_um", "dz_um"], rows)


def depth_report_csv(path, report: DepthExperimentReport) -> Path:
    path = Path(path)
    rows = [[f"{t:.6g}", f"{e:.6g}", int(n)]
            for t, e, n in zip(report.true_z_um, report.est_z_um,
                               report.n_matches)]
    write_csv(path, ["true_z_um", "est_z_um", "n_matches"], rows)
    with open(path, "a", newline="") as fh:
        csv.writer(fh).writerow(["rmse_um", f"{report.rmse_um:.6g}", ""])
    return path


def throughput_csv(path, report: ThroughputReport) -> Path:
    return write_csv(path, ["quantity", "value"], [
        ["frame_bytes", report.frame_bytes],
        ["max_fps", f"{report.max_fps:.6g}"],
        ["buffer_frames", report.buffer_frames],
        ["max_duration_s", f"{report.max_duration_s:.6g}"],
        ["bandwidth_bytes_s", f"{report.bandwidth_bytes_s:.6g}"],
        ["efficiency", f"{report.efficiency:.6g}"],
    ])


def config_summary(config: ArrayConfig) -> dict:
    return {
        "pixel_um": config.sensor.pixel_pitch_um,
        "pixels_x": config.sensor.pixels_x,
        "pixels_y": config.sensor.pixels_y,
        "bit_depth": config.sensor.bit_depth,
        "focal_mm": config.lens.focal_length_um / 1e3,
        "f_number": config.lens.f_number,
        "outer_diameter_mm": config.lens.outer_diameter_um / 1e3,
        "rows": config.layout.rows,
        "cols": config.layout.cols,
        "pitch_x_mm": config.layout.pitch_x_um / 1e3,
        "pitch_y_mm": config.layout.pitch_y_um / 1e3,
        "magnification": config.magnification,
    }


def config_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, config_payload: dict, files: list,
                   tool_version: str, extra: dict | None = None) -> Path:
    """Record provenance last, after every artifact is on disk.

    A directory whose manifest is present is complete; partial runs leave
    no manifest behind.
    """
    out_dir = Path(out_dir)
    inventory = []
    for f in sorted(Path(f) for f in files):
        inventory.append({
            "path": str(f.relative_to(out_dir)),
            "bytes": f.stat().st_size,
            "sha256": _sha256_file(f),
        })
    payload = {
        "tool_version": tool_version,
        "config_hash": config_hash(config_payload),
        "config": config_payload,
        "files": inventory,
    }
    if extra:
        payload.update(extra)
    path = out_dir / "manifest.json"
    _write_json(path, payload)
    return path
