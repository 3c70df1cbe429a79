"""Named array configurations for the reference hardware."""

from __future__ import annotations

from .geometry import ArrayConfig, ArrayLayout, LensSpec, SensorSpec

__all__ = ["PRESETS", "preset", "preset_names", "desk_scaled"]

# 13 MP smartphone-class sensor, 1.1 um pixels, landscape orientation.
_SENSOR_13MP = SensorSpec(pixel_pitch_um=1.1, pixels_x=4208, pixels_y=3120,
                          bit_depth=8)
_LENS_25MM = LensSpec.from_mm(focal_length_mm=25.05, f_number=4.0,
                              outer_diameter_mm=13.0)
_LAYOUT_6X9 = ArrayLayout.from_mm(rows=6, cols=9, pitch_x_mm=13.5)

# Aggregate of four boards: 8 x 12 cameras at 19 mm pitch, 10 MP sensors.
_SENSOR_10MP = SensorSpec(pixel_pitch_um=1.1, pixels_x=3648, pixels_y=2736,
                          bit_depth=8)
_LENS_QUAD = LensSpec.from_mm(focal_length_mm=25.05, f_number=4.0,
                              outer_diameter_mm=13.0)
_LAYOUT_8X12 = ArrayLayout.from_mm(rows=8, cols=12, pitch_x_mm=19.0)

PRESETS: dict[str, ArrayConfig] = {
    "multi_view": ArrayConfig(_SENSOR_13MP, _LENS_25MM, _LAYOUT_6X9,
                              magnification=0.1),
    "continuous": ArrayConfig(_SENSOR_13MP, _LENS_25MM, _LAYOUT_6X9,
                              magnification=0.2),
    "tiled": ArrayConfig(_SENSOR_13MP, _LENS_25MM, _LAYOUT_6X9,
                         magnification=1.0),
    "quad_board": ArrayConfig(_SENSOR_10MP, _LENS_QUAD, _LAYOUT_8X12,
                              magnification=0.2),
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset(name: str) -> ArrayConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        ) from None


def desk_scaled(config: ArrayConfig, *, rows: int | None = None,
                cols: int | None = None, pixels_x: int | None = None,
                pixels_y: int | None = None,
                pitch_x_mm: float | None = None,
                pitch_y_mm: float | None = None) -> ArrayConfig:
    """Shrink a configuration for fast synthetic experiments.

    Pixel pitch, magnification and optics are preserved, so resolution and
    regime math transfer directly; only camera/pixel counts and the board
    pitch change.
    """
    sensor = SensorSpec(
        pixel_pitch_um=config.sensor.pixel_pitch_um,
        pixels_x=pixels_x or config.sensor.pixels_x,
        pixels_y=pixels_y or config.sensor.pixels_y,
        bit_depth=config.sensor.bit_depth,
    )
    layout = ArrayLayout(
        rows=rows or config.layout.rows,
        cols=cols or config.layout.cols,
        pitch_x_um=(pitch_x_mm * 1e3) if pitch_x_mm else config.layout.pitch_x_um,
        pitch_y_um=(pitch_y_mm * 1e3) if pitch_y_mm
        else ((pitch_x_mm * 1e3) if pitch_x_mm else config.layout.pitch_y_um),
    )
    return ArrayConfig(sensor, config.lens, layout, config.magnification)
