"""Ready-made system configurations.

Three scales of the same four-channel architecture:

* `prototype_system`: the full-scale camera geometry used for rendering,
  calibration and reconstruction work;
* `desk_system`: a millimeter-scale replica whose every surface fits on a
  512^2 x 0.5 um grid, small enough for brute-force wave propagation to act
  as an oracle for the closed-form PSF model;
* `toy_system`: a reduced-aperture variant whose PSFs are fully resolved by
  the sensor pitch on tiny planes, sized for end-to-end reconstruction tests.
"""

from __future__ import annotations

import math

import numpy as np

from .domain import (
    ChannelConfig,
    FilterSpec,
    SensorModel,
    SpectralGrid,
    SystemConfig,
    default_grid,
)
from .metasurface import default_deflection_vectors

__all__ = [
    "rgb_eta",
    "mono_eta",
    "prototype_system",
    "desk_system",
    "toy_system",
]

_REFERENCE_NM = 550.0


def rgb_eta(grid: SpectralGrid) -> np.ndarray:
    """Raised-cosine RGB quantum-efficiency curves on the grid, rows (R, G, B)."""
    lam = grid.wavelengths_nm
    rows = []
    for mu in (610.0, 540.0, 470.0):
        x = np.clip((lam - mu) / 150.0, -1.0, 1.0)
        rows.append(0.5 * (1.0 + np.cos(np.pi * x)))
    return np.stack(rows)


def mono_eta(grid: SpectralGrid) -> np.ndarray:
    """Flat single-color response."""
    return np.ones((1, len(grid)))


def _channels(
    focal_mm: float,
    radius_mm: float,
    spacing_mm: float,
    filters: tuple[FilterSpec, ...] | None = None,
) -> tuple[ChannelConfig, ...]:
    """Build the four standard channels around the shared deflection design.

    Lens centers sit where each channel's carrier actually lands at the
    reference wavelength: displacement = spacing * sine / sqrt(1 - |sine|^2)
    (the exact tangent of the deflected ray), so the beam is centered in its
    aperture mid-band.
    """
    vectors = default_deflection_vectors()
    out = []
    for i, (alpha, beta, lam_c) in enumerate(vectors):
        sine = alpha * _REFERENCE_NM / lam_c
        sz = math.sqrt(1.0 - float(sine @ sine))
        center = spacing_mm * sine / sz
        filt = filters[i] if filters is not None else FilterSpec()
        out.append(
            ChannelConfig(
                index=i + 1,
                alpha=alpha,
                beta=beta,
                design_wavelength_nm=lam_c,
                lens_focal_mm=focal_mm,
                lens_center_mm=center,
                lens_radius_mm=radius_mm,
                filter=filt,
            )
        )
    return tuple(out)


def prototype_system(grid: SpectralGrid | None = None) -> SystemConfig:
    """Full-scale four-channel camera.

    Channels peak at 450/550/600/750 nm; channel 1 and 2 disperse along
    orthogonal diagonals, channels 3 and 4 are achromatic and carry
    horizontal / vertical linear polarizers for DoLP imaging.
    """
    grid = grid if grid is not None else default_grid()
    filters = (
        FilterSpec(),
        FilterSpec(),
        FilterSpec(kind="linear_polarizer", angle_deg=0.0),
        FilterSpec(kind="linear_polarizer", angle_deg=90.0),
    )
    channels = _channels(
        focal_mm=12.0, radius_mm=2.0, spacing_mm=4.0, filters=filters
    )
    sensor = SensorModel(
        eta=rgb_eta(grid),
        gain=1.0,
        exposure_s=0.01,
        sigma=0.005,
        pitch_um=2.0,
        color_names=("red", "green", "blue"),
    )
    return SystemConfig(
        channels=channels,
        sensor=sensor,
        grid=grid,
        entrance_pupil_diameter_mm=2.0,
        layer_spacing_mm=4.0,
    )


def desk_system(grid: SpectralGrid | None = None) -> SystemConfig:
    """Scaled-down replica for brute-force wave-propagation cross-checks.

    Every dimensionless design parameter (deflection vectors, residuals,
    design wavelengths) matches the prototype; only the physical scale
    shrinks so a 512^2 grid at 0.5 um covers pupil, channel aperture and
    sensor sub-window without aliasing. The pupil/spacing/aperture ratios
    are picked so the channel aperture geometrically blocks both the
    undeflected zero-order beam and the wrapped-around copies of neighbor
    channels' beams, while the red-end beam walk-off still clears it:
    per-component tan at 550 nm is 0.459, so the zero-order clearance is
    0.649*s - D/2 and the worst walk-off extent is 0.312*s + D/2.

    The eyepiece focal length is the one scale knob left free by those
    blocking inequalities. Off-design wavelengths reach the eyepiece
    off-center by the walk-off difference b(lambda), and a quadratic lens
    phase under wide-angle propagation then lands the focus beyond
    f*(alpha+beta)*lambda/lambda_c by roughly f*(b/f)^3/2 (ray obliquity
    grows the tangent faster than the sine). At f = 2 mm that cubic term
    stays below 0.7% of the first-order shift at the red band edge while
    the focal spot still fits the 256 um sensor sub-window.
    """
    grid = grid if grid is not None else default_grid()
    channels = _channels(focal_mm=2.0, radius_mm=0.12, spacing_mm=0.264)
    sensor = SensorModel(
        eta=mono_eta(grid),
        gain=1.0,
        exposure_s=0.01,
        sigma=0.005,
        pitch_um=0.5,
    )
    return SystemConfig(
        channels=channels,
        sensor=sensor,
        grid=grid,
        entrance_pupil_diameter_mm=0.06,
        layer_spacing_mm=0.264,
    )


def toy_system(grid: SpectralGrid | None = None) -> SystemConfig:
    """Small-aperture variant for end-to-end rendering and reconstruction.

    The entrance pupil is stopped down so each PSF is well resolved at the
    sensor pitch and fits on a 33x33 plane; channels 1 and 2 keep small
    orthogonal dispersion residuals, channels 3 and 4 are achromatic.
    """
    grid = grid if grid is not None else default_grid()
    base = _channels(focal_mm=12.0, radius_mm=2.0, spacing_mm=4.0)
    residuals = (
        np.array([0.001, 0.001]),
        np.array([0.001, -0.001]),
        np.array([0.0, 0.0]),
        np.array([0.0, 0.0]),
    )
    channels = []
    for ch, res in zip(base, residuals):
        channels.append(
            ChannelConfig(
                index=ch.index,
                alpha=ch.alpha,
                beta=-ch.alpha + res,
                design_wavelength_nm=_REFERENCE_NM,
                lens_focal_mm=ch.lens_focal_mm,
                lens_center_mm=ch.lens_center_mm,
                lens_radius_mm=ch.lens_radius_mm,
                filter=ch.filter,
            )
        )
    sensor = SensorModel(
        eta=mono_eta(grid),
        gain=1.0,
        exposure_s=1.0 / 250.0,
        sigma=0.002,
        pitch_um=2.0,
    )
    return SystemConfig(
        channels=tuple(channels),
        sensor=sensor,
        grid=grid,
        entrance_pupil_diameter_mm=0.6,
        layer_spacing_mm=4.0,
    )
