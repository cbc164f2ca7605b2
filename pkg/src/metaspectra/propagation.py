"""Scalar wave propagation and PSF synthesis.

Two fidelities are provided and cross-checked by the test suite:

* closed form (default): the PSF plane is the squared magnitude of the
  effective pupil's Fourier transform, with the wavelength-dependent
  center shift folded in as a linear pupil phase (exact for band-limited
  fields) and vignetting applied as the geometric overlap of the walked-off
  entrance disc with the channel aperture;
* oracle mode: brute-force two-plane propagation through the actual
  (optionally interleaved) metasurface profiles on a desk-scale grid.

Conventions: 2-vectors are (x, y) with x along columns and y along rows;
grid coordinates are (index - n//2) * pitch, so the plane center sits on a
sample. Wavelengths are nm, pitches um, distances mm at the API surface;
internals work in um.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .domain import ChannelConfig, ComplexField, SpectralGrid, SystemConfig, _freeze
from .errors import EmptyPlane, ShapeMismatch, UndersampledField
from .metasurface import order_coefficient
from ._parallel import worker_count

__all__ = [
    "PupilFunction",
    "PSFStack",
    "BrutePsf",
    "grid_coords",
    "disc_pupil",
    "angular_spectrum_propagate",
    "apply_metasurface",
    "thin_lens_phase",
    "predicted_shift",
    "synthesize_psf",
    "brute_force_psf",
    "psf_stack",
    "centroid",
    "peak_window_centroid",
]


def grid_coords(n: int, pitch_um: float) -> np.ndarray:
    """Physical sample coordinates of an n-point axis, centered on sample n//2."""
    return (np.arange(n) - n // 2) * pitch_um


@dataclass(frozen=True)
class PupilFunction:
    """Real amplitude A(x) in [0, 1], zero outside the stated diameter."""

    amplitude: np.ndarray
    pitch_um: float
    diameter_mm: float

    def __post_init__(self):
        a = np.asarray(self.amplitude, dtype=float)
        if a.ndim != 2:
            raise ValueError("pupil amplitude must be 2-D")
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("pupil amplitude must lie in [0, 1]")
        object.__setattr__(self, "amplitude", _freeze(a))


def disc_pupil(
    n: int, pitch_um: float, diameter_mm: float, center_um=(0.0, 0.0)
) -> PupilFunction:
    """Hard-edged circular aperture on an n x n grid."""
    c = grid_coords(n, pitch_um)
    xx = c[None, :] - center_um[0]
    yy = c[:, None] - center_um[1]
    mask = (xx**2 + yy**2) <= (diameter_mm * 500.0) ** 2  # radius in um
    return PupilFunction(mask.astype(float), pitch_um, diameter_mm)


@dataclass(frozen=True)
class PSFStack:
    """Sum-normalized PSF planes indexed (channel, band, row, col).

    The complex efficiency chain a1(lambda) * b_i(lambda) is reported
    separately in `chain`, so planes stay normalized.
    """

    psfs: np.ndarray
    grid: SpectralGrid
    pitch_um: float
    chain: np.ndarray  # complex, (channel, band)

    def __post_init__(self):
        p = np.asarray(self.psfs, dtype=float)
        if p.ndim != 4:
            raise ValueError("psf stack must be 4-D (channel, band, row, col)")
        if np.any(p < 0):
            raise ValueError("psf planes must be nonnegative")
        sums = p.sum(axis=(2, 3))
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValueError("each psf plane must sum to 1 within 1e-6")
        ch = np.asarray(self.chain, dtype=complex)
        if ch.shape != p.shape[:2]:
            raise ValueError("chain shape must be (channel, band)")
        object.__setattr__(self, "psfs", _freeze(p))
        object.__setattr__(self, "chain", _freeze(ch))

    @property
    def n_channels(self) -> int:
        return int(self.psfs.shape[0])

    @property
    def n_bands(self) -> int:
        return int(self.psfs.shape[1])


def angular_spectrum_propagate(
    field: ComplexField,
    distance_mm: float,
    lambda_nm: float,
    output_offset_um=(0.0, 0.0),
    max_angle_sine: float | None = None,
) -> ComplexField:
    """Exact scalar propagation by the angular-spectrum transfer function.

    The kernel is exp(j*2*pi*z/lambda*sqrt(1 - (lambda*fx)^2 - (lambda*fy)^2))
    with evanescent components zeroed. `output_offset_um` evaluates the result
    on a window translated by (x, y) -- an extra linear spectral phase -- which
    keeps off-axis channels representable on small grids.

    `max_angle_sine`, when given, asserts that the grid's per-axis band limit
    lambda/(2*pitch) covers the largest per-axis direction sine the caller
    cares about (the frequency grid is a square, so diagonal directions up to
    sqrt(2) times this are still representable); violations raise
    UndersampledField.
    """
    lam = lambda_nm * 1e-3
    pitch = field.pitch_um
    if max_angle_sine is not None and lam / (2.0 * pitch) < max_angle_sine:
        raise UndersampledField(
            f"band limit {lam / (2 * pitch):.3f} < required sine {max_angle_sine:.3f}; "
            "reduce pitch"
        )
    h, w = field.shape
    fx = np.fft.fftfreq(w, d=pitch)[None, :]
    fy = np.fft.fftfreq(h, d=pitch)[:, None]
    arg = 1.0 - (lam * fx) ** 2 - (lam * fy) ** 2
    propagating = arg > 0.0
    kz = np.where(propagating, np.sqrt(np.maximum(arg, 0.0)), 0.0)
    z = distance_mm * 1000.0
    kernel = np.exp(1j * (2.0 * math.pi * z / lam) * kz) * propagating
    ox, oy = output_offset_um
    if ox or oy:
        kernel = kernel * np.exp(2j * math.pi * (fx * ox + fy * oy))
    out = np.fft.ifft2(np.fft.fft2(field.values) * kernel)
    return ComplexField(out, pitch, lambda_nm)


def apply_metasurface(field: ComplexField, profile, lambda_nm: float) -> ComplexField:
    """Multiply the field by the profile's complex transmission at lambda."""
    if field.shape != profile.phase_rad.shape or field.pitch_um != profile.pitch_um:
        raise ShapeMismatch(
            f"field {field.shape}@{field.pitch_um} vs profile "
            f"{profile.phase_rad.shape}@{profile.pitch_um}"
        )
    return ComplexField(
        field.values * profile.transmission(lambda_nm), field.pitch_um, lambda_nm
    )


def thin_lens_phase(
    shape: tuple[int, int],
    pitch_um: float,
    focal_mm: float,
    center_mm,
    radius_mm: float,
    lambda_nm: float,
) -> ComplexField:
    """Thin-lens multiplier: unit disc aperture with quadratic phase.

    amplitude = (|x - x_i| < r_i), phase = -pi*|x - x_i|^2/(lambda*f).
    """
    if focal_mm <= 0:
        raise ValueError("focal length must be positive")
    lam = lambda_nm * 1e-3
    f = focal_mm * 1000.0
    cx, cy = np.asarray(center_mm, dtype=float) * 1000.0
    xs = grid_coords(shape[1], pitch_um)[None, :] - cx
    ys = grid_coords(shape[0], pitch_um)[:, None] - cy
    rho2 = xs**2 + ys**2
    mask = rho2 < (radius_mm * 1000.0) ** 2
    vals = mask * np.exp(-1j * math.pi * rho2 / (lam * f))
    return ComplexField(vals, pitch_um, lambda_nm)


def predicted_shift(channel: ChannelConfig, lambda_nm: float) -> np.ndarray:
    """Sub-image PSF displacement (mm): (lambda*f/lambda_ci) * (alpha + beta)."""
    return (
        lambda_nm
        * channel.lens_focal_mm
        / channel.design_wavelength_nm
    ) * channel.residual()


# ---------------------------------------------------------------------------
# closed-form synthesis


def _footprint_offset_um(
    system: SystemConfig, channel: ChannelConfig, lambda_nm: float, n_perp
) -> np.ndarray:
    """Beam-footprint walk-off at the channel aperture, relative to its center.

    Sine-convention geometric shift s*(lambda*alpha/lambda_c + n_perp) minus
    the channel center; zero when the beam lands exactly on design.
    """
    s_um = system.layer_spacing_mm * 1000.0
    freq = channel.alpha / channel.design_wavelength_nm  # 1/nm
    sine = lambda_nm * freq + np.asarray(n_perp, dtype=float)
    return s_um * sine - channel.lens_center_mm * 1000.0


def synthesize_psf(
    system: SystemConfig,
    channel_index: int,
    lambda_nm: float,
    n_perp=(0.0, 0.0),
    plane_shape: tuple[int, int] = (512, 512),
    plane_pitch_um: float | None = None,
    min_fft: int = 512,
) -> tuple[np.ndarray, complex]:
    """Closed-form PSF plane and complex efficiency chain for one channel/band.

    The plane is |FFT(effective pupil)|^2 sampled at the sensor pitch and
    centered (sub-pixel, via a pupil tilt) at x_i + dx_i(lambda) + f*n_perp
    in channel-relative coordinates, i.e. at dx_i(lambda) + f*n_perp from the
    plane center. Vignetting enters through the overlap of the walked-off
    entrance disc with the channel aperture. Returns (plane, a1*b_i).
    """
    channel = system.channels[channel_index]
    lam = lambda_nm * 1e-3
    f_um = channel.lens_focal_mm * 1000.0
    out_h, out_w = plane_shape
    pitch = plane_pitch_um if plane_pitch_um is not None else system.sensor.pitch_um

    m = max(min_fft, out_h, out_w)
    pupil_pitch = lam * f_um / (m * pitch)
    extent = m * pupil_pitch  # representable pupil field = lambda*f/pitch
    d_um = system.entrance_pupil_diameter_mm * 1000.0
    if d_um > extent:
        raise UndersampledField(
            f"pupil {d_um:.0f} um exceeds representable extent {extent:.0f} um "
            "at this sensor pitch; enlarge min_fft or the pitch"
        )

    coords = grid_coords(m, pupil_pitch)
    xx = coords[None, :]
    yy = coords[:, None]
    pupil = (xx**2 + yy**2) <= (d_um / 2.0) ** 2
    rel = _footprint_offset_um(system, channel, lambda_nm, n_perp)
    # channel aperture sits at -rel in footprint-centered coordinates
    vign = ((xx + rel[0]) ** 2 + (yy + rel[1]) ** 2) <= (
        channel.lens_radius_mm * 1000.0
    ) ** 2
    eff = (pupil & vign).astype(float)
    if not eff.any():
        raise EmptyPlane(
            f"channel {channel_index} fully vignetted at {lambda_nm} nm"
        )

    center = predicted_shift(channel, lambda_nm) * 1000.0 + f_um * np.asarray(
        n_perp, dtype=float
    )
    half = m * pitch / 2.0
    if np.any(np.abs(center) >= half):
        raise UndersampledField(
            f"PSF center {center} um falls outside the synthesis window (+-{half:.0f} um)"
        )
    tilt = np.exp(2j * math.pi * (xx * center[0] + yy * center[1]) / (lam * f_um))
    field = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(eff * tilt)))
    plane = np.abs(field) ** 2
    r0 = m // 2 - out_h // 2
    c0 = m // 2 - out_w // 2
    plane = plane[r0 : r0 + out_h, c0 : c0 + out_w]
    total = plane.sum()
    if total <= 0:
        raise EmptyPlane("psf plane carries no energy inside the output window")
    plane = plane / total

    a1 = order_coefficient(channel.design_wavelength_nm, lambda_nm)
    chain = a1 * channel.b_at(system.grid, lambda_nm)
    return plane, complex(chain)


# ---------------------------------------------------------------------------
# oracle mode: brute-force two-plane propagation


class BrutePsf(NamedTuple):
    plane: np.ndarray          # sum-normalized
    power_fraction: float      # sensor-window power / pupil input power
    pitch_um: float


def _bandlimited_grating(
    vector: np.ndarray,
    lambda_c_nm: float,
    lambda_nm: float,
    xx: np.ndarray,
    yy: np.ndarray,
    pitch_um: float,
    max_n: int = 3,
) -> np.ndarray:
    """Complex transmission of a linear blazed profile at lambda, synthesized
    from its representable diffraction orders.

    Point-sampling exp(j*phase*lambda_c/lambda) on a grid aliases every
    harmonic above the band limit onto a spurious in-band direction, which
    then masquerades as a beam inside the simulation window. Building the
    transmission as sum_n a_n * exp(j*2*pi*n*(v.x)/lambda_c) over orders
    whose per-axis frequency the grid resolves keeps the simulation exact
    for those orders; the dropped ones are beams whose interlayer walk-off
    overshoots the channel aperture in the real, non-periodic system.
    """
    v = np.asarray(vector, dtype=float)
    lam_c_um = lambda_c_nm * 1e-3
    shape = np.broadcast_shapes(xx.shape, yy.shape)
    if not v.any():
        return np.ones(shape, dtype=complex)
    freq_pa = float(np.max(np.abs(v))) / lam_c_um  # per-axis cycles/um
    nyquist = 0.98 / (2.0 * pitch_um)
    ramp = (2.0 * math.pi / lam_c_um) * (v[0] * xx + v[1] * yy)
    t = np.zeros(shape, dtype=complex)
    for n in range(-max_n, max_n + 1):
        if abs(n) * freq_pa > nyquist:
            continue
        t += order_coefficient(lambda_c_nm, lambda_nm, n) * np.exp(1j * n * ramp)
    return t


def _beamsplitter_transmissions(
    system: SystemConfig, lambda_nm: float, xx: np.ndarray, yy: np.ndarray, pitch_um: float
) -> list[np.ndarray]:
    return [
        _bandlimited_grating(
            ch.alpha, ch.design_wavelength_nm, lambda_nm, xx, yy, pitch_um
        )
        for ch in system.channels
    ]


def brute_force_psf(
    system: SystemConfig,
    channel_index: int,
    lambda_nm: float,
    n_perp=(0.0, 0.0),
    grid_n: int = 512,
    grid_pitch_um: float = 0.5,
    interleaved: bool = True,
    seed: int = 0,
    keep_fraction: float = 0.95,
    soft_pupil: bool = True,
) -> BrutePsf:
    """Propagate a tilted plane wave through the real two-layer assembly.

    Layer 1 is the beamsplitter (per-pixel interleave of all channel profiles
    when `interleaved`, else the single channel's pure profile); the field
    then travels the interlayer spacing to a window centered on the channel,
    passes the channel aperture, dispersion-control profile and eyepiece
    phase, and is focused onto a sensor window sharing that center.

    Before the final hop, plane-wave components whose geometric landing
    point lies outside `keep_fraction` of the sensor window are dropped:
    on a finite FFT grid they would otherwise wrap around and contaminate
    the PSF, while physically they exit the sub-image region.

    `soft_pupil` replaces the hard entrance disc with a super-Gaussian taper
    of the same nominal diameter. A hard edge sheds slow 1/distance
    diffraction tails, and at this scale the tail of the undeflected
    zero-order beam would sneak past the channel aperture and interfere
    with the focal spot; the taper makes the geometric blocking of
    off-design beams effective, which is the regime the full-size camera
    operates in.

    A matching filter is applied on arrival at the second layer: direction
    sines steep enough that the interlayer walk-off would exceed the window
    half-extent belong to second-order beams that physically overshoot the
    channel aperture, but on the periodic grid they wrap back inside; they
    are removed before the aperture. The cutoff sits above the steepest
    design carrier across the band, so signal beams are untouched.
    """
    channel = system.channels[channel_index]
    lam = lambda_nm * 1e-3
    n = grid_n
    pitch = grid_pitch_um
    coords = grid_coords(n, pitch)
    xx = coords[None, :]
    yy = coords[:, None]

    surfaces = _beamsplitter_transmissions(system, lambda_nm, xx, yy, pitch)
    if interleaved:
        pick = np.random.default_rng(seed).integers(0, len(surfaces), size=(n, n))
        t0 = np.zeros((n, n), dtype=complex)
        for k, surf in enumerate(surfaces):
            mask = pick == k
            if mask.any():
                t0[mask] = surf[mask]
    else:
        t0 = surfaces[channel_index]

    d_um = system.entrance_pupil_diameter_mm * 1000.0
    rho2 = xx**2 + yy**2
    if soft_pupil:
        pupil = np.exp(-((rho2 / (0.35 * d_um) ** 2) ** 2))
        pupil[rho2 > (d_um / 2.0) ** 2] = 0.0
    else:
        pupil = (rho2 <= (d_um / 2.0) ** 2).astype(float)
    nx, ny = float(n_perp[0]), float(n_perp[1])
    u0 = pupil * np.exp(2j * math.pi * (nx * xx + ny * yy) / lam)
    power_in = float(np.sum(np.abs(u0) ** 2))
    if power_in <= 0:
        raise EmptyPlane("entrance pupil does not intersect the simulation window")

    band_max_nm = float(system.grid.wavelengths_nm[-1])
    carrier = float(
        np.max(
            [
                np.abs(band_max_nm * ch.alpha / ch.design_wavelength_nm)
                for ch in system.channels
            ]
        )
    )
    this_carrier = float(
        np.max(np.abs(lambda_nm * channel.alpha / channel.design_wavelength_nm))
    )
    field = ComplexField(u0 * t0, pitch, lambda_nm)
    field = angular_spectrum_propagate(
        field,
        system.layer_spacing_mm,
        lambda_nm,
        output_offset_um=tuple(channel.lens_center_mm * 1000.0),
        max_angle_sine=this_carrier + max(abs(nx), abs(ny)) + 0.01,
    )

    # arrival stop: per-axis sine above every design carrier means a
    # higher-order beam whose true walk-off leaves the window (it wrapped)
    fx = np.fft.fftfreq(n, d=pitch)[None, :]
    fy = np.fft.fftfreq(n, d=pitch)[:, None]
    sine_cut = min(1.15 * carrier, 0.98 * lam / (2.0 * pitch))
    if sine_cut < lam / (2.0 * pitch):
        keep_in = (np.abs(lam * fx) <= sine_cut) & (np.abs(lam * fy) <= sine_cut)
        arrived = np.fft.ifft2(np.fft.fft2(field.values) * keep_in)
    else:
        arrived = field.values

    # layer 2, in channel-local coordinates: aperture, dispersion control, lens
    r_um = channel.lens_radius_mm * 1000.0
    aperture = ((xx**2 + yy**2) <= r_um**2).astype(float)
    t_beta = _bandlimited_grating(
        channel.beta, channel.design_wavelength_nm, lambda_nm, xx, yy, pitch
    )
    f_um = channel.lens_focal_mm * 1000.0
    u2 = arrived * aperture * t_beta

    # sensor-window angular stop: drop packets whose focal landing point
    # f*sine leaves the sub-image. Applied before the eyepiece phase, while
    # every route is still a narrow-spectrum packet; after the lens the
    # focusing cone itself spans a wide sine range and would be clipped.
    spec = np.fft.fft2(u2)
    half = n * pitch / 2.0
    land_x = f_um * lam * fx
    land_y = f_um * lam * fy
    keep = (np.abs(land_x) <= keep_fraction * half) & (
        np.abs(land_y) <= keep_fraction * half
    )
    lens = np.exp(-1j * math.pi * (xx**2 + yy**2) / (lam * f_um))
    u2 = np.fft.ifft2(spec * keep) * lens

    sensor = angular_spectrum_propagate(
        ComplexField(u2, pitch, lambda_nm), channel.lens_focal_mm, lambda_nm
    )
    plane = np.abs(sensor.values) ** 2
    total = plane.sum()
    if total <= 0:
        raise EmptyPlane("no energy reaches the sensor window")
    return BrutePsf(plane / total, float(total / power_in), pitch)


# ---------------------------------------------------------------------------
# stacking and diagnostics


def psf_stack(
    system: SystemConfig,
    plane_shape: tuple[int, int] = (512, 512),
    plane_pitch_um: float | None = None,
    n_perp=(0.0, 0.0),
    min_fft: int = 512,
) -> PSFStack:
    """Closed-form PSF planes for every (channel, band) pair.

    Per-(channel, band) synthesis is independent; METASPECTRA_THREADS > 1
    fans the work out across a thread pool.
    """
    lams = system.grid.wavelengths_nm
    v = system.n_channels
    b = len(lams)
    pitch = plane_pitch_um if plane_pitch_um is not None else system.sensor.pitch_um
    psfs = np.empty((v, b, plane_shape[0], plane_shape[1]), dtype=float)
    chain = np.empty((v, b), dtype=complex)

    def one(task):
        i, j = task
        plane, c = synthesize_psf(
            system, i, float(lams[j]), n_perp, plane_shape, pitch, min_fft
        )
        return i, j, plane, c

    tasks = [(i, j) for i in range(v) for j in range(b)]
    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, tasks))
    else:
        results = [one(t) for t in tasks]
    for i, j, plane, c in results:
        psfs[i, j] = plane
        chain[i, j] = c
    return PSFStack(psfs, system.grid, pitch, chain)


def centroid(plane: np.ndarray) -> np.ndarray:
    """Intensity-weighted mean position (row, col) of a nonnegative plane."""
    p = np.asarray(plane, dtype=float)
    total = p.sum()
    if total <= 0:
        raise EmptyPlane("cannot take the centroid of a non-positive plane")
    rows = np.arange(p.shape[0])
    cols = np.arange(p.shape[1])
    r = float((p.sum(axis=1) * rows).sum() / total)
    c = float((p.sum(axis=0) * cols).sum() / total)
    return np.array([r, c])


def peak_window_centroid(plane: np.ndarray, half_width: int = 28) -> np.ndarray:
    """Centroid of a window around the brightest pixel, in full-plane coords.

    Diagnostic for oracle-mode planes, where a faint interleaving background
    fills the window and would bias the global centroid.
    """
    p = np.asarray(plane, dtype=float)
    r0, c0 = np.unravel_index(int(np.argmax(p)), p.shape)
    ra = max(0, r0 - half_width)
    rb = min(p.shape[0], r0 + half_width + 1)
    ca = max(0, c0 - half_width)
    cb = min(p.shape[1], c0 + half_width + 1)
    inner = centroid(p[ra:rb, ca:cb])
    return inner + np.array([ra, ca])
