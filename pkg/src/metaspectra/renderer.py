"""Image formation on the shared sensor.

A sub-image is the exposure-scaled, spectrally integrated convolution of the
scene with its channel's PSF, weighted by the sensor response and the channel
efficiency chain, then sampled through a Poisson-Gaussian noise model:

    S_j(x) = t * split * sum_b w_b * eta(lambda_b; j) * c_i(lambda_b) * (H (*) h_i)(x, lambda_b)
    I_j(x) = clip(N(0, sigma^2) + G * Poisson(P * S_j(x)) / P, 0, full_well)

with trapezoidal band weights w_b (nm), gain G, exposure t, and a photon
scale P that turns normalized units into countable events. Convolution is
linear (zero-padded frequency domain); pixels whose support window reaches
past the scene border are flagged invalid rather than silently wrapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .domain import (
    ChannelConfig,
    HyperspectralCube,
    SpectralGrid,
    SystemConfig,
    _freeze,
    trapezoid_weights,
    validate_cube,
)
from .errors import GridMismatch
from .metasurface import order_coefficient
from .propagation import PSFStack, predicted_shift, psf_stack
from ._parallel import worker_count

__all__ = [
    "SubImage",
    "Snapshot",
    "channel_efficiency",
    "render_subimage",
    "render_snapshot",
    "default_psf_shape",
    "sample_noise_sigma",
]

DEFAULT_PHOTONS_PER_UNIT = 1.0e4


@dataclass(frozen=True)
class SubImage:
    """One channel's sensor readout.

    `pixels` is (rows, cols) for a mono sensor or (planes, rows, cols) for a
    color one. `saturated_mask` marks pixels that hit the full well before
    clipping; `valid_mask` marks pixels whose convolution support stayed
    inside the scene.
    """

    pixels: np.ndarray
    channel_index: int
    gain: float
    exposure_s: float
    saturated_mask: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=float)
        if not np.isfinite(p).all():
            raise ValueError("sub-image pixels must be finite")
        object.__setattr__(self, "pixels", _freeze(p))
        object.__setattr__(
            self, "saturated_mask", _freeze(np.asarray(self.saturated_mask, bool))
        )
        object.__setattr__(
            self, "valid_mask", _freeze(np.asarray(self.valid_mask, bool))
        )


@dataclass(frozen=True)
class Snapshot:
    """All V sub-images of one capture, with the seed that produced them."""

    sub_images: tuple
    system: SystemConfig
    rng_seed: int

    def __post_init__(self):
        if len(self.sub_images) != self.system.n_channels:
            raise ValueError(
                f"{len(self.sub_images)} sub-images for "
                f"{self.system.n_channels} channels"
            )
        object.__setattr__(self, "sub_images", tuple(self.sub_images))


def channel_efficiency(
    channel: ChannelConfig,
    lambda_nm: float,
    polarization_deg: float | None = None,
    grid: SpectralGrid | None = None,
) -> float:
    """Power efficiency of one channel's route at one wavelength.

    c = |a1(lambda) * b_i(lambda)|^2 * F_i, where a1 is the beamsplitter's
    first-order coefficient, b_i the second layer's efficiency, and F_i the
    filter's intensity transmittance (so an OD 0.3 / OD 0.9 pair differs by
    a power ratio of 10^0.6, about 4).
    """
    a1 = order_coefficient(channel.design_wavelength_nm, lambda_nm)
    if channel.b_efficiency is None:
        b = 1.0
    else:
        if grid is None:
            raise ValueError("grid required to interpolate tabulated b_i")
        b = channel.b_at(grid, lambda_nm)
    factor = channel.filter.intensity_factor(polarization_deg)
    return float(abs(a1 * b) ** 2 * factor)


def _support_halfwidths(plane: np.ndarray, mass_fraction: float = 0.999):
    """Smallest centered half-window per axis holding `mass_fraction` mass."""
    out = []
    for axis in (0, 1):
        marginal = plane.sum(axis=1 - axis)
        n = marginal.size
        c = n // 2
        total = marginal.sum()
        if total <= 0:
            out.append(0)
            continue
        k = 0
        acc = marginal[c]
        while acc < mass_fraction * total and k < n:
            k += 1
            lo, hi = max(c - k, 0), min(c + k, n - 1)
            acc = marginal[lo : hi + 1].sum()
        out.append(k)
    return tuple(out)


def _interior_mask(shape, half_rows: int, half_cols: int) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    h, w = shape
    if 2 * half_rows < h and 2 * half_cols < w:
        mask[half_rows : h - half_rows, half_cols : w - half_cols] = True
    return mask


def render_subimage(
    cube: HyperspectralCube,
    stack: PSFStack,
    system: SystemConfig,
    channel_index: int,
    noiseless: bool = False,
    rng_seed: int = 0,
    photons_per_unit: float = DEFAULT_PHOTONS_PER_UNIT,
    polarization_deg: float | None = None,
) -> SubImage:
    """Render one channel of the scene onto the sensor."""
    validate_cube(cube)
    if cube.grid != system.grid or stack.grid != system.grid:
        raise GridMismatch("cube, PSF stack, and system must share one grid")
    if cube.pitch_um != stack.pitch_um:
        raise GridMismatch(
            f"cube pitch {cube.pitch_um} um vs PSF pitch {stack.pitch_um} um"
        )
    sensor = system.sensor
    channel = system.channels[channel_index]
    weights = trapezoid_weights(system.grid.wavelengths_nm)
    lams = system.grid.wavelengths_nm

    h, w = cube.data.shape[:2]
    n_colors = sensor.eta.shape[0]
    signal = np.zeros((n_colors, h, w))
    half_r = half_c = 0
    for b, lam in enumerate(lams):
        c_eff = channel_efficiency(channel, lam, polarization_deg, system.grid)
        if c_eff == 0.0:
            continue
        band = cube.data[:, :, b]
        if not band.any():
            continue
        plane = stack.psfs[channel_index, b]
        blurred = fftconvolve(band, plane, mode="same")
        kr, kc = _support_halfwidths(plane)
        half_r, half_c = max(half_r, kr), max(half_c, kc)
        for j in range(n_colors):
            signal[j] += weights[b] * sensor.eta[j, b] * c_eff * blurred
    signal *= sensor.exposure_s * system.split
    np.clip(signal, 0.0, None, out=signal)  # guard FFT round-off below zero

    if noiseless:
        pre = sensor.gain * signal
    else:
        rng = np.random.default_rng([rng_seed, channel_index])
        counts = rng.poisson(photons_per_unit * signal)
        pre = sensor.gain * counts / photons_per_unit
        pre = pre + rng.normal(0.0, sensor.sigma, size=pre.shape)

    saturated = pre >= sensor.full_well_normalized
    pixels = np.clip(pre, 0.0, sensor.full_well_normalized)
    valid = _interior_mask((h, w), half_r, half_c)
    if n_colors == 1:
        pixels, saturated = pixels[0], saturated[0]
    else:
        valid = np.broadcast_to(valid, pixels.shape).copy()
    return SubImage(
        pixels=pixels,
        channel_index=channel_index,
        gain=sensor.gain,
        exposure_s=sensor.exposure_s,
        saturated_mask=saturated,
        valid_mask=valid,
    )


def default_psf_shape(system: SystemConfig, margin_px: int = 16) -> tuple[int, int]:
    """Odd PSF plane size covering the largest dispersion walk plus margin."""
    pitch = system.sensor.pitch_um
    worst = 0.0
    for channel in system.channels:
        for lam in system.grid.wavelengths_nm:
            shift_um = np.abs(predicted_shift(channel, lam)) * 1000.0
            worst = max(worst, float(shift_um.max()))
    half = int(math.ceil(worst / pitch)) + margin_px
    n = 2 * half + 1
    return (n, n)


def render_snapshot(
    cube: HyperspectralCube,
    system: SystemConfig,
    rng_seed: int = 0,
    noiseless: bool = False,
    stack: PSFStack | None = None,
    photons_per_unit: float = DEFAULT_PHOTONS_PER_UNIT,
    polarization_deg: float | None = None,
) -> Snapshot:
    """Render every channel of one capture.

    Channels share the scene and the PSF stack but draw noise from
    independent streams derived from (rng_seed, channel_index), so the same
    seed reproduces the same snapshot bit for bit.
    """
    if stack is None:
        stack = psf_stack(
            system,
            plane_shape=default_psf_shape(system),
            plane_pitch_um=cube.pitch_um,
        )

    def one(i: int) -> SubImage:
        return render_subimage(
            cube,
            stack,
            system,
            i,
            noiseless=noiseless,
            rng_seed=rng_seed,
            photons_per_unit=photons_per_unit,
            polarization_deg=polarization_deg,
        )

    indices = range(system.n_channels)
    workers = worker_count()
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            subs = list(pool.map(one, indices))
    else:
        subs = [one(i) for i in indices]
    return Snapshot(sub_images=tuple(subs), system=system, rng_seed=rng_seed)


def sample_noise_sigma(rng: np.random.Generator) -> float:
    """Draw a read-noise level uniformly from [0.001, 0.01]."""
    return float(rng.uniform(0.001, 0.01))
