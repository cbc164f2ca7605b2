"""Sensor image formation: efficiency chain, convolution, noise model."""

import dataclasses
import math

import numpy as np
import pytest

from metaspectra.domain import (
    FilterSpec,
    HyperspectralCube,
    SpectralGrid,
    trapezoid_weights,
)
from metaspectra.errors import GridMismatch
from metaspectra.presets import toy_system
from metaspectra.propagation import psf_stack
from metaspectra.renderer import (
    channel_efficiency,
    default_psf_shape,
    render_snapshot,
    render_subimage,
    sample_noise_sigma,
)

TEN_TO_06 = 3.9810717055349722  # 10**0.6


@pytest.fixture(scope="module")
def toy():
    return toy_system()


@pytest.fixture(scope="module")
def toy_stack(toy):
    return psf_stack(toy, plane_shape=default_psf_shape(toy), plane_pitch_um=2.0)


def constant_cube(system, value, n=65):
    data = np.full((n, n, len(system.grid)), float(value))
    return HyperspectralCube(data, system.grid, pitch_um=2.0)


def impulse_cube(system, n=65):
    data = np.zeros((n, n, len(system.grid)))
    data[n // 2, n // 2, :] = 1.0
    return HyperspectralCube(data, system.grid, pitch_um=2.0)


# ---------------------------------------------------------------------------
# channel efficiency


def test_lossless_chain_is_unity(toy):
    # toy channels blaze perfectly at 550 nm with no filter and b = 1
    assert channel_efficiency(toy.channels[2], 550.0) == pytest.approx(1.0, abs=1e-9)


def test_nd_pair_power_ratio():
    ch = toy_system().channels[0]
    lo = dataclasses.replace(ch, filter=FilterSpec(kind="neutral_density", od=0.3))
    hi = dataclasses.replace(ch, filter=FilterSpec(kind="neutral_density", od=0.9))
    ratio = channel_efficiency(lo, 550.0) / channel_efficiency(hi, 550.0)
    assert abs(ratio - TEN_TO_06) < 1e-12


def test_crossed_polarizer_blocks():
    ch = dataclasses.replace(
        toy_system().channels[0],
        filter=FilterSpec(kind="linear_polarizer", angle_deg=90.0),
    )
    assert channel_efficiency(ch, 550.0, polarization_deg=0.0) == pytest.approx(0.0, abs=1e-12)
    assert channel_efficiency(ch, 550.0, polarization_deg=None) == pytest.approx(0.5, abs=1e-12)


def test_efficiency_follows_blaze_detuning(toy):
    # away from the design wavelength the chain drops like |sinc(1 - lc/l)|^2
    lam = 650.0
    u = 1.0 - 550.0 / lam
    want = (math.sin(math.pi * u) / (math.pi * u)) ** 2
    assert channel_efficiency(toy.channels[2], lam) == pytest.approx(want, abs=1e-3)


# ---------------------------------------------------------------------------
# noiseless rendering


def test_impulse_scene_reproduces_weighted_psf(toy, toy_stack):
    cube = impulse_cube(toy)
    sub = render_subimage(cube, toy_stack, toy, 0, noiseless=True)
    w = trapezoid_weights(toy.grid.wavelengths_nm)
    expected = np.zeros_like(sub.pixels)
    p = toy_stack.psfs.shape[2]
    r0 = 65 // 2 - p // 2
    for b, lam in enumerate(toy.grid.wavelengths_nm):
        c_eff = channel_efficiency(toy.channels[0], lam)
        expected[r0 : r0 + p, r0 : r0 + p] += w[b] * c_eff * toy_stack.psfs[0, b]
    expected *= toy.sensor.exposure_s * toy.split
    assert np.allclose(sub.pixels, expected, rtol=0, atol=1e-12)


def test_constant_scene_matches_band_integral(toy, toy_stack):
    cube = constant_cube(toy, 0.5)
    w = trapezoid_weights(toy.grid.wavelengths_nm)
    for idx in (0, 2):
        sub = render_subimage(cube, toy_stack, toy, idx, noiseless=True)
        c_eff = np.array(
            [channel_efficiency(toy.channels[idx], lam) for lam in toy.grid.wavelengths_nm]
        )
        want = toy.sensor.gain * toy.sensor.exposure_s * toy.split * 0.5 * (w * c_eff).sum()
        interior = sub.pixels[sub.valid_mask]
        assert interior.size > 0
        assert np.allclose(interior, want, rtol=1e-9, atol=0)


def test_render_is_linear_in_the_scene(toy, toy_stack):
    rng = np.random.default_rng(3)
    a = HyperspectralCube(rng.uniform(0, 0.3, (65, 65, 26)), toy.grid, 2.0)
    b = HyperspectralCube(rng.uniform(0, 0.3, (65, 65, 26)), toy.grid, 2.0)
    mix = HyperspectralCube(2.0 * a.data + 0.5 * b.data, toy.grid, 2.0)
    ra = render_subimage(a, toy_stack, toy, 1, noiseless=True).pixels
    rb = render_subimage(b, toy_stack, toy, 1, noiseless=True).pixels
    rmix = render_subimage(mix, toy_stack, toy, 1, noiseless=True).pixels
    assert np.allclose(rmix, 2.0 * ra + 0.5 * rb, rtol=0, atol=1e-12)


def test_exposure_reciprocity(toy, toy_stack):
    cube = constant_cube(toy, 0.4)
    halved = HyperspectralCube(cube.data * 0.5, toy.grid, 2.0)
    doubled_t = dataclasses.replace(
        toy, sensor=dataclasses.replace(toy.sensor, exposure_s=2.0 * toy.sensor.exposure_s)
    )
    base = render_subimage(cube, toy_stack, toy, 0, noiseless=True)
    swap = render_subimage(halved, toy_stack, doubled_t, 0, noiseless=True)
    assert np.array_equal(base.pixels, swap.pixels)


def test_saturation_clips_and_flags(toy, toy_stack):
    bright = constant_cube(toy, 600.0)  # far past the full well
    sub = render_subimage(bright, toy_stack, toy, 2, noiseless=True)
    interior = sub.valid_mask
    assert np.all(sub.pixels[interior] == toy.sensor.full_well_normalized)
    assert np.all(sub.saturated_mask[interior])
    dim = render_subimage(constant_cube(toy, 0.5), toy_stack, toy, 2, noiseless=True)
    assert not dim.saturated_mask.any()
    # monotonicity: more light never darkens any pixel
    mid = render_subimage(constant_cube(toy, 300.0), toy_stack, toy, 2, noiseless=True)
    assert np.all(sub.pixels >= mid.pixels - 1e-12)


def test_grid_and_pitch_mismatches(toy, toy_stack):
    other_grid = SpectralGrid(np.array([500.0, 600.0]))
    bad = HyperspectralCube(np.zeros((16, 16, 2)), other_grid, 2.0)
    with pytest.raises(GridMismatch):
        render_subimage(bad, toy_stack, toy, 0)
    wrong_pitch = HyperspectralCube(np.zeros((16, 16, 26)), toy.grid, 1.0)
    with pytest.raises(GridMismatch):
        render_subimage(wrong_pitch, toy_stack, toy, 0)


# ---------------------------------------------------------------------------
# noise model


def test_infinite_photon_zero_sigma_limit(toy, toy_stack):
    quiet = dataclasses.replace(
        toy, sensor=dataclasses.replace(toy.sensor, sigma=0.0)
    )
    cube = constant_cube(toy, 0.5)  # mean around 0.12 after exposure
    clean = render_subimage(cube, toy_stack, quiet, 0, noiseless=True)
    noisy = render_subimage(
        cube, toy_stack, quiet, 0, noiseless=False, rng_seed=1, photons_per_unit=1e10
    )
    # per-pixel Poisson std is sqrt(S/P) ~ 3e-6; 1e-4 is a >30 sigma envelope
    assert np.allclose(noisy.pixels, clean.pixels, rtol=0, atol=1e-4)


def test_noise_mean_and_variance_match_model():
    grid = SpectralGrid(np.array([550.0, 560.0]))
    system = toy_system(grid)
    system = dataclasses.replace(
        system, sensor=dataclasses.replace(system.sensor, sigma=0.0005)
    )
    stack = psf_stack(system, plane_shape=default_psf_shape(system), plane_pitch_um=2.0)
    n = 366
    cube = HyperspectralCube(np.full((n, n, 2), 50.0), grid, 2.0)
    clean = render_subimage(cube, stack, system, 2, noiseless=True)
    noisy = render_subimage(cube, stack, system, 2, rng_seed=11)
    interior = clean.valid_mask
    assert interior.sum() >= 1e5
    mu = clean.pixels[interior].mean()
    samples = noisy.pixels[interior]
    photons = 1.0e4
    want_var = system.sensor.gain * mu / photons + system.sensor.sigma**2
    se = math.sqrt(want_var / samples.size)
    assert abs(samples.mean() - mu) < 3.0 * se
    assert abs(samples.var() - want_var) < 0.05 * want_var


def test_snapshot_determinism_and_stream_independence(toy, toy_stack):
    cube = constant_cube(toy, 2.0)
    a = render_snapshot(cube, toy, rng_seed=5, stack=toy_stack)
    b = render_snapshot(cube, toy, rng_seed=5, stack=toy_stack)
    for sa, sb in zip(a.sub_images, b.sub_images):
        assert np.array_equal(sa.pixels, sb.pixels)
    c = render_snapshot(cube, toy, rng_seed=6, stack=toy_stack)
    assert not np.array_equal(a.sub_images[0].pixels, c.sub_images[0].pixels)
    # channels draw from independent streams: identical optics (achromatic
    # pair has same clean image) but different noise
    ch3, ch4 = a.sub_images[2], a.sub_images[3]
    assert not np.array_equal(ch3.pixels, ch4.pixels)


def test_dispersive_streaks_are_orthogonal(toy, toy_stack):
    cube = impulse_cube(toy)
    n = 65
    coords = np.arange(n) - n // 2
    x, y = np.broadcast_arrays(coords[None, :], coords[:, None])
    u = (x + y) / math.sqrt(2)
    v = (x - y) / math.sqrt(2)

    def axis_vars(img):
        tot = img.sum()
        mu_u = (img * u).sum() / tot
        mu_v = (img * v).sum() / tot
        return (
            (img * (u - mu_u) ** 2).sum() / tot,
            (img * (v - mu_v) ** 2).sum() / tot,
        )

    imgs = [
        render_subimage(cube, toy_stack, toy, i, noiseless=True).pixels for i in range(4)
    ]
    vu1, vv1 = axis_vars(imgs[0])
    vu2, vv2 = axis_vars(imgs[1])
    assert vu1 > 1.05 * vv1  # channel 1 smears along (1, 1)
    assert vv2 > 1.05 * vu2  # channel 2 smears along (1, -1)
    for img in imgs[2:]:
        vu, vv = axis_vars(img)
        assert abs(vu / vv - 1.0) < 0.01


def test_hdr_filter_pair_brightness_ratio(toy, toy_stack):
    lo = dataclasses.replace(
        toy.channels[2], filter=FilterSpec(kind="neutral_density", od=0.3)
    )
    hi = dataclasses.replace(
        toy.channels[3], filter=FilterSpec(kind="neutral_density", od=0.9)
    )
    system = dataclasses.replace(
        toy, channels=(toy.channels[0], toy.channels[1], lo, hi)
    )
    cube = constant_cube(toy, 0.5)
    bright = render_subimage(cube, toy_stack, system, 2, noiseless=True)
    dim = render_subimage(cube, toy_stack, system, 3, noiseless=True)
    ratio = bright.pixels[bright.valid_mask].mean() / dim.pixels[dim.valid_mask].mean()
    assert abs(ratio - TEN_TO_06) < 1e-9


# ---------------------------------------------------------------------------
# read-noise sampling


def test_sigma_sampling_bounds_and_mean():
    rng = np.random.default_rng(0)
    draws = np.array([sample_noise_sigma(rng) for _ in range(100_000)])
    assert draws.min() >= 0.001
    assert draws.max() <= 0.01
    se = (0.009 / math.sqrt(12.0)) / math.sqrt(draws.size)
    assert abs(draws.mean() - 0.0055) < 3.0 * se
    again = np.random.default_rng(0)
    assert sample_noise_sigma(again) == draws[0]
