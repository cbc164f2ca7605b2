"""Blazed profiles, chromatic diffraction orders, interleaving, nanocells."""

import math

import numpy as np
import pytest

from metaspectra.domain import PhaseProfile, SpectralGrid, default_grid
from metaspectra.errors import (
    AliasedProfile,
    BadMagic,
    DesignWavelengthMissing,
    EmptyLibrary,
    NonPeriodic,
    ShapeMismatch,
    TruncatedFile,
    WrongChannelCount,
)
from metaspectra.metasurface import (
    NanocellLibrary,
    RadiusMap,
    beamsplitter_subprofiles,
    default_deflection_vectors,
    diffraction_orders,
    ideal_phase_library,
    interleave_artifact_report,
    interleave_random,
    interleave_regular,
    library_from_csv,
    library_to_csv,
    linear_phase_profile,
    nanocell_lookup,
    order_coefficient,
    radius_map_from_binary,
    radius_map_from_csv,
    radius_map_to_binary,
    radius_map_to_csv,
)
from metaspectra.presets import prototype_system

TWO_PI = 2.0 * math.pi


def sinc_mag(u: float) -> float:
    """|sin(pi u)/(pi u)| with the removable singularity filled in."""
    if u == 0.0:
        return 1.0
    return abs(math.sin(math.pi * u) / (math.pi * u))


# ---------------------------------------------------------------------------
# linear_phase_profile


def test_zero_deflection_gives_zero_phase():
    p = linear_phase_profile(np.zeros(2), 550.0, 0.01, 0.25)
    assert np.all(p.phase_rad == 0.0)


def test_profile_period_matches_grating_equation():
    # alpha = (0.1, 0) at 550 nm deflects with period lambda_c/alpha = 5.5 um,
    # i.e. 22 samples at 0.25 um pitch
    p = linear_phase_profile(np.array([0.1, 0.0]), 550.0, 0.011, 0.25)
    phase = p.phase_rad
    assert phase.shape == (44, 44)
    wrapped_diff = np.mod(phase[:, 22:] - phase[:, :-22] + math.pi, TWO_PI) - math.pi
    assert np.max(np.abs(wrapped_diff)) < 1e-9
    assert np.all(phase[1:, :] == phase[:1, :])  # no variation along y


def test_profile_phase_step_follows_direction_sine():
    alpha = np.array([0.2, -0.05])
    pitch = 0.3
    p = linear_phase_profile(alpha, 600.0, 0.012, pitch)
    step_x = np.mod(np.diff(p.phase_rad, axis=1) + math.pi, TWO_PI) - math.pi
    step_y = np.mod(np.diff(p.phase_rad, axis=0) + math.pi, TWO_PI) - math.pi
    assert np.allclose(step_x, TWO_PI * alpha[0] * pitch / 0.6, atol=1e-9)
    assert np.allclose(step_y, TWO_PI * alpha[1] * pitch / 0.6, atol=1e-9)


def test_profile_rejects_aliased_sampling():
    # 0.385 direction sine at 550 nm needs pitch < 0.714 um for a < pi step
    with pytest.raises(AliasedProfile):
        linear_phase_profile(np.array([0.385, 0.0]), 550.0, 0.01, 0.75)


def test_profile_rejects_unphysical_sine():
    with pytest.raises(ValueError):
        linear_phase_profile(np.array([0.8, 0.8]), 550.0, 0.01, 0.1)


# ---------------------------------------------------------------------------
# diffraction_orders: chromatic sinc law


def _one_period_profile(lambda_c=550.0, samples=2048):
    phase = np.mod(TWO_PI * np.arange(samples) / samples, TWO_PI).reshape(1, -1)
    return PhaseProfile(phase, 0.25, lambda_c)


def test_perfect_blaze_at_design_wavelength():
    spec = diffraction_orders(_one_period_profile(), 550.0)
    assert np.isclose(spec.magnitude(1), 1.0, rtol=0, atol=1e-9)
    for n in (-5, -2, -1, 0, 2, 5):
        assert spec.magnitude(n) < 1e-9


def test_order_magnitudes_match_sinc_law():
    # detuned sawtooth: |a_n| = |sinc(n - lambda_c/lambda)| for every order
    for lam in (450.0, 500.0, 620.0, 700.0):
        spec = diffraction_orders(_one_period_profile(550.0), lam)
        u = 550.0 / lam
        for n in range(-3, 4):
            assert abs(spec.magnitude(n) - sinc_mag(n - u)) < 1e-3, (lam, n)


def test_order_magnitudes_match_sinc_at_1024_samples():
    for lc in (450.0, 550.0, 600.0, 750.0):
        spec = diffraction_orders(_one_period_profile(lc, samples=1024), 450.0)
        u = lc / 450.0
        for n in range(-3, 4):
            assert abs(spec.magnitude(n) - sinc_mag(n - u)) < 1e-3, (lc, n)


def test_zero_order_vanishes_at_design_wavelength():
    spec = diffraction_orders(_one_period_profile(), 550.0)
    assert spec.magnitude(0) < 1e-9


def test_orders_match_full_fft_bins():
    # independent route: Fourier coefficients of the transmission via the FFT
    prof = _one_period_profile(550.0, samples=512)
    lam = 640.0
    spec = diffraction_orders(prof, lam, max_order=4)
    t = np.exp(1j * prof.phase_rad[0] * 550.0 / lam)
    bins = np.fft.fft(t) / t.size
    for n in range(-4, 5):
        assert np.isclose(spec.orders[n], bins[n % t.size], rtol=0, atol=1e-12)


def test_total_order_power_is_unity():
    # phase-only modulation: the full Fourier series carries all the power
    prof = _one_period_profile(550.0, samples=1024)
    for lam in (450.0, 567.0, 700.0):
        t = np.exp(1j * prof.phase_rad[0] * 550.0 / lam)
        bins = np.fft.fft(t) / t.size
        assert abs(np.sum(np.abs(bins) ** 2) - 1.0) < 1e-6


def test_first_order_peaks_at_design_wavelength():
    lams = default_grid().wavelengths_nm
    mags = np.array(
        [diffraction_orders(_one_period_profile(550.0), lam).magnitude(1) for lam in lams]
    )
    i_peak = int(np.argmax(mags))
    assert lams[i_peak] == 550.0
    assert np.all(np.diff(mags[: i_peak + 1]) > 0)
    assert np.all(np.diff(mags[i_peak:]) < 0)


def test_orders_reject_nonperiodic_profile():
    rng = np.random.default_rng(0)
    phase = np.mod(rng.uniform(0, TWO_PI, (32, 32)), TWO_PI)
    with pytest.raises(NonPeriodic):
        diffraction_orders(PhaseProfile(phase, 0.25, 550.0), 550.0)


def test_orders_reject_fractional_period_count():
    # 2048 samples over 3.5 periods: no integer period on this grid
    phase = np.mod(TWO_PI * 3.5 * np.arange(2048) / 2048, TWO_PI).reshape(1, -1)
    with pytest.raises(NonPeriodic):
        diffraction_orders(PhaseProfile(phase, 0.25, 550.0), 550.0)


def test_order_coefficient_agrees_with_profile_analysis():
    for lam in (480.0, 700.0):
        direct = order_coefficient(550.0, lam)
        via_profile = diffraction_orders(_one_period_profile(550.0), lam).orders[1]
        assert np.isclose(direct, via_profile, rtol=0, atol=1e-6)


# ---------------------------------------------------------------------------
# deflection design


def test_channel2_carrier_magnitude_and_angle():
    vectors = default_deflection_vectors()
    alpha2 = vectors[1][0]
    assert np.allclose(alpha2, [0.385, -0.385], rtol=0, atol=1e-12)
    angle = math.degrees(math.asin(np.linalg.norm(alpha2)))
    assert abs(angle - 32.988604473764894) < 1e-9
    assert abs(angle - 33.0) <= 0.1


def test_deflection_design_wavelength_scaling():
    vectors = default_deflection_vectors()
    mags = [np.linalg.norm(a) / math.sqrt(2) for a, _, _ in vectors]
    lams = [lam for _, _, lam in vectors]
    assert lams == [450.0, 550.0, 600.0, 750.0]
    for m, lam in zip(mags, lams):
        assert np.isclose(m, 0.385 * lam / 550.0, rtol=0, atol=1e-12)


def test_deflection_quadrant_sign_pattern():
    vectors = default_deflection_vectors()
    signs = [tuple(np.sign(a)) for a, _, _ in vectors]
    assert signs == [(-1, -1), (1, -1), (1, 1), (-1, 1)]


def test_residuals_small_orthogonal_then_zero():
    vectors = default_deflection_vectors()
    r1 = vectors[0][0] + vectors[0][1]
    r2 = vectors[1][0] + vectors[1][1]
    assert np.allclose(r1, [0.017, 0.017], rtol=0, atol=1e-12)
    assert np.allclose(r2, [0.017, -0.017], rtol=0, atol=1e-12)
    assert np.isclose(r1 @ r2, 0.0, rtol=0, atol=1e-15)
    for a, b, _ in vectors[2:]:
        assert np.allclose(a + b, 0.0, rtol=0, atol=1e-15)


def test_beamsplitter_subprofiles_share_physical_frequency():
    # the same physical grating expressed at 550 nm: frequency alpha_i/lambda_ci
    system = prototype_system()
    profiles = beamsplitter_subprofiles(system.channels, 0.0128, 0.25)
    for ch, prof in zip(system.channels, profiles):
        assert prof.design_wavelength_nm == 550.0
        expected = linear_phase_profile(
            ch.alpha * 550.0 / ch.design_wavelength_nm, 550.0, 0.0128, 0.25
        )
        diff = prof.phase_rad - expected.phase_rad
        wrapped = np.mod(diff + math.pi, TWO_PI) - math.pi
        assert np.max(np.abs(wrapped)) < 1e-9


# ---------------------------------------------------------------------------
# interleaving


def _four_profiles(n=64):
    phases = [0.0, math.pi / 2, math.pi, 3 * math.pi / 2]
    return [
        PhaseProfile(np.full((n, n), ph), 0.3, 550.0) for ph in phases
    ]


def test_random_interleave_single_profile_is_identity():
    p = _four_profiles()[1]
    out = interleave_random([p], rng_seed=5)
    assert np.array_equal(out.phase_rad, p.phase_rad)


def test_random_interleave_is_deterministic_per_seed():
    profiles = _four_profiles()
    a = interleave_random(profiles, rng_seed=42)
    b = interleave_random(profiles, rng_seed=42)
    c = interleave_random(profiles, rng_seed=43)
    assert np.array_equal(a.phase_rad, b.phase_rad)
    assert not np.array_equal(a.phase_rad, c.phase_rad)


def test_random_interleave_pixels_come_from_inputs():
    profiles = _four_profiles()
    out = interleave_random(profiles, rng_seed=1)
    stack = np.stack([p.phase_rad for p in profiles])
    matches = (out.phase_rad[None] == stack).any(axis=0)
    assert matches.all()


def test_random_interleave_fractions_concentrate():
    # binomial concentration: each profile holds 1/4 +- 3*sqrt(p(1-p)/N)
    profiles = _four_profiles(n=512)
    out = interleave_random(profiles, rng_seed=9)
    n_pix = 512 * 512
    bound = 3 * math.sqrt(0.25 * 0.75 / n_pix)
    for p in profiles:
        frac = np.mean(out.phase_rad == p.phase_rad[0, 0])
        assert abs(frac - 0.25) < bound


def test_random_interleave_rejects_mismatched_profiles():
    a = PhaseProfile(np.zeros((8, 8)), 0.3, 550.0)
    b = PhaseProfile(np.zeros((8, 16)), 0.3, 550.0)
    with pytest.raises(ShapeMismatch):
        interleave_random([a, b], rng_seed=0)


def test_regular_interleave_of_identical_profiles_is_identity():
    p = PhaseProfile(np.full((16, 16), 1.25), 0.3, 550.0)
    out = interleave_regular([p, p, p, p])
    assert np.array_equal(out.phase_rad, p.phase_rad)


def test_regular_interleave_mosaic_layout():
    # constant phases 0, pi/2, pi, 3pi/2 land on the 2x2 comb offsets
    # (0,0), (w,0), (w,w), (0,w) with offsets given as (col, row)
    profiles = _four_profiles(n=8)
    out = interleave_regular(profiles).phase_rad
    assert np.all(out[0::2, 0::2] == 0.0)
    assert np.all(out[0::2, 1::2] == math.pi / 2)
    assert np.all(out[1::2, 1::2] == math.pi)
    assert np.all(out[1::2, 0::2] == 3 * math.pi / 2)


def test_regular_interleave_needs_exactly_four():
    profiles = _four_profiles()
    with pytest.raises(WrongChannelCount):
        interleave_regular(profiles[:3])


# ---------------------------------------------------------------------------
# nanocell lookup


def test_lookup_singleton_library_everywhere():
    grid = SpectralGrid(np.array([450.0, 550.0]))
    lib = NanocellLibrary(
        np.array([110.0]), np.exp(1j * np.ones((1, 2))), grid
    )
    target = PhaseProfile(np.mod(np.linspace(0, 6, 16).reshape(4, 4), TWO_PI), 0.3, 550.0)
    rmap = nanocell_lookup(target, lib)
    assert np.all(rmap.radii_nm == 110.0)


def test_lookup_picks_nearest_complex_transmission():
    # target phase 0: |e^{j0}-e^{j0.1}| = 0.0999 < |e^{j0}-e^{j3.0}| = 1.995
    grid = SpectralGrid(np.array([450.0, 550.0]))
    trans = np.stack([np.exp(1j * np.array([0.1, 0.1])), np.exp(1j * np.array([3.0, 3.0]))])
    lib = NanocellLibrary(np.array([80.0, 120.0]), trans, grid)
    target = PhaseProfile(np.zeros((3, 3)), 0.3, 550.0)
    rmap = nanocell_lookup(target, lib)
    assert np.all(rmap.radii_nm == 80.0)


def test_lookup_round_trips_quantized_profile():
    grid = default_grid()
    levels = 8
    lib = ideal_phase_library(levels, grid)
    k = np.arange(levels).repeat(2).reshape(4, 4)
    target = PhaseProfile(TWO_PI * k / levels, 0.3, grid.wavelengths_nm[0])
    rmap = nanocell_lookup(target, lib)
    assert np.array_equal(rmap.radii_nm, lib.radii_nm[k])


def test_lookup_choice_is_optimal_per_cell():
    grid = default_grid()
    lib = ideal_phase_library(16, grid)
    rng = np.random.default_rng(11)
    target = PhaseProfile(rng.uniform(0, TWO_PI, (12, 12)), 0.3, 450.0)
    rmap = nanocell_lookup(target, lib)
    col = lib.grid.index_of(450.0)
    want = np.exp(1j * target.phase_rad)
    chosen_idx = np.searchsorted(lib.radii_nm, rmap.radii_nm)
    chosen_err = np.abs(want - lib.transmission[chosen_idx, col])
    for i in range(len(lib)):
        other = np.abs(want - lib.transmission[i, col])
        assert np.all(chosen_err <= other + 1e-12)


def test_lookup_tie_breaks_to_smaller_radius():
    grid = SpectralGrid(np.array([450.0, 550.0]))
    same = np.exp(1j * np.full((1, 2), 0.7))
    lib = NanocellLibrary(
        np.array([60.0, 90.0]), np.vstack([same, same]), grid
    )
    target = PhaseProfile(np.full((2, 2), 0.7), 0.3, 550.0)
    assert np.all(nanocell_lookup(target, lib).radii_nm == 60.0)


def test_lookup_errors():
    grid = SpectralGrid(np.array([450.0, 550.0]))
    empty = NanocellLibrary(np.array([]), np.empty((0, 2), complex), grid)
    target = PhaseProfile(np.zeros((2, 2)), 0.3, 550.0)
    with pytest.raises(EmptyLibrary):
        nanocell_lookup(target, empty)
    lib = ideal_phase_library(4, grid)
    off_design = PhaseProfile(np.zeros((2, 2)), 0.3, 500.0)
    with pytest.raises(DesignWavelengthMissing):
        nanocell_lookup(off_design, lib)


# ---------------------------------------------------------------------------
# persistence


def test_radius_map_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    rmap = RadiusMap(rng.uniform(60, 160, (5, 7)), cell_width_nm=300.0)
    path = tmp_path / "map.csv"
    radius_map_to_csv(rmap, path)
    back = radius_map_from_csv(path)
    assert np.allclose(back.radii_nm, rmap.radii_nm, rtol=0, atol=0)


def test_radius_map_binary_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    rmap = RadiusMap(rng.uniform(60, 160, (6, 3)).astype(np.float32), 250.0)
    path = tmp_path / "map.rmp"
    radius_map_to_binary(rmap, path)
    back = radius_map_from_binary(path)
    assert np.array_equal(back.radii_nm, rmap.radii_nm.astype(np.float32))
    assert back.cell_width_nm == 250.0


def test_radius_map_binary_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.rmp"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(BadMagic):
        radius_map_from_binary(path)
    good = tmp_path / "short.rmp"
    rmap = RadiusMap(np.full((4, 4), 100.0))
    radius_map_to_binary(rmap, good)
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(TruncatedFile):
        radius_map_from_binary(good)


def test_library_csv_round_trip(tmp_path):
    grid = SpectralGrid(np.array([450.0, 550.0, 650.0]))
    rng = np.random.default_rng(6)
    phases = rng.uniform(0, TWO_PI, (5, 3))
    lib = NanocellLibrary(
        np.linspace(60, 140, 5), np.exp(1j * phases), grid
    )
    path = tmp_path / "lib.csv"
    library_to_csv(lib, path)
    back = library_from_csv(path)
    assert np.allclose(back.radii_nm, lib.radii_nm, rtol=0, atol=0)
    assert np.allclose(back.transmission, lib.transmission, rtol=0, atol=0)
    assert back.grid == lib.grid


def _mosaic_profiles(n=512, pitch_um=0.5):
    system = prototype_system()
    return beamsplitter_subprofiles(
        system.channels, extent_mm=n * pitch_um / 1000.0, pitch_um=pitch_um
    )


def test_artifact_report_carriers_and_replicas():
    report = interleave_artifact_report(_mosaic_profiles())
    # all four carriers sit at the same |sine| = 0.385, so |bin| = 179
    assert report.carrier_bins == ((333, 333), (333, 179), (179, 179), (179, 333))
    # a 2x2 comb splits each carrier into four equal-weight copies, so the
    # strongest off-design replica nearly matches the carrier peak itself
    assert report.replica_peak_power == pytest.approx(
        report.carrier_power_regular, rel=0.05
    )
    # random assignment spreads the same energy into a diffuse floor
    assert report.spurious_peak_power < 0.1 * report.replica_peak_power
    assert report.power_ratio >= 10.0


def test_artifact_report_seed_determinism_and_guards():
    profiles = _mosaic_profiles(n=128)
    a = interleave_artifact_report(profiles, rng_seed=3)
    b = interleave_artifact_report(profiles, rng_seed=3)
    assert a == b
    c = interleave_artifact_report(profiles, rng_seed=4)
    assert c.spurious_peak_power != a.spurious_peak_power
    with pytest.raises(WrongChannelCount):
        interleave_artifact_report(profiles[:3])
