"""Value types: spectral grids, cubes, fields, profiles, camera config."""

import math

import numpy as np
import pytest

from metaspectra.domain import (
    ChannelConfig,
    ComplexField,
    FilterSpec,
    HyperspectralCube,
    PhaseProfile,
    SensorModel,
    SpectralGrid,
    SystemConfig,
    default_grid,
    resample_cube,
    trapezoid_weights,
    validate_cube,
)
from metaspectra.errors import (
    BandMismatch,
    NegativeRadiance,
    NonFinite,
    OutOfBand,
)


# ---------------------------------------------------------------------------
# SpectralGrid


def test_default_grid_is_26_bands_450_to_700():
    g = default_grid()
    assert len(g) == 26
    assert g.wavelengths_nm[0] == 450.0
    assert g.wavelengths_nm[-1] == 700.0
    assert np.allclose(np.diff(g.wavelengths_nm), 10.0)


def test_grid_rejects_unsorted_wavelengths():
    with pytest.raises(ValueError):
        SpectralGrid(np.array([500.0, 450.0, 550.0]))


def test_grid_rejects_single_sample():
    with pytest.raises(ValueError):
        SpectralGrid(np.array([550.0]))


def test_grid_rejects_samples_outside_stated_band():
    with pytest.raises(ValueError):
        SpectralGrid(np.array([440.0, 550.0]), band=(450.0, 700.0))


def test_grid_index_of_exact_sample():
    g = default_grid()
    assert g.index_of(550.0) == 10
    with pytest.raises(ValueError):
        g.index_of(555.0)


def test_grid_equality_and_hash():
    a = default_grid()
    b = default_grid()
    assert a == b
    assert hash(a) == hash(b)
    assert a != SpectralGrid(np.array([450.0, 700.0]))


def test_trapezoid_weights_integrate_like_composite_trapezoid():
    rng = np.random.default_rng(7)
    x = np.sort(rng.uniform(400.0, 700.0, size=17))
    f = rng.uniform(0.0, 2.0, size=17)
    w = trapezoid_weights(x)
    assert np.isclose(w @ f, np.trapezoid(f, x), rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# cube validation and resampling


def _cube(data, grid=None, pitch=2.0):
    grid = grid if grid is not None else SpectralGrid(
        np.linspace(450.0, 700.0, np.asarray(data).shape[2])
    )
    return HyperspectralCube(np.asarray(data, dtype=float), grid, pitch)


def test_validate_accepts_zero_cube():
    validate_cube(_cube(np.zeros((4, 4, 3))))


def test_validate_rejects_nan():
    data = np.zeros((4, 4, 3))
    data[1, 2, 0] = np.nan
    with pytest.raises(NonFinite):
        validate_cube(_cube(data))


def test_validate_rejects_band_count_mismatch():
    cube = HyperspectralCube(np.zeros((4, 4, 5)), SpectralGrid(np.array([450.0, 550.0, 700.0])))
    with pytest.raises(BandMismatch):
        validate_cube(cube)


def test_validate_rejects_negative_radiance():
    data = np.zeros((2, 2, 2))
    data[0, 0, 1] = -1e-6
    with pytest.raises(NegativeRadiance):
        validate_cube(_cube(data))


def test_resample_identical_grid_is_bitwise_equal():
    rng = np.random.default_rng(0)
    cube = _cube(rng.uniform(0, 1, (3, 3, 5)))
    out = resample_cube(cube, cube.grid)
    assert np.array_equal(out.data, cube.data)


def test_resample_constant_spectrum_stays_constant():
    cube = _cube(np.full((2, 2, 4), 0.37))
    target = SpectralGrid(np.array([460.0, 533.0, 699.0]))
    out = resample_cube(cube, target)
    assert np.allclose(out.data, 0.37, rtol=0, atol=1e-12)


def test_resample_linear_interpolation_midpoint():
    # two bands 0 at 450 nm and 1 at 700 nm; 575 nm sits at fraction 0.5
    data = np.zeros((1, 1, 2))
    data[0, 0, 1] = 1.0
    cube = HyperspectralCube(data, SpectralGrid(np.array([450.0, 700.0])))
    out = resample_cube(cube, SpectralGrid(np.array([575.0, 650.0])))
    assert np.isclose(out.data[0, 0, 0], 0.5, rtol=0, atol=1e-12)
    assert np.isclose(out.data[0, 0, 1], 0.8, rtol=0, atol=1e-12)


def test_resample_is_idempotent_on_same_target():
    rng = np.random.default_rng(3)
    cube = _cube(rng.uniform(0, 1, (4, 4, 9)))
    target = SpectralGrid(np.linspace(460.0, 690.0, 7))
    once = resample_cube(cube, target)
    twice = resample_cube(once, target)
    assert np.array_equal(once.data, twice.data)


def test_resample_rejects_target_outside_coverage():
    cube = _cube(np.zeros((2, 2, 3)), SpectralGrid(np.array([500.0, 550.0, 600.0])))
    with pytest.raises(OutOfBand):
        resample_cube(cube, SpectralGrid(np.array([450.0, 550.0])))


def test_cube_data_is_readonly():
    cube = _cube(np.zeros((2, 2, 3)))
    with pytest.raises(ValueError):
        cube.data[0, 0, 0] = 1.0


# ---------------------------------------------------------------------------
# ComplexField / PhaseProfile


def test_field_power_is_sum_of_squared_magnitudes():
    vals = np.array([[1.0, 1j], [1 + 1j, 0.0]])
    f = ComplexField(vals, 0.5, 550.0)
    assert np.isclose(f.power(), 1 + 1 + 2 + 0, rtol=0, atol=1e-12)


def test_field_rejects_nonfinite_values():
    vals = np.ones((2, 2), dtype=complex)
    vals[0, 0] = np.inf
    with pytest.raises(NonFinite):
        ComplexField(vals, 0.5, 550.0)


def test_field_rejects_nonpositive_pitch():
    with pytest.raises(ValueError):
        ComplexField(np.ones((2, 2)), 0.0, 550.0)


def test_phase_profile_requires_wrapped_phase():
    with pytest.raises(ValueError):
        PhaseProfile(np.full((2, 2), 2 * math.pi), 0.3, 550.0)
    with pytest.raises(ValueError):
        PhaseProfile(np.full((2, 2), -0.1), 0.3, 550.0)


def test_phase_profile_transmission_scales_with_wavelength():
    # a wrapped phase is a fixed optical path: at lambda the modulation is
    # the design phase times lambda_c/lambda
    phase = np.array([[0.0, 1.0], [2.0, 3.0]])
    p = PhaseProfile(phase, 0.3, 550.0)
    t = p.transmission(650.0)
    assert np.allclose(t, np.exp(1j * phase * 550.0 / 650.0), rtol=0, atol=1e-12)
    assert np.allclose(p.transmission(550.0), np.exp(1j * phase), rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# FilterSpec


def test_neutral_density_transmits_ten_to_minus_od():
    f = FilterSpec(kind="neutral_density", od=0.3)
    assert np.isclose(f.intensity_factor(), 0.5011872336272722, rtol=0, atol=1e-12)
    assert np.isclose(
        FilterSpec(kind="neutral_density", od=0.9).intensity_factor(),
        10.0 ** -0.9,
        rtol=0,
        atol=1e-12,
    )


def test_polarizer_applies_malus_law():
    f = FilterSpec(kind="linear_polarizer", angle_deg=0.0)
    assert np.isclose(f.intensity_factor(0.0), 1.0, rtol=0, atol=1e-12)
    assert np.isclose(f.intensity_factor(90.0), 0.0, rtol=0, atol=1e-12)
    assert np.isclose(f.intensity_factor(60.0), 0.25, rtol=0, atol=1e-12)


def test_polarizer_passes_half_of_unpolarized_light():
    f = FilterSpec(kind="linear_polarizer", angle_deg=37.0)
    assert f.intensity_factor(None) == 0.5


def test_no_filter_is_identity():
    assert FilterSpec().intensity_factor() == 1.0


def test_filter_rejects_unknown_kind_and_negative_od():
    with pytest.raises(ValueError):
        FilterSpec(kind="bandpass")
    with pytest.raises(ValueError):
        FilterSpec(kind="neutral_density", od=-0.1)


# ---------------------------------------------------------------------------
# SensorModel / ChannelConfig / SystemConfig


def test_sensor_rejects_response_outside_unit_interval():
    with pytest.raises(ValueError):
        SensorModel(eta=np.array([[0.5, 1.2]]))
    with pytest.raises(ValueError):
        SensorModel(eta=np.array([[-0.1, 0.5]]))


def test_sensor_color_count_follows_eta_rows():
    s = SensorModel(eta=np.ones((3, 4)) * 0.5)
    assert s.n_colors == 3
    assert s.color_names == ("R", "G", "B")
    mono = SensorModel(eta=np.ones((1, 4)) * 0.5)
    assert mono.n_colors == 1
    assert len(mono.color_names) == 1


def test_channel_residual_is_alpha_plus_beta():
    ch = ChannelConfig(
        index=1,
        alpha=np.array([0.3, 0.3]),
        beta=np.array([-0.283, -0.317]),
        design_wavelength_nm=550.0,
    )
    assert np.allclose(ch.residual(), [0.017, -0.017], rtol=0, atol=1e-12)


def test_channel_rejects_unphysical_direction_sine():
    with pytest.raises(ValueError):
        ChannelConfig(
            index=1,
            alpha=np.array([0.8, 0.8]),
            beta=np.zeros(2),
            design_wavelength_nm=550.0,
        )


def test_channel_layer2_transmission_interpolates_on_grid():
    grid = SpectralGrid(np.array([450.0, 550.0, 650.0]))
    ch = ChannelConfig(
        index=1,
        alpha=np.zeros(2),
        beta=np.zeros(2),
        design_wavelength_nm=550.0,
        b_efficiency=np.array([0.2, 0.8, 0.4]),
    )
    assert np.isclose(ch.b_at(grid, 500.0), 0.5, rtol=0, atol=1e-12)
    assert np.isclose(ch.b_at(grid, 650.0), 0.4, rtol=0, atol=1e-12)
    bare = ChannelConfig(
        index=2, alpha=np.zeros(2), beta=np.zeros(2), design_wavelength_nm=550.0
    )
    assert bare.b_at(grid, 500.0) == 1.0


def _minimal_system(n_channels=2, split=None):
    grid = SpectralGrid(np.array([450.0, 550.0, 650.0]))
    channels = tuple(
        ChannelConfig(
            index=i + 1,
            alpha=np.zeros(2),
            beta=np.zeros(2),
            design_wavelength_nm=550.0,
        )
        for i in range(n_channels)
    )
    sensor = SensorModel(eta=np.ones((1, 3)))
    return SystemConfig(
        channels=channels, sensor=sensor, grid=grid, split_fraction=split
    )


def test_system_split_defaults_to_equal_share():
    assert _minimal_system(4).split == 0.25
    assert _minimal_system(2).split == 0.5
    assert _minimal_system(2, split=0.2).split == 0.2


def test_system_rejects_sensor_grid_mismatch():
    grid = SpectralGrid(np.array([450.0, 550.0]))
    sensor = SensorModel(eta=np.ones((1, 3)))
    ch = ChannelConfig(
        index=1, alpha=np.zeros(2), beta=np.zeros(2), design_wavelength_nm=550.0
    )
    with pytest.raises(ValueError):
        SystemConfig(channels=(ch,), sensor=sensor, grid=grid)


def test_system_rejects_b_efficiency_length_mismatch():
    grid = SpectralGrid(np.array([450.0, 550.0, 650.0]))
    sensor = SensorModel(eta=np.ones((1, 3)))
    ch = ChannelConfig(
        index=1,
        alpha=np.zeros(2),
        beta=np.zeros(2),
        design_wavelength_nm=550.0,
        b_efficiency=np.array([1.0, 1.0]),
    )
    with pytest.raises(ValueError):
        SystemConfig(channels=(ch,), sensor=sensor, grid=grid)
