"""Metasurface synthesis and analysis.

Covers the beamsplitting layer's sawtooth (blazed) phase profiles, their
chromatic diffraction-order content, the two interleaving strategies for
packing V profiles onto one surface, and nanocell library lookup for
turning a target phase map into fabricable pillar radii.
"""

from __future__ import annotations

import csv
import functools
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .domain import PhaseProfile, SpectralGrid, _freeze
from .errors import (
    AliasedProfile,
    BadMagic,
    DesignWavelengthMissing,
    EmptyLibrary,
    NonPeriodic,
    ShapeMismatch,
    TruncatedFile,
    WrongChannelCount,
)

__all__ = [
    "NanocellLibrary",
    "RadiusMap",
    "DiffractionSpectrum",
    "InterleaveArtifactReport",
    "linear_phase_profile",
    "diffraction_orders",
    "order_coefficient",
    "interleave_random",
    "interleave_regular",
    "interleave_artifact_report",
    "nanocell_lookup",
    "default_deflection_vectors",
    "beamsplitter_subprofiles",
    "ideal_phase_library",
    "radius_map_to_csv",
    "radius_map_from_csv",
    "radius_map_to_binary",
    "radius_map_from_binary",
    "library_from_csv",
    "library_to_csv",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class NanocellLibrary:
    """Precomputed complex transmissions M(r_n; lambda) of candidate pillars.

    radii_nm are strictly increasing; transmission has one row per radius
    sampled over the library's SpectralGrid.
    """

    radii_nm: np.ndarray
    transmission: np.ndarray  # complex, shape (n_radii, n_bands)
    grid: SpectralGrid
    cell_width_nm: float = 300.0
    pillar_height_nm: float = 775.0

    def __post_init__(self):
        r = np.asarray(self.radii_nm, dtype=float)
        t = np.asarray(self.transmission, dtype=complex)
        if r.ndim != 1 or t.shape != (r.size, len(self.grid)):
            raise ValueError("library shape mismatch between radii, transmission, grid")
        if r.size and not np.all(np.diff(r) > 0):
            raise ValueError("library radii must be strictly increasing")
        if np.any(np.abs(t) > 1.0 + 1e-9):
            raise ValueError("|transmission| must be <= 1")
        object.__setattr__(self, "radii_nm", _freeze(r))
        object.__setattr__(self, "transmission", _freeze(t))

    def __len__(self) -> int:
        return int(self.radii_nm.size)


@dataclass(frozen=True)
class RadiusMap:
    """Chosen pillar radius per nanocell position w*k."""

    radii_nm: np.ndarray
    cell_width_nm: float = 300.0

    def __post_init__(self):
        r = np.asarray(self.radii_nm, dtype=float)
        if r.ndim != 2:
            raise ValueError("radius map must be 2-D")
        object.__setattr__(self, "radii_nm", _freeze(r))


@dataclass(frozen=True)
class DiffractionSpectrum:
    """Fourier coefficients a_n of a periodic profile's transmission at one wavelength."""

    orders: dict[int, complex]
    wavelength_nm: float
    design_wavelength_nm: float

    def __post_init__(self):
        total = sum(abs(a) ** 2 for a in self.orders.values())
        if total > 1.0 + 1e-6:
            raise ValueError(f"order power sums to {total} > 1")

    def magnitude(self, n: int) -> float:
        return abs(self.orders.get(n, 0.0))

    def power(self, n: int) -> float:
        return self.magnitude(n) ** 2

    def total_power(self) -> float:
        return float(sum(abs(a) ** 2 for a in self.orders.values()))


def linear_phase_profile(
    alpha, lambda_c_nm: float, extent_mm: float, pitch_um: float
) -> PhaseProfile:
    """Sawtooth profile imparting direction-sine deflection alpha at lambda_c.

    phase(x) = wrap(2*pi/lambda_c * alpha . x) on a square grid of the given
    physical extent. Sampling must keep the per-sample phase step below pi
    along each axis, otherwise the sawtooth cannot be represented and
    AliasedProfile is raised.
    """
    a = np.asarray(alpha, dtype=float).reshape(2)
    if np.linalg.norm(a) >= 1.0:
        raise ValueError("|alpha| must be < 1")
    lambda_c_um = lambda_c_nm * 1e-3
    step = TWO_PI * np.abs(a) * pitch_um / lambda_c_um
    if np.any(step >= math.pi):
        raise AliasedProfile(
            f"phase step {step.max():.3f} rad/sample >= pi; reduce pitch or |alpha|"
        )
    n = int(round(extent_mm * 1000.0 / pitch_um))
    if n < 1:
        raise ValueError("extent too small for the given pitch")
    coords = (np.arange(n) - n // 2) * pitch_um
    ramp = (TWO_PI / lambda_c_um) * (
        a[0] * coords[None, :] + a[1] * coords[:, None]
    )
    return PhaseProfile(np.mod(ramp, TWO_PI), pitch_um, lambda_c_nm)


def _axis_steps(phase: np.ndarray) -> tuple[float, float]:
    """Per-sample phase advance (rad) along cols and rows of a wrapped linear map."""

    def median_step(diff: np.ndarray) -> float:
        if diff.size == 0:
            return 0.0
        wrapped = np.mod(diff + math.pi, TWO_PI) - math.pi
        return float(np.median(wrapped))

    step_c = median_step(np.diff(phase, axis=1))
    step_r = median_step(np.diff(phase, axis=0))
    return step_c, step_r


def diffraction_orders(
    profile: PhaseProfile, lambda_nm: float, max_order: int = 5
) -> DiffractionSpectrum:
    """Fourier coefficients a_n(lambda) of the profile's complex transmission.

    The profile must be periodic on its grid (an integer number of sawtooth
    periods along each axis); a_n is then the exact projection of
    exp(j*phase*lambda_c/lambda) onto the n-th harmonic of the fundamental.
    """
    phase = profile.phase_rad
    step_c, step_r = _axis_steps(phase)
    rows, cols = phase.shape
    cyc_c = step_c * cols / TWO_PI
    cyc_r = step_r * rows / TWO_PI
    tol = 1e-3
    if abs(cyc_c - round(cyc_c)) > tol or abs(cyc_r - round(cyc_r)) > tol:
        raise NonPeriodic(
            f"profile spans {cyc_c:.4f} x {cyc_r:.4f} periods; "
            "no integer period on this grid"
        )
    # residual check: the profile really is linear with these steps
    ramp = step_c * np.arange(cols)[None, :] + step_r * np.arange(rows)[:, None]
    mismatch = np.mod(phase - ramp - phase[0, 0] + math.pi, TWO_PI) - math.pi
    if np.max(np.abs(mismatch)) > 1e-6:
        raise NonPeriodic("profile is not a linear sawtooth on its grid")

    t = profile.transmission(lambda_nm)
    base = np.exp(-1j * ramp)
    orders: dict[int, complex] = {0: complex(np.mean(t))}
    pos = t
    for n in range(1, max_order + 1):
        pos = pos * base
        orders[n] = complex(np.mean(pos))
    neg = t
    conj_base = np.conj(base)
    for n in range(1, max_order + 1):
        neg = neg * conj_base
        orders[-n] = complex(np.mean(neg))
    return DiffractionSpectrum(orders, lambda_nm, profile.design_wavelength_nm)


@functools.lru_cache(maxsize=4096)
def order_coefficient(
    lambda_c_nm: float, lambda_nm: float, n: int = 1, samples_per_period: int = 2048
) -> complex:
    """First-order (or n-th) coefficient of an ideal sawtooth at lambda.

    Evaluated on a canonical single-period profile through diffraction_orders,
    so the renderer's efficiency chain and the profile analysis agree by
    construction. Approaches exp(j*pi*(u-n))*sinc(u-n), u = lambda_c/lambda.
    """
    p = samples_per_period
    # canonical one-row, one-period sawtooth; pitch is immaterial to a_n
    phase = np.mod(TWO_PI * np.arange(p) / p, TWO_PI).reshape(1, p)
    profile = PhaseProfile(phase, 0.25, lambda_c_nm)
    spec = diffraction_orders(profile, lambda_nm, max_order=abs(n))
    return spec.orders[n]


def interleave_random(profiles: list[PhaseProfile], rng_seed: int) -> PhaseProfile:
    """Per-pixel uniform random assignment of V profiles onto one surface."""
    _check_matching(profiles)
    v = len(profiles)
    stack = np.stack([p.phase_rad for p in profiles])
    rng = np.random.default_rng(rng_seed)
    pick = rng.integers(0, v, size=stack.shape[1:])
    out = np.take_along_axis(stack, pick[None], axis=0)[0]
    return PhaseProfile(out, profiles[0].pitch_um, profiles[0].design_wavelength_nm)


def interleave_regular(profiles: list[PhaseProfile]) -> PhaseProfile:
    """2x2 mosaic interleave with comb offsets (0,0), (w,0), (w,w), (0,w).

    Offset components are (x, y) = (col, row) in units of the cell pitch w:
    profile 1 occupies even-col/even-row cells, 2 odd/even, 3 odd/odd,
    4 even/odd.
    """
    if len(profiles) != 4:
        raise WrongChannelCount(f"regular interleave needs 4 profiles, got {len(profiles)}")
    _check_matching(profiles)
    out = profiles[0].phase_rad.copy()
    out[0::2, 1::2] = profiles[1].phase_rad[0::2, 1::2]
    out[1::2, 1::2] = profiles[2].phase_rad[1::2, 1::2]
    out[1::2, 0::2] = profiles[3].phase_rad[1::2, 0::2]
    return PhaseProfile(out, profiles[0].pitch_um, profiles[0].design_wavelength_nm)


def _check_matching(profiles: list[PhaseProfile]) -> None:
    if not profiles:
        raise ShapeMismatch("no profiles given")
    first = profiles[0]
    for p in profiles[1:]:
        if (
            p.phase_rad.shape != first.phase_rad.shape
            or p.pitch_um != first.pitch_um
            or p.design_wavelength_nm != first.design_wavelength_nm
        ):
            raise ShapeMismatch("profiles must share grid shape, pitch, and lambda_c")


@dataclass(frozen=True)
class InterleaveArtifactReport:
    """Far-field peak accounting for regular vs random interleaving.

    A 2x2 mosaic samples each sub-profile on a comb, so its far field carries
    exact half-Nyquist replicas of every carrier; random assignment spreads
    the same leftover energy into a diffuse floor instead. power_ratio is the
    strongest off-design mosaic replica over the strongest off-design random
    peak, both as fractions of the total incident power.
    """

    grid_size: int
    pitch_um: float
    lambda_nm: float
    carrier_bins: tuple[tuple[int, int], ...]
    carrier_power_regular: float
    carrier_power_random: float
    replica_peak_power: float
    spurious_peak_power: float
    power_ratio: float


def _far_field_power(profile: PhaseProfile, lambda_nm: float) -> np.ndarray:
    """Normalized far-field power map of a plane wave through the profile."""
    field = profile.transmission(lambda_nm)
    spectrum = np.fft.fft2(field)
    return np.abs(spectrum) ** 2 / field.size**2


def _window_max(power: np.ndarray, bin_rc: tuple[int, int], half: int) -> float:
    n = power.shape[0]
    rows = [(bin_rc[0] + d) % n for d in range(-half, half + 1)]
    cols = [(bin_rc[1] + d) % n for d in range(-half, half + 1)]
    return float(power[np.ix_(rows, cols)].max())


def interleave_artifact_report(
    profiles: list[PhaseProfile],
    lambda_nm: float | None = None,
    rng_seed: int = 0,
    exclusion_bins: int = 2,
) -> InterleaveArtifactReport:
    """Compare off-design far-field peaks of the two interleaving strategies.

    The sub-profiles are composed once as a 2x2 mosaic and once by seeded
    per-pixel random assignment; both are illuminated by a unit plane wave
    and transformed to the far field. Bins within a Chebyshev radius of
    exclusion_bins around DC and around each profile's own carrier are the
    design orders; the report tracks the strongest remaining peak of each
    composition and their ratio.
    """
    _check_matching(profiles)
    if len(profiles) != 4:
        raise WrongChannelCount(
            f"artifact analysis needs the 4 mosaic profiles, got {len(profiles)}"
        )
    if lambda_nm is None:
        lambda_nm = profiles[0].design_wavelength_nm
    n_rows, n_cols = profiles[0].phase_rad.shape
    if n_rows != n_cols:
        raise ShapeMismatch("artifact analysis expects a square grid")
    n = n_rows

    carrier_bins = []
    for p in profiles:
        step_c, step_r = _axis_steps(p.phase_rad)
        scale = p.design_wavelength_nm / lambda_nm
        kc = int(round(step_c * scale * n / TWO_PI)) % n
        kr = int(round(step_r * scale * n / TWO_PI)) % n
        carrier_bins.append((kr, kc))

    keep = np.ones((n, n), dtype=bool)
    for bin_rc in carrier_bins + [(0, 0)]:
        rows = [(bin_rc[0] + d) % n for d in range(-exclusion_bins, exclusion_bins + 1)]
        cols = [(bin_rc[1] + d) % n for d in range(-exclusion_bins, exclusion_bins + 1)]
        keep[np.ix_(rows, cols)] = False

    regular = _far_field_power(interleave_regular(profiles), lambda_nm)
    random_ = _far_field_power(interleave_random(profiles, rng_seed), lambda_nm)

    carrier_reg = np.mean(
        [_window_max(regular, b, exclusion_bins) for b in carrier_bins]
    )
    carrier_rnd = np.mean(
        [_window_max(random_, b, exclusion_bins) for b in carrier_bins]
    )
    replica = float(regular[keep].max())
    spurious = float(random_[keep].max())
    return InterleaveArtifactReport(
        grid_size=n,
        pitch_um=profiles[0].pitch_um,
        lambda_nm=float(lambda_nm),
        carrier_bins=tuple(carrier_bins),
        carrier_power_regular=float(carrier_reg),
        carrier_power_random=float(carrier_rnd),
        replica_peak_power=replica,
        spurious_peak_power=spurious,
        power_ratio=replica / max(spurious, 1e-300),
    )


def nanocell_lookup(target: PhaseProfile, library: NanocellLibrary) -> RadiusMap:
    """Choose, per cell, the library radius closest in complex transmission.

    Distance is |exp(j*phase) - M(r_n; lambda_c)| evaluated at the target's
    design wavelength; ties break toward the smaller radius.
    """
    if len(library) == 0:
        raise EmptyLibrary("nanocell library has no entries")
    try:
        col = library.grid.index_of(target.design_wavelength_nm)
    except ValueError:
        raise DesignWavelengthMissing(
            f"library grid lacks {target.design_wavelength_nm} nm"
        ) from None
    lib_vals = library.transmission[:, col]
    want = np.exp(1j * target.phase_rad)
    # chunk rows to bound the (pixels x radii) distance matrix
    h, w = want.shape
    out = np.empty((h, w), dtype=float)
    chunk = max(1, int(4e6 // max(1, w * len(library))))
    for r0 in range(0, h, chunk):
        r1 = min(h, r0 + chunk)
        d = np.abs(want[r0:r1, :, None] - lib_vals[None, None, :])
        # argmin returns the first (smallest-radius) index on ties
        out[r0:r1] = library.radii_nm[np.argmin(d, axis=2)]
    return RadiusMap(out, library.cell_width_nm)


def default_deflection_vectors(
    a_magnitude: float = 0.385,
    lambda_c_list: tuple[float, ...] = (450.0, 550.0, 600.0, 750.0),
) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """Prototype deflection design: four quadrant carriers plus residuals.

    alpha_i = (lambda_ci / lambda_c2) * (s1, s2) * a, with the quadrant sign
    pattern s1 = (-1)^(floor(i/2)+1), s2 = (-1)^(floor((i-1)/2)+1) for
    1-based i. Channels 1-2 keep small orthogonal residuals alpha+beta =
    (0.017, +/-0.017); channels 3-4 cancel exactly (achromatic).
    """
    ref = lambda_c_list[1]
    out = []
    for i, lam in enumerate(lambda_c_list, start=1):
        s1 = (-1.0) ** (i // 2 + 1)
        s2 = (-1.0) ** ((i - 1) // 2 + 1)
        alpha = (lam / ref) * np.array([s1, s2]) * a_magnitude
        if i <= 2:
            residual = np.array([0.017, (-1.0) ** (i - 1) * 0.017])
            beta = -alpha + residual
        else:
            beta = -alpha
        out.append((alpha, beta, lam))
    return out


def beamsplitter_subprofiles(
    channels, extent_mm: float, pitch_um: float, common_lambda_nm: float = 550.0
) -> list[PhaseProfile]:
    """The V beamsplitter sub-profiles expressed at one shared design wavelength.

    alpha_i / lambda_ci is the physical grating frequency, so the same surface
    is a linear profile with vector alpha_i * common / lambda_ci at the common
    wavelength. Required because interleaving only makes sense for profiles
    sharing a design wavelength.
    """
    profiles = []
    for ch in channels:
        scaled = ch.alpha * (common_lambda_nm / ch.design_wavelength_nm)
        profiles.append(
            linear_phase_profile(scaled, common_lambda_nm, extent_mm, pitch_um)
        )
    return profiles


def ideal_phase_library(
    levels: int,
    grid: SpectralGrid,
    radius_start_nm: float = 60.0,
    radius_step_nm: float = 10.0,
    cell_width_nm: float = 300.0,
) -> NanocellLibrary:
    """Synthetic phase-only library with uniformly spaced phase levels.

    Stand-in for a measured pillar library: level k provides transmission
    exp(j*2*pi*k/levels) at every wavelength.
    """
    radii = radius_start_nm + radius_step_nm * np.arange(levels)
    phases = TWO_PI * np.arange(levels) / levels
    trans = np.exp(1j * phases)[:, None] * np.ones((1, len(grid)))
    return NanocellLibrary(radii, trans, grid, cell_width_nm=cell_width_nm)


# ---------------------------------------------------------------------------
# persistence


def radius_map_to_csv(rmap: RadiusMap, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k_row", "k_col", "radius_nm"])
        h, w = rmap.radii_nm.shape
        for r in range(h):
            for c in range(w):
                writer.writerow([r, c, repr(float(rmap.radii_nm[r, c]))])


def radius_map_from_csv(path, cell_width_nm: float = 300.0) -> RadiusMap:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["k_row", "k_col", "radius_nm"]:
            raise ValueError(f"unexpected radius-map header {header}")
        for rec in reader:
            rows.append((int(rec[0]), int(rec[1]), float(rec[2])))
    if not rows:
        raise ValueError("empty radius map")
    h = max(r for r, _, _ in rows) + 1
    w = max(c for _, c, _ in rows) + 1
    out = np.full((h, w), np.nan)
    for r, c, val in rows:
        out[r, c] = val
    if np.any(np.isnan(out)):
        raise ValueError("radius map CSV does not cover the full grid")
    return RadiusMap(out, cell_width_nm)


_RMAP_MAGIC = b"RMP1"


def radius_map_to_binary(rmap: RadiusMap, path) -> None:
    """Little-endian alternative: magic, H, W, cell width, float32 radii."""
    h, w = rmap.radii_nm.shape
    with open(path, "wb") as fh:
        fh.write(_RMAP_MAGIC)
        fh.write(struct.pack("<IIf", h, w, rmap.cell_width_nm))
        fh.write(rmap.radii_nm.astype("<f4").tobytes(order="C"))


def radius_map_from_binary(path) -> RadiusMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _RMAP_MAGIC:
        raise BadMagic(f"not a radius-map file: magic {blob[:4]!r}")
    if len(blob) < 16:
        raise TruncatedFile("radius-map header incomplete")
    h, w, cell = struct.unpack("<IIf", blob[4:16])
    need = 16 + 4 * h * w
    if len(blob) < need:
        raise TruncatedFile(f"radius-map payload short: {len(blob)} < {need}")
    radii = np.frombuffer(blob[16:need], dtype="<f4").reshape(h, w).astype(float)
    return RadiusMap(radii, cell)


def library_from_csv(
    path, cell_width_nm: float = 300.0, pillar_height_nm: float = 775.0
) -> NanocellLibrary:
    """Load a (radius_nm, lambda_nm, re, im) CSV into a NanocellLibrary."""
    table: dict[float, dict[float, complex]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["radius_nm", "lambda_nm", "re", "im"]:
            raise ValueError(f"unexpected library header {header}")
        for rec in reader:
            r, lam = float(rec[0]), float(rec[1])
            table.setdefault(r, {})[lam] = complex(float(rec[2]), float(rec[3]))
    if not table:
        raise EmptyLibrary("library CSV has no entries")
    radii = sorted(table)
    lams = sorted(table[radii[0]])
    trans = np.empty((len(radii), len(lams)), dtype=complex)
    for i, r in enumerate(radii):
        if sorted(table[r]) != lams:
            raise ValueError(f"radius {r} nm sampled on a different wavelength set")
        trans[i] = [table[r][lam] for lam in lams]
    grid = SpectralGrid(np.asarray(lams))
    return NanocellLibrary(
        np.asarray(radii), trans, grid, cell_width_nm, pillar_height_nm
    )


def library_to_csv(library: NanocellLibrary, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["radius_nm", "lambda_nm", "re", "im"])
        for i, r in enumerate(library.radii_nm):
            for j, lam in enumerate(library.grid.wavelengths_nm):
                t = library.transmission[i, j]
                writer.writerow(
                    [repr(float(r)), repr(float(lam)), repr(float(t.real)), repr(float(t.imag))]
                )
