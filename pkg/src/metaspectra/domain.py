"""Core value types shared by every stage: spectral grids, datacubes,
sampled wavefronts, phase profiles, and the camera/system configuration.

All types are immutable values after construction (arrays are marked
read-only), so they can be shared freely between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BandMismatch, NegativeRadiance, NonFinite, OutOfBand

__all__ = [
    "SpectralGrid",
    "HyperspectralCube",
    "ComplexField",
    "PhaseProfile",
    "SensorModel",
    "FilterSpec",
    "ChannelConfig",
    "SystemConfig",
    "default_grid",
    "validate_cube",
    "resample_cube",
    "trapezoid_weights",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpectralGrid:
    """Ordered wavelength samples (nm) spanning the operating band."""

    wavelengths_nm: np.ndarray
    band: tuple[float, float] = None  # type: ignore[assignment]

    def __post_init__(self):
        w = np.asarray(self.wavelengths_nm, dtype=float)
        if w.ndim != 1 or w.size < 2:
            raise ValueError("spectral grid needs at least 2 wavelength samples")
        if not np.all(np.diff(w) > 0):
            raise ValueError("wavelengths must be strictly increasing")
        band = self.band if self.band is not None else (float(w[0]), float(w[-1]))
        if w[0] < band[0] or w[-1] > band[1]:
            raise ValueError("wavelength samples fall outside the stated band")
        object.__setattr__(self, "wavelengths_nm", _freeze(w))
        object.__setattr__(self, "band", (float(band[0]), float(band[1])))

    def __len__(self) -> int:
        return int(self.wavelengths_nm.size)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SpectralGrid)
            and self.band == other.band
            and np.array_equal(self.wavelengths_nm, other.wavelengths_nm)
        )

    def __hash__(self):
        return hash((self.band, self.wavelengths_nm.tobytes()))

    def index_of(self, lambda_nm: float) -> int:
        """Index of an exact grid wavelength; ValueError if absent."""
        idx = np.nonzero(np.isclose(self.wavelengths_nm, lambda_nm, rtol=0, atol=1e-9))[0]
        if idx.size == 0:
            raise ValueError(f"{lambda_nm} nm is not a grid sample")
        return int(idx[0])


def default_grid() -> SpectralGrid:
    """26 bands, 450-700 nm in 10 nm steps."""
    return SpectralGrid(np.arange(450.0, 700.0 + 1e-9, 10.0))


def trapezoid_weights(wavelengths_nm: np.ndarray) -> np.ndarray:
    """Composite-trapezoid quadrature weights for a (possibly nonuniform) grid."""
    w = np.asarray(wavelengths_nm, dtype=float)
    out = np.empty_like(w)
    out[0] = (w[1] - w[0]) / 2.0
    out[-1] = (w[-1] - w[-2]) / 2.0
    if w.size > 2:
        out[1:-1] = (w[2:] - w[:-2]) / 2.0
    return out


@dataclass(frozen=True)
class HyperspectralCube:
    """Radiance H(x, y, lambda), indexed (row, col, band), normalized units."""

    data: np.ndarray
    grid: SpectralGrid
    pitch_um: float = 2.0

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 3:
            raise ValueError("cube data must be 3-D (row, col, band)")
        if self.pitch_um <= 0:
            raise ValueError("pitch must be positive")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


def validate_cube(cube: HyperspectralCube) -> None:
    """Raise the first violated cube invariant; return None when all hold."""
    if cube.data.shape[2] != len(cube.grid):
        raise BandMismatch(
            f"cube has {cube.data.shape[2]} bands but grid has {len(cube.grid)}"
        )
    if not np.all(np.isfinite(cube.data)):
        raise NonFinite("cube contains non-finite values")
    if np.any(cube.data < 0):
        raise NegativeRadiance("cube contains negative radiance")


def resample_cube(cube: HyperspectralCube, target: SpectralGrid) -> HyperspectralCube:
    """Per-pixel linear interpolation of the cube onto a new spectral grid.

    The target grid must lie within the source wavelength coverage.
    Identical grids short-circuit to a bitwise-equal copy.
    """
    src = cube.grid.wavelengths_nm
    tgt = target.wavelengths_nm
    if np.array_equal(src, tgt):
        return HyperspectralCube(cube.data.copy(), target, cube.pitch_um)
    if tgt[0] < src[0] - 1e-9 or tgt[-1] > src[-1] + 1e-9:
        raise OutOfBand(
            f"target [{tgt[0]}, {tgt[-1]}] nm exceeds source coverage "
            f"[{src[0]}, {src[-1]}] nm"
        )
    # vectorized 1-D linear interpolation along the band axis
    idx = np.clip(np.searchsorted(src, tgt, side="right") - 1, 0, src.size - 2)
    lam0, lam1 = src[idx], src[idx + 1]
    frac = np.clip((tgt - lam0) / (lam1 - lam0), 0.0, 1.0)
    lo = cube.data[:, :, idx]
    hi = cube.data[:, :, idx + 1]
    out = lo + (hi - lo) * frac[None, None, :]
    return HyperspectralCube(np.maximum(out, 0.0), target, cube.pitch_um)


@dataclass(frozen=True)
class ComplexField:
    """2-D complex wavefront samples with physical pitch, tagged by wavelength."""

    values: np.ndarray
    pitch_um: float
    wavelength_nm: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim != 2:
            raise ValueError("field must be 2-D")
        if self.pitch_um <= 0:
            raise ValueError("pitch must be positive")
        if not np.all(np.isfinite(v)):
            raise NonFinite("field contains non-finite values")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    def power(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2))


@dataclass(frozen=True)
class PhaseProfile:
    """Designed phase map in radians, wrapped to [0, 2*pi), at lambda_c."""

    phase_rad: np.ndarray
    pitch_um: float
    design_wavelength_nm: float

    def __post_init__(self):
        p = np.asarray(self.phase_rad, dtype=float)
        if p.ndim != 2:
            raise ValueError("phase map must be 2-D")
        if self.pitch_um <= 0 or self.design_wavelength_nm <= 0:
            raise ValueError("pitch and design wavelength must be positive")
        if np.any(p < 0) or np.any(p >= 2 * math.pi):
            raise ValueError("phase must be wrapped to [0, 2*pi)")
        object.__setattr__(self, "phase_rad", _freeze(p))

    def transmission(self, lambda_nm: float) -> np.ndarray:
        """Complex transmission at an arbitrary wavelength.

        The wrapped design phase corresponds to a fixed optical path, so the
        phase seen at lambda is the design phase scaled by lambda_c/lambda.
        """
        return np.exp(1j * self.phase_rad * (self.design_wavelength_nm / lambda_nm))


@dataclass(frozen=True)
class SensorModel:
    """Photosensor description: spectral response, gain, exposure, noise."""

    eta: np.ndarray  # (n_colors, n_bands) response in [0, 1]
    gain: float = 1.0
    exposure_s: float = 1.0
    sigma: float = 0.002
    pitch_um: float = 2.0
    full_well_normalized: float = 1.0
    color_names: tuple[str, ...] = ("R", "G", "B")

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.eta, dtype=float))
        if np.any(e < 0) or np.any(e > 1):
            raise ValueError("spectral response must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("read-noise sigma must be >= 0")
        if self.gain <= 0 or self.exposure_s <= 0:
            raise ValueError("gain and exposure must be positive")
        names = self.color_names
        if len(names) != e.shape[0]:
            names = tuple(f"c{j}" for j in range(e.shape[0]))
        object.__setattr__(self, "eta", _freeze(e))
        object.__setattr__(self, "color_names", names)

    @property
    def n_colors(self) -> int:
        return int(self.eta.shape[0])


@dataclass(frozen=True)
class FilterSpec:
    """Per-channel optical filter: none, neutral density, or linear polarizer."""

    kind: str = "none"  # none | neutral_density | linear_polarizer
    od: float = 0.0
    angle_deg: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "neutral_density", "linear_polarizer"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind == "neutral_density" and self.od < 0:
            raise ValueError("optical density must be >= 0")

    def intensity_factor(self, polarization_angle_deg: float | None = None) -> float:
        """|F|^2 for the given input polarization (None = unpolarized).

        ND transmits 10^(-OD) regardless of polarization. A linear polarizer
        applies Malus' law to linearly polarized input and passes half of
        unpolarized input.
        """
        if self.kind == "none":
            return 1.0
        if self.kind == "neutral_density":
            return 10.0 ** (-self.od)
        if polarization_angle_deg is None:
            return 0.5
        delta = math.radians(self.angle_deg - polarization_angle_deg)
        return math.cos(delta) ** 2


@dataclass(frozen=True)
class ChannelConfig:
    """One optical channel: deflection design, eyepiece lens, filter."""

    index: int
    alpha: np.ndarray  # direction-sine 2-vector (x, y)
    beta: np.ndarray
    design_wavelength_nm: float
    lens_focal_mm: float = 12.0
    lens_center_mm: np.ndarray = field(default_factory=lambda: np.zeros(2))
    lens_radius_mm: float = 2.0
    filter: FilterSpec = field(default_factory=FilterSpec)
    b_efficiency: np.ndarray | None = None  # per-band transmission, default ones

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).reshape(2)
        b = np.asarray(self.beta, dtype=float).reshape(2)
        if np.linalg.norm(a) >= 1.0:
            raise ValueError("|alpha| must be < 1 (physical direction sine)")
        if self.lens_focal_mm <= 0 or self.lens_radius_mm <= 0:
            raise ValueError("lens focal length and radius must be positive")
        object.__setattr__(self, "alpha", _freeze(a))
        object.__setattr__(self, "beta", _freeze(b))
        object.__setattr__(
            self, "lens_center_mm", _freeze(np.asarray(self.lens_center_mm, float).reshape(2))
        )
        if self.b_efficiency is not None:
            object.__setattr__(
                self, "b_efficiency", _freeze(np.asarray(self.b_efficiency, float))
            )

    def residual(self) -> np.ndarray:
        """alpha + beta: zero for an achromatic channel."""
        return self.alpha + self.beta

    def b_at(self, grid: SpectralGrid, lambda_nm: float) -> float:
        """Layer-2 transmission b_i at lambda (linear interpolation on the grid)."""
        if self.b_efficiency is None:
            return 1.0
        return float(
            np.interp(lambda_nm, grid.wavelengths_nm, self.b_efficiency)
        )


@dataclass(frozen=True)
class SystemConfig:
    """The full assembly: V channels, sensor, pupil and layer geometry."""

    channels: tuple[ChannelConfig, ...]
    sensor: SensorModel
    grid: SpectralGrid
    entrance_pupil_diameter_mm: float = 2.0
    layer_spacing_mm: float = 4.0
    split_fraction: float | None = None  # beamsplit energy share; default 1/V

    def __post_init__(self):
        chans = tuple(self.channels)
        if len(chans) < 1:
            raise ValueError("need at least one channel")
        if self.sensor.eta.shape[1] != len(self.grid):
            raise ValueError("sensor response length does not match the grid")
        for ch in chans:
            if ch.b_efficiency is not None and ch.b_efficiency.size != len(self.grid):
                raise ValueError(f"channel {ch.index} b_efficiency length mismatch")
        object.__setattr__(self, "channels", chans)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def split(self) -> float:
        """Per-channel beamsplit energy fraction (ideal equal split by default)."""
        if self.split_fraction is not None:
            return self.split_fraction
        return 1.0 / self.n_channels
