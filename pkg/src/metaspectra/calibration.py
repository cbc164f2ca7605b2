"""Geometric and spectral calibration of the four-channel camera.

Geometric alignment maps each sub-image onto a reference view with a planar
homography estimated from point correspondences (direct linear transform with
coordinate normalization, optionally wrapped in a randomized consensus loop
against gross outliers). Spectral calibration recovers the per-channel
throughput alpha_i(lambda) as the ratio of the energy a channel collects from
a monochromatic point source to the energy the bare sensor collects from the
same source, scaled by the sensor response.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import SpectralGrid, SystemConfig, HyperspectralCube, _freeze
from .errors import (
    DegenerateConfiguration,
    SingularHomography,
    TooFewPoints,
    ZeroReference,
)

__all__ = [
    "Homography",
    "SpectralResponse",
    "REFERENCE_CHANNEL",
    "estimate_homography",
    "warp_subimage",
    "spectral_response",
    "simulate_calibration_capture",
    "response_sweep",
]

# alignment target: the first achromatic channel, whose sub-image is sharp
# at every wavelength
REFERENCE_CHANNEL = 2

_DET_FLOOR = 1e-12

# randomized-consensus settings; fixed so calibrations are reproducible
_CONSENSUS_ITERATIONS = 1000
_CONSENSUS_SEED = 0
_INLIER_TOLERANCE_PX = 1.0


@dataclass(frozen=True)
class Homography:
    """Plane-projective map acting on (x, y) points, x along columns.

    Stored normalized so the (3, 3) element is 1; construction rejects
    matrices that are singular or cannot be normalized.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError("homography must be a finite 3x3 matrix")
        if abs(m[2, 2]) < _DET_FLOOR:
            raise SingularHomography("corner element vanishes; cannot normalize")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= _DET_FLOOR:
            raise SingularHomography("homography is numerically singular")
        object.__setattr__(self, "matrix", _freeze(m))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 2) points through the homography."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ones = np.ones((pts.shape[0], 1))
        hom = np.hstack([pts, ones]) @ self.matrix.T
        return hom[:, :2] / hom[:, 2:3]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))


@dataclass(frozen=True)
class SpectralResponse:
    """Per-channel throughput alpha_i(lambda) on a spectral grid."""

    alpha: np.ndarray  # (channels, bands)
    grid: SpectralGrid

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim != 2 or a.shape[1] != len(self.grid):
            raise ValueError("alpha must be (channels, bands) on the grid")
        if not np.all(np.isfinite(a)):
            raise ValueError("alpha must be finite")
        if np.any(a < 0.0):
            raise ValueError("alpha must be nonnegative")
        object.__setattr__(self, "alpha", _freeze(a))

    def peak_wavelengths_nm(self) -> np.ndarray:
        """Wavelength of each channel's response maximum."""
        return self.grid.wavelengths_nm[np.argmax(self.alpha, axis=1)]


def _split_pairs(correspondences) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(correspondences, dtype=float)
    if arr.ndim != 3 or arr.shape[1:] != (2, 2):
        raise ValueError("correspondences must be N pairs of (x, y) points")
    return arr[:, 0, :], arr[:, 1, :]


def _collinear(points: np.ndarray) -> bool:
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return s[1] <= 1e-9 * max(s[0], 1.0)


def _normalizer(points: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 with mean radius sqrt(2)."""
    center = points.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(points - center, axis=1))
    scale = np.sqrt(2.0) / max(mean_dist, 1e-300)
    return np.array(
        [
            [scale, 0.0, -scale * center[0]],
            [0.0, scale, -scale * center[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def _dlt(src: np.ndarray, dst: np.ndarray) -> Homography:
    t_src = _normalizer(src)
    t_dst = _normalizer(dst)
    s = (np.hstack([src, np.ones((len(src), 1))]) @ t_src.T)[:, :2]
    d = (np.hstack([dst, np.ones((len(dst), 1))]) @ t_dst.T)[:, :2]

    rows = []
    for (x, y), (u, v) in zip(s, d):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    a = np.asarray(rows)
    _, sv, vt = np.linalg.svd(a)
    if len(src) > 4 and sv[-2] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateConfiguration("correspondences do not pin down a homography")
    h = vt[-1].reshape(3, 3)
    full = np.linalg.inv(t_dst) @ h @ t_src
    try:
        return Homography(full)
    except SingularHomography:
        raise DegenerateConfiguration(
            "correspondences produced a singular homography"
        ) from None


def _reprojection_errors(h: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return np.linalg.norm(h.apply(src) - dst, axis=1)


def estimate_homography(correspondences, robust: bool = False) -> Homography:
    """Fit the homography taking each pair's first point onto its second.

    The plain path is a normalized direct linear solve over every pair. The
    robust path repeatedly solves on random minimal subsets (fixed seed,
    fixed iteration count), keeps the candidate with the largest set of
    pairs reprojected within 1 px, and refits on that consensus set.
    """
    src, dst = _split_pairs(correspondences)
    if len(src) < 4:
        raise TooFewPoints(f"need at least 4 correspondences, got {len(src)}")
    if _collinear(src) or _collinear(dst):
        raise DegenerateConfiguration("correspondence points are collinear")
    if not robust:
        return _dlt(src, dst)

    rng = np.random.default_rng(_CONSENSUS_SEED)
    best_mask = None
    best_score = (-1, np.inf)
    for _ in range(_CONSENSUS_ITERATIONS):
        pick = rng.choice(len(src), size=4, replace=False)
        if _collinear(src[pick]) or _collinear(dst[pick]):
            continue
        try:
            cand = _dlt(src[pick], dst[pick])
        except DegenerateConfiguration:
            continue
        err = _reprojection_errors(cand, src, dst)
        mask = err < _INLIER_TOLERANCE_PX
        score = (int(mask.sum()), float(err[mask].sum()))
        if score[0] > best_score[0] or (
            score[0] == best_score[0] and score[1] < best_score[1]
        ):
            best_score = score
            best_mask = mask
    if best_mask is None or best_mask.sum() < 4:
        raise DegenerateConfiguration("consensus failed: no 4-pair model found")
    return _dlt(src[best_mask], dst[best_mask])


def warp_subimage(image: np.ndarray, homography: Homography):
    """Resample the image so feature at H(p) moves to p (inverse warping).

    Bilinear interpolation on the source grid; target pixels whose source
    footprint leaves the image are zeroed and reported in the returned
    validity mask. Accepts (rows, cols) or (planes, rows, cols) arrays.

    Returns (warped, valid_mask).
    """
    img = np.asarray(image, dtype=float)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    if img.ndim != 3:
        raise ValueError("image must be 2-D or a stack of planes")
    if abs(np.linalg.det(homography.matrix)) <= _DET_FLOOR:
        raise SingularHomography("cannot invert the alignment map")
    inv = np.linalg.inv(homography.matrix)

    _, h, w = img.shape
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    ones = np.ones_like(cols)
    hom = inv @ np.stack([cols.ravel(), rows.ravel(), ones.ravel()])
    xs = (hom[0] / hom[2]).reshape(h, w)
    ys = (hom[1] / hom[2]).reshape(h, w)

    valid = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)

    out = np.empty_like(img)
    for k, plane in enumerate(img):
        top = plane[y0, x0] * (1.0 - fx) + plane[y0, x0 + 1] * fx
        bot = plane[y0 + 1, x0] * (1.0 - fx) + plane[y0 + 1, x0 + 1] * fx
        out[k] = top * (1.0 - fy) + bot * fy
    out *= valid
    if squeeze:
        out = out[0]
    return out, valid


def spectral_response(
    channel_energies: np.ndarray,
    reference_energy: np.ndarray,
    eta: np.ndarray,
    grid: SpectralGrid,
) -> SpectralResponse:
    """alpha_i(lambda) = eta(lambda) * E_i(lambda) / E(lambda).

    channel_energies is (channels, bands); reference_energy and eta are
    per-band vectors (eta is the scalar sensor response to fold back in
    after the ratio cancels it).
    """
    e_i = np.asarray(channel_energies, dtype=float)
    e_ref = np.asarray(reference_energy, dtype=float)
    eta_v = np.asarray(eta, dtype=float)
    if e_i.ndim != 2 or e_ref.shape != (e_i.shape[1],) or eta_v.shape != e_ref.shape:
        raise ValueError("energy tables must be (channels, bands) and (bands,)")
    if np.any(e_ref <= 0.0):
        raise ZeroReference("reference capture has zero energy in some band")
    return SpectralResponse(eta_v * e_i / e_ref, grid)


def simulate_calibration_capture(
    system: SystemConfig, lambda_nm: float, stack=None, scene_size: int | None = None
):
    """Noiseless point-source energies with and without the optical assembly.

    Returns (per-channel energy list, bare-sensor energy) at the given grid
    wavelength. The source is a unit-radiance single-pixel impulse occupying
    exactly one spectral band; energies are total pixel sums over all color
    planes. The bare capture sees the same source through the sensor alone,
    with no splitting, deflection, or filtering.
    """
    from .renderer import default_psf_shape, render_subimage
    from .propagation import psf_stack

    grid = system.grid
    band = grid.index_of(lambda_nm)  # raises ValueError when off-grid
    if stack is None:
        stack = psf_stack(
            system,
            plane_shape=default_psf_shape(system),
            plane_pitch_um=system.sensor.pitch_um,
        )
    if scene_size is None:
        scene_size = stack.psfs.shape[2]
    data = np.zeros((scene_size, scene_size, len(grid)))
    data[scene_size // 2, scene_size // 2, band] = 1.0
    cube = HyperspectralCube(data, grid, stack.pitch_um)

    energies = []
    for idx in range(len(system.channels)):
        sub = render_subimage(cube, stack, system, idx, noiseless=True)
        energies.append(float(sub.pixels.sum()))

    from .domain import trapezoid_weights

    weights = trapezoid_weights(grid.wavelengths_nm)
    eta_total = float(system.sensor.eta[:, band].sum())
    bare = (
        system.sensor.gain * system.sensor.exposure_s * weights[band] * eta_total
    )
    if bare <= 0.0:
        raise ZeroReference(f"bare sensor reads zero energy at {lambda_nm} nm")
    return energies, bare


def response_sweep(
    system: SystemConfig, eta: np.ndarray | None = None, stack=None
) -> SpectralResponse:
    """Full spectral calibration: capture ratios at every grid wavelength.

    eta defaults to the sensor's summed color response, matching the scalar
    response used by the bare reference capture.
    """
    from .renderer import default_psf_shape
    from .propagation import psf_stack

    if stack is None:
        stack = psf_stack(
            system,
            plane_shape=default_psf_shape(system),
            plane_pitch_um=system.sensor.pitch_um,
        )
    if eta is None:
        eta = system.sensor.eta.sum(axis=0)
    lams = system.grid.wavelengths_nm
    e_i = np.zeros((len(system.channels), len(lams)))
    e_ref = np.zeros(len(lams))
    for b, lam in enumerate(lams):
        energies, bare = simulate_calibration_capture(system, lam, stack=stack)
        e_i[:, b] = energies
        e_ref[b] = bare
    return spectral_response(e_i, e_ref, eta, system.grid)
