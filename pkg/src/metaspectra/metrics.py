"""Cube quality scores and a dataset benchmark harness."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.signal import fftconvolve

from .domain import HyperspectralCube, SystemConfig, resample_cube
from .errors import (
    BadMagic,
    ConfigError,
    EmptyDataset,
    ImageTooSmall,
    ShapeMismatch,
    SizeMismatch,
    TruncatedFile,
    UnreadableCube,
)
from .io import config_hash, read_cube
from .propagation import PSFStack, psf_stack
from .reconstruction import (
    DiffusionSchedule,
    OracleDenoiser,
    SmootherDenoiser,
    reconstruct_guided,
)
from .renderer import Snapshot, default_psf_shape, render_snapshot

__all__ = [
    "MetricReport",
    "BenchmarkScene",
    "psnr",
    "ssim",
    "sam",
    "benchmark_run",
    "register_reconstructor",
    "reconstructor_ids",
    "report_to_json",
    "report_to_csv",
]


def _paired(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(reference, dtype=float)
    e = np.asarray(estimate, dtype=float)
    if r.shape != e.shape:
        raise ShapeMismatch(f"reference {r.shape} vs estimate {e.shape}")
    return r, e


def psnr(reference, estimate, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    r, e = _paired(reference, estimate)
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((r - e) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _ssim_window() -> np.ndarray:
    half = _SSIM_WINDOW // 2
    line = np.exp(-(np.arange(-half, half + 1) ** 2) / (2.0 * _SSIM_SIGMA**2))
    window = np.outer(line, line)
    return window / window.sum()


def _ssim_plane(x: np.ndarray, y: np.ndarray, window: np.ndarray) -> float:
    c1 = _SSIM_K1**2
    c2 = _SSIM_K2**2
    mx = fftconvolve(x, window, mode="valid")
    my = fftconvolve(y, window, mode="valid")
    vx = fftconvolve(x * x, window, mode="valid") - mx * mx
    vy = fftconvolve(y * y, window, mode="valid") - my * my
    cov = fftconvolve(x * y, window, mode="valid") - mx * my
    score = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / (
        (mx * mx + my * my + c1) * (vx + vy + c2)
    )
    return float(score.mean())


def ssim(reference, estimate) -> float:
    """Mean structural similarity, Gaussian 11x11 window on unit-range data.

    3-D inputs are scored per band and averaged.
    """
    r, e = _paired(reference, estimate)
    if r.ndim not in (2, 3):
        raise ValueError("ssim expects a 2-D image or a (rows, cols, bands) cube")
    if min(r.shape[0], r.shape[1]) < _SSIM_WINDOW:
        raise ImageTooSmall(
            f"need at least {_SSIM_WINDOW} px per side, got {r.shape[:2]}"
        )
    window = _ssim_window()
    if r.ndim == 2:
        return _ssim_plane(r, e, window)
    scores = [_ssim_plane(r[:, :, b], e[:, :, b], window) for b in range(r.shape[2])]
    return float(np.mean(scores))


def sam(reference, estimate) -> float:
    """Mean spectral angle in radians over pixels with nonzero spectra."""
    r, e = _paired(reference, estimate)
    flat_r = r.reshape(-1, r.shape[-1])
    flat_e = e.reshape(-1, e.shape[-1])
    norm_r = np.linalg.norm(flat_r, axis=1)
    norm_e = np.linalg.norm(flat_e, axis=1)
    keep = (norm_r > 0) & (norm_e > 0)
    if not keep.any():
        return 0.0
    unit_r = flat_r[keep] / norm_r[keep, None]
    unit_e = flat_e[keep] / norm_e[keep, None]
    # the arccos of the clamped cosine is ill-conditioned for near-parallel
    # spectra; the chord/anti-chord ratio gives the same angle without
    # losing the small-angle digits
    chord = np.linalg.norm(unit_r - unit_e, axis=1)
    anti = np.linalg.norm(unit_r + unit_e, axis=1)
    return float(np.mean(2.0 * np.arctan2(chord, anti)))


# ---------------------------------------------------------------------------
# benchmark harness


@dataclass(frozen=True)
class MetricReport:
    """Per-scene and averaged scores plus the provenance of the run.

    Scores are computed per band and averaged, never on flattened cubes;
    `detail` records that convention.
    """

    scene_names: tuple[str, ...]
    psnr_db: tuple[float, ...]
    ssim_values: tuple[float, ...]
    sam_rad: tuple[float, ...]
    config_digest: str
    seed: int
    dynamic_range_db: float | None = None
    detail: str = "per-band-averaged"

    def __post_init__(self):
        n = len(self.scene_names)
        if not (len(self.psnr_db) == len(self.ssim_values) == len(self.sam_rad) == n):
            raise ValueError("per-scene score lists must align with scene names")
        if any(p < 0 for p in self.psnr_db):
            raise ValueError("PSNR must be >= 0 dB or the +inf sentinel")
        if any(not -1.0 <= s <= 1.0 for s in self.ssim_values):
            raise ValueError("SSIM must lie in [-1, 1]")
        if any(not 0.0 <= a <= math.pi for a in self.sam_rad):
            raise ValueError("SAM must lie in [0, pi] radians")

    @property
    def mean_psnr_db(self) -> float:
        return float(np.mean(self.psnr_db))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))

    @property
    def mean_sam_rad(self) -> float:
        return float(np.mean(self.sam_rad))


@dataclass(frozen=True)
class BenchmarkScene:
    """Everything a reconstructor entry may draw on for one scene.

    `truth` is supplied so oracle-style baselines can exist; a real method
    must ignore it.
    """

    name: str
    truth: HyperspectralCube
    snapshot: Snapshot
    system: SystemConfig
    stack: PSFStack
    seed: int
    steps: int
    guidance_iters: int


Reconstructor = Callable[[BenchmarkScene], HyperspectralCube]

_RECONSTRUCTORS: dict[str, Reconstructor] = {}


def register_reconstructor(name: str, fn: Reconstructor) -> None:
    """Add a named reconstruction method to the benchmark registry.

    The callable receives a BenchmarkScene and returns a cube on the
    scene's grid. Registering an existing name replaces it, so a trained
    denoiser can shadow the built-in baselines.
    """
    if not name or not isinstance(name, str):
        raise ConfigError("reconstructor name must be a nonempty string")
    _RECONSTRUCTORS[name] = fn


def reconstructor_ids() -> tuple[str, ...]:
    return tuple(sorted(_RECONSTRUCTORS))


def guided_reconstructor(denoiser_factory) -> Reconstructor:
    """Adapt a denoiser factory into a registry entry.

    `denoiser_factory(scene, schedule)` must return a denoiser callable for
    the guided sampling loop; the scene's steps, iteration count, seed, and
    PSF stack are forwarded. This is the plug-in point for a trained model:
    wrap its noise predictor in the denoiser signature, build it here, and
    register the result under a new name.
    """

    def run(scene: BenchmarkScene) -> HyperspectralCube:
        schedule = DiffusionSchedule()
        denoiser = denoiser_factory(scene, schedule)
        return reconstruct_guided(
            scene.snapshot,
            denoiser,
            steps=scene.steps,
            guidance_iters=scene.guidance_iters,
            seed=scene.seed,
            stack=scene.stack,
        )

    return run


register_reconstructor("identity", lambda scene: scene.truth)
register_reconstructor(
    "oracle",
    guided_reconstructor(lambda scene, schedule: OracleDenoiser(scene.truth, schedule)),
)
register_reconstructor(
    "smoother",
    guided_reconstructor(lambda scene, schedule: SmootherDenoiser(schedule)),
)


def benchmark_run(
    dataset_dir,
    system: SystemConfig,
    reconstructor_id: str,
    seed: int = 0,
    stack: PSFStack | None = None,
    steps: int = 10,
    guidance_iters: int = 5,
) -> MetricReport:
    """Render, reconstruct, and score every cube in a directory.

    Scenes are the `*.hsc` files sorted by name; each is resampled to the
    system grid, rendered with the system's noise model under the given
    seed, reconstructed by the registry entry, and scored against the
    resampled truth. Identical arguments give a bit-identical report.
    """
    try:
        fn = _RECONSTRUCTORS[reconstructor_id]
    except KeyError:
        raise ConfigError(
            f"unknown reconstructor {reconstructor_id!r}; "
            f"registered: {reconstructor_ids()}"
        ) from None
    paths = sorted(Path(dataset_dir).glob("*.hsc"))
    if not paths:
        raise EmptyDataset(f"no *.hsc cubes under {dataset_dir}")
    if stack is None:
        stack = psf_stack(
            system,
            plane_shape=default_psf_shape(system),
            plane_pitch_um=system.sensor.pitch_um,
        )

    names, psnrs, ssims, sams = [], [], [], []
    for path in paths:
        try:
            raw = read_cube(path)
        except (BadMagic, TruncatedFile, SizeMismatch, OSError) as exc:
            raise UnreadableCube(f"{path}: {exc}") from exc
        truth = resample_cube(raw, system.grid)
        snapshot = render_snapshot(truth, system, rng_seed=seed, stack=stack)
        scene = BenchmarkScene(
            path.name, truth, snapshot, system, stack, seed, steps, guidance_iters
        )
        estimate = fn(scene)
        names.append(path.name)
        psnrs.append(psnr(truth.data, estimate.data))
        ssims.append(ssim(truth.data, estimate.data))
        sams.append(sam(truth.data, estimate.data))

    digest = config_hash(
        {
            "reconstructor": reconstructor_id,
            "seed": seed,
            "steps": steps,
            "guidance_iters": guidance_iters,
            "n_channels": system.n_channels,
            "wavelengths_nm": [float(w) for w in system.grid.wavelengths_nm],
            "scenes": names,
        }
    )
    return MetricReport(
        tuple(names), tuple(psnrs), tuple(ssims), tuple(sams), digest, seed
    )


def _json_number(value: float):
    return float(value) if math.isfinite(value) else "inf"


def report_to_json(report: MetricReport, path) -> None:
    doc = {
        "config": report.config_digest,
        "seed": report.seed,
        "detail": report.detail,
        "scenes": [
            {
                "name": name,
                "psnr_db": _json_number(p),
                "ssim": _json_number(s),
                "sam_rad": _json_number(a),
            }
            for name, p, s, a in zip(
                report.scene_names, report.psnr_db, report.ssim_values, report.sam_rad
            )
        ],
        "mean": {
            "psnr_db": _json_number(report.mean_psnr_db),
            "ssim": _json_number(report.mean_ssim),
            "sam_rad": _json_number(report.mean_sam_rad),
        },
    }
    if report.dynamic_range_db is not None:
        doc["dynamic_range_db"] = _json_number(report.dynamic_range_db)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def report_to_csv(report: MetricReport, path) -> None:
    lines = ["scene,psnr_db,ssim,sam_rad"]
    rows = zip(
        report.scene_names, report.psnr_db, report.ssim_values, report.sam_rad
    )
    for name, p, s, a in rows:
        lines.append(f"{name},{repr(float(p))},{repr(float(s))},{repr(float(a))}")
    lines.append(
        "mean,"
        f"{repr(report.mean_psnr_db)},{repr(report.mean_ssim)},"
        f"{repr(report.mean_sam_rad)}"
    )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
