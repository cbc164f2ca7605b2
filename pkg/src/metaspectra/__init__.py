"""Simulation, calibration, and reconstruction toolkit for a metasurface
snapshot hyperspectral camera."""

from .calibration import (
    Homography,
    SpectralResponse,
    estimate_homography,
    response_sweep,
    simulate_calibration_capture,
    spectral_response,
    warp_subimage,
)
from .domain import (
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
    validate_cube,
)
from .errors import MetaspectraError
from .io import (
    RunConfig,
    build_system,
    config_hash,
    load_run_config,
    read_cube,
    read_image_16bit,
    read_psf_stack,
    write_cube,
    write_image_16bit,
    write_psf_stack,
)
from .metasurface import (
    DiffractionSpectrum,
    InterleaveArtifactReport,
    NanocellLibrary,
    RadiusMap,
    default_deflection_vectors,
    diffraction_orders,
    interleave_artifact_report,
    interleave_random,
    interleave_regular,
    linear_phase_profile,
    nanocell_lookup,
    order_coefficient,
)
from .metrics import (
    MetricReport,
    benchmark_run,
    psnr,
    register_reconstructor,
    sam,
    ssim,
)
from .presets import desk_system, prototype_system, toy_system
from .propagation import (
    PSFStack,
    PupilFunction,
    angular_spectrum_propagate,
    brute_force_psf,
    centroid,
    disc_pupil,
    predicted_shift,
    psf_stack,
    synthesize_psf,
    thin_lens_phase,
)
from .reconstruction import (
    DiffusionSchedule,
    OracleDenoiser,
    RenderOperator,
    SmootherDenoiser,
    dolp_hv,
    estimate_noise_sigma,
    fit_scale_offset,
    hdr_fuse,
    reconstruct_guided,
    recover_response_exponent,
    wiener_deconvolve,
)
from .renderer import (
    Snapshot,
    SubImage,
    channel_efficiency,
    render_snapshot,
    render_subimage,
    sample_noise_sigma,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "MetaspectraError",
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
    "PupilFunction",
    "PSFStack",
    "disc_pupil",
    "angular_spectrum_propagate",
    "thin_lens_phase",
    "predicted_shift",
    "synthesize_psf",
    "brute_force_psf",
    "psf_stack",
    "centroid",
    "prototype_system",
    "desk_system",
    "toy_system",
    "SubImage",
    "Snapshot",
    "channel_efficiency",
    "render_subimage",
    "render_snapshot",
    "sample_noise_sigma",
    "Homography",
    "SpectralResponse",
    "estimate_homography",
    "warp_subimage",
    "spectral_response",
    "simulate_calibration_capture",
    "response_sweep",
    "DiffusionSchedule",
    "OracleDenoiser",
    "SmootherDenoiser",
    "RenderOperator",
    "estimate_noise_sigma",
    "wiener_deconvolve",
    "fit_scale_offset",
    "reconstruct_guided",
    "hdr_fuse",
    "recover_response_exponent",
    "dolp_hv",
    "psnr",
    "ssim",
    "sam",
    "MetricReport",
    "benchmark_run",
    "register_reconstructor",
    "RunConfig",
    "load_run_config",
    "build_system",
    "config_hash",
    "read_cube",
    "write_cube",
    "read_psf_stack",
    "write_psf_stack",
    "read_image_16bit",
    "write_image_16bit",
]
