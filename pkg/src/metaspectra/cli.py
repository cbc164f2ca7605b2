"""Command-line pipeline: surface design through reconstruction scoring."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io as artifacts
from .calibration import estimate_homography, response_sweep
from .domain import resample_cube
from .errors import MetaspectraError
from .metasurface import (
    beamsplitter_subprofiles,
    ideal_phase_library,
    interleave_artifact_report,
    interleave_regular,
    nanocell_lookup,
)
from .metrics import benchmark_run, psnr, report_to_csv, report_to_json
from .propagation import psf_stack
from .reconstruction import (
    DiffusionSchedule,
    OracleDenoiser,
    SmootherDenoiser,
    dolp_hv,
    hdr_fuse,
    reconstruct_guided,
)
from .renderer import default_psf_shape, render_snapshot

__all__ = ["main"]


def _load_system(args):
    config = artifacts.load_run_config(args.config)
    return config, artifacts.build_system(config)


def _load_stack(args, system):
    if getattr(args, "psf", None):
        return artifacts.read_psf_stack(args.psf)
    return psf_stack(
        system,
        plane_shape=default_psf_shape(system),
        plane_pitch_um=system.sensor.pitch_um,
    )


def _seed(args, config) -> int:
    return config.seed if args.seed is None else args.seed


# ---------------------------------------------------------------------------
# stages


def cmd_design(args) -> int:
    _, system = _load_system(args)
    library = ideal_phase_library(args.levels, system.grid)
    cell_um = library.cell_width_nm / 1000.0
    profiles = beamsplitter_subprofiles(system.channels, args.extent_mm, cell_um)
    combined = interleave_regular(profiles)
    radius_map = nanocell_lookup(combined, library)
    artifacts.write_radius_csv(radius_map, args.out)
    if args.library:
        from .metasurface import library_to_csv

        library_to_csv(library, args.library)
    rows, cols = radius_map.radii_nm.shape
    print(
        f"design: {rows}x{cols} cells, {args.levels} levels, radii "
        f"{radius_map.radii_nm.min():.0f}-{radius_map.radii_nm.max():.0f} nm "
        f"-> {args.out}"
    )
    return 0


def cmd_psf(args) -> int:
    _, system = _load_system(args)
    shape = (args.size, args.size) if args.size else default_psf_shape(system)
    pitch = args.pitch_um if args.pitch_um else system.sensor.pitch_um
    stack = psf_stack(system, plane_shape=shape, plane_pitch_um=pitch)
    artifacts.write_psf_stack(stack, args.out)
    if args.centroids:
        artifacts.write_centroid_csv(stack, args.centroids)
    print(
        f"psf: {stack.n_channels} channels x {stack.n_bands} bands at "
        f"{shape[0]}x{shape[1]} px, {pitch} um pitch -> {args.out}"
    )
    return 0


def cmd_render(args) -> int:
    config, system = _load_system(args)
    seed = _seed(args, config)
    scene = resample_cube(artifacts.read_cube(args.scene), system.grid)
    stack = _load_stack(args, system)
    snapshot = render_snapshot(
        scene, system, rng_seed=seed, noiseless=args.noiseless, stack=stack
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = ".pgm" if system.sensor.eta.shape[0] == 1 else ".ppm"
    for sub in snapshot.sub_images:
        artifacts.write_subimage(
            sub,
            out_dir / f"channel_{sub.channel_index}{suffix}",
            extra={"seed": seed, "sigma": system.sensor.sigma},
        )
    print(
        f"render: {len(snapshot.sub_images)} channels from {args.scene} "
        f"seed {seed} -> {out_dir}"
    )
    return 0


def _read_points(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                if rows:
                    raise
                continue  # header line
    table = np.asarray(rows, dtype=float)
    if table.ndim != 2 or table.shape[1] != 4:
        raise ValueError("points file needs x_src,y_src,x_dst,y_dst rows")
    return table.reshape(-1, 2, 2)


def cmd_calibrate(args) -> int:
    if not args.response and not args.points:
        print("calibrate: give --response and/or --points", file=sys.stderr)
        return 2
    _, system = _load_system(args)
    parts = []
    if args.response:
        stack = _load_stack(args, system)
        response = response_sweep(system, stack=stack)
        artifacts.write_response_csv(response, args.response)
        peaks = "/".join(f"{p:.0f}" for p in response.peak_wavelengths_nm())
        parts.append(f"response peaks {peaks} nm -> {args.response}")
    if args.points:
        if not args.homography:
            print("calibrate: --points needs --homography", file=sys.stderr)
            return 2
        pairs = _read_points(args.points)
        h = estimate_homography(pairs, robust=args.robust)
        artifacts.write_homography_json(h, args.homography)
        mapped = h.apply(pairs[:, 0])
        err = float(np.median(np.linalg.norm(mapped - pairs[:, 1], axis=1)))
        parts.append(
            f"homography from {len(pairs)} points, median error "
            f"{err:.3g} px -> {args.homography}"
        )
    print("calibrate: " + "; ".join(parts))
    return 0


def cmd_reconstruct(args) -> int:
    config, system = _load_system(args)
    seed = _seed(args, config)
    truth = resample_cube(artifacts.read_cube(args.scene), system.grid)
    stack = _load_stack(args, system)
    snapshot = render_snapshot(truth, system, rng_seed=seed, stack=stack)
    schedule = DiffusionSchedule()
    if args.denoiser == "oracle":
        denoiser = OracleDenoiser(truth, schedule)
    else:
        denoiser = SmootherDenoiser(schedule)
    cube = reconstruct_guided(
        snapshot,
        denoiser,
        steps=args.steps,
        guidance_iters=args.guidance_iters,
        seed=seed,
        schedule=schedule,
        stack=stack,
        diagnostics_path=args.diagnostics,
    )
    artifacts.write_cube(cube, args.out)
    score = psnr(truth.data, cube.data)
    shown = "inf" if math.isinf(score) else f"{score:.2f}"
    print(
        f"reconstruct: {args.denoiser} denoiser, {args.steps} steps, "
        f"PSNR {shown} dB -> {args.out}"
    )
    return 0


def cmd_hdr(args) -> int:
    low = artifacts.read_image_16bit(args.low)
    high = artifacts.read_image_16bit(args.high)
    radiance, valid, dr_fused = hdr_fuse(low, high, args.ratio)
    _, _, dr_single = hdr_fuse(high, high, 1.0)
    artifacts.write_plane(radiance, 0.0, 1.0, args.out)
    extra = dr_fused - dr_single
    print(
        f"hdr: fused DR {dr_fused:.2f} dB, {extra:+.2f} dB over the brighter "
        f"frame, {int(valid.sum())}/{valid.size} px valid -> {args.out}"
    )
    return 0


def cmd_dolp(args) -> int:
    i3 = artifacts.read_image_16bit(args.i3)
    i4 = artifacts.read_image_16bit(args.i4)
    ratio = dolp_hv(i3, i4)
    artifacts.write_plane(ratio, 0.0, 1.0, args.out)
    print(
        f"dolp: mean {float(ratio.mean()):.3f}, max {float(ratio.max()):.3f} "
        f"-> {args.out}"
    )
    return 0


def cmd_bench(args) -> int:
    config, system = _load_system(args)
    seed = _seed(args, config)
    stack = _load_stack(args, system)
    report = benchmark_run(
        args.dataset,
        system,
        args.reconstructor,
        seed=seed,
        stack=stack,
        steps=args.steps,
        guidance_iters=args.guidance_iters,
    )
    report_to_json(report, args.out)
    if args.csv:
        report_to_csv(report, args.csv)
    print(
        f"bench: {len(report.scene_names)} scenes, mean PSNR "
        f"{report.mean_psnr_db:.2f} dB, SSIM {report.mean_ssim:.4f}, "
        f"SAM {report.mean_sam_rad:.4f} rad -> {args.out}"
    )
    failures = []
    if args.min_psnr is not None:
        failures += [n for n, p in zip(report.scene_names, report.psnr_db)
                     if p < args.min_psnr]
    if args.min_ssim is not None:
        failures += [n for n, s in zip(report.scene_names, report.ssim_values)
                     if s < args.min_ssim]
    if args.max_sam is not None:
        failures += [n for n, a in zip(report.scene_names, report.sam_rad)
                     if a > args.max_sam]
    if failures:
        print(
            f"bench: {len(failures)} threshold failure(s): "
            + ", ".join(sorted(set(failures))),
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_interleave_analyze(args) -> int:
    _, system = _load_system(args)
    extent_mm = args.grid_size * args.pitch_um / 1000.0
    profiles = beamsplitter_subprofiles(system.channels, extent_mm, args.pitch_um)
    report = interleave_artifact_report(
        profiles, lambda_nm=args.lambda_nm, rng_seed=args.seed
    )
    doc = {
        "grid_size": report.grid_size,
        "pitch_um": report.pitch_um,
        "lambda_nm": report.lambda_nm,
        "carrier_bins": [list(b) for b in report.carrier_bins],
        "carrier_power_regular": report.carrier_power_regular,
        "carrier_power_random": report.carrier_power_random,
        "replica_peak_power": report.replica_peak_power,
        "spurious_peak_power": report.spurious_peak_power,
        "power_ratio": report.power_ratio,
    }
    with open(args.out, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(
        f"interleave: replica {report.replica_peak_power:.3e}, spurious "
        f"{report.spurious_peak_power:.3e}, ratio {report.power_ratio:.0f}x "
        f"-> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# argument surface


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metaspectra",
        description="Multichannel metasurface camera simulation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", metavar="stage")

    def stage(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        return p

    p = stage("design", cmd_design, "choose nanopillar radii for the beamsplitter")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--extent-mm", type=float, default=0.03)
    p.add_argument("--levels", type=int, default=16)
    p.add_argument("--library", default=None)

    p = stage("psf", cmd_psf, "synthesize the per-channel PSF stack")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--centroids", default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--pitch-um", type=float, default=None)

    p = stage("render", cmd_render, "simulate one multichannel capture")
    p.add_argument("--config", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--psf", default=None)

    p = stage("calibrate", cmd_calibrate, "spectral response and registration")
    p.add_argument("--config", required=True)
    p.add_argument("--response", default=None)
    p.add_argument("--psf", default=None)
    p.add_argument("--points", default=None)
    p.add_argument("--homography", default=None)
    p.add_argument("--robust", action="store_true")

    p = stage("reconstruct", cmd_reconstruct, "guided reconstruction of a scene")
    p.add_argument("--config", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--denoiser", choices=("smoother", "oracle"), default="smoother")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--guidance-iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--psf", default=None)
    p.add_argument("--diagnostics", default=None)

    p = stage("hdr", cmd_hdr, "fuse an exposure bracket into radiance")
    p.add_argument("--low", required=True)
    p.add_argument("--high", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--out", required=True)

    p = stage("dolp", cmd_dolp, "degree of linear polarization map")
    p.add_argument("--i3", required=True)
    p.add_argument("--i4", required=True)
    p.add_argument("--out", required=True)

    p = stage("bench", cmd_bench, "score a reconstructor over a cube dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--reconstructor", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--guidance-iters", type=int, default=5)
    p.add_argument("--psf", default=None)
    p.add_argument("--min-psnr", type=float, default=None)
    p.add_argument("--min-ssim", type=float, default=None)
    p.add_argument("--max-sam", type=float, default=None)

    p = stage(
        "interleave-analyze",
        cmd_interleave_analyze,
        "compare regular and random interleaving artifacts",
    )
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-size", type=int, default=512)
    p.add_argument("--pitch-um", type=float, default=0.5)
    p.add_argument("--lambda-nm", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "fn", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (MetaspectraError, OSError, ValueError) as exc:
        print(f"metaspectra: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
