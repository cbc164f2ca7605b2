"""Binary cube/PSF containers, 16-bit image export, run configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .calibration import Homography, SpectralResponse
from .domain import HyperspectralCube, SpectralGrid, SystemConfig
from .errors import BadMagic, ConfigError, SizeMismatch, TruncatedFile
from .propagation import PSFStack, centroid
from . import presets

__all__ = [
    "read_cube",
    "write_cube",
    "read_plane",
    "write_plane",
    "read_psf_stack",
    "write_psf_stack",
    "read_image_16bit",
    "write_image_16bit",
    "write_subimage",
    "read_homography_json",
    "write_homography_json",
    "read_response_csv",
    "write_response_csv",
    "write_centroid_csv",
    "write_radius_csv",
    "RunConfig",
    "load_run_config",
    "build_system",
    "config_hash",
]

_HSC_MAGIC = b"HSC1"
_PSF_MAGIC = b"PSF1"
_VERSION = 1


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) < n:
        raise TruncatedFile(f"file ends inside {what} ({len(buf)}/{n} bytes)")
    return buf


def _check_no_trailing(fh) -> None:
    if fh.read(1):
        raise SizeMismatch("payload longer than the header declares")


# ---------------------------------------------------------------------------
# HSC1 hyperspectral cubes


def write_cube(cube: HyperspectralCube, path) -> None:
    """Serialize a cube: HSC1 header, wavelengths, then (row, col, band) f32."""
    rows, cols, bands = cube.data.shape
    with open(path, "wb") as fh:
        fh.write(_HSC_MAGIC)
        fh.write(struct.pack("<IIII", _VERSION, rows, cols, bands))
        fh.write(struct.pack("<f", float(cube.pitch_um)))
        fh.write(cube.grid.wavelengths_nm.astype("<f4").tobytes())
        fh.write(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())


def _read_hsc_payload(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _HSC_MAGIC:
            raise BadMagic(f"expected {_HSC_MAGIC!r}, found {magic!r}")
        version, rows, cols, bands = struct.unpack(
            "<IIII", _read_exact(fh, 16, "header")
        )
        if version != _VERSION:
            raise BadMagic(f"unsupported cube version {version}")
        if rows == 0 or cols == 0 or bands == 0:
            raise SizeMismatch("header declares an empty cube")
        (pitch_um,) = struct.unpack("<f", _read_exact(fh, 4, "header"))
        wavelengths = np.frombuffer(
            _read_exact(fh, 4 * bands, "wavelength table"), dtype="<f4"
        ).astype(float)
        data = np.frombuffer(
            _read_exact(fh, 4 * rows * cols * bands, "sample payload"), dtype="<f4"
        ).astype(float)
        _check_no_trailing(fh)
    return data.reshape(rows, cols, bands), wavelengths, float(pitch_um)


def read_cube(path) -> HyperspectralCube:
    """Load an HSC1 cube; needs at least two bands to define a grid."""
    data, wavelengths, pitch_um = _read_hsc_payload(path)
    if data.shape[2] < 2:
        raise SizeMismatch("single-band file: use read_plane for radiance maps")
    return HyperspectralCube(data, SpectralGrid(wavelengths), pitch_um)


def write_plane(plane, wavelength_nm: float, pitch_um: float, path) -> None:
    """Store a single 2-D map as a one-band HSC1 file."""
    p = np.asarray(plane, dtype=float)
    if p.ndim != 2:
        raise ValueError("plane must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_HSC_MAGIC)
        fh.write(struct.pack("<IIII", _VERSION, p.shape[0], p.shape[1], 1))
        fh.write(struct.pack("<f", float(pitch_um)))
        fh.write(np.asarray([wavelength_nm], dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def read_plane(path):
    """Load a one-band HSC1 file as (plane, wavelength_nm, pitch_um)."""
    data, wavelengths, pitch_um = _read_hsc_payload(path)
    if data.shape[2] != 1:
        raise SizeMismatch(f"expected a single band, found {data.shape[2]}")
    return data[:, :, 0], float(wavelengths[0]), pitch_um


# ---------------------------------------------------------------------------
# PSF1 point-spread stacks


def write_psf_stack(stack: PSFStack, path) -> None:
    """Serialize a PSF stack with its complex efficiency chain."""
    channels, bands, rows, cols = stack.psfs.shape
    chain = np.empty((channels, bands, 2))
    chain[:, :, 0] = stack.chain.real
    chain[:, :, 1] = stack.chain.imag
    with open(path, "wb") as fh:
        fh.write(_PSF_MAGIC)
        fh.write(struct.pack("<IIIII", _VERSION, channels, bands, rows, cols))
        fh.write(struct.pack("<f", float(stack.pitch_um)))
        fh.write(stack.grid.wavelengths_nm.astype("<f4").tobytes())
        fh.write(np.ascontiguousarray(chain, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(stack.psfs, dtype="<f4").tobytes())


def read_psf_stack(path) -> PSFStack:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _PSF_MAGIC:
            raise BadMagic(f"expected {_PSF_MAGIC!r}, found {magic!r}")
        version, channels, bands, rows, cols = struct.unpack(
            "<IIIII", _read_exact(fh, 20, "header")
        )
        if version != _VERSION:
            raise BadMagic(f"unsupported psf version {version}")
        (pitch_um,) = struct.unpack("<f", _read_exact(fh, 4, "header"))
        wavelengths = np.frombuffer(
            _read_exact(fh, 4 * bands, "wavelength table"), dtype="<f4"
        ).astype(float)
        raw_chain = np.frombuffer(
            _read_exact(fh, 4 * channels * bands * 2, "efficiency chain"), dtype="<f4"
        ).astype(float)
        raw = np.frombuffer(
            _read_exact(fh, 4 * channels * bands * rows * cols, "psf payload"),
            dtype="<f4",
        ).astype(float)
        _check_no_trailing(fh)
    chain = raw_chain.reshape(channels, bands, 2)
    return PSFStack(
        raw.reshape(channels, bands, rows, cols),
        SpectralGrid(wavelengths),
        float(pitch_um),
        chain[:, :, 0] + 1j * chain[:, :, 1],
    )


# ---------------------------------------------------------------------------
# 16-bit portable graymap / pixmap


def write_image_16bit(path, pixels) -> None:
    """Write a [0, 1] image as 16-bit P5 (2-D) or P6 ((3, rows, cols))."""
    p = np.asarray(pixels, dtype=float)
    quant = np.rint(np.clip(p, 0.0, 1.0) * 65535.0).astype(">u2")
    if p.ndim == 2:
        magic, payload = b"P5", quant
        rows, cols = p.shape
    elif p.ndim == 3 and p.shape[0] == 3:
        magic, payload = b"P6", np.moveaxis(quant, 0, 2)
        rows, cols = p.shape[1:]
    else:
        raise ValueError("pixels must be 2-D or (3, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n65535\n" % (cols, rows))
        fh.write(np.ascontiguousarray(payload).tobytes())


def _read_header_token(fh) -> bytes:
    token = b""
    while True:
        c = fh.read(1)
        if not c:
            raise TruncatedFile("file ends inside the image header")
        if c == b"#":
            while c and c != b"\n":
                c = fh.read(1)
            continue
        if c.isspace():
            if token:
                return token
            continue
        token += c


def read_image_16bit(path) -> np.ndarray:
    """Load a 16-bit P5/P6 file back to floats in [0, 1]."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic not in (b"P5", b"P6"):
            raise BadMagic(f"expected P5 or P6, found {magic!r}")
        cols = int(_read_header_token(fh))
        rows = int(_read_header_token(fh))
        maxval = int(_read_header_token(fh))
        if maxval != 65535:
            raise SizeMismatch(f"expected 16-bit data, maxval is {maxval}")
        n_values = rows * cols * (3 if magic == b"P6" else 1)
        raw = np.frombuffer(
            _read_exact(fh, 2 * n_values, "pixel payload"), dtype=">u2"
        )
        _check_no_trailing(fh)
    scaled = raw.astype(float) / 65535.0
    if magic == b"P6":
        return np.moveaxis(scaled.reshape(rows, cols, 3), 2, 0)
    return scaled.reshape(rows, cols)


def write_subimage(sub, path, extra: dict | None = None) -> str:
    """Write a channel readout plus a JSON sidecar of its capture settings."""
    pixels = sub.pixels
    if pixels.ndim == 3 and pixels.shape[0] == 1:
        pixels = pixels[0]
    write_image_16bit(path, pixels)
    sidecar = {
        "channel": int(sub.channel_index),
        "gain": float(sub.gain),
        "exposure_s": float(sub.exposure_s),
    }
    if extra:
        sidecar.update(extra)
    sidecar_path = str(path) + ".json"
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return sidecar_path


# ---------------------------------------------------------------------------
# small text artifacts


def write_homography_json(homography: Homography, path) -> None:
    flat = [float(v) for v in np.asarray(homography.matrix).ravel()]
    with open(path, "w") as fh:
        json.dump({"homography": flat}, fh, indent=2)
        fh.write("\n")


def read_homography_json(path) -> Homography:
    with open(path) as fh:
        doc = json.load(fh)
    flat = doc.get("homography")
    if not isinstance(flat, list) or len(flat) != 9:
        raise ConfigError("homography file must hold a 9-element row-major list")
    return Homography(np.asarray(flat, dtype=float).reshape(3, 3))


def write_response_csv(response: SpectralResponse, path) -> None:
    channels = response.alpha.shape[0]
    header = "lambda_nm," + ",".join(f"alpha_{i + 1}" for i in range(channels))
    lines = [header]
    for b, lam in enumerate(response.grid.wavelengths_nm):
        row = [repr(float(lam))] + [
            repr(float(response.alpha[i, b])) for i in range(channels)
        ]
        lines.append(",".join(row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_response_csv(path) -> SpectralResponse:
    with open(path, newline="") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 3:
        raise ConfigError("response table needs a header and at least two bands")
    table = np.asarray(
        [[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float
    )
    return SpectralResponse(table[:, 1:].T, SpectralGrid(table[:, 0]))


def write_radius_csv(radius_map, path) -> None:
    """One row per nanocell: grid position and the chosen pillar radius."""
    lines = ["row,col,radius_nm"]
    radii = radius_map.radii_nm
    for r in range(radii.shape[0]):
        for c in range(radii.shape[1]):
            lines.append(f"{r},{c},{repr(float(radii[r, c]))}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_centroid_csv(stack: PSFStack, path) -> None:
    """One row per (channel, band): the PSF plane's centroid in pixels."""
    lines = ["channel,lambda_nm,row_px,col_px"]
    for i in range(stack.n_channels):
        for b, lam in enumerate(stack.grid.wavelengths_nm):
            r, c = centroid(stack.psfs[i, b])
            lines.append(
                ",".join(
                    [str(i), repr(float(lam)), repr(float(r)), repr(float(c))]
                )
            )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# run configuration

_PRESETS = {
    "prototype": presets.prototype_system,
    "desk": presets.desk_system,
    "toy": presets.toy_system,
}
_OPTION_KEYS = ("gain", "exposure_s", "noise_sigma")


@dataclass(frozen=True)
class RunConfig:
    """Validated pipeline configuration: a named preset plus overrides."""

    preset: str
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.preset not in _PRESETS:
            raise ConfigError(
                f"unknown preset {self.preset!r}; choose from {sorted(_PRESETS)}"
            )
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        opts = dict(self.options)
        for key, value in opts.items():
            if key not in _OPTION_KEYS:
                raise ConfigError(
                    f"unknown option {key!r}; choose from {_OPTION_KEYS}"
                )
            if not isinstance(value, (int, float)) or not np.isfinite(value):
                raise ConfigError(f"option {key!r} must be a finite number")
            if key == "noise_sigma":
                if value < 0:
                    raise ConfigError("noise_sigma must be >= 0")
            elif value <= 0:
                raise ConfigError(f"option {key!r} must be positive")
        object.__setattr__(self, "options", opts)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - {"preset", "seed", "options"})
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    if "preset" not in doc:
        raise ConfigError("config needs a 'preset' key")
    options = doc.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("'options' must be a JSON object")
    return RunConfig(doc["preset"], doc.get("seed", 0), options)


def build_system(config: RunConfig) -> SystemConfig:
    """Instantiate the configured preset with any sensor overrides applied."""
    system = _PRESETS[config.preset]()
    sensor = system.sensor
    updates = {}
    if "gain" in config.options:
        updates["gain"] = float(config.options["gain"])
    if "exposure_s" in config.options:
        updates["exposure_s"] = float(config.options["exposure_s"])
    if "noise_sigma" in config.options:
        updates["sigma"] = float(config.options["noise_sigma"])
    if updates:
        sensor = dataclasses.replace(sensor, **updates)
        system = dataclasses.replace(system, sensor=sensor)
    return system


def config_hash(payload: dict) -> str:
    """SHA-256 of the canonical JSON encoding, for report provenance."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
