"""Raw + JSON sidecar container for volumes and fields, run manifests, and the
small text/binary outputs of the command-line tools.

A volume ``name.json`` holds the header; the payload named in it is the dense
array with x fastest, then y, then z, channels interleaved per voxel, stored
little-endian as ``f32`` or ``f64``.
"""
from __future__ import annotations

import hashlib
import io as _io
import json
import sys
from pathlib import Path

import numpy as np

from .volume import DisplacementField, GridMeta, Volume

FORMAT = "gcreg-volume"
FORMAT_VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class FormatError(ValueError):
    """Raised for malformed headers or payloads."""


def _paths(path) -> tuple[Path, Path]:
    """Header and default payload paths for ``path`` (with or without suffix)."""
    path = Path(path)
    if path.suffix in (".json", ".raw"):
        path = path.with_suffix("")
    return path.with_suffix(".json"), path.with_suffix(".raw")


def _dtype_name(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise FormatError(f"unsupported dtype {arr.dtype}; expected float32 or float64")


def write_volume(path, vol: Volume, *, dtype: str | None = None) -> Path:
    """Write ``vol`` as ``<path>.json`` plus ``<path>.raw``; returns the header path.

    ``dtype`` defaults to the array's own precision so the round trip is exact.
    """
    header_path, payload_path = _paths(path)
    name = dtype or _dtype_name(vol.data)
    if name not in _DTYPES:
        raise FormatError(f"unsupported dtype {name!r}; expected one of {sorted(_DTYPES)}")
    header = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "dims": list(vol.meta.dims),
        "spacing": [float(s) for s in vol.meta.spacing],
        "channels": vol.meta.channels,
        "dtype": name,
        "byte_order": "little",
        "payload": payload_path.name,
    }
    payload_path.write_bytes(np.ascontiguousarray(vol.data, _DTYPES[name]).tobytes())
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    return header_path


def _read_header(header_path: Path) -> dict:
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{header_path}: header is not valid JSON ({exc})") from None
    if not isinstance(header, dict):
        raise FormatError(f"{header_path}: header must be a JSON object")
    missing = [k for k in ("dims", "spacing", "channels", "dtype", "byte_order", "payload")
               if k not in header]
    if missing:
        raise FormatError(f"{header_path}: header lacks {', '.join(missing)}")
    if header["dtype"] not in _DTYPES:
        raise FormatError(f"{header_path}: unsupported dtype {header['dtype']!r}")
    if header["byte_order"] != "little":
        raise FormatError(f"{header_path}: unsupported byte order {header['byte_order']!r}")
    dims, spacing = header["dims"], header["spacing"]
    if (not isinstance(dims, list) or len(dims) != 3
            or not all(isinstance(d, int) and d >= 1 for d in dims)):
        raise FormatError(f"{header_path}: dims must be three positive integers")
    if (not isinstance(spacing, list) or len(spacing) != 3
            or not all(isinstance(s, (int, float)) and s > 0 for s in spacing)):
        raise FormatError(f"{header_path}: spacing must be three positive numbers")
    if not isinstance(header["channels"], int) or header["channels"] < 1:
        raise FormatError(f"{header_path}: channels must be a positive integer")
    return header


def read_volume(path) -> Volume:
    """Read a volume written by :func:`write_volume`."""
    header_path, _ = _paths(path)
    header = _read_header(header_path)
    dtype = _DTYPES[header["dtype"]]
    meta = GridMeta(tuple(header["dims"]), tuple(float(s) for s in header["spacing"]),
                    header["channels"])
    payload = (header_path.parent / header["payload"]).read_bytes()
    expected = meta.voxel_count * meta.channels * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(
            f"{header_path}: payload has {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype).reshape(meta.shape)
    data = data.astype(dtype.newbyteorder("="))
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{header_path}: payload contains non-finite values")
    return Volume(meta, data)


def write_field(path, field: DisplacementField) -> Path:
    """Fields use the volume container with three ``f64`` channels."""
    return write_volume(path, Volume(field.meta, field.data), dtype="f64")


def read_field(path) -> DisplacementField:
    vol = read_volume(path)
    if vol.meta.channels != 3:
        raise FormatError(f"displacement field needs 3 channels, file has {vol.meta.channels}")
    return DisplacementField(vol.meta, vol.data.astype(np.float64))


def file_digest(path) -> str:
    """sha256 of a volume's header and payload, or of a plain file."""
    path = Path(path)
    h = hashlib.sha256()
    header_path, _ = _paths(path)
    if header_path.exists():
        header = _read_header(header_path)
        h.update(header_path.read_bytes())
        h.update((header_path.parent / header["payload"]).read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def run_mode(block_size: int, direct: bool) -> str:
    if direct:
        return "direct"
    return "icm-equivalent" if block_size == 1 else "blocked"


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def ppm_bytes(rgb: np.ndarray) -> bytes:
    """Binary PPM (P6, maxval 255) encoding of a ``(rows, cols, 3)`` uint8 image."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("expected a (rows, cols, 3) uint8 array")
    rows, cols = rgb.shape[:2]
    return b"P6\n%d %d\n255\n" % (cols, rows) + np.ascontiguousarray(rgb).tobytes()


def write_ppm(path, rgb: np.ndarray) -> None:
    Path(path).write_bytes(ppm_bytes(rgb))


BENCH_HEADER = ("block_size", "time_s", "energy", "vme")


def bench_csv(rows) -> str:
    """CSV text for rows of ``(block_size, time_s, energy, vme)``.

    ``block_size`` is an integer or ``"direct"``; a missing VME is left empty.
    Floats use ``repr`` so values survive a round trip.
    """
    buf = _io.StringIO()
    buf.write(",".join(BENCH_HEADER) + "\n")
    for block, seconds, energy, v in rows:
        cells = [str(block), repr(float(seconds)), repr(float(energy)),
                 "" if v is None else repr(float(v))]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def write_bench_csv(path, rows) -> None:
    text = bench_csv(rows)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
