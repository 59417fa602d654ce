"""Plain-text header + raw binary raster files.

A raster is stored as ``<stem>.hdr`` (``key = value`` lines) next to a raw
data file (``data_file`` key, default ``<stem>.raw``).  Multi-band data are
band-sequential: band-major, then line, then sample.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

DTYPES = {"f32": np.dtype("<f4"), "u16": np.dtype("<u2"), "u8": np.dtype("u1")}
REQUIRED_KEYS = ("lines", "samples", "bands", "interleave", "dtype", "byteorder", "units")


class FormatError(ValueError):
    """Malformed header or data file."""


def parse_header(path: str | os.PathLike) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"header not found: {path}")
    meta: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        meta[key.strip().lower()] = value.strip()
    return meta


def _int_key(meta: dict[str, str], key: str, path) -> int:
    try:
        value = int(meta[key])
    except KeyError:
        raise FormatError(f"{path}: missing header key {key!r}") from None
    except ValueError:
        raise FormatError(f"{path}: header key {key!r} is not an integer: {meta[key]!r}") from None
    if value <= 0:
        raise FormatError(f"{path}: header key {key!r} must be positive, got {value}")
    return value


def read_raster(header_path: str | os.PathLike) -> tuple[np.ndarray, dict[str, str]]:
    """Read a raster; returns data indexed (line, sample, band) and the header dict."""
    header_path = Path(header_path)
    meta = parse_header(header_path)
    for key in REQUIRED_KEYS:
        if key not in meta:
            raise FormatError(f"{header_path}: missing header key {key!r}")
    lines = _int_key(meta, "lines", header_path)
    samples = _int_key(meta, "samples", header_path)
    bands = _int_key(meta, "bands", header_path)
    if meta["interleave"].lower() != "bsq":
        raise FormatError(f"{header_path}: unsupported interleave {meta['interleave']!r} (only bsq)")
    if meta["byteorder"].lower() != "little":
        raise FormatError(f"{header_path}: unsupported byteorder {meta['byteorder']!r} (only little)")
    dtype_name = meta["dtype"].lower()
    if dtype_name not in DTYPES:
        raise FormatError(f"{header_path}: unsupported dtype {dtype_name!r}")
    dtype = DTYPES[dtype_name]

    data_path = header_path.parent / meta.get("data_file", header_path.with_suffix(".raw").name)
    if not data_path.exists():
        raise FileNotFoundError(f"data file not found: {data_path}")
    expected = lines * samples * bands * dtype.itemsize
    actual = data_path.stat().st_size
    if actual != expected:
        raise FormatError(
            f"{data_path}: size mismatch, expected {expected} bytes "
            f"({lines}x{samples}x{bands} {dtype_name}), got {actual}"
        )
    flat = np.fromfile(data_path, dtype=dtype)
    data = flat.reshape(bands, lines, samples).transpose(1, 2, 0)
    return np.ascontiguousarray(data), meta


def write_raster(header_path: str | os.PathLike, data: np.ndarray, dtype: str,
                 units: str, extra: dict[str, str] | None = None) -> Path:
    """Write ``data`` (lines x samples [x bands]) as header + band-sequential raw."""
    header_path = Path(header_path)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3:
        raise FormatError(f"raster must be 2-D or 3-D, got shape {data.shape}")
    lines, samples, bands = data.shape
    data_path = header_path.with_suffix(".raw")
    header_path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(data.transpose(2, 0, 1), dtype=DTYPES[dtype])
    arr.tofile(data_path)
    meta = {
        "lines": str(lines),
        "samples": str(samples),
        "bands": str(bands),
        "interleave": "bsq",
        "dtype": dtype,
        "byteorder": "little",
        "units": units,
        "data_file": data_path.name,
    }
    meta.update(extra or {})
    header_path.write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))
    return header_path


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    """Key-value text file (``key = value`` or ``key=value``), comments with #."""
    return parse_header(path)


def write_kv(path: str | os.PathLike, values: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path
