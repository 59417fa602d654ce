"""Hyperspectral cube container, file I/O and radiometric correction."""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .formats import FormatError, read_raster, write_raster

SENSOR_RANGE_NM = (400.0, 1000.0)
DEFAULT_CLAMP_MAX = 1.5
DEFAULT_RED_NM = 670.0
DEFAULT_NIR_NM = 800.0


class Units(str, enum.Enum):
    DIGITAL_NUMBER = "DigitalNumber"
    REFLECTANCE = "Reflectance"
    # factor scores written back as a cube; not radiometric
    FEATURES = "Features"


@dataclass(frozen=True)
class HyperCube:
    """3-D raster indexed (line, sample, band) with per-band wavelengths in nm."""

    data: np.ndarray
    wavelengths: np.ndarray
    units: Units = Units.DIGITAL_NUMBER

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"cube data must be 3-D (lines, samples, bands), got {data.shape}")
        if wl.ndim != 1 or wl.size != data.shape[2]:
            raise ValueError(f"expected {data.shape[2]} wavelengths, got {wl.size}")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise ValueError("wavelengths must be strictly increasing")
        units = Units(self.units)
        if units is Units.REFLECTANCE and not np.all(np.isfinite(data)):
            raise ValueError("reflectance cube contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "units", units)

    @property
    def lines(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def band_index(self, wavelength_nm: float) -> int:
        """Index of the band whose centre is nearest to ``wavelength_nm``."""
        return int(np.argmin(np.abs(self.wavelengths - wavelength_nm)))


@dataclass(frozen=True)
class ReferencePair:
    """Per-band mean DN of the dark and white targets."""

    dark: np.ndarray
    white: np.ndarray
    white_reflectance: float = 1.0

    def __post_init__(self):
        dark = np.asarray(self.dark, dtype=np.float64)
        white = np.asarray(self.white, dtype=np.float64)
        if dark.shape != white.shape or dark.ndim != 1:
            raise ValueError("dark and white references must be 1-D vectors of equal length")
        bad = np.flatnonzero(white <= dark)
        if bad.size:
            raise ValueError(f"white reference must exceed dark reference; violated at bands {bad[:10].tolist()}")
        if not 0.0 < self.white_reflectance <= 1.0:
            raise ValueError(f"white_reflectance must be in (0, 1], got {self.white_reflectance}")
        object.__setattr__(self, "dark", dark)
        object.__setattr__(self, "white", white)

    @classmethod
    def from_regions(cls, cube: HyperCube, dark_mask: np.ndarray, white_mask: np.ndarray,
                     white_reflectance: float = 1.0) -> "ReferencePair":
        """Average the pixels under boolean masks marking the reference tarps."""
        return cls(cube.data[dark_mask].mean(axis=0), cube.data[white_mask].mean(axis=0),
                   white_reflectance)


def save_cube(header_path: str | os.PathLike, cube: HyperCube) -> Path:
    wl = ",".join(repr(float(w)) for w in cube.wavelengths)
    return write_raster(header_path, cube.data, "f32", cube.units.value, {"wavelengths": wl})


def load_cube(header_path: str | os.PathLike) -> HyperCube:
    data, meta = read_raster(header_path)
    if meta["dtype"] != "f32":
        raise FormatError(f"{header_path}: cube dtype must be f32, got {meta['dtype']!r}")
    if "wavelengths" not in meta:
        raise FormatError(f"{header_path}: missing header key 'wavelengths'")
    try:
        wl = np.array([float(v) for v in meta["wavelengths"].split(",")])
    except ValueError:
        raise FormatError(f"{header_path}: garbled wavelengths list") from None
    if wl.size != data.shape[2]:
        raise FormatError(f"{header_path}: {wl.size} wavelengths for {data.shape[2]} bands")
    if wl.size > 1 and not np.all(np.diff(wl) > 0):
        raise FormatError(f"{header_path}: wavelengths are not strictly ascending")
    try:
        units = Units(meta["units"])
    except ValueError:
        raise FormatError(f"{header_path}: unknown units {meta['units']!r}") from None
    return HyperCube(data, wl, units)


def save_references(path: str | os.PathLike, refs: ReferencePair) -> Path:
    path = Path(path)
    rows = ["# band dark white"]
    rows += [f"{b} {float(d)!r} {float(w)!r}" for b, (d, w) in enumerate(zip(refs.dark, refs.white))]
    path.write_text(f"white_reflectance = {float(refs.white_reflectance)!r}\n" + "\n".join(rows) + "\n")
    return path


def load_references(path: str | os.PathLike) -> ReferencePair:
    white_reflectance = 1.0
    dark, white = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("white_reflectance"):
            white_reflectance = float(line.split("=", 1)[1])
            continue
        _, d, w = line.split()
        dark.append(float(d))
        white.append(float(w))
    return ReferencePair(np.array(dark), np.array(white), white_reflectance)


def to_reflectance(cube: HyperCube, refs: ReferencePair,
                   clamp_max: float = DEFAULT_CLAMP_MAX) -> HyperCube:
    """Empirical-line conversion of a DN cube using dark/white references.

    Values are clamped to ``[0, clamp_max]``; non-finite inputs become 0.
    """
    if cube.units is not Units.DIGITAL_NUMBER:
        raise ValueError(f"to_reflectance expects a DigitalNumber cube, got {cube.units.value}")
    if refs.dark.size != cube.bands:
        raise ValueError(f"references have {refs.dark.size} bands, cube has {cube.bands}")
    gain = refs.white_reflectance / (refs.white - refs.dark)
    out = (cube.data.astype(np.float64) - refs.dark) * gain
    out = np.nan_to_num(out, nan=0.0, posinf=clamp_max, neginf=0.0)
    np.clip(out, 0.0, clamp_max, out=out)
    return HyperCube(out.astype(np.float32), cube.wavelengths, Units.REFLECTANCE)


def ndvi(cube: HyperCube, red_nm: float = DEFAULT_RED_NM, nir_nm: float = DEFAULT_NIR_NM) -> np.ndarray:
    """(NIR - RED) / (NIR + RED) on the nearest bands; 0 where the sum vanishes."""
    lo, hi = SENSOR_RANGE_NM
    for name, wl in (("red", red_nm), ("nir", nir_nm)):
        if not lo <= wl <= hi:
            raise ValueError(f"{name} wavelength {wl} nm outside sensor range {lo}-{hi} nm")
        if not cube.wavelengths[0] <= wl <= cube.wavelengths[-1]:
            raise ValueError(f"{name} wavelength {wl} nm outside cube range "
                             f"{cube.wavelengths[0]:.1f}-{cube.wavelengths[-1]:.1f} nm")
    red = cube.data[:, :, cube.band_index(red_nm)].astype(np.float64)
    nir = cube.data[:, :, cube.band_index(nir_nm)].astype(np.float64)
    total = nir + red
    out = np.zeros_like(total)
    np.divide(nir - red, total, out=out, where=total != 0)
    return out


def trim_bands(cube: HyperCube, keep_lo: int, keep_hi: int) -> HyperCube:
    """Keep bands ``[keep_lo, keep_hi)``."""
    if not 0 <= keep_lo < keep_hi <= cube.bands:
        raise ValueError(f"invalid band range [{keep_lo}, {keep_hi}) for a {cube.bands}-band cube")
    return replace(cube, data=cube.data[:, :, keep_lo:keep_hi].copy(),
                   wavelengths=cube.wavelengths[keep_lo:keep_hi].copy())


def central_band_range(bands: int, keep: int) -> tuple[int, int]:
    """Indices for keeping ``keep`` bands centred in a ``bands``-band cube."""
    if not 0 < keep <= bands:
        raise ValueError(f"cannot keep {keep} of {bands} bands")
    lo = (bands - keep) // 2
    return lo, lo + keep
