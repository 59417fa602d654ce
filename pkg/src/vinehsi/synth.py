"""Synthetic vineyard swaths with known labels.

Vine rows are vertical stripes of a class signature on a soil background.
Each variety occupies ``rows_per_class`` contiguous rows.  Edge pixels of
a row are convex mixtures of the vine and soil spectra.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .cube_io import HyperCube, ReferencePair, Units
from .formats import read_kv, write_kv
from .labeling import LabelRaster, PolygonAnnotation


@dataclass(frozen=True)
class SceneSpec:
    lines: int = 256
    samples: int = 256
    n_classes: int = 8
    bands: int = 140
    wl_min: float = 400.0
    wl_max: float = 1000.0
    rows_per_class: int = 3
    row_width: int = 6
    row_gap: int = 4
    noise_std: float = 0.05
    mixing_width: int = 1
    bumps_per_class: int = 4
    bump_amplitude: float = 0.05
    min_signature_gap: float = 0.2
    white_reflectance: float = 0.95
    seed: int = 0

    def __post_init__(self):
        for f in ("lines", "samples", "n_classes", "bands", "rows_per_class", "row_width", "bumps_per_class"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        for f in ("row_gap", "mixing_width"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be non-negative")
        if self.noise_std < 0 or not 0 < self.white_reflectance <= 1:
            raise ValueError("noise_std must be >= 0 and white_reflectance in (0, 1]")
        if 2 * self.mixing_width > self.row_width:
            raise ValueError("mixing_width cannot exceed half the row width")
        if self.wl_max <= self.wl_min:
            raise ValueError("wl_max must exceed wl_min")
        if self.stripe_extent > self.samples:
            raise ValueError(f"{self.n_rows} rows of pitch {self.row_width + self.row_gap} "
                             f"need {self.stripe_extent} samples, only {self.samples} available")

    @property
    def n_rows(self) -> int:
        return self.n_classes * self.rows_per_class

    @property
    def stripe_extent(self) -> int:
        return self.n_rows * (self.row_width + self.row_gap) - self.row_gap

    @property
    def offset(self) -> int:
        return (self.samples - self.stripe_extent) // 2

    def row_starts(self) -> list[int]:
        pitch = self.row_width + self.row_gap
        return [self.offset + k * pitch for k in range(self.n_rows)]

    def row_classes(self) -> list[int]:
        return [k // self.rows_per_class + 1 for k in range(self.n_rows)]

    def expected_counts(self) -> dict[int, int]:
        per_row = self.lines * self.row_width
        return {c: self.rows_per_class * per_row for c in range(1, self.n_classes + 1)}

    def to_kv(self) -> dict:
        return asdict(self)

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "SceneSpec":
        kw = {}
        for f in fields(cls):
            if f.name in kv:
                kw[f.name] = float(kv[f.name]) if f.type == "float" else int(kv[f.name])
        return cls(**kw)


def load_scene_spec(path: str | os.PathLike) -> SceneSpec:
    return SceneSpec.from_kv(read_kv(path))


def save_scene_spec(path: str | os.PathLike, spec: SceneSpec) -> Path:
    return write_kv(path, spec.to_kv())


@dataclass
class Scene:
    spec: SceneSpec
    dn: HyperCube
    reflectance: HyperCube
    labels: LabelRaster
    refs: ReferencePair
    polygons: list[PolygonAnnotation]
    class_table: dict[int, str]
    signatures: np.ndarray  # (n_classes + 1) x bands, row 0 is soil


def _vegetation_base(wl: np.ndarray) -> np.ndarray:
    green = 0.05 * np.exp(-0.5 * ((wl - 550.0) / 25.0) ** 2)
    red_edge = 0.45 / (1.0 + np.exp(-(wl - 715.0) / 12.0))
    return 0.04 + green + red_edge


def _soil(wl: np.ndarray) -> np.ndarray:
    return 0.12 + 0.18 * (wl - wl[0]) / (wl[-1] - wl[0])


def make_signatures(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Soil plus one smooth signature per class.

    Class signatures differ pairwise by at least ``min_signature_gap *
    bump_amplitude`` times the mean vegetation reflectance (RMS over bands).
    """
    wl = np.linspace(spec.wl_min, spec.wl_max, spec.bands)
    base = _vegetation_base(wl)
    sigs = [_soil(wl)]
    for _ in range(spec.n_classes):
        for _attempt in range(1000):
            centres = rng.uniform(spec.wl_min, spec.wl_max, spec.bumps_per_class)
            widths = rng.uniform(20.0, 80.0, spec.bumps_per_class)
            amps = rng.uniform(-spec.bump_amplitude, spec.bump_amplitude, spec.bumps_per_class)
            bumps = (amps[:, None] * np.exp(-0.5 * ((wl[None] - centres[:, None]) / widths[:, None]) ** 2)).sum(0)
            cand = base * (1.0 + bumps)
            gaps = [np.sqrt(np.mean((cand - s) ** 2)) for s in sigs[1:]]
            if not gaps or min(gaps) >= spec.min_signature_gap * spec.bump_amplitude * base.mean():
                sigs.append(cand)
                break
        else:
            raise RuntimeError("could not draw sufficiently distinct class signatures")
    return np.clip(np.array(sigs), 0.0, None)


def generate(spec: SceneSpec) -> Scene:
    """Draw a scene; the same spec (including seed) gives a bit-identical result."""
    rng = np.random.default_rng(spec.seed)
    wl = np.linspace(spec.wl_min, spec.wl_max, spec.bands)
    sigs = make_signatures(spec, rng)

    # per-sample weight of the row class (rest is soil), constant along lines
    class_of = np.zeros(spec.samples, dtype=np.int64)
    weight = np.zeros(spec.samples)
    for start, cid in zip(spec.row_starts(), spec.row_classes()):
        for d in range(spec.row_width):
            edge = min(d, spec.row_width - 1 - d)
            w = 1.0
            if edge < spec.mixing_width:
                w = 0.5 + 0.5 * (edge + 1) / (spec.mixing_width + 1)
            class_of[start + d] = cid
            weight[start + d] = w
    columns = weight[:, None] * sigs[class_of] + (1.0 - weight[:, None]) * sigs[0]
    refl = np.broadcast_to(columns, (spec.lines, spec.samples, spec.bands)).copy()
    if spec.noise_std > 0:
        refl += rng.normal(0.0, spec.noise_std, size=refl.shape)
    refl = np.clip(refl, 0.0, 1.5).astype(np.float32)

    labels = np.zeros((spec.lines, spec.samples), dtype=np.uint16)
    labels[:, class_of > 0] = class_of[class_of > 0]

    # smooth sensor response for the DN domain
    dark = 80.0 + 20.0 * np.sin(wl / 90.0) ** 2
    white = dark + 2500.0 + 900.0 * np.exp(-0.5 * ((wl - 650.0) / 180.0) ** 2)
    refs = ReferencePair(dark, white, spec.white_reflectance)
    dn = dark + refl.astype(np.float64) * (white - dark) / spec.white_reflectance

    polygons = []
    for start, cid in zip(spec.row_starts(), spec.row_classes()):
        x0, x1 = float(start), float(start + spec.row_width)
        polygons.append(PolygonAnnotation(cid, ((x0, 0.0), (x1, 0.0), (x1, float(spec.lines)), (x0, float(spec.lines)))))
    table = {c: f"variety_{c:02d}" for c in range(1, spec.n_classes + 1)}
    return Scene(spec, HyperCube(dn.astype(np.float32), wl, Units.DIGITAL_NUMBER),
                 HyperCube(refl, wl, Units.REFLECTANCE), LabelRaster(labels), refs, polygons, table, sigs)
