"""NDVI masking and polygon rasterization into per-pixel class labels."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .formats import FormatError, read_raster, write_raster

DEFAULT_NDVI_THRESHOLD = 0.4


@dataclass(frozen=True)
class PolygonAnnotation:
    class_id: int
    vertices: tuple[tuple[float, float], ...]  # (x = sample, y = line)

    def __post_init__(self):
        if int(self.class_id) <= 0:
            raise ValueError(f"class_id must be positive, got {self.class_id}")
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValueError(f"polygon for class {self.class_id} needs >= 3 vertices, got {len(verts)}")
        if abs(polygon_area(verts)) == 0.0:
            raise ValueError(f"degenerate polygon (zero area) for class {self.class_id}")
        object.__setattr__(self, "vertices", verts)


@dataclass
class LabelRaster:
    """Class id per pixel; 0 is unlabeled."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError(f"label raster must be 2-D, got {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > np.iinfo(np.uint16).max):
            raise ValueError("labels must fit in uint16")
        self.labels = labels.astype(np.uint16)

    @property
    def lines(self) -> int:
        return self.labels.shape[0]

    @property
    def samples(self) -> int:
        return self.labels.shape[1]

    def counts(self) -> dict[int, int]:
        ids, n = np.unique(self.labels[self.labels > 0], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, n)}

    def check_classes(self, class_table: dict[int, str]) -> None:
        unknown = sorted(set(self.counts()) - set(class_table))
        if unknown:
            raise ValueError(f"label ids {unknown} missing from class table")


def polygon_area(vertices: Sequence[tuple[float, float]]) -> float:
    xy = np.asarray(vertices, dtype=np.float64)
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def threshold_mask(ndvi: np.ndarray, threshold: float = DEFAULT_NDVI_THRESHOLD) -> np.ndarray:
    return np.asarray(ndvi) >= threshold


def points_in_polygon(px: np.ndarray, py: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd rule; ``px``/``py`` are broadcastable coordinate arrays."""
    inside = np.zeros(np.broadcast(px, py).shape, dtype=bool)
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        if y0 == y1:
            continue
        crosses = (y0 > py) != (y1 > py)
        x_cross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < x_cross)
    return inside


def rasterize_labels(polys: Sequence[PolygonAnnotation], mask: np.ndarray) -> LabelRaster:
    """Label pixel centres inside each polygon and inside ``mask``.

    Later polygons overwrite earlier ones where they overlap.
    """
    mask = np.asarray(mask, dtype=bool)
    lines, samples = mask.shape
    labels = np.zeros((lines, samples), dtype=np.uint16)
    for poly in polys:
        verts = np.asarray(poly.vertices, dtype=np.float64)
        verts[:, 0] = np.clip(verts[:, 0], 0.0, samples)
        verts[:, 1] = np.clip(verts[:, 1], 0.0, lines)
        x_lo = max(int(np.floor(verts[:, 0].min())), 0)
        x_hi = min(int(np.ceil(verts[:, 0].max())), samples)
        y_lo = max(int(np.floor(verts[:, 1].min())), 0)
        y_hi = min(int(np.ceil(verts[:, 1].max())), lines)
        if x_hi <= x_lo or y_hi <= y_lo:
            continue
        cx = np.arange(x_lo, x_hi)[None, :] + 0.5
        cy = np.arange(y_lo, y_hi)[:, None] + 0.5
        hit = points_in_polygon(cx, cy, verts) & mask[y_lo:y_hi, x_lo:x_hi]
        labels[y_lo:y_hi, x_lo:x_hi][hit] = poly.class_id
    return LabelRaster(labels)


def parse_annotations(path: str | os.PathLike) -> list[PolygonAnnotation]:
    """One polygon per line: ``class_id ; x0 y0 x1 y1 ...``."""
    polys = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            cid, coords = line.split(";", 1)
            values = [float(v) for v in coords.split()]
            if len(values) % 2:
                raise ValueError("odd number of coordinates")
            verts = list(zip(values[0::2], values[1::2]))
            polys.append(PolygonAnnotation(int(cid), tuple(verts)))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return polys


def write_annotations(path: str | os.PathLike, polys: Sequence[PolygonAnnotation]) -> Path:
    path = Path(path)
    out = []
    for p in polys:
        coords = " ".join(f"{x:g} {y:g}" for x, y in p.vertices)
        out.append(f"{p.class_id} ; {coords}")
    path.write_text("\n".join(out) + "\n")
    return path


def parse_class_table(path: str | os.PathLike) -> dict[int, str]:
    table = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.rstrip("\n").split("\t", 1)
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'id<TAB>name'")
        table[int(parts[0])] = parts[1].strip()
    return table


def write_class_table(path: str | os.PathLike, table: dict[int, str]) -> Path:
    path = Path(path)
    path.write_text("".join(f"{k}\t{v}\n" for k, v in sorted(table.items())))
    return path


def save_labels(header_path: str | os.PathLike, raster: LabelRaster) -> Path:
    return write_raster(header_path, raster.labels, "u16", "Label")


def load_labels(header_path: str | os.PathLike) -> LabelRaster:
    data, meta = read_raster(header_path)
    if meta["dtype"] != "u16" or data.shape[2] != 1:
        raise FormatError(f"{header_path}: label raster must be single-band u16")
    return LabelRaster(data[:, :, 0])


def save_mask(header_path: str | os.PathLike, mask: np.ndarray) -> Path:
    return write_raster(header_path, np.asarray(mask, dtype=np.uint16), "u16", "Mask")


def load_mask(header_path: str | os.PathLike) -> np.ndarray:
    data, _ = read_raster(header_path)
    return data[:, :, 0] > 0
