"""Patch extraction, splitting, balancing, dihedral augmentation and batching."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .formats import read_kv, write_kv

DEFAULT_FRACTIONS = (0.68, 0.12, 0.20)
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class PatchSet:
    """M x M x F patches labelled by their centre pixel.

    ``origins`` rows are (cube id, line, sample) of the patch centre.
    """

    features: np.ndarray
    labels: np.ndarray
    origins: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.origins = np.asarray(self.origins, dtype=np.int64).reshape(-1, 3)
        n = self.labels.size
        if self.features.ndim != 4 and not (n == 0 and self.features.size == 0):
            raise ValueError(f"patch features must be N x M x M x F, got {self.features.shape}")
        if self.features.shape[0] != n or self.origins.shape[0] != n:
            raise ValueError("features, labels and origins disagree on patch count")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def window(self) -> int:
        return self.features.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[3]

    def subset(self, idx) -> "PatchSet":
        idx = np.asarray(idx, dtype=np.int64)
        return PatchSet(self.features[idx], self.labels[idx], self.origins[idx])

    def class_counts(self) -> dict[int, int]:
        ids, n = np.unique(self.labels, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, n)}

    @classmethod
    def concat(cls, sets: Sequence["PatchSet"]) -> "PatchSet":
        return cls(np.concatenate([s.features for s in sets]),
                   np.concatenate([s.labels for s in sets]),
                   np.concatenate([s.origins for s in sets]))


def _check_window(window: int, stride: int, lines: int, samples: int) -> None:
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window size must be odd and positive, got {window}")
    if not 1 <= stride <= window:
        raise ValueError(f"stride must be in [1, {window}], got {stride}")
    if window > lines or window > samples:
        raise ValueError(f"window {window} larger than raster {lines}x{samples}")


def candidate_centres(labels: np.ndarray, window: int, stride: int) -> np.ndarray:
    """(line, sample) centres of complete windows on the stride grid with a labelled centre."""
    labels = np.asarray(labels)
    lines, samples = labels.shape
    _check_window(window, stride, lines, samples)
    half = window // 2
    rows = np.arange(0, lines - window + 1, stride) + half
    cols = np.arange(0, samples - window + 1, stride) + half
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    keep = labels[rr, cc] != 0
    return np.stack([rr[keep], cc[keep]], axis=1)


def extract_patches(features: np.ndarray, labels: np.ndarray, window: int, stride: int = 1,
                    cube_id: int = 0, centres: np.ndarray | None = None) -> PatchSet:
    """Cut every complete window whose centre is labelled; borders are skipped, not padded."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    if features.shape[:2] != labels.shape:
        raise ValueError(f"feature cube {features.shape[:2]} and labels {labels.shape} differ in size")
    if centres is None:
        centres = candidate_centres(labels, window, stride)
    half = window // 2
    n = len(centres)
    out = np.empty((n, window, window, features.shape[2]), dtype=np.float32)
    for k, (r, c) in enumerate(centres):
        out[k] = features[r - half:r + half + 1, c - half:c + half + 1]
    origins = np.column_stack([np.full(n, cube_id), centres]) if n else np.zeros((0, 3))
    return PatchSet(out, labels[centres[:, 0], centres[:, 1]] if n else np.zeros(0), origins)


def split_indices(n: int, fractions: Sequence[float] = DEFAULT_FRACTIONS,
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle; val/test sizes are floored and the remainder goes to train."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(np.floor(n * fractions[1] + 1e-9))
    n_test = int(np.floor(n * fractions[2] + 1e-9))
    n_train = n - n_val - n_test
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    if n >= 5:
        for name, frac, part in zip(SPLIT_NAMES, fractions, parts):
            if frac > 0 and part.size == 0:
                raise ValueError(f"{name} split is empty for N={n} with fraction {frac}")
    return parts


def split(patches: PatchSet, fractions: Sequence[float] = DEFAULT_FRACTIONS,
          seed: int = 0) -> tuple[PatchSet, PatchSet, PatchSet]:
    return tuple(patches.subset(idx) for idx in split_indices(len(patches), fractions, seed))


def balance_indices(labels: np.ndarray, k_groups: int, seed: int = 0) -> np.ndarray:
    labels = np.asarray(labels)
    ids, counts = np.unique(labels, return_counts=True)
    if k_groups <= 0:
        return np.arange(labels.size)
    if k_groups >= ids.size:
        raise ValueError(f"k_groups ({k_groups}) must be below the number of classes ({ids.size})")
    # most frequent first; ties by class id
    order = sorted(range(ids.size), key=lambda i: (-counts[i], ids[i]))
    cap = counts[order[k_groups]]
    rng = np.random.default_rng(seed)
    keep = []
    for rank, i in enumerate(order):
        idx = np.flatnonzero(labels == ids[i])
        if rank < k_groups and idx.size > cap:
            idx = rng.choice(idx, size=cap, replace=False)
        keep.append(idx)
    return np.sort(np.concatenate(keep))


def balance(patches: PatchSet, k_groups: int = 3, seed: int = 0) -> PatchSet:
    """Downsample the ``k_groups`` most frequent classes to the next class's count."""
    return patches.subset(balance_indices(patches.labels, k_groups, seed))


# element g: rotate g % 4 quarter turns, then mirror columns when g >= 4
DIHEDRAL = tuple(range(8))


def dihedral(x: np.ndarray, g: int, axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    y = np.rot90(x, g % 4, axes=axes)
    if g >= 4:
        y = np.flip(y, axis=axes[1])
    return y


def compose(g1: int, g2: int) -> int:
    """Element equal to applying ``g2`` first and then ``g1``."""
    probe = np.arange(9).reshape(3, 3)
    target = dihedral(dihedral(probe, g2), g1)
    for g in DIHEDRAL:
        if np.array_equal(dihedral(probe, g), target):
            return g
    raise AssertionError("dihedral group not closed")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def augment(patch: np.ndarray, p: float = 0.1, seed=None) -> np.ndarray:
    """With probability ``p`` apply one uniformly drawn non-identity symmetry of the square."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"augmentation probability must be in [0, 1], got {p}")
    rng = _rng(seed)
    if rng.random() >= p:
        return patch
    return np.ascontiguousarray(dihedral(patch, int(rng.integers(1, 8))))


def augment_batch(x: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Batched :func:`augment` over N x M x M x F; draws one element per patch."""
    if p <= 0.0:
        return x
    hit = rng.random(x.shape[0]) < p
    elems = rng.integers(1, 8, size=x.shape[0])
    if not hit.any():
        return x
    out = x.copy()
    for g in range(1, 8):
        sel = np.flatnonzero(hit & (elems == g))
        if sel.size:
            out[sel] = dihedral(x[sel], g, axes=(1, 2))
    return out


def make_batches(patches: PatchSet, batch_size: int, n_splits: int = 9,
                 transforms_per_split: int = 2, seed: int = 0,
                 p_augment: float = 0.1) -> Iterator[tuple[np.ndarray, np.ndarray, int]]:
    """One epoch of training batches as ``(x, y, split_index)``.

    The set is cut into ``n_splits`` chunks; each chunk is visited
    ``transforms_per_split`` times with its own shuffle and augmentation draw.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    chunks = np.array_split(rng.permutation(len(patches)), max(1, min(n_splits, len(patches))))
    chunk_seeds = rng.integers(0, 2**63 - 1, size=(len(chunks), transforms_per_split))
    for ci, chunk in enumerate(chunks):
        for visit in range(transforms_per_split):
            vrng = np.random.default_rng(chunk_seeds[ci, visit])
            order = chunk[vrng.permutation(chunk.size)]
            for start in range(0, order.size, batch_size):
                idx = order[start:start + batch_size]
                x = augment_batch(patches.features[idx], p_augment, vrng)
                yield x, patches.labels[idx], ci


def _record_dtype(window: int, n_features: int) -> np.dtype:
    return np.dtype([("label", "<u2"), ("x", "<f4", (window, window, n_features))])


def save_patchset(directory: str | os.PathLike, splits: dict[str, PatchSet], meta: dict) -> Path:
    """Write one binary file per split plus a text manifest with per-class counts."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = dict(meta)
    for name, ps in splits.items():
        manifest[f"n.{name}"] = len(ps)
        for cid, cnt in ps.class_counts().items():
            manifest[f"count.{name}.{cid}"] = cnt
        rec = np.zeros(len(ps), dtype=_record_dtype(meta["window"], meta["n_features"]))
        rec["label"] = ps.labels
        rec["x"] = ps.features
        rec.tofile(directory / f"{name}.bin")
        np.savetxt(directory / f"{name}.origins", ps.origins, fmt="%d", header="cube line sample")
    write_kv(directory / "manifest.txt", manifest)
    return directory


def load_manifest(directory: str | os.PathLike) -> dict[str, str]:
    return read_kv(Path(directory) / "manifest.txt")


def load_split(directory: str | os.PathLike, name: str) -> PatchSet:
    directory = Path(directory)
    meta = load_manifest(directory)
    window, n_features = int(meta["window"]), int(meta["n_features"])
    rec = np.fromfile(directory / f"{name}.bin", dtype=_record_dtype(window, n_features))
    origins_path = directory / f"{name}.origins"
    origins = np.loadtxt(origins_path, dtype=np.int64, ndmin=2) if origins_path.exists() else None
    if origins is None or origins.size == 0:
        origins = np.zeros((rec.size, 3), dtype=np.int64)
    return PatchSet(rec["x"].reshape(rec.size, window, window, n_features), rec["label"], origins)
