"""In-memory end-to-end runs: reflectance + labels -> features -> patches -> model -> metrics."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .cube_io import HyperCube, trim_bands
from .evaluate import ConfusionMatrix, evaluate_model, metrics
from .features import FactorModel, fit_features, transform
from .model import ArchitectureSpec, ModelGraph, build_model
from .patchset import PatchSet, balance, candidate_centres, extract_patches, split_indices
from .training import TrainResult, train

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    factor_model: FactorModel
    features: np.ndarray           # lines x samples x F
    splits: dict[str, PatchSet]
    n_classes: int


@dataclass
class RunResult:
    model: ModelGraph
    dataset: Dataset
    train_result: TrainResult
    confusion: ConfusionMatrix
    metrics: dict
    timings: dict = field(default_factory=dict)


def window_mask(shape: tuple[int, int], centres: np.ndarray, window: int) -> np.ndarray:
    """Pixels covered by any window centred on ``centres``."""
    half = window // 2
    mask = np.zeros(shape, dtype=bool)
    for r, c in centres:
        mask[r - half:r + half + 1, c - half:c + half + 1] = True
    return mask


def training_pixels(cube: np.ndarray, labels: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """Spectra under the training windows only; the split is the same one used for patches."""
    centres = candidate_centres(labels, cfg.patch_size, cfg.stride)
    train_idx, _, _ = split_indices(len(centres), cfg.fractions, cfg.seed)
    return cube[window_mask(labels.shape, centres[train_idx], cfg.patch_size)]


def cut_splits(features: np.ndarray, labels: np.ndarray, cfg: PipelineConfig,
               centres: np.ndarray | None = None, parts=None) -> dict[str, PatchSet]:
    """Cut train/val/test patches; only the training split is balanced and subsampled."""
    if centres is None:
        centres = candidate_centres(labels, cfg.patch_size, cfg.stride)
        parts = split_indices(len(centres), cfg.fractions, cfg.seed)
    splits = {name: extract_patches(features, labels, cfg.patch_size, centres=centres[idx])
              for name, idx in zip(("train", "val", "test"), parts)}
    train_set = splits["train"]
    if cfg.k_groups > 0 and len(np.unique(train_set.labels)) > cfg.k_groups:
        train_set = balance(train_set, cfg.k_groups, cfg.seed)
    if cfg.train_fraction < 1.0:
        rng = np.random.default_rng(cfg.seed + 7)
        keep = max(1, int(round(cfg.train_fraction * len(train_set))))
        train_set = train_set.subset(np.sort(rng.choice(len(train_set), keep, replace=False)))
    splits["train"] = train_set
    return splits


def prepare_dataset(reflectance: HyperCube, labels: np.ndarray, cfg: PipelineConfig,
                    factor_model: FactorModel | None = None, n_classes: int | None = None) -> Dataset:
    """Fit standardization + FA on training windows, transform, cut and split patches.

    The training split is balanced and optionally subsampled to ``train_fraction``.
    """
    labels = np.asarray(labels)
    if cfg.band_lo >= 0 and cfg.band_hi > 0:
        reflectance = trim_bands(reflectance, cfg.band_lo, cfg.band_hi)
    centres = candidate_centres(labels, cfg.patch_size, cfg.stride)
    if len(centres) == 0:
        raise ValueError("no labelled pixel has a complete window")
    parts = split_indices(len(centres), cfg.fractions, cfg.seed)
    if factor_model is None:
        pixels = reflectance.data[window_mask(labels.shape, centres[parts[0]], cfg.patch_size)]
        factor_model = fit_features(pixels, cfg.n_features, cfg.fa_max_iter, cfg.fa_tol, cfg.seed)
    feats = transform(factor_model, reflectance.data).astype(np.float32)
    splits = cut_splits(feats, labels, cfg, centres, parts)
    return Dataset(factor_model, feats, splits, n_classes or int(labels.max()))


def run_experiment(reflectance: HyperCube, labels: np.ndarray, cfg: PipelineConfig,
                   arch: ArchitectureSpec | None = None, dataset: Dataset | None = None,
                   init_state: dict | None = None) -> RunResult:
    timings = {}
    t0 = time.perf_counter()
    if dataset is None:
        dataset = prepare_dataset(reflectance, labels, cfg)
    timings["prepare"] = time.perf_counter() - t0
    arch = arch or cfg.arch_spec(dataset.n_classes)
    model = build_model(arch, seed=cfg.seed)
    if init_state is not None:
        model.load_state_dict(init_state)
    t1 = time.perf_counter()
    result = train(model, dataset.splits["train"], dataset.splits["val"], cfg.train_config())
    timings["train"] = time.perf_counter() - t1
    cm, _ = evaluate_model(model, dataset.splits["test"])
    timings["total"] = time.perf_counter() - t0
    return RunResult(model, dataset, result, cm, metrics(cm), timings)
