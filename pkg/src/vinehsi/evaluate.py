"""Accuracy metrics, confusion matrices, error maps, sweeps and feature export."""
from __future__ import annotations

import csv
import logging
import os
import time
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .model import ModelGraph
from .patchset import PatchSet, candidate_centres, extract_patches

log = logging.getLogger(__name__)

UNLABELED, CORRECT, WRONG = 0, 1, 2


@dataclass
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("confusion matrix entries must be non-negative")
        self.counts = counts.astype(np.int64)

    @classmethod
    def from_pairs(cls, truth, pred, n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(truth), np.asarray(pred)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def metrics(cm: ConfusionMatrix) -> dict:
    """OA, AA, Cohen's kappa and macro f1.

    Classes absent from the ground truth are left out of the AA and f1 means;
    f1 of a present class with no true positives is 0.
    """
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    diag = np.diag(c)
    rows, cols = c.sum(axis=1), c.sum(axis=0)
    present = rows > 0
    recall = np.divide(diag, rows, out=np.zeros_like(diag), where=present)
    precision = np.divide(diag, cols, out=np.zeros_like(diag), where=cols > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(diag), where=denom > 0)
    p_o = diag.sum() / total
    p_e = float(np.dot(rows, cols)) / total ** 2
    kappa = 1.0 if p_e == 1.0 else (p_o - p_e) / (1.0 - p_e)
    return {
        "oa": float(p_o),
        "aa": float(recall[present].mean()),
        "kappa": float(kappa),
        "f1": float(f1[present].mean()),
        "recall": recall,
        "present": present,
    }


def evaluate_model(model: ModelGraph, patches: PatchSet,
                   batch_size: int = 512) -> tuple[ConfusionMatrix, np.ndarray]:
    """Confusion matrix over class ids 1..c and the predicted class id per patch."""
    if len(patches) and patches.features.shape[1:] != (model.spec.patch_size, model.spec.patch_size,
                                                       model.spec.n_features):
        raise ValueError(f"patches {patches.features.shape[1:]} do not fit the model input")
    logits = model.predict_logits(patches.features, batch_size)
    pred = logits.argmax(axis=1) + 1
    cm = ConfusionMatrix.from_pairs(patches.labels - 1, pred - 1, model.spec.n_classes)
    return cm, pred


def predict_map(model: ModelGraph, features: np.ndarray, labels: np.ndarray,
                chunk: int = 2048, batch_size: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Predicted class id for every labelled pixel with a complete window (0 elsewhere)
    and the tri-state error map (0 unlabeled/not evaluated, 1 correct, 2 wrong)."""
    window = model.spec.patch_size
    centres = candidate_centres(labels, window, 1)
    predicted = np.zeros(labels.shape, dtype=np.uint16)
    errors = np.zeros(labels.shape, dtype=np.uint8)
    for start in range(0, len(centres), chunk):
        part = centres[start:start + chunk]
        ps = extract_patches(features, labels, window, 1, centres=part)
        pred = model.predict_logits(ps.features, batch_size).argmax(axis=1) + 1
        predicted[part[:, 0], part[:, 1]] = pred
        errors[part[:, 0], part[:, 1]] = np.where(pred == ps.labels, CORRECT, WRONG)
    return predicted, errors


def error_map(model: ModelGraph, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return predict_map(model, features, labels)[1]


def summarize(values: list[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single run)."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def sweep(cells: dict[str, Callable[[int], dict]], seeds: Iterable[int],
          metric_names: tuple[str, ...] = ("oa", "aa", "kappa", "f1")) -> list[dict]:
    """Run every cell once per seed; one row per (cell, metric) with mean and std.

    A failing cell yields an ``error`` row and the sweep moves on.
    """
    seeds = list(seeds)
    rows = []
    for cell_id, run in cells.items():
        start = time.perf_counter()
        results = []
        try:
            for seed in seeds:
                results.append(run(seed))
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            log.error("sweep cell %s failed: %s", cell_id, exc)
            rows.append({"cell_id": cell_id, "metric": "error", "mean": float("nan"), "std": float("nan"),
                         "runtime_seconds": time.perf_counter() - start,
                         "message": "".join(traceback.format_exception_only(type(exc), exc)).strip()})
            continue
        runtime = time.perf_counter() - start
        for name in metric_names:
            mean, std = summarize([r[name] for r in results])
            rows.append({"cell_id": cell_id, "metric": name, "mean": mean, "std": std,
                         "runtime_seconds": runtime, "values": [r[name] for r in results]})
    return rows


def write_sweep_csv(path: str | os.PathLike, rows: list[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "metric", "mean", "std", "runtime_seconds"])
        for r in rows:
            writer.writerow([r["cell_id"], r["metric"], repr(r["mean"]), repr(r["std"]),
                             f"{r['runtime_seconds']:.3f}"])
    return path


def export_features(model: ModelGraph, patches: PatchSet, path: str | os.PathLike | None = None,
                    batch_size: int = 512) -> np.ndarray:
    """Flatten activations per patch (N x flatten width), optionally saved as ``.npy``."""
    feats = model.embed(patches.features, batch_size)
    if path is not None:
        np.save(path, feats)
    return feats


def write_report(path: str | os.PathLike, m: dict, class_names: dict[int, str] | None = None) -> Path:
    path = Path(path)
    lines = [f"oa={m['oa']!r}", f"aa={m['aa']!r}", f"kappa={m['kappa']!r}", f"f1={m['f1']!r}"]
    for idx, (r, present) in enumerate(zip(m["recall"], m["present"])):
        if present:
            cid = idx + 1
            lines.append(f"recall.{cid}={float(r)!r}")
            if class_names and cid in class_names:
                lines.append(f"name.{cid}={class_names[cid]}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_confusion_csv(path: str | os.PathLike, cm: ConfusionMatrix) -> Path:
    path = Path(path)
    n = cm.counts.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["truth\\pred"] + [str(i + 1) for i in range(n)])
        for i in range(n):
            writer.writerow([str(i + 1)] + [str(v) for v in cm.counts[i]])
    return path
