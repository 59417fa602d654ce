"""Desk-scale experiments on synthetic scenes: reference run, sweeps, ablation, transfer.

Shared by ``scripts/`` and the acceptance tests so both run the same code.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cli
from .config import PipelineConfig
from .evaluate import metrics, evaluate_model, summarize
from .model import Variant, build_model, load_pretrained
from .pipeline import Dataset, prepare_dataset, run_experiment
from .synth import Scene, SceneSpec, generate
from .training import TrainResult, train

log = logging.getLogger(__name__)

# Table 3 hyperparameters scaled to one CPU core: 30 epochs, batch 256,
# stride 4 between patch centres and a larger step size to match the budget
REFERENCE_CONFIG = PipelineConfig(overlap=19, batch_size=256, epochs=30, lr=1e-3, seed=0)
SWEEP_EPOCHS = 20


def reference_scene(**overrides) -> Scene:
    return generate(SceneSpec(**overrides))


def reference_chain(root: str | os.PathLike, seed: int = 0, synth_flags: tuple = (),
                    cfg: PipelineConfig = REFERENCE_CONFIG) -> dict[str, Path]:
    """The full command-line pipeline from raw DN to a test report, one run dir per step."""
    root = Path(root)
    d = {k: root / k for k in ("scene", "refl", "mask", "labels", "feats", "patches", "model", "eval")}
    window = ["--patch-size", cfg.patch_size, "--overlap", cfg.overlap, "--seed", seed]
    steps = [
        ["synth", *synth_flags, "--seed", seed, "--out", d["scene"]],
        ["correct", "--cube", d["scene"] / "dn.hdr", "--refs", d["scene"] / "refs.txt", "--out", d["refl"]],
        ["ndvi-mask", "--cube", d["refl"] / "reflectance.hdr", "--out", d["mask"]],
        ["rasterize", "--annotations", d["scene"] / "annotations.txt", "--mask", d["mask"] / "mask.hdr",
         "--classes", d["scene"] / "classes.txt", "--out", d["labels"]],
        ["fit-features", "--cube", d["refl"] / "reflectance.hdr", "--labels", d["labels"] / "labels.hdr",
         *window, "--out", d["feats"]],
        ["extract", "--features", d["feats"] / "features.hdr", "--labels", d["labels"] / "labels.hdr",
         *window, "--out", d["patches"]],
        ["train", "--patches", d["patches"], "--epochs", cfg.epochs, "--batch-size", cfg.batch_size,
         "--lr", cfg.lr, "--seed", seed, "--threads", 1, "--out", d["model"]],
        ["evaluate", "--model", d["model"], "--patches", d["patches"], "--out", d["eval"]],
    ]
    for argv in steps:
        t0 = time.perf_counter()
        code = cli.main([str(a) for a in argv])
        if code != 0:
            raise RuntimeError(f"step {argv[0]} exited with code {code}")
        log.info("%s done in %.1fs", argv[0], time.perf_counter() - t0)
    return d


def epochs_to_target(result: TrainResult, target: float) -> int | None:
    """1-based epoch at which validation OA first reached ``target``."""
    for row in result.epoch_rows():
        if row["val_oa"] >= target:
            return row["epoch"] + 1
    return None


def _cell(scene: Scene, cfg: PipelineConfig, cache: dict | None = None) -> dict:
    key = cfg.digest()
    if cache is not None and key in cache:
        return cache[key]
    t0 = time.perf_counter()
    run = run_experiment(scene.reflectance, scene.labels.labels, cfg)
    out = dict(run.metrics, seconds=time.perf_counter() - t0, n_test=len(run.dataset.splits["test"]),
               n_train=len(run.dataset.splits["train"]))
    log.info("cell %s oa=%.4f kappa=%.4f in %.0fs", key, out["oa"], out["kappa"], out["seconds"])
    if cache is not None:
        cache[key] = out
    return out


def window_sweep(scene: Scene, cfg: PipelineConfig, sizes=(9, 15, 23), cache: dict | None = None) -> dict[int, dict]:
    """Same stride for every window size so only the spatial context changes."""
    return {m: _cell(scene, cfg.override(patch_size=m, overlap=m - cfg.stride), cache) for m in sizes}


def fraction_sweep(scene: Scene, cfg: PipelineConfig, fractions=(0.1, 1.0), cache: dict | None = None) -> dict[float, dict]:
    return {f: _cell(scene, cfg.override(train_fraction=f), cache) for f in fractions}


def ablation(scene: Scene, cfg: PipelineConfig, variants=(Variant.PROPOSED, Variant.NAIVE_INCEPTION_BOTH),
             seeds=(0, 1, 2), cache: dict | None = None) -> dict[str, dict]:
    """Per variant: OA per seed plus mean and sample std."""
    out = {}
    for v in variants:
        v = Variant(v)
        runs = [_cell(scene, cfg.override(variant=v.value, seed=s), cache) for s in seeds]
        mean, std = summarize([r["oa"] for r in runs])
        out[v.value] = {"oa": [r["oa"] for r in runs], "mean": mean, "std": std, "n_test": runs[0]["n_test"]}
    return out


@dataclass
class TransferTrial:
    seed: int
    source_oa: float
    warm_epochs: int | None
    cold_epochs: int | None
    warm_oa: float
    cold_oa: float


def transfer_scenes(noise_std: float = 0.03, lines: int = 128, seed: int = 11) -> tuple[Scene, Scene]:
    """Scene A with 9 varieties and scene B with 17; A's varieties are B's first nine
    (same signature draw), as when two vineyards share part of their varieties."""
    a = generate(SceneSpec(lines=lines, n_classes=9, rows_per_class=2, noise_std=noise_std, seed=seed))
    b = generate(SceneSpec(lines=lines, n_classes=17, rows_per_class=1, noise_std=noise_std, seed=seed))
    return a, b


def transfer_datasets(a: Scene, b: Scene, cfg: PipelineConfig) -> tuple[Dataset, Dataset]:
    """Scene B reuses the factor model fitted on A so inputs mean the same thing."""
    ds_a = prepare_dataset(a.reflectance, a.labels.labels, cfg)
    ds_b = prepare_dataset(b.reflectance, b.labels.labels, cfg, factor_model=ds_a.factor_model)
    return ds_a, ds_b


def transfer_trial(ds_a: Dataset, ds_b: Dataset, cfg: PipelineConfig, seed: int,
                   target: float = 0.95) -> TransferTrial:
    """Pretrain on A, then train on B from the pretrained body (fresh head) and from scratch."""
    c = cfg.override(seed=seed)
    tc = c.train_config()
    source = build_model(c.arch_spec(ds_a.n_classes), seed=seed)
    train(source, ds_a.splits["train"], ds_a.splits["val"], tc)
    source_oa = metrics(evaluate_model(source, ds_a.splits["test"])[0])["oa"]

    warm = build_model(c.arch_spec(ds_b.n_classes), seed=seed)
    load_pretrained(warm, source.state_dict(), reinit_head=True)
    warm_run = train(warm, ds_b.splits["train"], ds_b.splits["val"], tc, target_oa=target)
    cold = build_model(c.arch_spec(ds_b.n_classes), seed=seed)
    cold_run = train(cold, ds_b.splits["train"], ds_b.splits["val"], tc, target_oa=target)
    return TransferTrial(seed, source_oa, epochs_to_target(warm_run, target), epochs_to_target(cold_run, target),
                         metrics(evaluate_model(warm, ds_b.splits["test"])[0])["oa"],
                         metrics(evaluate_model(cold, ds_b.splits["test"])[0])["oa"])


TRANSFER_CONFIG = PipelineConfig(patch_size=9, overlap=7, batch_size=256, epochs=30, lr=1e-3, seed=0)


def mean_epochs(values: list[int | None], cap: int) -> float:
    """Mean epochs-to-target; a run that never reached it counts as ``cap + 1``."""
    return float(np.mean([cap + 1 if v is None else v for v in values]))
