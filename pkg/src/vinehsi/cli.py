"""Command-line entry point: one subcommand per pipeline stage.

Every subcommand writes its outputs, the effective configuration and a
manifest into a run directory.  Exit codes: 0 ok, 2 configuration error,
3 I/O error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import cube_io, evaluate as ev, features as fe, labeling, patchset, synth
from .autodiff.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, PipelineConfig, load_config, save_config
from .formats import FormatError, read_kv, write_kv, write_raster
from .model import (ArchitectureSpec, Variant, build_model, format_audit, load_architecture,
                    load_pretrained, parameter_audit, save_architecture)
from .training import NumericError, train, write_history

log = logging.getLogger("vinehsi")

RUN_ROOT_ENV = "VINEHSI_RUN_ROOT"
RUN_MANIFEST = "run_manifest.txt"
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(ConfigError):
    pass


# ---------------------------------------------------------------- helpers

def _run_dir(args) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        path = Path(os.environ.get(RUN_ROOT_ENV, "runs")) / args.command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(args, require_seed: bool = False) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if require_seed and args.seed is None and not (args.config and "seed" in read_kv(args.config)):
        raise UsageError(f"'{args.command}' needs an explicit --seed (or a seed in --config)")
    overrides = {}
    for key in ("seed", "threads", "patch_size", "overlap", "batch_size", "epochs", "lr", "n_splits",
                "transforms_per_split", "p_augment", "patience", "clamp_max", "red_nm", "nir_nm",
                "ndvi_threshold", "n_features", "fa_max_iter", "fa_tol", "k_groups", "train_fraction",
                "variant"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return cfg.override(**overrides)


def _finish(args, run_dir: Path, cfg: PipelineConfig | None, inputs: dict, outputs: dict, start: float) -> None:
    manifest = {"command": args.command}
    manifest.update({f"input.{k}": v for k, v in inputs.items()})
    manifest.update({f"output.{k}": v for k, v in outputs.items()})
    if cfg is not None:
        save_config(run_dir / "config.txt", cfg)
        manifest["config_hash"] = cfg.digest()
        manifest["seed"] = cfg.seed
        manifest["threads"] = cfg.threads
    manifest["wall_seconds"] = f"{time.perf_counter() - start:.3f}"
    write_kv(run_dir / RUN_MANIFEST, manifest)


def _load_model(path: str):
    path = Path(path)
    ckpt = path / "model.vhsc" if path.is_dir() else path
    arch_path = ckpt.parent / "arch.txt"
    if not arch_path.exists():
        raise FileNotFoundError(f"architecture file not found next to checkpoint: {arch_path}")
    spec = load_architecture(arch_path)
    model = build_model(spec)
    tensors, _ = load_checkpoint(ckpt)
    model.load_state_dict(tensors)
    return model


def _feature_cube(path: str) -> np.ndarray:
    cube = cube_io.load_cube(path)
    return cube.data


# ---------------------------------------------------------------- subcommands

def cmd_synth(args):
    start = time.perf_counter()
    spec = synth.load_scene_spec(args.scene) if args.scene else synth.SceneSpec()
    overrides = {k: v for k, v in {
        "lines": args.lines, "samples": args.samples, "n_classes": args.classes, "bands": args.bands,
        "noise_std": args.noise, "mixing_width": args.mixing, "rows_per_class": args.rows_per_class,
        "bump_amplitude": args.bump_amplitude, "seed": args.seed}.items() if v is not None}
    spec = synth.SceneSpec(**{**spec.to_kv(), **overrides})
    scene = synth.generate(spec)
    out = _run_dir(args)
    cube_io.save_cube(out / "dn.hdr", scene.dn)
    cube_io.save_cube(out / "reflectance_truth.hdr", scene.reflectance)
    labeling.save_labels(out / "labels_truth.hdr", scene.labels)
    cube_io.save_references(out / "refs.txt", scene.refs)
    labeling.write_annotations(out / "annotations.txt", scene.polygons)
    labeling.write_class_table(out / "classes.txt", scene.class_table)
    synth.save_scene_spec(out / "scene.txt", spec)
    _finish(args, out, None, {"scene": args.scene or "default"},
            {"dn": "dn.hdr", "labels_truth": "labels_truth.hdr", "annotations": "annotations.txt"}, start)
    print(f"scene={out} lines={spec.lines} samples={spec.samples} bands={spec.bands} classes={spec.n_classes}")


def cmd_correct(args):
    start = time.perf_counter()
    cfg = _config(args)
    cube = cube_io.load_cube(args.cube)
    refs = cube_io.load_references(args.refs)
    refl = cube_io.to_reflectance(cube, refs, cfg.clamp_max)
    if args.trim:
        refl = cube_io.trim_bands(refl, *args.trim)
    out = _run_dir(args)
    cube_io.save_cube(out / "reflectance.hdr", refl)
    _finish(args, out, cfg, {"cube": args.cube, "refs": args.refs}, {"reflectance": "reflectance.hdr"}, start)
    print(f"reflectance={out / 'reflectance.hdr'} bands={refl.bands}")


def cmd_ndvi_mask(args):
    start = time.perf_counter()
    cfg = _config(args)
    cube = cube_io.load_cube(args.cube)
    index = cube_io.ndvi(cube, cfg.red_nm, cfg.nir_nm)
    mask = labeling.threshold_mask(index, cfg.ndvi_threshold)
    out = _run_dir(args)
    write_raster(out / "ndvi.hdr", index.astype(np.float32), "f32", "NDVI")
    labeling.save_mask(out / "mask.hdr", mask)
    _finish(args, out, cfg, {"cube": args.cube}, {"ndvi": "ndvi.hdr", "mask": "mask.hdr"}, start)
    print(f"mask={out / 'mask.hdr'} vegetation_fraction={mask.mean():.4f}")


def cmd_rasterize(args):
    start = time.perf_counter()
    polys = labeling.parse_annotations(args.annotations)
    mask = labeling.load_mask(args.mask)
    raster = labeling.rasterize_labels(polys, mask)
    if args.classes:
        raster.check_classes(labeling.parse_class_table(args.classes))
    out = _run_dir(args)
    labeling.save_labels(out / "labels.hdr", raster)
    _finish(args, out, None, {"annotations": args.annotations, "mask": args.mask}, {"labels": "labels.hdr"}, start)
    counts = raster.counts()
    print(" ".join(f"class.{k}={v}" for k, v in counts.items()))


def cmd_fit_features(args):
    from .pipeline import training_pixels
    start = time.perf_counter()
    cfg = _config(args, require_seed=True)
    cube = cube_io.load_cube(args.cube)
    labels = labeling.load_labels(args.labels).labels
    pixels = training_pixels(cube.data, labels, cfg)
    model = fe.fit_features(pixels, cfg.n_features, cfg.fa_max_iter, cfg.fa_tol, cfg.seed)
    feats = fe.transform(model, cube.data).astype(np.float32)
    out = _run_dir(args)
    fe.save_factor_model(out / "factor_model.vhfa", model)
    cube_io.save_cube(out / "features.hdr",
                      cube_io.HyperCube(feats, np.arange(1, model.n_features + 1), cube_io.Units.FEATURES))
    mask = labels > 0
    sep = fe.dsi(feats[mask], labels[mask], max_per_class=args.dsi_per_class, seed=cfg.seed)
    summary = {"n_fit_pixels": len(pixels), "n_features": model.n_features, "converged": int(model.converged),
               "n_iter": model.n_iter, "dsi": repr(sep)}
    summary.update({f"explained_variance.{i + 1}": f"{v:.6f}" for i, v in enumerate(model.explained_variance())})
    write_kv(out / "summary.txt", summary)
    _finish(args, out, cfg, {"cube": args.cube, "labels": args.labels},
            {"factor_model": "factor_model.vhfa", "features": "features.hdr"}, start)
    print("\n".join(f"{k}={v}" for k, v in summary.items()))


def cmd_extract(args):
    from .pipeline import cut_splits
    start = time.perf_counter()
    cfg = _config(args, require_seed=True)
    feats = _feature_cube(args.features)
    labels = labeling.load_labels(args.labels).labels
    splits = cut_splits(feats, labels, cfg)
    out = _run_dir(args)
    meta = {"cube_ids": args.features, "window": cfg.patch_size, "n_features": feats.shape[2],
            "stride": cfg.stride, "seed": cfg.seed, "n_classes": int(labels.max())}
    patchset.save_patchset(out, splits, meta)
    _finish(args, out, cfg, {"features": args.features, "labels": args.labels}, {"patches": "manifest.txt"}, start)
    print(" ".join(f"{k}={len(v)}" for k, v in splits.items()))


def cmd_train(args):
    start = time.perf_counter()
    cfg = _config(args, require_seed=True)
    meta = patchset.load_manifest(args.patches)
    train_set = patchset.load_split(args.patches, "train")
    val_set = patchset.load_split(args.patches, "val")
    n_classes = args.n_classes or int(meta["n_classes"])
    if int(meta["window"]) != cfg.patch_size:
        cfg = cfg.override(patch_size=int(meta["window"]), overlap=int(meta["window"]) - int(meta["stride"]))
    cfg = cfg.override(n_features=int(meta["n_features"]))
    spec = cfg.arch_spec(n_classes)
    model = build_model(spec, seed=cfg.seed)
    if args.init:
        tensors, _ = load_checkpoint(args.init)
        load_pretrained(model, tensors, reinit_head=args.reinit_head)
    out = _run_dir(args)
    save_architecture(out / "arch.txt", spec)
    result = train(model, train_set, val_set, cfg.train_config(), checkpoint_path=out / "model.vhsc")
    save_checkpoint(out / "model.vhsc", model.state_dict())
    write_history(out / "history.csv", result.history)
    write_kv(out / "train_summary.txt", {"best_epoch": result.best_epoch, "best_val_loss": repr(result.best_val_loss),
                                         "epochs_run": result.epochs_run,
                                         "stopped_early": int(result.stopped_early)})
    _finish(args, out, cfg, {"patches": args.patches, "init": args.init or ""},
            {"checkpoint": "model.vhsc", "arch": "arch.txt", "history": "history.csv"}, start)
    print(f"best_epoch={result.best_epoch} best_val_loss={result.best_val_loss!r} epochs_run={result.epochs_run}")


def cmd_evaluate(args):
    start = time.perf_counter()
    model = _load_model(args.model)
    patches = patchset.load_split(args.patches, args.split)
    cm, pred = ev.evaluate_model(model, patches)
    m = ev.metrics(cm)
    out = _run_dir(args)
    names = labeling.parse_class_table(args.classes) if args.classes else None
    ev.write_report(out / "report.txt", m, names)
    ev.write_confusion_csv(out / "confusion.csv", cm)
    np.savetxt(out / "predictions.txt", np.column_stack([patches.labels, pred]), fmt="%d", header="truth pred")
    _finish(args, out, None, {"model": args.model, "patches": args.patches, "split": args.split},
            {"report": "report.txt", "confusion": "confusion.csv"}, start)
    print((out / "report.txt").read_text().strip())
    # percentage scale for reading next to published tables; files keep fractions
    print(" ".join(f"{k}={100 * m[k]:.2f}%" for k in ("oa", "aa", "kappa", "f1")))


def cmd_predict_map(args):
    start = time.perf_counter()
    model = _load_model(args.model)
    feats = _feature_cube(args.features)
    labels = labeling.load_labels(args.labels).labels
    predicted, errors = ev.predict_map(model, feats, labels)
    out = _run_dir(args)
    write_raster(out / "prediction.hdr", predicted, "u16", "Label")
    write_raster(out / "errors.hdr", errors.astype(np.uint16), "u16", "ErrorMap",
                 {"legend": "0 unlabeled, 1 correct, 2 wrong"})
    n_eval = int((errors > 0).sum())
    n_wrong = int((errors == ev.WRONG).sum())
    _finish(args, out, None, {"model": args.model, "features": args.features, "labels": args.labels},
            {"prediction": "prediction.hdr", "errors": "errors.hdr"}, start)
    print(f"evaluated={n_eval} wrong={n_wrong} oa={(n_eval - n_wrong) / max(n_eval, 1)!r}")


def _parse_grid(text: str) -> tuple[str, list]:
    key, _, values = text.partition("=")
    key = key.strip().replace("-", "_")
    if key not in ("patch_size", "train_fraction", "variant") or not values:
        raise UsageError(f"grid must look like patch_size=9,15,23 | train_fraction=0.1,1.0 | variant=a,b; got {text!r}")
    conv = {"patch_size": int, "train_fraction": float, "variant": str}[key]
    return key, [conv(v) for v in values.split(",")]


def cmd_sweep(args):
    from .pipeline import run_experiment
    start = time.perf_counter()
    cfg = _config(args, require_seed=True)
    key, values = _parse_grid(args.grid)
    cube = cube_io.load_cube(args.cube)
    labels = labeling.load_labels(args.labels).labels
    cells = {}
    for value in values:
        extra = {"overlap": max(0, value - cfg.stride)} if key == "patch_size" else {}
        cell_cfg = cfg.override(**{key: value}, **extra)

        def run(seed, c=cell_cfg):
            return run_experiment(cube, labels, c.override(seed=seed)).metrics
        cells[f"{key}={value}"] = run
    seeds = [cfg.seed + k for k in range(args.runs)]
    rows = ev.sweep(cells, seeds)
    out = _run_dir(args)
    ev.write_sweep_csv(out / "sweep.csv", rows)
    _finish(args, out, cfg, {"cube": args.cube, "labels": args.labels, "grid": args.grid, "runs": args.runs},
            {"sweep": "sweep.csv"}, start)
    print((out / "sweep.csv").read_text().strip())


def cmd_export_features(args):
    start = time.perf_counter()
    model = _load_model(args.model)
    patches = patchset.load_split(args.patches, args.split)
    out = _run_dir(args)
    feats = ev.export_features(model, patches, out / "features.npy")
    np.savetxt(out / "labels.txt", patches.labels, fmt="%d")
    _finish(args, out, None, {"model": args.model, "patches": args.patches, "split": args.split},
            {"features": "features.npy"}, start)
    print(f"rows={feats.shape[0]} width={feats.shape[1]}")


def cmd_param_audit(args):
    start = time.perf_counter()
    spec = load_architecture(args.arch) if args.arch else ArchitectureSpec(
        patch_size=args.patch_size or 23, n_features=args.n_features or 40,
        n_classes=args.n_classes or 17, variant=Variant(args.variant or "proposed"))
    audit = parameter_audit(spec)
    text = format_audit(audit)
    if args.out:
        out = _run_dir(args)
        (out / "audit.txt").write_text(text + "\n")
        _finish(args, out, None, {"arch": args.arch or "default"}, {"audit": "audit.txt"}, start)
    print(text)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vinehsi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--out", help="run directory (default: $VINEHSI_RUN_ROOT/<command>)")
        if config:
            p.add_argument("--config", help="key-value config file; flags override it")
            p.add_argument("--seed", type=int)
            p.add_argument("--threads", type=int)
        return p

    def hyper(p):
        p.add_argument("--patch-size", dest="patch_size", type=int)
        p.add_argument("--overlap", type=int)
        p.add_argument("--k-groups", dest="k_groups", type=int)
        p.add_argument("--train-fraction", dest="train_fraction", type=float)

    p = common(sub.add_parser("synth", help="generate a synthetic labelled scene"), config=False)
    p.add_argument("--scene", help="scene spec key-value file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    for flag, kind in (("lines", int), ("samples", int), ("classes", int), ("bands", int), ("noise", float),
                       ("mixing", int), ("rows-per-class", int), ("bump-amplitude", float)):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=kind)
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("correct", help="DN to reflectance with dark/white references"))
    p.add_argument("--cube", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--clamp-max", dest="clamp_max", type=float)
    p.add_argument("--trim", nargs=2, type=int, metavar=("LO", "HI"))
    p.set_defaults(func=cmd_correct)

    p = common(sub.add_parser("ndvi-mask", help="NDVI raster and vegetation mask"))
    p.add_argument("--cube", required=True)
    p.add_argument("--red-nm", dest="red_nm", type=float)
    p.add_argument("--nir-nm", dest="nir_nm", type=float)
    p.add_argument("--threshold", dest="ndvi_threshold", type=float)
    p.set_defaults(func=cmd_ndvi_mask)

    p = common(sub.add_parser("rasterize", help="polygons AND mask -> label raster"), config=False)
    p.add_argument("--annotations", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--classes")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_rasterize)

    p = common(sub.add_parser("fit-features", help="fit standardizer + factor analysis on training windows"))
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--n-features", dest="n_features", type=int)
    p.add_argument("--dsi-per-class", dest="dsi_per_class", type=int, default=300)
    hyper(p)
    p.set_defaults(func=cmd_fit_features)

    p = common(sub.add_parser("extract", help="cut, split and balance patches"))
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    hyper(p)
    p.set_defaults(func=cmd_extract)

    p = common(sub.add_parser("train", help="train the classifier"))
    p.add_argument("--patches", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--n-splits", dest="n_splits", type=int)
    p.add_argument("--transforms-per-split", dest="transforms_per_split", type=int)
    p.add_argument("--p-augment", dest="p_augment", type=float)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--init", help="checkpoint used as initial weights")
    p.add_argument("--reinit-head", dest="reinit_head", action="store_true")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("evaluate", help="metrics on a patch split"), config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--split", default="test", choices=patchset.SPLIT_NAMES)
    p.add_argument("--classes")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("predict-map", help="per-pixel predictions and error map"), config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_predict_map)

    p = common(sub.add_parser("sweep", help="patch-size / train-fraction / variant sweeps"))
    p.add_argument("--cube", required=True, help="reflectance cube")
    p.add_argument("--labels", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-features", dest="n_features", type=int)
    hyper(p)
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("export-features", help="flatten activations for external embedding"), config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--split", default="test", choices=patchset.SPLIT_NAMES)
    p.set_defaults(func=cmd_export_features)

    p = common(sub.add_parser("param-audit", help="parameter counts against the reference network"), config=False)
    p.add_argument("--arch")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--n-features", dest="n_features", type=int)
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.set_defaults(func=cmd_param_audit)
    return parser


def _fail(kind: str, code: int, exc: BaseException) -> int:
    message = str(exc).replace("\n", " ")
    print(f"error kind={kind} code={code} message={json.dumps(message)}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = getattr(args, "threads", None) or 1
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=threads):
            args.func(args)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (OSError, FormatError, CheckpointError) as exc:
        return _fail("io", EXIT_IO, exc)
    except NumericError as exc:
        return _fail("numeric", EXIT_NUMERIC, exc)
    except (ValueError, KeyError) as exc:
        return _fail("config", EXIT_CONFIG, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
