import numpy as np

from vinehsi import cube_io
from vinehsi.config import PipelineConfig
from vinehsi.evaluate import sweep
from vinehsi.pipeline import prepare_dataset, run_experiment, training_pixels, window_mask
from vinehsi.synth import SceneSpec, generate

SCENE = generate(SceneSpec(lines=40, samples=64, n_classes=3, rows_per_class=2, bands=50, seed=1))
CFG = PipelineConfig(patch_size=7, overlap=4, n_features=5, epochs=2, batch_size=32, lr=1e-3, seed=1)


def test_window_mask():
    mask = window_mask((10, 10), np.array([[2, 2], [7, 7]]), 3)
    assert mask.sum() == 18 and mask[1:4, 1:4].all() and mask[6:9, 6:9].all()


def test_features_fitted_on_training_windows_only():
    labels = SCENE.labels.labels
    ds = prepare_dataset(SCENE.reflectance, labels, CFG)
    pixels = training_pixels(SCENE.reflectance.data, labels, CFG)
    assert np.allclose(ds.factor_model.mean, pixels.astype(np.float64).mean(axis=0))
    assert pixels.shape[0] < labels.size


def test_splits_disjoint_and_fraction():
    labels = SCENE.labels.labels
    full = prepare_dataset(SCENE.reflectance, labels, CFG.override(k_groups=0))
    keys = {k: set(map(tuple, v.origins)) for k, v in full.splits.items()}
    assert not (keys["train"] & keys["val"] or keys["train"] & keys["test"] or keys["val"] & keys["test"])
    tenth = prepare_dataset(SCENE.reflectance, labels, CFG.override(k_groups=0, train_fraction=0.1))
    assert len(tenth.splits["train"]) == round(0.1 * len(full.splits["train"]))
    assert keys["test"] == set(map(tuple, tenth.splits["test"].origins))


def test_fraction_one_cell_is_plain_run():
    labels = SCENE.labels.labels
    plain = run_experiment(SCENE.reflectance, labels, CFG).metrics
    rows = sweep({"fraction=1.0": lambda s: run_experiment(SCENE.reflectance, labels,
                                                           CFG.override(train_fraction=1.0, seed=s)).metrics},
                 seeds=[CFG.seed])
    assert {r["metric"]: r["mean"] for r in rows}["oa"] == plain["oa"]


def test_band_trim():
    labels = SCENE.labels.labels
    ds = prepare_dataset(SCENE.reflectance, labels, CFG.override(band_lo=5, band_hi=45))
    assert ds.factor_model.n_bands == 40
    lo, hi = cube_io.central_band_range(50, 40)
    assert (lo, hi) == (5, 45)
