import numpy as np
import pytest

from vinehsi import cube_io, labeling
from vinehsi.features import dsi
from vinehsi.synth import SceneSpec, generate

SMALL = dict(lines=40, samples=80, n_classes=4, rows_per_class=2, bands=60)


def test_noiseless_pixels_equal_signatures():
    scene = generate(SceneSpec(noise_std=0.0, mixing_width=0, **SMALL))
    lab = scene.labels.labels
    refl = scene.reflectance.data
    for cid in range(1, 5):
        assert np.array_equal(refl[lab == cid], np.broadcast_to(scene.signatures[cid].astype(np.float32),
                                                                 refl[lab == cid].shape))


def test_counts_match_stripe_geometry():
    spec = SceneSpec(**SMALL)
    assert generate(spec).labels.counts() == spec.expected_counts()
    assert spec.expected_counts()[1] == 2 * 40 * 6


def test_dn_round_trip():
    scene = generate(SceneSpec(**SMALL))
    back = cube_io.to_reflectance(scene.dn, scene.refs)
    assert np.max(np.abs(back.data - scene.reflectance.data)) <= 1e-6


def test_ndvi_mask_and_polygons_recover_counts():
    spec = SceneSpec(noise_std=0.02, **SMALL)
    scene = generate(spec)
    mask = labeling.threshold_mask(cube_io.ndvi(scene.reflectance))
    assert labeling.rasterize_labels(scene.polygons, mask).counts() == spec.expected_counts()


def test_deterministic():
    a, b = generate(SceneSpec(seed=3, **SMALL)), generate(SceneSpec(seed=3, **SMALL))
    assert a.dn.data.tobytes() == b.dn.data.tobytes()
    assert np.array_equal(a.labels.labels, b.labels.labels)


def test_separability_drops_with_noise():
    def sep(noise):
        scene = generate(SceneSpec(noise_std=noise, **SMALL))
        lab = scene.labels.labels
        return dsi(scene.reflectance.data[lab > 0], lab[lab > 0], max_per_class=150, seed=0)
    assert sep(0.0) > sep(0.2)


def test_geometry_validation():
    with pytest.raises(ValueError, match="samples"):
        SceneSpec(n_classes=30)
