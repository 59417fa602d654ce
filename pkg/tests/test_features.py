import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ks_2samp

from vinehsi import features as fe

from oracles import dsi_oracle


def power_iteration(a, iters=2000):
    v = np.ones(a.shape[0]) / np.sqrt(a.shape[0])
    for _ in range(iters):
        v = a @ v
        v /= np.linalg.norm(v)
    return v


def test_standardizer_examples():
    mean, scale = fe.fit_standardizer(np.array([[1.0], [3.0]]))
    assert mean.tolist() == [2.0] and scale.tolist() == [1.0]
    rng = np.random.default_rng(0)
    x = rng.normal(size=(500, 4))
    x = (x - x.mean(0)) / x.std(0)
    mean, scale = fe.fit_standardizer(x)
    assert np.allclose(mean, 0, atol=1e-9) and np.allclose(scale, 1, atol=1e-9)


def test_constant_band_named():
    x = np.random.default_rng(0).normal(size=(20, 3))
    x[:, 1] = 4.0
    with pytest.raises(ValueError, match="band 1"):
        fe.fit_standardizer(x)


def test_rank_one_direction_matches_top_eigenvector():
    rng = np.random.default_rng(0)
    lam = rng.normal(size=8)
    f = rng.normal(size=(2000, 1))
    x = f * lam
    model = fe.fit_features(x, n_features=1)
    z = (x - model.mean) / model.scale
    v = power_iteration(np.cov(z, rowvar=False, bias=True))
    load = model.loadings[0]
    cosine = abs(load @ v) / np.linalg.norm(load)
    assert cosine >= 0.999


def test_isotropic_noise():
    # per-band communality (sum of squared loadings) is the variance the factors
    # claim; the norm of a whole loading vector picks up sampling noise from all
    # B bands and sits near 0.3 at this N for any maximum-likelihood fit
    x = np.random.default_rng(1).normal(size=(10_000, 40))
    model = fe.fit_features(x, n_features=1)
    assert np.allclose(model.noise_var, 1.0, atol=0.1)
    assert np.all((model.loadings ** 2).sum(axis=0) <= 0.1)


def test_default_shapes():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(600, 140)) + rng.normal(size=(600, 5)) @ rng.normal(size=(5, 140))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fe.ConvergenceWarning)
        model = fe.fit_features(x, n_features=40, max_iter=50, tol=1e-3)
    assert model.loadings.shape == (40, 140)
    assert fe.transform(model, x).shape == (600, 40)


def test_loglik_monotone_and_converges():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3000, 3)) @ rng.normal(size=(3, 12)) + 0.3 * rng.normal(size=(3000, 12))
    model = fe.fit_features(x, n_features=3)
    assert model.converged
    assert np.all(np.diff(model.loglik) >= -1e-12)


def test_nonconvergence_warns():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(500, 3)) @ rng.normal(size=(3, 12)) + 0.3 * rng.normal(size=(500, 12))
    with pytest.warns(fe.ConvergenceWarning):
        fe.fit_features(x, n_features=6, max_iter=2, tol=1e-12)


@pytest.fixture(scope="module")
def fitted():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2000, 3)) @ rng.normal(size=(3, 15)) + 0.2 * rng.normal(size=(2000, 15)) + 5.0
    return x, fe.fit_features(x, n_features=4)


def test_transform_centres(fitted):
    x, model = fitted
    assert np.allclose(fe.transform(model, model.mean), 0.0)
    scores = fe.transform(model, x)
    assert np.all(np.isfinite(scores))
    assert np.all(np.abs(scores.mean(axis=0)) < 1e-6)


@given(st.floats(-2, 3), st.integers(0, 1999), st.integers(0, 1999))
@settings(max_examples=30)
def test_transform_linear(fitted, a, i, j):
    x, model = fitted
    lhs = fe.transform(model, a * x[i] + (1 - a) * x[j])
    rhs = a * fe.transform(model, x[i]) + (1 - a) * fe.transform(model, x[j])
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_transform_on_cube(fitted):
    x, model = fitted
    cube = x[:12].reshape(3, 4, 15)
    assert np.allclose(fe.transform(model, cube).reshape(12, 4), fe.transform(model, x[:12]))


def test_factor_model_round_trip(tmp_path, fitted):
    _, model = fitted
    fe.save_factor_model(tmp_path / "fa.vhfa", model)
    back = fe.load_factor_model(tmp_path / "fa.vhfa")
    for name in ("mean", "scale", "loadings", "noise_var"):
        assert np.array_equal(getattr(back, name), getattr(model, name))
    raw = (tmp_path / "fa.vhfa").read_bytes()
    (tmp_path / "bad.vhfa").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="bytes"):
        fe.load_factor_model(tmp_path / "bad.vhfa")


def test_ks_matches_scipy(rng):
    for _ in range(50):
        a, b = rng.normal(size=rng.integers(1, 60)), rng.normal(0.3, 1, size=rng.integers(1, 60))
        assert fe.ks_statistic(a, b) == pytest.approx(ks_2samp(a, b).statistic, abs=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(1, 5))
def test_dsi_matches_pairwise_oracle(seed, n_classes, dim):
    rng = np.random.default_rng(seed)
    y = np.concatenate([np.arange(n_classes), rng.integers(0, n_classes, 40)])
    x = rng.normal(size=(y.size, dim)) + y[:, None] * rng.random()
    assert fe.dsi(x, y) == pytest.approx(dsi_oracle(x, y), abs=1e-9)


def test_dsi_identical_clouds_near_zero():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1000, 3))
    y = np.repeat([1, 2], 500)
    assert fe.dsi(x, y) <= 0.1


def test_dsi_separated_clusters():
    rng = np.random.default_rng(6)
    x = np.concatenate([rng.normal(0, 0.1, (200, 3)), rng.normal(100, 0.1, (200, 3))])
    y = np.repeat([1, 2], 200)
    assert fe.dsi(x, y) >= 0.95


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25)
def test_dsi_invariances(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 4))
    y = rng.integers(1, 4, 60)
    y[:3] = [1, 2, 3]
    base = fe.dsi(x, y)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    moved = 2.5 * x @ q + rng.normal(size=4) * 10
    assert fe.dsi(moved, y) == pytest.approx(base, abs=1e-9)
    swapped = np.where(y == 1, 2, np.where(y == 2, 1, y))
    assert fe.dsi(x, swapped) == pytest.approx(base, abs=1e-12)


def test_dsi_small_class_warns():
    x = np.random.default_rng(0).normal(size=(7, 2))
    with pytest.warns(UserWarning, match="fewer than 2"):
        fe.dsi(x, np.array([1, 1, 1, 2, 2, 2, 3]))
