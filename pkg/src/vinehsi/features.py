"""Standardization, factor analysis (EM) and the distance-based separability index."""
from __future__ import annotations

import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist

FA_MAGIC = b"VHFA"
FA_VERSION = 1
MAX_FIT_SAMPLES = 200_000
PSI_FLOOR = 1e-6


class ConvergenceWarning(UserWarning):
    pass


def fit_standardizer(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-band mean and population standard deviation."""
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need an N x B matrix with N >= 2, got shape {x.shape}")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    const = np.flatnonzero(scale <= 1e-12 * np.maximum(1.0, np.abs(mean)))
    if const.size:
        raise ValueError(f"zero variance in band {int(const[0])} (constant bands: {const[:10].tolist()})")
    return mean, scale


@dataclass
class FactorModel:
    """Fitted standardizer + factor-analysis projection from B bands to F factors.

    ``loadings`` is F x B; ``noise_var`` holds the per-band uniquenesses.
    """

    mean: np.ndarray
    scale: np.ndarray
    loadings: np.ndarray
    noise_var: np.ndarray
    converged: bool = True
    n_iter: int = 0
    loglik: list = field(default_factory=list)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        self.loadings = np.atleast_2d(np.asarray(self.loadings, dtype=np.float64))
        self.noise_var = np.asarray(self.noise_var, dtype=np.float64)
        n_bands = self.mean.size
        if self.scale.shape != (n_bands,) or self.noise_var.shape != (n_bands,):
            raise ValueError("mean, scale and noise_var must share the band dimension")
        if self.loadings.shape[1] != n_bands:
            raise ValueError(f"loadings must be F x {n_bands}, got {self.loadings.shape}")
        if np.any(self.scale <= 0):
            raise ValueError("scale must be positive for every band")
        self._projection = None

    @property
    def n_features(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_bands(self) -> int:
        return self.loadings.shape[1]

    @property
    def projection(self) -> np.ndarray:
        """B x F matrix mapping standardized pixels to posterior-mean factor scores."""
        if self._projection is None:
            lam = self.loadings.T                          # B x F
            lam_psi = lam / self.noise_var[:, None]        # Psi^-1 Lambda
            prec = np.eye(self.n_features) + lam.T @ lam_psi
            self._projection = np.linalg.solve(prec, lam_psi.T).T
        return self._projection

    def explained_variance(self) -> np.ndarray:
        """Share of the total standardized variance carried by each factor."""
        return (self.loadings ** 2).sum(axis=1) / self.n_bands


def _loglik(cov: np.ndarray, lam: np.ndarray, psi: np.ndarray) -> float:
    """Average Gaussian log-likelihood per sample of the FA model."""
    n_bands = cov.shape[0]
    sigma = lam @ lam.T + np.diag(psi)
    chol = np.linalg.cholesky(sigma)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    inv_cov = np.linalg.solve(chol.T, np.linalg.solve(chol, cov))
    return -0.5 * (n_bands * np.log(2 * np.pi) + logdet + np.trace(inv_cov))


def fit_factor_analysis(pixels_std: np.ndarray, n_features: int = 40, max_iter: int = 1000,
                        tol: float = 1e-4, seed: int = 0,
                        max_samples: int = MAX_FIT_SAMPLES) -> FactorModel:
    """Fit FA by expectation-maximization on already standardized pixels.

    The returned model carries identity standardization (mean 0, scale 1);
    use :func:`fit_features` to fit both stages from raw pixels.  ``tol``
    applies to the per-sample log-likelihood improvement.
    """
    x = np.asarray(pixels_std, dtype=np.float64)
    n, n_bands = x.shape
    if n_features >= n_bands:
        raise ValueError(f"n_features ({n_features}) must be smaller than the band count ({n_bands})")
    if n_bands > n:
        raise ValueError(f"need at least as many samples ({n}) as bands ({n_bands})")
    if n > max_samples:
        rng = np.random.default_rng(seed)
        x = x[np.sort(rng.choice(n, size=max_samples, replace=False))]
        n = max_samples
    x = x - x.mean(axis=0)
    cov = x.T @ x / n

    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_features]
    lam = evecs[:, order] * np.sqrt(np.maximum(evals[order], 0.0))
    psi = np.maximum(np.diag(cov) - (lam ** 2).sum(axis=1), PSI_FLOOR)
    eye = np.eye(n_features)

    history = [_loglik(cov, lam, psi)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # E-step: posterior moments of the factors
        lam_psi = lam / psi[:, None]
        beta = np.linalg.solve(eye + lam.T @ lam_psi, lam_psi.T)          # F x B
        cov_beta = cov @ beta.T                                          # B x F
        ezz = eye - beta @ lam + beta @ cov_beta
        # M-step
        lam = np.linalg.solve(ezz, cov_beta.T).T
        psi = np.maximum(np.diag(cov) - np.einsum("bf,bf->b", lam, cov_beta), PSI_FLOOR)

        ll = _loglik(cov, lam, psi)
        if ll < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            raise AssertionError(f"EM log-likelihood decreased at iteration {it}: {history[-1]} -> {ll}")
        history.append(ll)
        if ll - history[-2] < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"factor analysis did not converge in {max_iter} iterations", ConvergenceWarning)
    return FactorModel(np.zeros(n_bands), np.ones(n_bands), lam.T, psi,
                       converged=converged, n_iter=it, loglik=history)


def fit_features(pixels: np.ndarray, n_features: int = 40, max_iter: int = 1000,
                 tol: float = 1e-4, seed: int = 0) -> FactorModel:
    """Fit the standardizer and the factor model on training pixels."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape[0] > MAX_FIT_SAMPLES:
        rng = np.random.default_rng(seed)
        pixels = pixels[np.sort(rng.choice(pixels.shape[0], size=MAX_FIT_SAMPLES, replace=False))]
    mean, scale = fit_standardizer(pixels)
    fa = fit_factor_analysis((pixels - mean) / scale, n_features, max_iter, tol, seed)
    return FactorModel(mean, scale, fa.loadings, fa.noise_var,
                       converged=fa.converged, n_iter=fa.n_iter, loglik=fa.loglik)


def transform(model: FactorModel, pixels: np.ndarray) -> np.ndarray:
    """Standardize then project to factor scores; works on (..., B) arrays."""
    pixels = np.asarray(pixels)
    if pixels.shape[-1] != model.n_bands:
        raise ValueError(f"model expects {model.n_bands} bands, got {pixels.shape[-1]}")
    z = (pixels.astype(np.float64) - model.mean) / model.scale
    return z @ model.projection


def save_factor_model(path: str | os.PathLike, model: FactorModel) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(FA_MAGIC)
        fh.write(struct.pack("<III", FA_VERSION, model.n_bands, model.n_features))
        for arr in (model.mean, model.scale, model.loadings, model.noise_var):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def load_factor_model(path: str | os.PathLike) -> FactorModel:
    raw = Path(path).read_bytes()
    if raw[:4] != FA_MAGIC:
        raise ValueError(f"{path}: not a factor-model file (bad magic)")
    version, n_bands, n_features = struct.unpack_from("<III", raw, 4)
    if version != FA_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = 16 + 8 * (3 * n_bands + n_features * n_bands)
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=16)
    mean, scale = values[:n_bands], values[n_bands:2 * n_bands]
    loadings = values[2 * n_bands:2 * n_bands + n_features * n_bands].reshape(n_features, n_bands)
    noise_var = values[2 * n_bands + n_features * n_bands:]
    return FactorModel(mean.copy(), scale.copy(), loadings.copy(), noise_var.copy())


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov distance between empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def dsi(features: np.ndarray, labels: np.ndarray, max_per_class: int | None = None,
        seed: int = 0) -> float:
    """Distance-based separability index in [0, 1] (higher is more separable).

    For every class, the KS distance between its within-class pairwise
    distances and its distances to all other samples, averaged over classes.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if max_per_class is not None:
        rng = np.random.default_rng(seed)
        keep = []
        for c in np.unique(y):
            idx = np.flatnonzero(y == c)
            if idx.size > max_per_class:
                idx = np.sort(rng.choice(idx, size=max_per_class, replace=False))
            keep.append(idx)
        keep = np.sort(np.concatenate(keep))
        x, y = x[keep], y[keep]
    classes, counts = np.unique(y, return_counts=True)
    small = classes[counts < 2]
    if small.size:
        warnings.warn(f"classes {small.tolist()} have fewer than 2 samples and are excluded")
    valid = classes[counts >= 2]
    if valid.size == 0 or classes.size < 2:
        raise ValueError("DSI needs at least two classes and one class with >= 2 samples")
    scores = []
    for c in valid:
        inside = x[y == c]
        outside = x[y != c]
        scores.append(ks_statistic(pdist(inside), cdist(inside, outside).ravel()))
    return float(np.mean(scores))
