"""Labelled point sets and the synthetic Gaussian-mixture generator."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError
from .reporting import write_csv


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise InvalidInputError("X must be (n, d) with one label per row")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise InvalidInputError("labels must lie in [0, n_classes)")

    def __len__(self):
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def class_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.y == k)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx], self.n_classes)


@dataclass
class GaussianMixtureSpec:
    means: np.ndarray
    covariances: np.ndarray
    priors: np.ndarray
    n_samples: int = 200
    seed: int = 0

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        k, d = self.means.shape
        self.covariances = np.asarray(self.covariances, dtype=np.float64).reshape(k, d, d)
        self.priors = np.asarray(self.priors, dtype=np.float64)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def validate(self):
        k = self.n_classes
        if self.priors.shape != (k,) or np.any(self.priors < 0):
            raise InvalidInputError("need one non-negative prior per class")
        if abs(self.priors.sum() - 1.0) > 1e-12:
            raise InvalidInputError("priors must sum to 1")
        for c in self.covariances:
            if not np.allclose(c, c.T, rtol=0, atol=1e-12):
                raise InvalidInputError("covariances must be symmetric")
            if np.linalg.det(c) < 1e-12:
                raise InvalidInputError("covariance is singular or nearly so")
            try:
                np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                raise InvalidInputError("covariance is not positive definite") from None
        if self.n_samples < 1:
            raise InvalidInputError("n_samples must be positive")

    def with_seed(self, seed, n_samples=None) -> "GaussianMixtureSpec":
        return GaussianMixtureSpec(self.means, self.covariances, self.priors,
                                   self.n_samples if n_samples is None else n_samples, seed)


def two_gaussians(n_samples=200, seed=0, separation=1.5) -> GaussianMixtureSpec:
    """Two equal-prior isotropic unit Gaussians centred at ``(+-separation, 0)``."""
    return GaussianMixtureSpec(
        means=[[-separation, 0.0], [separation, 0.0]],
        covariances=[np.eye(2), np.eye(2)],
        priors=[0.5, 0.5],
        n_samples=n_samples,
        seed=seed,
    )


def three_gaussians(n_samples=300, seed=0) -> GaussianMixtureSpec:
    """Three populations on a triangle, for the multi-class variant."""
    ang = np.deg2rad([90.0, 210.0, 330.0])
    means = 1.8 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return GaussianMixtureSpec(means, [np.eye(2)] * 3, [1 / 3] * 3, n_samples, seed)


def gen_gaussian_mixture(spec: GaussianMixtureSpec) -> LabeledDataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    labels = rng.choice(spec.n_classes, size=spec.n_samples, p=spec.priors)
    z = rng.standard_normal((spec.n_samples, spec.dim))
    x = np.empty_like(z)
    for k in range(spec.n_classes):
        rows = labels == k
        chol = np.linalg.cholesky(spec.covariances[k])
        x[rows] = spec.means[k] + z[rows] @ chol.T
    return LabeledDataset(x, labels, spec.n_classes)


def class_log_densities(spec: GaussianMixtureSpec, x) -> np.ndarray:
    """``log N(x | mean_k, cov_k)`` for every row of ``x`` and class ``k``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = spec.dim
    out = np.empty((len(x), spec.n_classes))
    for k in range(spec.n_classes):
        chol = np.linalg.cholesky(spec.covariances[k])
        sol = np.linalg.solve(chol, (x - spec.means[k]).T)
        maha = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, k] = -0.5 * (maha + logdet + d * np.log(2 * np.pi))
    return out


def bayes_posterior(spec: GaussianMixtureSpec, x) -> np.ndarray:
    """Exact class posteriors of the mixture, one row per point."""
    spec.validate()
    with np.errstate(divide="ignore"):
        joint = class_log_densities(spec, x) + np.log(spec.priors)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def save_dataset_csv(dataset: LabeledDataset, path) -> None:
    header = ["sample_id", "label"] + [f"x{j}" for j in range(dataset.dim)]
    rows = [[i, int(lbl)] + list(map(float, row))
            for i, (row, lbl) in enumerate(zip(dataset.X, dataset.y))]
    write_csv(path, header, rows)


def load_dataset_csv(path, n_classes=None) -> LabeledDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    cols = [i for i, h in enumerate(header) if h.startswith("x")]
    x = np.array([[float(r[i]) for i in cols] for r in rows]).reshape(len(rows), len(cols))
    y = np.array([int(r[header.index("label")]) for r in rows], dtype=np.int64)
    k = n_classes if n_classes is not None else (int(y.max()) + 1 if len(y) else 0)
    return LabeledDataset(x, y, k)
