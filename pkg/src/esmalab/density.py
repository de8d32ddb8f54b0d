"""Same-class local sample density, local empirical risk and binning helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import kernels
from .errors import EmptyNeighborhoodError, InvalidInputError
from .nn import forward, softmax_ce_rows


def log_ball_volume(d: int, r: float) -> float:
    if d < 1:
        raise InvalidInputError("dimension must be >= 1")
    if not r > 0:
        raise InvalidInputError("radius must be positive")
    return 0.5 * d * math.log(math.pi) + d * math.log(r) - float(gammaln(0.5 * d + 1.0))


def ball_volume(d: int, r: float) -> float:
    """Volume of the Euclidean ball of radius ``r`` in ``d`` dimensions.

    Returns ``inf`` when the volume exceeds the float range (large ``d`` and
    ``r > 1``); :func:`log_ball_volume` stays finite there.
    """
    log_v = log_ball_volume(d, r)
    try:
        return math.pi ** (0.5 * d) * r ** d / math.gamma(0.5 * d + 1.0)
    except OverflowError:
        return math.exp(log_v) if log_v < 709.0 else math.inf


@dataclass(frozen=True)
class DensityQueryResult:
    count: int
    volume: float
    density: float


class DensityIndex:
    """Per-class point lists answering exact closed-ball count queries."""

    def __init__(self, X, y, n_classes=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or len(X) != len(y):
            raise InvalidInputError("X must be (n, d) with one label per row")
        self.dim = X.shape[1]
        self.n_classes = int(n_classes if n_classes is not None else (y.max() + 1 if len(y) else 0))
        self.X = X
        self.y = y
        self._ids = [np.flatnonzero(y == k) for k in range(self.n_classes)]
        self._points = [np.ascontiguousarray(X[ids]) for ids in self._ids]

    @classmethod
    def from_dataset(cls, dataset) -> "DensityIndex":
        return cls(dataset.X, dataset.y, dataset.n_classes)

    def _check_class(self, j):
        if not 0 <= int(j) < self.n_classes:
            raise InvalidInputError(f"unknown class {j}")
        return int(j)

    def class_ids(self, j) -> np.ndarray:
        return self._ids[self._check_class(j)]

    def counts(self, j, queries, r) -> np.ndarray:
        """Closed-ball class-``j`` counts for each query row."""
        j = self._check_class(j)
        if not r > 0:
            raise InvalidInputError("radius must be positive")
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if q.shape[1] != self.dim:
            raise InvalidInputError(f"query dimension {q.shape[1]} != {self.dim}")
        return kernels.ball_counts(self._points[j], q, r)

    def densities(self, j, queries, r) -> np.ndarray:
        return self.counts(j, queries, r) / ball_volume(self.dim, r)

    def densities_per_row(self, classes, queries, r) -> np.ndarray:
        """Density of class ``classes[i]`` around ``queries[i]`` for every row."""
        classes = np.asarray(classes, dtype=np.int64)
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        out = np.zeros(len(queries))
        for k in np.unique(classes):
            rows = classes == k
            out[rows] = self.densities(k, queries[rows], r)
        return out

    def neighbours(self, j, x0, r) -> np.ndarray:
        """Dataset ids of class-``j`` points with ``||x - x0|| <= r``."""
        j = self._check_class(j)
        diff = self._points[j] - np.asarray(x0, dtype=np.float64)
        return self._ids[j][np.einsum("ij,ij->i", diff, diff) <= r * r]


def local_density(index: DensityIndex, j, x0, r) -> DensityQueryResult:
    count = int(index.counts(j, np.asarray(x0, dtype=np.float64)[None, :], r)[0])
    vol = ball_volume(index.dim, r)
    return DensityQueryResult(count, vol, count / vol)


def local_empirical_risk(model, index: DensityIndex, j, x0, r) -> float:
    """Mean loss of ``model`` over the class-``j`` samples in the ball around ``x0``."""
    ids = index.neighbours(j, x0, r)
    if len(ids) == 0:
        raise EmptyNeighborhoodError(f"no class-{j} samples within r={r} of the query")
    losses = softmax_ce_rows(forward(model, index.X[ids]), np.full(len(ids), int(j)))
    return float(losses.mean())


def local_risks(model, index: DensityIndex, r) -> np.ndarray:
    """``R_(y_i, x_i, r)`` for every dataset sample (neighbourhoods contain ``x_i``)."""
    losses = softmax_ce_rows(forward(model, index.X), index.y)
    out = np.empty(len(index.y))
    for i, (x0, j) in enumerate(zip(index.X, index.y)):
        out[i] = losses[index.neighbours(j, x0, r)].mean()
    return out


@dataclass
class BinnedStatistic:
    edges: np.ndarray
    count: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.count == 0

    def rows(self):
        for k in range(len(self.count)):
            yield self.edges[k], self.edges[k + 1], int(self.count[k]), self.mean[k], self.std[k]


def bin_index(keys, edges) -> np.ndarray:
    """Bin number per key; -1 for keys outside ``[edges[0], edges[-1]]``.

    Bins are left-closed/right-open except the last, which is closed.
    """
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise InvalidInputError("bin edges must be strictly increasing")
    keys = np.asarray(keys, dtype=np.float64)
    b = np.searchsorted(edges, keys, side="right") - 1
    b[keys == edges[-1]] = len(edges) - 2
    b[(keys < edges[0]) | (keys > edges[-1]) | np.isnan(keys)] = -1
    return b


def binned_statistic(values, keys, edges) -> BinnedStatistic:
    values = np.asarray(values, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    if values.shape != keys.shape:
        raise InvalidInputError("values and keys must have equal length")
    edges = np.asarray(edges, dtype=np.float64)
    b = bin_index(keys, edges)
    nb = len(edges) - 1
    count = np.zeros(nb, dtype=np.int64)
    mean = np.full(nb, np.nan)
    std = np.full(nb, np.nan)
    for k in range(nb):
        v = values[b == k]
        count[k] = len(v)
        if len(v):
            mean[k] = v.mean()
            std[k] = v.std()
    return BinnedStatistic(edges, count, mean, std)


def equal_width_edges(keys, n_bins) -> np.ndarray:
    """``n_bins`` equal-width bins spanning the observed key range."""
    keys = np.asarray(keys, dtype=np.float64)
    lo, hi = float(np.min(keys)), float(np.max(keys))
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n_bins + 1)


def density_rows(ids, classes, densities, losses, gradnorms):
    """Rows for the ``(sample_id, class, density, loss, gradnorm)`` CSV."""
    return [[int(i), int(c), float(d), float(l), float(g)]
            for i, c, d, l, g in zip(ids, classes, densities, losses, gradnorms)]


DENSITY_CSV_HEADER = ["sample_id", "class", "density", "loss", "gradnorm"]
