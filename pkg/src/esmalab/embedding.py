"""Class-embedding pretraining by matching pairwise structure.

The generator's class embeddings are pulled towards the geometry of the
surrogate's per-class mean logits.  Both sets are summarised by pairwise
Euclidean-distance and cosine-similarity matrices, each row-softmaxed, and
compared with symmetric KL divergences.  A norm penalty keeps the embedding
distances bounded so the row-softmax entries cannot vanish.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, TrainingFailedError
from .nn import forward
from .optim import AdamW

EMBED_VERSION = 1


@dataclass
class EmbeddingTable:
    vectors: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)

    @property
    def n_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def max_norm(self) -> float:
        return float(np.linalg.norm(self.vectors, axis=1).max())

    @classmethod
    def random(cls, n_classes, dim=32, seed=0, scale=0.1) -> "EmbeddingTable":
        rng = np.random.default_rng(seed)
        return cls(scale * rng.standard_normal((n_classes, dim)))

    def save(self, path):
        with open(Path(path), "wb") as fh:
            np.savez(fh, format_version=np.array(EMBED_VERSION), vectors=self.vectors,
                     frozen=np.array(self.frozen))

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        with np.load(Path(path), allow_pickle=False) as data:
            if int(data["format_version"]) != EMBED_VERSION:
                raise InvalidInputError("unsupported embedding file version")
            return cls(data["vectors"].copy(), bool(data["frozen"]))


def class_prototypes(model, dataset) -> np.ndarray:
    """Row ``j`` is the mean surrogate logit vector of class ``j``."""
    logits = forward(model, dataset.X)
    k_total = dataset.n_classes
    out = np.zeros((k_total, logits.shape[1]))
    for k in range(k_total):
        rows = dataset.y == k
        if not rows.any():
            raise InvalidInputError(f"class {k} has no samples")
        out[k] = logits[rows].mean(axis=0)
    return out


def _pairwise_euclidean(v):
    diff = v[:, None, :] - v[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _unit_rows(v):
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        raise InvalidInputError("cosine similarity undefined for a zero vector")
    return v / norms[:, None], norms


def pairwise_matrices(vectors):
    """Pairwise Euclidean distances and cosine similarities."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or len(v) < 2:
        raise InvalidInputError("need at least two vectors")
    u, _ = _unit_rows(v)
    cos = np.clip(u @ u.T, -1.0, 1.0)
    np.fill_diagonal(cos, 1.0)
    return _pairwise_euclidean(v), cos


def row_softmax(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    z = np.exp(m - m.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def symmetric_kl(p, q) -> float:
    """``KL(p||q) + KL(q||p)`` summed over all entries of two row-stochastic matrices."""
    return float(np.sum((p - q) * (np.log(p) - np.log(q))))


def _sym_kl_grad_logits(p, q):
    """Gradient of ``symmetric_kl(p, softmax_rows(b))`` with respect to ``b``."""
    g = np.log(q) - np.log(p) + 1.0 - p / q
    return q * (g - np.sum(q * g, axis=1, keepdims=True))


@dataclass
class ManifoldLoss:
    total: float
    euclid_kl: float
    cosine_kl: float
    norm_penalty: float
    grad: np.ndarray = field(repr=False)


def manifold_loss(embeddings, prototypes, lambda1=5.0, lambda2=0.01) -> ManifoldLoss:
    """Structure-matching loss between embeddings and prototypes, with its gradient."""
    e = embeddings.vectors if isinstance(embeddings, EmbeddingTable) else np.asarray(embeddings, float)
    s = np.asarray(prototypes, dtype=np.float64)
    if len(e) != len(s) or len(e) < 2:
        raise InvalidInputError("need matching tables with at least two classes")
    s_euc, s_cos = pairwise_matrices(s)
    u, norms = _unit_rows(e)
    e_euc = _pairwise_euclidean(e)
    e_cos = np.clip(u @ u.T, -1.0, 1.0)
    np.fill_diagonal(e_cos, 1.0)

    p_euc, q_euc = row_softmax(s_euc), row_softmax(e_euc)
    p_cos, q_cos = row_softmax(s_cos), row_softmax(e_cos)
    kl_euc = symmetric_kl(p_euc, q_euc)
    kl_cos = symmetric_kl(p_cos, q_cos)
    penalty = float(norms.sum())

    # Euclidean branch: d||e_i - e_j|| / d e_i = (e_i - e_j) / ||e_i - e_j||
    g_euc = _sym_kl_grad_logits(p_euc, q_euc)
    g_sym = g_euc + g_euc.T
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(e_euc > 0, g_sym / e_euc, 0.0)
    np.fill_diagonal(w, 0.0)
    grad = w.sum(axis=1)[:, None] * e - w @ e

    # cosine branch through the unit vectors, then the normalisation Jacobian
    g_cos = lambda1 * _sym_kl_grad_logits(p_cos, q_cos)
    np.fill_diagonal(g_cos, 0.0)
    g_u = (g_cos + g_cos.T) @ u
    g_u -= np.sum(g_u * u, axis=1, keepdims=True) * u
    grad += g_u / norms[:, None]

    grad += lambda2 * u
    total = kl_euc + lambda1 * kl_cos + lambda2 * penalty
    return ManifoldLoss(total, kl_euc, kl_cos, penalty, grad)


def collapse_floor(n_classes: int, max_norm: float) -> float:
    """Lower bound on every row-softmaxed embedding distance entry.

    With all norms at most ``U`` the pairwise distances lie in ``[0, 2U]``,
    so no entry can fall below ``1 / (K exp(2U))``; the looser
    ``1 / (K exp(4U))`` is what the guard asserts.
    """
    return 1.0 / (n_classes * np.exp(2.0 * max_norm * 2.0))


@dataclass
class PretrainResult:
    table: EmbeddingTable
    loss_trace: np.ndarray
    guard_steps: np.ndarray
    guard_min_entry: np.ndarray
    guard_floor: np.ndarray

    @property
    def guard_ok(self) -> bool:
        return bool(np.all(self.guard_min_entry >= self.guard_floor))


def pretrain_embeddings(init, prototypes, lambda1=5.0, lambda2=0.01, steps=15000, lr=1.5e-5,
                        weight_decay=0.0, guard_every=100) -> PretrainResult:
    """AdamW on the manifold loss; returns a frozen table.

    The loss trace has ``steps + 1`` entries (initial value first).  The
    collapse guard records the smallest row-softmaxed embedding-distance
    entry every ``guard_every`` steps and at the end.
    """
    table = init if isinstance(init, EmbeddingTable) else EmbeddingTable(init)
    e = table.vectors.copy()
    opt = AdamW([e], lr=lr, weight_decay=weight_decay)
    trace = []
    g_steps, g_min, g_floor = [], [], []
    k = len(e)
    for step in range(steps + 1):
        res = manifold_loss(e, prototypes, lambda1, lambda2)
        if not np.isfinite(res.total):
            raise TrainingFailedError(f"manifold loss diverged at step {step}")
        trace.append(res.total)
        if step % guard_every == 0 or step == steps:
            q = row_softmax(_pairwise_euclidean(e))
            g_steps.append(step)
            g_min.append(float(q.min()))
            g_floor.append(collapse_floor(k, float(np.linalg.norm(e, axis=1).max())))
        if step < steps:
            opt.step([res.grad])
    return PretrainResult(EmbeddingTable(e, frozen=True), np.asarray(trace),
                          np.asarray(g_steps), np.asarray(g_min), np.asarray(g_floor))


def mean_offdiag_cosine(vectors) -> float:
    _, cos = pairwise_matrices(vectors)
    k = len(cos)
    return float((cos.sum() - np.trace(cos)) / (k * (k - 1)))


def matrix_rows(m):
    """``(i, j, value)`` rows for dumping a square matrix to CSV."""
    return [[i, j, float(m[i, j])] for i in range(m.shape[0]) for j in range(m.shape[1])]
