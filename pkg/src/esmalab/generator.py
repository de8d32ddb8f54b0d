"""Class-conditional perturbation generator and its easy-sample matching loop.

The generator is a dense encoder-decoder: a stem layer, a chain of
conditional residual blocks with a long skip from the stem into the last
block, and a linear head added onto the input.  Each block injects the
frozen target-class embedding after its first transform::

    a   = W1 h + b1 + (We e_target + be)
    c   = W2 a + b2
    n   = LayerNorm(c)
    out = sigmoid(Wg n + bg) * n + h

The raw output is smoothed (3x3 Gaussian, image-shaped inputs only),
projected into the epsilon box and fed to the surrogate, whose logits are
matched to an easy target-class sample's logits under smooth-L1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .attacks import UNBOUNDED, AttackResult, project_linf
from .embedding import EmbeddingTable
from .errors import InvalidInputError, TrainingFailedError
from .nn import backprop, forward, forward_cached
from .optim import AdamW

GENERATOR_VERSION = 1
LN_EPS = 1e-5


@dataclass(frozen=True)
class SmoothingKernel:
    weights: np.ndarray
    sigma: float

    @classmethod
    def gaussian(cls, sigma=1.0) -> "SmoothingKernel":
        ax = np.arange(-1, 2, dtype=np.float64)
        g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
        return cls(g / g.sum(), float(sigma))


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _glorot(rng, fan_out, fan_in):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class PerturbationGenerator:
    """Dense conditional encoder-decoder ``G(x, target) -> x'`` of the input's shape."""

    def __init__(self, params: dict, embedding: EmbeddingTable, n_blocks: int,
                 image_shape=None):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.embedding = embedding
        self.n_blocks = int(n_blocks)
        self.image_shape = tuple(image_shape) if image_shape is not None else None
        self.input_dim = self.params["stem_W"].shape[1]
        self.hidden = self.params["stem_W"].shape[0]
        if self.image_shape is not None and int(np.prod(self.image_shape)) != self.input_dim:
            raise InvalidInputError("image_shape does not match the input dimension")

    @classmethod
    def init(cls, input_dim, embedding: EmbeddingTable, hidden=32, n_blocks=3, seed=0,
             head_scale=1e-2, image_shape=None) -> "PerturbationGenerator":
        rng = np.random.default_rng(seed)
        d1 = embedding.dim
        p = {"stem_W": _glorot(rng, hidden, input_dim), "stem_b": np.zeros(hidden)}
        for i in range(n_blocks):
            p[f"b{i}_W1"] = _glorot(rng, hidden, hidden)
            p[f"b{i}_b1"] = np.zeros(hidden)
            p[f"b{i}_We"] = _glorot(rng, hidden, d1)
            p[f"b{i}_be"] = np.zeros(hidden)
            p[f"b{i}_W2"] = _glorot(rng, hidden, hidden)
            p[f"b{i}_b2"] = np.zeros(hidden)
            p[f"b{i}_ln_g"] = np.ones(hidden)
            p[f"b{i}_ln_b"] = np.zeros(hidden)
            p[f"b{i}_Wg"] = _glorot(rng, hidden, hidden)
            p[f"b{i}_bg"] = np.zeros(hidden)
        p["head_W"] = head_scale * _glorot(rng, input_dim, hidden)
        p["head_b"] = np.zeros(input_dim)
        return cls(p, embedding, n_blocks, image_shape)

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def param_names(self):
        return list(self.params)

    def copy(self) -> "PerturbationGenerator":
        return PerturbationGenerator({k: v.copy() for k, v in self.params.items()},
                                     self.embedding, self.n_blocks, self.image_shape)

    def zero_injection(self):
        for i in range(self.n_blocks):
            self.params[f"b{i}_We"][:] = 0.0
            self.params[f"b{i}_be"][:] = 0.0

    # -- forward / backward -------------------------------------------------

    def forward_cached(self, x, targets):
        p = self.params
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        targets = np.asarray(targets, dtype=np.int64).reshape(-1)
        if x.shape[1] != self.input_dim or len(targets) != len(x):
            raise InvalidInputError("generator input has the wrong shape")
        if targets.min(initial=0) < 0 or targets.max(initial=0) >= self.embedding.n_classes:
            raise InvalidInputError("target class out of range")
        e = self.embedding.vectors[targets]
        z0 = x @ p["stem_W"].T + p["stem_b"]
        h0 = np.maximum(z0, 0.0)
        cache = {"x": x, "e": e, "z0": z0, "h0": h0, "blocks": []}
        h = h0
        for i in range(self.n_blocks):
            if i == self.n_blocks - 1 and self.n_blocks > 1:
                h = h + h0
            a = h @ p[f"b{i}_W1"].T + p[f"b{i}_b1"] + e @ p[f"b{i}_We"].T + p[f"b{i}_be"]
            c = a @ p[f"b{i}_W2"].T + p[f"b{i}_b2"]
            mu = c.mean(axis=1, keepdims=True)
            sd = np.sqrt(c.var(axis=1, keepdims=True) + LN_EPS)
            nhat = (c - mu) / sd
            nrm = nhat * p[f"b{i}_ln_g"] + p[f"b{i}_ln_b"]
            gate = _sigmoid(nrm @ p[f"b{i}_Wg"].T + p[f"b{i}_bg"])
            out = gate * nrm + h
            cache["blocks"].append((h, a, nhat, sd, nrm, gate))
            h = out
        cache["h_last"] = h
        raw = x + h @ p["head_W"].T + p["head_b"]
        return raw, cache

    def __call__(self, x, targets):
        return self.forward_cached(x, targets)[0]

    def backward(self, cache, d_raw) -> dict:
        """Parameter gradients of ``sum(d_raw * raw)``."""
        p = self.params
        g = {}
        d_raw = np.asarray(d_raw, dtype=np.float64)
        h = cache["h_last"]
        g["head_W"] = d_raw.T @ h
        g["head_b"] = d_raw.sum(axis=0)
        dh = d_raw @ p["head_W"]
        e = cache["e"]
        dh0_skip = np.zeros_like(cache["h0"])
        for i in reversed(range(self.n_blocks)):
            h_in, a, nhat, sd, nrm, gate = cache["blocks"][i]
            # out = gate * nrm + h_in
            dt = dh * nrm * gate * (1.0 - gate)
            g[f"b{i}_Wg"] = dt.T @ nrm
            g[f"b{i}_bg"] = dt.sum(axis=0)
            dnrm = dh * gate + dt @ p[f"b{i}_Wg"]
            g[f"b{i}_ln_g"] = np.sum(dnrm * nhat, axis=0)
            g[f"b{i}_ln_b"] = dnrm.sum(axis=0)
            dn = dnrm * p[f"b{i}_ln_g"]
            dc = (dn - dn.mean(axis=1, keepdims=True)
                  - nhat * np.mean(dn * nhat, axis=1, keepdims=True)) / sd
            g[f"b{i}_W2"] = dc.T @ a
            g[f"b{i}_b2"] = dc.sum(axis=0)
            da = dc @ p[f"b{i}_W2"]
            g[f"b{i}_W1"] = da.T @ h_in
            g[f"b{i}_b1"] = da.sum(axis=0)
            g[f"b{i}_We"] = da.T @ e
            g[f"b{i}_be"] = da.sum(axis=0)
            dh = dh + da @ p[f"b{i}_W1"]
            if i == self.n_blocks - 1 and self.n_blocks > 1:
                dh0_skip = dh
        dz0 = (dh + (dh0_skip if self.n_blocks > 1 else 0.0)) * (cache["z0"] > 0)
        g["stem_W"] = dz0.T @ cache["x"]
        g["stem_b"] = dz0.sum(axis=0)
        return g

    # -- persistence --------------------------------------------------------

    def save(self, path):
        meta = {"version": GENERATOR_VERSION, "n_blocks": self.n_blocks,
                "image_shape": list(self.image_shape) if self.image_shape else None,
                "embedding_frozen": self.embedding.frozen}
        arrays = {f"p_{k}": v for k, v in self.params.items()}
        arrays["embedding"] = self.embedding.vectors
        arrays["meta"] = np.array(json.dumps(meta))
        with open(Path(path), "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "PerturbationGenerator":
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta["version"] != GENERATOR_VERSION:
                raise InvalidInputError("unsupported generator checkpoint version")
            params = {k[2:]: data[k].copy() for k in data.files if k.startswith("p_")}
            table = EmbeddingTable(data["embedding"].copy(), meta["embedding_frozen"])
        return cls(params, table, meta["n_blocks"], meta["image_shape"])


def generate(G: PerturbationGenerator, x, target_class) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    targets = np.broadcast_to(np.asarray(target_class, dtype=np.int64), (len(x),))
    return G(x, targets)


# --------------------------------------------------------------------------
# smoothing, clipping, loss
# --------------------------------------------------------------------------


def smooth(raw, kernel: SmoothingKernel | None, image_shape=None) -> np.ndarray:
    """3x3 smoothing of image-shaped rows; identity for flat inputs."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    if image_shape is None or kernel is None:
        return raw
    grids = raw.reshape((len(raw),) + tuple(image_shape))
    return kernels.conv3x3(grids, kernel.weights).reshape(raw.shape)


def smooth_adjoint(grad, kernel: SmoothingKernel | None, image_shape=None) -> np.ndarray:
    if image_shape is None or kernel is None:
        return grad
    grids = grad.reshape((len(grad),) + tuple(image_shape))
    return kernels.conv3x3_adjoint(grids, kernel.weights).reshape(grad.shape)


def smooth_and_clip(raw, x_orig, epsilon, kernel=None, data_range=UNBOUNDED,
                    image_shape=None) -> np.ndarray:
    return project_linf(smooth(raw, kernel, image_shape), np.atleast_2d(x_orig), epsilon,
                        data_range)


def _feasible_mask(s, x_orig, epsilon, data_range):
    lo = np.maximum(x_orig - epsilon, data_range[0])
    hi = np.minimum(x_orig + epsilon, data_range[1])
    return (s >= lo) & (s <= hi)


def smooth_l1(a, b) -> float:
    """Mean smooth-L1 (transition at 1) between two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError("smooth_l1 needs equal-length vectors")
    return float(_smooth_l1_rows(np.atleast_2d(a - b)).mean())


def _smooth_l1_rows(t):
    at = np.abs(t)
    return np.where(at < 1.0, 0.5 * t * t, at - 0.5).mean(axis=1)


@dataclass
class EMLossResult:
    loss: float
    grads: dict
    n_active: int


def em_loss(G: PerturbationGenerator, surrogate, x, labels, targets, anchor_feats, epsilon,
            kernel: SmoothingKernel | None = None, data_range=UNBOUNDED, need_grad=True
            ) -> EMLossResult:
    """Easy-sample matching loss over samples whose label differs from their target.

    ``anchor_feats[i]`` is the surrogate logit vector of the anchor sample
    drawn for row ``i``.  Gradients pass through the surrogate (read only),
    the projection (zero on clamped coordinates) and the smoothing.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    anchor_feats = np.atleast_2d(np.asarray(anchor_feats, dtype=np.float64))
    active = labels != targets
    if not active.any():
        raise InvalidInputError("every sample already belongs to its target class")
    x, targets, anchor_feats = x[active], targets[active], anchor_feats[active]
    n = len(x)

    raw, cache = G.forward_cached(x, targets)
    s = smooth(raw, kernel, G.image_shape)
    adv = project_linf(s, x, epsilon, data_range)
    logits, scache = forward_cached(surrogate, adv)
    t = logits - anchor_feats
    per_sample = _smooth_l1_rows(t)
    loss = float(per_sample.mean())
    if not need_grad:
        return EMLossResult(loss, {}, n)
    d_logits = np.where(np.abs(t) < 1.0, t, np.sign(t)) / (t.shape[1] * n)
    d_adv = backprop(surrogate, scache, d_logits, input_grad=True, param_grads=False).inputs
    d_s = d_adv * _feasible_mask(s, x, epsilon, data_range)
    d_raw = smooth_adjoint(d_s, kernel, G.image_shape)
    return EMLossResult(loss, G.backward(cache, d_raw), n)


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------


@dataclass
class EsmaTrainResult:
    generator: PerturbationGenerator
    loss_trace: np.ndarray      # epoch-mean loss, nan for epochs with no active sample
    n_updates: int


def train_esma(G: PerturbationGenerator, surrogate, dataset, book, epochs=300, lr=1e-4,
               epsilon=1.0, kernel=None, data_range=UNBOUNDED, seed=0, weight_decay=0.01,
               betas=(0.9, 0.999)) -> EsmaTrainResult:
    """One optimiser step per (sample, random target != label) pair, every epoch.

    For each sample a target is drawn uniformly over all classes; samples
    whose label equals the draw are skipped.  The matching target is the
    surrogate logit vector of one member of the target's easy set, drawn
    uniformly.  Returns a trained copy; ``G`` itself is left untouched.
    """
    if not G.embedding.frozen:
        raise InvalidInputError("embedding table must be frozen before generator training")
    G = G.copy()
    k_total = G.embedding.n_classes
    feats = {k: forward(surrogate, dataset.X[np.asarray(ids)])
             for k, ids in book.members.items()}
    names = G.param_names()
    # one flat buffer with per-parameter views keeps the optimiser step vectorised
    flat = np.concatenate([G.params[k].ravel() for k in names])
    offset = 0
    for k in names:
        size = G.params[k].size
        G.params[k] = flat[offset:offset + size].reshape(G.params[k].shape)
        offset += size
    opt = AdamW([flat], lr=lr, betas=betas, weight_decay=weight_decay)
    rng = np.random.default_rng([seed, 2])
    trace = []
    updates = 0
    for epoch in range(epochs):
        losses = []
        for i in range(len(dataset)):
            target = int(rng.integers(k_total))
            if dataset.y[i] == target:
                continue
            j = int(rng.integers(len(feats[target])))
            res = em_loss(G, surrogate, dataset.X[i:i + 1], dataset.y[i:i + 1], [target],
                          feats[target][j:j + 1], epsilon, kernel, data_range)
            if not np.isfinite(res.loss):
                raise TrainingFailedError(f"non-finite matching loss in epoch {epoch}")
            losses.append(res.loss)
            opt.step([np.concatenate([res.grads[k].ravel() for k in names])])
            updates += 1
        trace.append(float(np.mean(losses)) if losses else float("nan"))
    return EsmaTrainResult(G, np.asarray(trace), updates)


def esma_attack(G: PerturbationGenerator, x, targets, epsilon, kernel=None,
                data_range=UNBOUNDED):
    """Adversarial points ``clip_eps(W * G(x, target))`` wrapped as an attack result."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.int64)
    adv = smooth_and_clip(G(x, targets), x, epsilon, kernel, data_range, G.image_shape)
    return AttackResult(x, adv, targets, np.zeros((1, len(x))))
