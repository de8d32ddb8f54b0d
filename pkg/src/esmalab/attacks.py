"""Iterative targeted attacks and l-inf projection.

Two objectives are supported: targeted cross-entropy and the squared
distance between the surrogate logits and a target anchor.  Both are
minimised with sign steps on an L1-normalised momentum buffer (``mu = 0``
gives plain iterative FGSM).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .nn import backprop, forward, forward_cached, log_softmax, softmax

CE_TARGETED = "ce_targeted"
ANCHOR_SQ = "anchor_sq"

UNBOUNDED = (-np.inf, np.inf)


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    steps: int = 20
    step_size: float | None = None
    momentum: float = 1.0
    loss_kind: str = CE_TARGETED
    data_range: tuple = UNBOUNDED

    @property
    def alpha(self) -> float:
        return self.epsilon / self.steps if self.step_size is None else self.step_size

    def validate(self):
        if self.epsilon < 0 or self.steps < 1:
            raise InvalidConfigError("need epsilon >= 0 and steps >= 1")
        if self.loss_kind not in (CE_TARGETED, ANCHOR_SQ):
            raise InvalidConfigError(f"unknown loss kind {self.loss_kind!r}")


@dataclass
class AttackResult:
    x_orig: np.ndarray
    x_adv: np.ndarray
    targets: np.ndarray
    objective_trace: np.ndarray   # (steps + 1, n), initial objective first

    def __len__(self):
        return len(self.targets)

    @property
    def final_objective(self) -> np.ndarray:
        return self.objective_trace[-1]


def project_linf(x_adv, x_orig, epsilon, data_range=UNBOUNDED) -> np.ndarray:
    """Clamp into the epsilon box around ``x_orig``, then into ``data_range``."""
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_orig = np.asarray(x_orig, dtype=np.float64)
    if x_adv.shape != x_orig.shape:
        raise InvalidInputError("x_adv and x_orig shapes differ")
    out = np.minimum(np.maximum(x_adv, x_orig - epsilon), x_orig + epsilon)
    return np.clip(out, data_range[0], data_range[1])


def targeted_objective(model, x, targets, anchors=None, kind=CE_TARGETED):
    """Per-sample objective and its input gradient."""
    logits, cache = forward_cached(model, x)
    n = len(targets)
    if kind == CE_TARGETED:
        value = -log_softmax(logits)[np.arange(n), targets]
        d = softmax(logits)
        d[np.arange(n), targets] -= 1.0
    else:
        diff = logits - anchors
        value = np.sum(diff * diff, axis=1)
        d = 2.0 * diff
    grad = backprop(model, cache, d, input_grad=True, param_grads=False).inputs
    return value, grad


def momentum_iterative_attack(model, x, targets, config: AttackConfig, anchors=None) -> AttackResult:
    """Targeted MI-FGSM on ``model``.

    ``anchors`` is required for the anchor objective: one target logit vector
    per sample (``book.anchors[targets]`` for screened anchors).
    """
    config.validate()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if len(targets) != len(x):
        raise InvalidInputError("one target per sample required")
    if config.loss_kind == ANCHOR_SQ:
        if anchors is None:
            raise InvalidConfigError("anchor objective needs anchors")
        anchors = np.asarray(anchors, dtype=np.float64)
        if anchors.shape != (len(x), model.output_dim):
            raise InvalidInputError("anchors must hold one logit vector per sample")

    alpha = config.alpha
    x_adv = x.copy()
    g = np.zeros_like(x)
    trace = []
    for _ in range(config.steps):
        value, grad = targeted_objective(model, x_adv, targets, anchors, config.loss_kind)
        trace.append(value)
        l1 = np.abs(grad).sum(axis=1, keepdims=True)
        g = config.momentum * g + grad / np.maximum(l1, 1e-12)
        x_adv = project_linf(x_adv - alpha * np.sign(g), x, config.epsilon, config.data_range)
    trace.append(targeted_objective(model, x_adv, targets, anchors, config.loss_kind)[0])
    return AttackResult(x, x_adv, targets, np.asarray(trace))


def predict(model, x) -> np.ndarray:
    """Argmax class; ties go to the lowest index."""
    return np.argmax(forward(model, x), axis=1)


def success_flags(victims, result: AttackResult) -> np.ndarray:
    """``(n_victims, n)`` booleans: victim predicts the target on ``x_adv``."""
    return np.array([predict(v, result.x_adv) == result.targets for v in victims])


def transfer_success_rate(victims, result: AttackResult) -> np.ndarray:
    """Fraction of attacked samples each victim assigns to the target class."""
    if len(result) == 0:
        return np.zeros(len(victims))
    return success_flags(victims, result).mean(axis=1)


def budget_ok(result: AttackResult, epsilon, data_range=UNBOUNDED, slack=1e-9) -> bool:
    dev = np.abs(result.x_adv - result.x_orig).max(initial=0.0)
    lo, hi = data_range
    in_range = np.all(result.x_adv >= lo - slack) and np.all(result.x_adv <= hi + slack)
    return bool(dev <= epsilon + slack and in_range)


ATTACK_CSV_HEADER = ["sample_id", "source_class", "target_class", "victim", "success",
                     "final_objective"]


def attack_rows(result: AttackResult, sources, victims: dict, sample_ids=None):
    """Rows for the per-sample attack CSV; ``victims`` maps name -> model."""
    ids = np.arange(len(result)) if sample_ids is None else np.asarray(sample_ids)
    rows = []
    for name, model in victims.items():
        hit = predict(model, result.x_adv) == result.targets
        for i in range(len(result)):
            rows.append([int(ids[i]), int(sources[i]), int(result.targets[i]), name,
                         bool(hit[i]), float(result.final_objective[i])])
    return rows
