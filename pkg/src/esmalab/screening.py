"""Easy-sample screening and per-class anchor logits.

Samples are scored by their softmax-CE loss and the Euclidean norm of the
loss gradient with respect to the input.  Within each class the ``q``-th
smallest loss and gradient norm act as thresholds, and samples strictly
below both form the easy set ``A_k``.  The anchor ``a_k`` is the mean
surrogate logit vector over ``A_k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .nn import backward, forward, softmax_ce_rows


@dataclass
class SampleScores:
    sample_id: np.ndarray
    label: np.ndarray
    loss: np.ndarray
    gradnorm: np.ndarray

    def __len__(self):
        return len(self.sample_id)

    def of_class(self, k):
        return np.flatnonzero(self.label == k)

    def rows(self):
        return [[int(i), int(c), float(l), float(g)]
                for i, c, l, g in zip(self.sample_id, self.label, self.loss, self.gradnorm)]

    CSV_HEADER = ("sample_id", "class", "loss", "gradnorm")


def score_samples(model, dataset) -> SampleScores:
    """Loss and input-gradient norm of every sample under ``model``."""
    X, y = dataset.X, dataset.y
    logits = forward(model, X)
    _, grads = backward(model, X, y, input_grad=True)
    loss = softmax_ce_rows(logits, y)
    gradnorm = np.linalg.norm(grads.inputs, axis=1)
    return SampleScores(np.arange(len(y)), y.copy(), loss, gradnorm)


def thresholds(scores: SampleScores, q: int, n_classes: int | None = None) -> dict:
    """Per-class ``(thr_loss, thr_grad)``: the q-th smallest value of each score."""
    k_all = range(n_classes) if n_classes is not None else np.unique(scores.label)
    out = {}
    for k in k_all:
        rows = scores.of_class(k)
        if not 1 <= q <= len(rows):
            raise InvalidConfigError(
                f"q={q} outside [1, {len(rows)}] for class {k}")
        out[int(k)] = (float(np.sort(scores.loss[rows])[q - 1]),
                       float(np.sort(scores.gradnorm[rows])[q - 1]))
    return out


def normalized_difficulty(scores: SampleScores) -> np.ndarray:
    """Min-max normalised loss plus min-max normalised gradnorm.

    A constant column normalises to zeros.
    """
    if len(scores) < 2:
        raise InvalidInputError("need at least two samples to normalise")

    def mm(v):
        lo, hi = v.min(), v.max()
        return np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)

    return mm(np.asarray(scores.loss, float)) + mm(np.asarray(scores.gradnorm, float))


@dataclass
class Screening:
    members: dict            # class -> sorted sample ids
    fallback: dict           # class -> bool, True when the ranked fallback was used
    thresholds: dict         # class -> (thr_loss, thr_grad)
    q: int


def screen(scores: SampleScores, thr: dict, q: int | None = None, strict=True,
           difficulty=None) -> Screening:
    """Select ``A_k`` per class.

    With ``strict`` the comparisons are ``<`` on both criteria.  When a class
    ends up empty, its ``q`` lowest normalised-difficulty samples are taken
    instead and the class is flagged in ``fallback``.
    """
    if q is None:
        q = 1
    members, fallback = {}, {}
    for k, (t_loss, t_grad) in thr.items():
        rows = scores.of_class(k)
        if strict:
            keep = (scores.loss[rows] < t_loss) & (scores.gradnorm[rows] < t_grad)
        else:
            keep = (scores.loss[rows] <= t_loss) & (scores.gradnorm[rows] <= t_grad)
        chosen = scores.sample_id[rows[keep]]
        used = False
        if len(chosen) == 0:
            if difficulty is None:
                difficulty = normalized_difficulty(scores)
            order = np.argsort(difficulty[rows], kind="stable")
            chosen = scores.sample_id[rows[order[:q]]]
            used = True
        members[int(k)] = np.sort(chosen)
        fallback[int(k)] = used
    return Screening(members, fallback, dict(thr), q)


@dataclass
class AnchorBook:
    members: dict                 # class -> sample ids of A_k
    anchors: np.ndarray           # (K, K) row k = a_k
    thresholds: dict = field(default_factory=dict)
    q: int = 0
    fallback: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return self.anchors.shape[0]

    def to_json(self) -> str:
        doc = {
            "q": self.q,
            "classes": [
                {
                    "class": k,
                    "members": [int(i) for i in self.members[k]],
                    "thr_loss": self.thresholds.get(k, (float("nan"),) * 2)[0],
                    "thr_gradnorm": self.thresholds.get(k, (float("nan"),) * 2)[1],
                    "fallback": bool(self.fallback.get(k, False)),
                    "anchor": [float(v) for v in self.anchors[k]],
                }
                for k in range(self.n_classes)
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AnchorBook":
        doc = json.loads(text)
        cl = sorted(doc["classes"], key=lambda c: c["class"])
        return cls(
            members={c["class"]: np.array(c["members"], dtype=np.int64) for c in cl},
            anchors=np.array([c["anchor"] for c in cl], dtype=np.float64),
            thresholds={c["class"]: (float(c["thr_loss"]), float(c["thr_gradnorm"])) for c in cl},
            q=int(doc["q"]),
            fallback={c["class"]: bool(c["fallback"]) for c in cl},
        )

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "AnchorBook":
        return cls.from_json(Path(path).read_text())


def anchors(model, dataset, selection) -> AnchorBook:
    """Mean surrogate logits over each class's screened members."""
    if isinstance(selection, Screening):
        members, extra = selection.members, selection
    else:
        members, extra = dict(selection), None
    k_total = model.output_dim
    out = np.zeros((k_total, k_total))
    for k in range(k_total):
        ids = members.get(k)
        if ids is None or len(ids) == 0:
            raise RuntimeError(f"anchor set for class {k} is empty")
        out[k] = forward(model, dataset.X[ids]).mean(axis=0)
    if extra is None:
        return AnchorBook(members, out)
    return AnchorBook(members, out, extra.thresholds, extra.q, extra.fallback)


def screen_dataset(model, dataset, q: int, strict=True) -> tuple[SampleScores, AnchorBook]:
    """Score, threshold, screen and average in one call."""
    scores = score_samples(model, dataset)
    thr = thresholds(scores, q, dataset.n_classes)
    sel = screen(scores, thr, q, strict=strict)
    return scores, anchors(model, dataset, sel)
