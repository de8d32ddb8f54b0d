import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esmalab.data import LabeledDataset
from esmalab.errors import InvalidConfigError
from esmalab.nn import MlpClassifier, TrainConfig, backward, forward, sgd_train
from esmalab.screening import (AnchorBook, SampleScores, anchors, normalized_difficulty,
                               score_samples, screen, screen_dataset, thresholds)

from helpers import central_diff, max_rel_err


def scores_of(losses, grads, labels=None):
    n = len(losses)
    labels = np.zeros(n, dtype=int) if labels is None else np.asarray(labels)
    return SampleScores(np.arange(n), labels, np.asarray(losses, float), np.asarray(grads, float))


def test_threshold_is_qth_order_statistic():
    s = scores_of([0.1, 0.5, 0.3], [0.2, 0.2, 0.4])
    assert thresholds(s, 2)[0] == (0.3, 0.2)
    assert thresholds(s, 1)[0] == (0.1, 0.2)


def test_threshold_keeps_duplicates():
    s = scores_of([0.2, 0.2, 0.4, 0.9, 0.1], [1, 1, 1, 1, 1], [0, 0, 0, 1, 1])
    thr = thresholds(s, 2)
    assert thr[0][0] == 0.2
    assert thr[1][0] == 0.9


def test_q_out_of_range_rejected():
    s = scores_of([0.1, 0.2], [0.1, 0.2])
    with pytest.raises(InvalidConfigError):
        thresholds(s, 3)
    with pytest.raises(InvalidConfigError):
        thresholds(s, 0)


def test_strictness_triggers_fallback():
    s = scores_of([0.1, 0.5, 0.3], [0.15, 0.1, 0.4])
    thr = thresholds(s, 2)
    assert thr[0] == (0.3, 0.15)
    sel = screen(s, thr, 2)
    # sample 0 has grad 0.15, not < 0.15; the fallback takes the two easiest samples
    assert sel.fallback[0]
    dif = normalized_difficulty(s)
    assert sel.members[0].tolist() == sorted(np.argsort(dif, kind="stable")[:2].tolist())


def test_q1_distinct_scores_falls_back_to_argmin():
    s = scores_of([0.4, 0.1, 0.3], [0.5, 0.2, 0.9])
    sel = screen(s, thresholds(s, 1), 1)
    assert sel.fallback[0]
    assert sel.members[0].tolist() == [1]


def test_non_strict_keeps_threshold_ties():
    s = scores_of([0.1, 0.5, 0.3], [0.15, 0.1, 0.4])
    sel = screen(s, thresholds(s, 2), 2, strict=False)
    assert not sel.fallback[0]
    assert sel.members[0].tolist() == [0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_members_satisfy_both_thresholds(seed, q):
    rng = np.random.default_rng(seed)
    s = scores_of(rng.uniform(0, 1, 40), rng.uniform(0, 1, 40), rng.integers(2, size=40) * 0
                  + np.arange(40) % 2)
    thr = thresholds(s, q)
    sel = screen(s, thr, q)
    for k, ids in sel.members.items():
        assert len(ids) > 0
        assert np.all(s.label[ids] == k)
        if not sel.fallback[k]:
            assert np.all(s.loss[ids] < thr[k][0]) and np.all(s.gradnorm[ids] < thr[k][1])
            assert len(ids) <= q - 1


def test_normalized_difficulty_examples():
    assert normalized_difficulty(scores_of([0, 1], [1, 0])).tolist() == [1.0, 1.0]
    d = normalized_difficulty(scores_of([0.2, 0.5, 0.9], [0.1, 0.3, 0.2]))
    assert d[0] == 0.0
    assert normalized_difficulty(scores_of([1, 1], [0, 2])).tolist() == [0.0, 1.0]


def test_normalized_difficulty_scale_invariant(rng):
    loss, grad = rng.uniform(0, 1, 20), rng.uniform(0, 1, 20)
    a = normalized_difficulty(scores_of(loss, grad))
    b = normalized_difficulty(scores_of(10 * loss, grad))
    assert np.array_equal(np.argsort(a, kind="stable"), np.argsort(b, kind="stable"))


def _toy(rng, n=40):
    y = np.arange(n) % 2
    X = rng.standard_normal((n, 2)) + np.where(y[:, None] == 0, -1.5, 1.5) * [1.0, 0.0]
    return LabeledDataset(X, y, 2)


def test_score_gradnorm_matches_finite_differences(rng):
    ds = _toy(rng, 6)
    m = MlpClassifier.init((2, 5, 2), seed=3)
    s = score_samples(m, ds)
    for i in range(len(ds)):
        x = ds.X[i:i + 1].copy()
        fd = central_diff(lambda: backward(m, x, ds.y[i:i + 1])[0], x)
        assert max_rel_err(s.gradnorm[i], np.linalg.norm(fd)) <= 1e-4
    assert np.array_equal(score_samples(m, ds).loss, s.loss)


def test_saturated_two_point_problem_scores_near_zero():
    ds = LabeledDataset(np.array([[-1.0, 0.0], [1.0, 0.0]]), np.array([0, 1]), 2)
    cfg = TrainConfig(batch_size=2, total_steps=4000, lr=0.5, lr_schedule="constant")
    m = sgd_train(MlpClassifier.init((2, 8, 2), seed=0), ds, cfg).model
    s = score_samples(m, ds)
    assert s.loss.max() <= 1e-3 and s.gradnorm.max() <= 1e-3


def test_anchor_is_exact_member_mean(rng):
    ds = _toy(rng)
    m = MlpClassifier.init((2, 6, 2), seed=1)
    _, book = screen_dataset(m, ds, 5)
    logits = forward(m, ds.X)
    for k in range(2):
        ids = book.members[k]
        assert np.all(ds.y[ids] == k)
        expect = sum(logits[i] for i in ids) / len(ids)
        assert np.max(np.abs(book.anchors[k] - expect)) <= 1e-12
        lo, hi = logits[ids].min(axis=0), logits[ids].max(axis=0)
        assert np.all(lo <= book.anchors[k] + 1e-15) and np.all(book.anchors[k] <= hi + 1e-15)


def test_anchor_of_one_and_two_members(rng):
    ds = _toy(rng, 6)
    m = MlpClassifier.init((2, 4, 2), seed=2)
    logits = forward(m, ds.X)
    book = anchors(m, ds, {0: np.array([0]), 1: np.array([1, 3])})
    assert np.allclose(book.anchors[0], logits[0], rtol=0, atol=1e-14)
    assert np.allclose(book.anchors[1], (logits[1] + logits[3]) / 2, rtol=0, atol=1e-15)


def test_empty_member_set_is_an_error(rng):
    ds = _toy(rng, 6)
    with pytest.raises(RuntimeError):
        anchors(MlpClassifier.init((2, 4, 2)), ds, {0: np.array([0]), 1: np.array([], int)})


def test_anchor_book_json_round_trip(tmp_path, rng):
    ds = _toy(rng)
    _, book = screen_dataset(MlpClassifier.init((2, 6, 2), seed=1), ds, 3)
    book.save(tmp_path / "a.json")
    back = AnchorBook.load(tmp_path / "a.json")
    assert np.array_equal(back.anchors, book.anchors)
    assert back.q == 3 and back.fallback == book.fallback
    for k in range(2):
        assert np.array_equal(back.members[k], book.members[k])
        assert back.thresholds[k] == book.thresholds[k]
