import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esmalab.data import LabeledDataset
from esmalab.embedding import (EmbeddingTable, class_prototypes, collapse_floor, manifold_loss,
                               matrix_rows, mean_offdiag_cosine, pairwise_matrices,
                               pretrain_embeddings, row_softmax, symmetric_kl)
from esmalab.errors import InvalidInputError
from esmalab.nn import MlpClassifier, forward

import oracles


def _ds(rng, n=12, k=3):
    y = np.arange(n) % k
    return LabeledDataset(rng.standard_normal((n, 2)), y, k)


def test_prototypes_match_recomputation(rng):
    ds = _ds(rng)
    m = MlpClassifier.init((2, 5, 3), seed=0)
    mu = class_prototypes(m, ds)
    for k in range(3):
        rows = [forward(m, ds.X[i:i + 1])[0] for i in range(len(ds)) if ds.y[i] == k]
        assert np.max(np.abs(mu[k] - sum(rows) / len(rows))) <= 1e-12


def test_prototype_of_single_sample_and_pair(rng):
    x = rng.standard_normal((3, 2))
    ds = LabeledDataset(x, np.array([0, 1, 1]), 2)
    m = MlpClassifier.init((2, 4, 2), seed=1)
    logits = forward(m, x)
    mu = class_prototypes(m, ds)
    assert np.allclose(mu[0], logits[0], rtol=0, atol=1e-14)
    assert np.allclose(mu[1], (logits[1] + logits[2]) / 2, rtol=0, atol=1e-14)


def test_missing_class_rejected(rng):
    ds = LabeledDataset(rng.standard_normal((4, 2)), np.zeros(4, int), 2)
    with pytest.raises(InvalidInputError):
        class_prototypes(MlpClassifier.init((2, 3, 2)), ds)


def test_pairwise_identical_and_orthonormal():
    euc, cos = pairwise_matrices(np.ones((3, 4)))
    assert not euc.any() and np.all(cos == 1.0)
    euc, cos = pairwise_matrices(np.eye(2))
    assert euc[0, 1] == pytest.approx(np.sqrt(2.0), abs=1e-15)
    assert cos[0, 1] == 0.0


def test_pairwise_matches_double_loop(rng):
    v = rng.standard_normal((6, 4))
    euc, cos = pairwise_matrices(v)
    for i in range(6):
        for j in range(6):
            d = np.sqrt(sum((v[i, t] - v[j, t]) ** 2 for t in range(4)))
            c = np.dot(v[i], v[j]) / (np.linalg.norm(v[i]) * np.linalg.norm(v[j]))
            assert abs(euc[i, j] - d) <= 1e-12 and abs(cos[i, j] - c) <= 1e-12
    assert np.array_equal(euc, euc.T) and np.all(np.diag(euc) == 0)
    assert np.all(np.diag(cos) == 1.0) and np.all(np.abs(cos) <= 1.0)


def test_zero_vector_rejected_for_cosine():
    with pytest.raises(InvalidInputError):
        pairwise_matrices(np.array([[0.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(InvalidInputError):
        manifold_loss(np.array([[0.0, 0.0], [1.0, 0.0]]), np.eye(2))


def test_row_softmax_properties(rng):
    assert np.allclose(row_softmax(np.full((3, 3), 2.0)), 1.0 / 3.0, rtol=0, atol=1e-15)
    m = 5.0 * rng.standard_normal((5, 5))
    p = row_softmax(m)
    assert np.all(p > 0) and np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-9)
    shifted = m.copy()
    shifted[2] += 40.0
    assert np.allclose(row_softmax(shifted)[2], p[2], rtol=0, atol=1e-15)


def test_matching_structure_leaves_only_the_norm_term(rng):
    s = rng.standard_normal((4, 3))
    res = manifold_loss(s, s, 5.0, 0.01)
    assert res.euclid_kl == 0.0 and res.cosine_kl == 0.0
    assert res.total == pytest.approx(0.01 * np.linalg.norm(s, axis=1).sum(), rel=1e-14)
    assert manifold_loss(s, s, 5.0, 0.0).total == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_symmetric_kl_blocks_nonnegative(seed):
    rng = np.random.default_rng(seed)
    res = manifold_loss(rng.standard_normal((4, 3)), rng.standard_normal((4, 4)))
    assert res.euclid_kl >= 0 and res.cosine_kl >= 0


def test_symmetric_kl_is_symmetric(rng):
    p, q = row_softmax(rng.standard_normal((3, 3))), row_softmax(rng.standard_normal((3, 3)))
    assert symmetric_kl(p, q) == pytest.approx(symmetric_kl(q, p), rel=1e-14)


def test_gradient_on_k4_d8(rng):
    e = rng.standard_normal((4, 8))
    s = rng.standard_normal((4, 4))
    assert oracles.check_manifold(e, s, 5.0, 0.01) <= 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_gradient_property(seed):
    assert oracles.check_manifold(*oracles.manifold_instance(np.random.default_rng(seed))) <= 1e-4


def test_zero_steps_returns_init(rng):
    init = EmbeddingTable(rng.standard_normal((3, 4)))
    res = pretrain_embeddings(init, rng.standard_normal((3, 3)), steps=0)
    assert np.array_equal(res.table.vectors, init.vectors)
    assert res.table.frozen and len(res.loss_trace) == 1


def test_pretraining_reduces_loss_on_k10(rng):
    protos = 3.0 * rng.standard_normal((10, 10))
    init = EmbeddingTable.random(10, 32, seed=1)
    res = pretrain_embeddings(init, protos, steps=2000, lr=1.5e-5)
    assert res.loss_trace[-1] < res.loss_trace[0]
    assert res.guard_ok
    assert list(res.guard_steps[:3]) == [0, 100, 200] and res.guard_steps[-1] == 2000


def test_clustered_init_spreads_out(rng):
    protos = 3.0 * rng.standard_normal((6, 6))
    base = rng.standard_normal(8)
    init = base + 1e-3 * rng.standard_normal((6, 8))
    res = pretrain_embeddings(init, protos, steps=3000, lr=1e-3)
    assert mean_offdiag_cosine(res.table.vectors) < mean_offdiag_cosine(init)


def test_collapse_floor_bounds_any_table(rng):
    for _ in range(20):
        e = rng.standard_normal((5, 3)) * rng.uniform(0.1, 3.0)
        euc, _ = pairwise_matrices(e)
        u = np.linalg.norm(e, axis=1).max()
        assert row_softmax(euc).min() >= collapse_floor(5, u)


def test_table_round_trip(tmp_path, rng):
    t = EmbeddingTable(rng.standard_normal((3, 5)), frozen=True)
    t.save(tmp_path / "e.npz")
    back = EmbeddingTable.load(tmp_path / "e.npz")
    assert np.array_equal(back.vectors, t.vectors) and back.frozen


def test_matrix_rows_shape():
    rows = matrix_rows(np.arange(4.0).reshape(2, 2))
    assert rows == [[0, 0, 0.0], [0, 1, 1.0], [1, 0, 2.0], [1, 1, 3.0]]
