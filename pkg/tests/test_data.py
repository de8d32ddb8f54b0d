import numpy as np
import pytest

from esmalab.data import (GaussianMixtureSpec, LabeledDataset, bayes_posterior,
                          gen_gaussian_mixture, load_dataset_csv, save_dataset_csv,
                          three_gaussians, two_gaussians)
from esmalab.errors import InvalidInputError


def test_seeded_generation_is_reproducible():
    a = gen_gaussian_mixture(two_gaussians(seed=3))
    b = gen_gaussian_mixture(two_gaussians(seed=3))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert len(a) == 200 and a.dim == 2 and a.n_classes == 2


def test_class_frequencies_within_clt_bound():
    spec = GaussianMixtureSpec([[0, 0], [3, 0], [0, 3]], [np.eye(2)] * 3, [0.2, 0.3, 0.5],
                               n_samples=10_000, seed=1)
    ds = gen_gaussian_mixture(spec)
    freq = np.bincount(ds.y, minlength=3) / len(ds)
    assert np.all(np.abs(freq - spec.priors) <= 4 / np.sqrt(len(ds)))


def test_class_means_within_five_sigma():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    spec = GaussianMixtureSpec([[1, -1], [-2, 0.5]], [cov, np.eye(2)], [0.5, 0.5],
                               n_samples=10_000, seed=2)
    ds = gen_gaussian_mixture(spec)
    for k in range(2):
        pts = ds.X[ds.y == k]
        sd = np.sqrt(np.diag(spec.covariances[k]))
        assert np.all(np.abs(pts.mean(axis=0) - spec.means[k]) <= 5 * sd / np.sqrt(len(pts)))


@pytest.mark.parametrize("cov", [
    np.diag([1.0, 1e-13]),
    np.array([[1.0, 2.0], [2.0, 1.0]]),
    np.array([[1.0, 0.3], [0.0, 1.0]]),
])
def test_bad_covariances_rejected(cov):
    spec = GaussianMixtureSpec([[0, 0], [1, 1]], [np.eye(2), cov], [0.5, 0.5])
    with pytest.raises(InvalidInputError):
        gen_gaussian_mixture(spec)


def test_bad_priors_rejected():
    with pytest.raises(InvalidInputError):
        GaussianMixtureSpec([[0, 0], [1, 1]], [np.eye(2)] * 2, [0.5, 0.6]).validate()


def test_posterior_symmetric_at_midpoint():
    assert np.allclose(bayes_posterior(two_gaussians(), [[0.0, 0.0]]), 0.5, rtol=0, atol=1e-15)


def test_decision_boundary_is_perpendicular_bisector():
    spec = two_gaussians()
    for y in (-2.0, 0.0, 3.0):
        post = bayes_posterior(spec, [[-1e-6, y], [1e-6, y]])
        assert np.argmax(post[0]) == 0 and np.argmax(post[1]) == 1


def _brute_pdf(x, mean, cov):
    d = len(mean)
    diff = x - mean
    inv = np.linalg.inv(cov)
    return np.exp(-0.5 * diff @ inv @ diff) / np.sqrt((2 * np.pi) ** d * np.linalg.det(cov))


def test_posterior_matches_direct_evaluation(rng):
    cov = np.array([[1.5, 0.4], [0.4, 0.8]])
    spec = GaussianMixtureSpec([[0, 0], [1.5, 1], [-1, 2]], [np.eye(2), cov, 0.5 * np.eye(2)],
                               [0.3, 0.3, 0.4])
    pts = rng.uniform(-3, 3, (100, 2))
    post = bayes_posterior(spec, pts)
    for x, p in zip(pts, post):
        joint = np.array([spec.priors[k] * _brute_pdf(x, spec.means[k], spec.covariances[k])
                          for k in range(3)])
        assert np.max(np.abs(p - joint / joint.sum())) <= 1e-10


def test_three_class_variant():
    ds = gen_gaussian_mixture(three_gaussians(seed=0))
    assert ds.n_classes == 3 and set(ds.y.tolist()) == {0, 1, 2}


def test_dataset_validation():
    with pytest.raises(InvalidInputError):
        LabeledDataset(np.zeros((3, 2)), np.array([0, 1]), 2)
    with pytest.raises(InvalidInputError):
        LabeledDataset(np.zeros((2, 2)), np.array([0, 2]), 2)


def test_csv_round_trip_is_exact(tmp_path):
    ds = gen_gaussian_mixture(two_gaussians(n_samples=30, seed=4))
    save_dataset_csv(ds, tmp_path / "d.csv")
    back = load_dataset_csv(tmp_path / "d.csv", 2)
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)
