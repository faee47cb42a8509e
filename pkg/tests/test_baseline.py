import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import scan_classify, svd_variances

from callosity.baseline import (
    VARIANTS,
    BaselineConfig,
    baseline_pipeline,
    distance,
    features_from_images,
    fisher_ratio,
    knn_classify,
    knn_fit,
    knn_predict,
    lda_fit,
    lda_transform,
    make_correlated_blobs,
    pca_fit,
    pca_inverse_transform,
    pca_transform,
    to_gray,
    unroll,
)
from callosity.errors import ConfigError, DataError, DegenerateDataError, DimensionError


# -- features and distances ---------------------------------------------------------

def test_unroll_examples():
    np.testing.assert_array_equal(unroll(np.array([[1, 2], [3, 4]])), [1, 2, 3, 4])
    x = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(unroll(x).reshape(3, 4), x)
    assert unroll(np.zeros((256, 256))).shape == (65536,)


def test_features_grayscale_luma():
    img = np.zeros((1, 2, 2, 3))
    img[..., 0] = 1.0
    np.testing.assert_allclose(features_from_images(img), [[0.299] * 4])
    np.testing.assert_array_equal(to_gray(np.ones((2, 3, 3, 1))), np.ones((2, 3, 3)))


def test_distance_examples():
    a, b = np.zeros(2), np.array([3.0, 4.0])
    assert distance(a, b, "euclidean") == 5
    assert distance(a, b, "chebyshev") == 4
    assert distance(a, b, "minkowski", 1) == 7
    for m in ("euclidean", "chebyshev", "minkowski"):
        assert distance(b, b, m, 3) == 0


def test_minkowski_two_is_euclidean(rng):
    for _ in range(1000):
        a, b = rng.standard_normal((2, 7))
        assert abs(distance(a, b, "minkowski", 2) - distance(a, b)) < 1e-12


def test_distance_errors():
    with pytest.raises(DimensionError):
        distance(np.zeros(2), np.zeros(3))
    with pytest.raises(ConfigError):
        distance(np.zeros(2), np.zeros(2), "minkowski", 0.5)
    with pytest.raises(ConfigError):
        distance(np.zeros(2), np.zeros(2), "cosine")


# -- kNN ---------------------------------------------------------------------------

def test_knn_self_match():
    x = np.array([[0.0, 0], [1, 1], [5, 5]])
    model = knn_fit(x, [0, 1, 2], k=1)
    assert knn_classify(model, x[1])[0] == 1


def test_knn_majority_beats_distance():
    # 3 points of class 0 at distance 1, 2 of class 1 at distance 0.5
    x = np.array([[1.0, 0], [-1, 0], [0, 1], [0.5, 0], [-0.5, 0]])
    model = knn_fit(x, [0, 0, 0, 1, 1], k=5)
    label, neigh = knn_classify(model, np.zeros(2))
    assert label == 0
    assert [n[2] for n in neigh[:2]] == [1, 1]


def test_knn_tie_breaks():
    # one vote each: smaller summed distance wins
    model = knn_fit(np.array([[1.0], [-2.0]]), [5, 3], k=2)
    assert knn_classify(model, np.zeros(1))[0] == 5
    # equal distance too: smaller class id wins
    model = knn_fit(np.array([[1.0], [-1.0]]), [5, 3], k=2)
    assert knn_classify(model, np.zeros(1))[0] == 3


def test_knn_matches_exhaustive_scan(rng):
    instances = 0
    for trial in range(12):
        x = rng.standard_normal((200, 3))
        y = (x[:, 0] + 0.3 * rng.standard_normal(200) > 0).astype(int)
        for k in (1, 3, 5):
            for metric, p in (("euclidean", 2.0), ("chebyshev", 2.0), ("minkowski", 1.0), ("minkowski", 3.0)):
                model = knn_fit(x, y, k, metric, p)
                q = rng.standard_normal(3)
                label, neigh = knn_classify(model, q)
                want_label, want_idx = scan_classify(x, y, q, k, metric, p)
                assert label == want_label
                assert [n[0] for n in neigh] == want_idx
                instances += 1
    assert instances >= 100


def test_knn_fast_path_matches_exhaustive(rng):
    x = rng.standard_normal((2600, 6))
    y = rng.integers(0, 4, 2600)
    queries = rng.standard_normal((15, 6))
    for k in (1, 5):
        model = knn_fit(x, y, k)
        pred = knn_predict(model, queries)
        for q, got in zip(queries, pred):
            assert got == scan_classify(x, y, q, k, "euclidean")[0]


def test_knn_errors():
    with pytest.raises(ConfigError):
        knn_fit(np.zeros((2, 2)), [0, 1], k=3)
    with pytest.raises(DataError):
        knn_classify(knn_fit(np.zeros((0, 2)), []), np.zeros(2))
    with pytest.raises(DimensionError):
        knn_classify(knn_fit(np.zeros((2, 2)), [0, 1]), np.zeros(3))


@given(st.floats(0.01, 100), st.sampled_from(["euclidean", "chebyshev", "minkowski"]), st.integers(0, 2**31))
def test_knn_scale_invariance(scale, metric, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((30, 4))
    y = r.integers(0, 3, 30)
    q = r.standard_normal((5, 4))
    a = knn_predict(knn_fit(x, y, 3, metric, 1.5), q)
    b = knn_predict(knn_fit(x * scale, y, 3, metric, 1.5), q * scale)
    np.testing.assert_array_equal(a, b)


def test_knn_k1_on_training_set(rng):
    x = rng.standard_normal((50, 5))
    y = rng.integers(0, 4, 50)
    assert np.all(knn_predict(knn_fit(x, y, 1), x) == y)


# -- PCA ---------------------------------------------------------------------------

def test_pca_line():
    t = np.linspace(-1, 1, 21)
    model = pca_fit(np.stack([t, t], axis=1), 2)
    np.testing.assert_allclose(np.abs(model.components[:, 0]), [1 / math.sqrt(2)] * 2, atol=1e-12)
    assert model.explained_variance[1] < 1e-12


def test_pca_variances_match_svd_oracle(rng):
    for _ in range(110):
        n, d = int(rng.integers(3, 15)), int(rng.integers(1, 15))
        x = rng.standard_normal((n, d)) @ rng.standard_normal((d, d))
        model = pca_fit(x, min(n - 1, d))
        want = svd_variances(x)[: model.n_components]
        np.testing.assert_allclose(model.explained_variance, want, atol=1e-8)


def test_pca_10x6_against_eigvalsh(rng):
    from scipy.linalg import eigvalsh

    x = rng.standard_normal((10, 6))
    want = eigvalsh(np.cov(x, rowvar=False))[::-1]
    np.testing.assert_allclose(pca_fit(x, 6).explained_variance, want, atol=1e-8)


def test_pca_reconstruction_and_isometry(rng):
    x = rng.standard_normal((12, 5))
    model = pca_fit(x, 5)
    z = pca_transform(model, x)
    np.testing.assert_allclose(pca_inverse_transform(model, z), x, atol=1e-8)
    from scipy.spatial.distance import pdist

    np.testing.assert_allclose(pdist(z), pdist(x), atol=1e-8)
    np.testing.assert_allclose(pca_transform(model, model.mean), 0, atol=1e-12)
    np.testing.assert_allclose(pca_transform(model, model.mean + model.components[:, 2]), np.eye(5)[2], atol=1e-12)


@given(st.integers(2, 12), st.integers(1, 30), st.integers(0, 2**31))
def test_pca_invariants(n, d, seed):
    x = np.random.default_rng(seed).standard_normal((n, d))
    model = pca_fit(x)
    c = model.components
    np.testing.assert_allclose(c.T @ c, np.eye(c.shape[1]), atol=1e-8)
    ev = model.explained_variance
    assert np.all(ev >= 0) and np.all(np.diff(ev) <= 1e-12)
    assert ev.sum() <= model.total_variance + 1e-8
    assert ev.sum() == pytest.approx(model.total_variance, abs=1e-8)  # all non-zero components kept


def test_pca_gram_path_matches_covariance_path(rng):
    x = rng.standard_normal((6, 40))
    dual = pca_fit(x, 5)
    cov = np.cov(x, rowvar=False)
    np.testing.assert_allclose(dual.explained_variance, np.linalg.eigvalsh(cov)[::-1][:5], atol=1e-8)
    for j in range(5):
        np.testing.assert_allclose(cov @ dual.components[:, j], dual.explained_variance[j] * dual.components[:, j],
                                   atol=1e-8)


def test_pca_variance_fraction(rng):
    x = rng.standard_normal((50, 10)) * np.array([10, 5, 1, 1, 1, 0.1, 0.1, 0.1, 0.1, 0.1])
    model = pca_fit(x, 0.95)
    frac = np.cumsum(model.explained_variance) / model.total_variance
    assert frac[-1] >= 0.95 - 1e-12
    if model.n_components > 1:
        assert frac[-2] < 0.95


def test_pca_errors():
    with pytest.raises(DegenerateDataError):
        pca_fit(np.ones((5, 3)))
    with pytest.raises(DataError):
        pca_fit(np.ones((1, 3)))
    with pytest.raises(ConfigError):
        pca_fit(np.random.default_rng(0).standard_normal((5, 3)), 5)


# -- LDA ---------------------------------------------------------------------------

def test_lda_two_gaussians():
    r = np.random.default_rng(11)
    x = np.concatenate([r.normal(-5, 1, (100, 1)), r.normal(5, 1, (100, 1))])
    y = np.repeat([0, 1], 100)
    z = lda_transform(lda_fit(x, y), x)[:, 0]
    pooled = math.sqrt((z[y == 0].var(ddof=1) + z[y == 1].var(ddof=1)) / 2)
    assert abs(z[y == 1].mean() - z[y == 0].mean()) >= 8 * pooled


def test_lda_duplicated_samples_same_direction(rng):
    x = rng.standard_normal((40, 3)) + np.repeat(np.eye(3)[:2] * 3, 20, axis=0)
    y = np.repeat([0, 1], 20)
    a = lda_fit(x, y).projection[:, 0]
    b = lda_fit(np.concatenate([x, x]), np.concatenate([y, y])).projection[:, 0]
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    assert min(np.abs(a - b).max(), np.abs(a + b).max()) < 1e-6


def test_lda_fisher_ratio_beats_raw_axes():
    r = np.random.default_rng(2)
    means = r.standard_normal((3, 5)) * 2
    cov = r.standard_normal((5, 5))
    x = np.concatenate([m + r.standard_normal((60, 5)) @ cov for m in means])
    y = np.repeat([0, 1, 2], 60)
    z = lda_transform(lda_fit(x, y), x)[:, 0]
    assert fisher_ratio(z, y) >= max(fisher_ratio(x[:, j], y) for j in range(5))


def test_lda_errors():
    with pytest.raises(DataError):
        lda_fit(np.zeros((4, 2)), [0, 0, 0, 0])
    with pytest.raises(DataError):
        lda_fit(np.random.default_rng(0).standard_normal((3, 2)), [0, 0, 1])
    with pytest.raises(ConfigError):
        lda_fit(np.random.default_rng(0).standard_normal((6, 2)), [0, 0, 1, 1, 2, 2], out_dim=3)
    with pytest.raises(DegenerateDataError):
        lda_fit(np.ones((4, 2)), [0, 0, 1, 1])


# -- pipeline ----------------------------------------------------------------------

def test_pipeline_layout_and_self_match(rng):
    x = rng.standard_normal((60, 8))
    y = np.repeat(np.arange(3), 20)
    report = baseline_pipeline(x, y, x[::3], y[::3])
    assert report.variants == VARIANTS and report.ks == (1, 3, 5)
    assert [row[0] for row in report.table()] == [1, 3, 5]
    assert report.accuracy[(1, "RAW")] == 1.0
    assert report.format().splitlines()[0] == "k\tRAW\tPCA\tPCA+LDA\tPCA+LDA-Chebyshev"


def test_pipeline_rejects_unseen_val_class(rng):
    with pytest.raises(DataError):
        baseline_pipeline(rng.standard_normal((4, 2)), [0, 0, 1, 1], rng.standard_normal((1, 2)), [2])


def test_pipeline_blobs_lda_helps():
    from callosity.datasets import SplitSpec, split_indices

    x, y = make_correlated_blobs(n_classes=5, seed=3)
    tr, va = split_indices(y, SplitSpec(0.7, 3))
    report = baseline_pipeline(x[tr], y[tr], x[va], y[va])
    for k in (1, 3, 5):
        assert report.accuracy[(k, "PCA+LDA")] >= report.accuracy[(k, "RAW")]


def test_pipeline_deterministic(rng):
    x, y = make_correlated_blobs(n_classes=4, n_per_class=30, seed=1)
    a = baseline_pipeline(x[::2], y[::2], x[1::2], y[1::2])
    b = baseline_pipeline(x[::2], y[::2], x[1::2], y[1::2])
    assert a.accuracy == b.accuracy


def test_baseline_config_validation():
    with pytest.raises(ConfigError):
        BaselineConfig(variants=("RAW", "ICA"))
    with pytest.raises(ConfigError):
        BaselineConfig(ks=(0,))
