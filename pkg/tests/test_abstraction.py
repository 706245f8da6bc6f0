import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.exceptions import NotFittedError
from sklearn.metrics import adjusted_rand_score

from conftest import fast_config
from gdtsim.abstraction import (FeatureAbstraction, KMeansPP, KSelector, StatusAutoencoder,
                                cumulative_swipe_curve, ddqn_target, estimate_swipe_distribution,
                                latent_summary, match_labels, seeding_probabilities,
                                silhouette_reward, synthetic_windows)
from gdtsim.config import AbstractionParams
from gdtsim.errors import DataError, DegenerateInputError
from gdtsim.selftest import kmeans_blobs_ari, kselector_planted, planted_blobs

D = 8 * 13  # window x (3 + 10 swipe types)


# autoencoder


def small_ae(**kw):
    kw.setdefault("n_steps", 200)
    return StatusAutoencoder(**kw)


def test_latent_length():
    X = np.random.default_rng(0).random((40, D))
    Z = small_ae().fit(X).transform(X)
    assert Z.shape == (40, 8)


def test_identical_windows_identical_latents():
    X = np.random.default_rng(1).random((40, D))
    ae = small_ae().fit(X)
    Z = ae.transform(np.vstack([X[:1], X[:1]]))
    np.testing.assert_array_equal(Z[0], Z[1])


def test_training_reduces_holdout_error():
    X = synthetic_windows(256, fast_config(), np.random.default_rng(2))
    ae = StatusAutoencoder(n_steps=1500).fit(X)
    assert ae.holdout_mse_ < ae.initial_holdout_mse_


def test_duplicate_window_memorised():
    x = np.random.default_rng(3).random(D)
    ae = StatusAutoencoder(n_steps=3000).fit(np.tile(x, (64, 1)))
    assert ae.holdout_mse_ < 1e-3


def test_training_deterministic():
    X = np.random.default_rng(4).random((40, D))
    a, b = small_ae(random_state=9).fit(X), small_ae(random_state=9).fit(X)
    np.testing.assert_array_equal(a.transform(X), b.transform(X))


def test_untrained_autoencoder():
    with pytest.raises(NotFittedError):
        StatusAutoencoder().transform(np.zeros((2, D)))


def test_too_few_windows():
    with pytest.raises(DataError):
        StatusAutoencoder().fit(np.zeros((10, D)))


def test_archetype_latents_separate():
    rng = np.random.default_rng(5)
    cfg = fast_config()
    X = synthetic_windows(256, cfg, rng)
    ae = StatusAutoencoder(n_steps=2000).fit(X)
    # two archetypes: heavy swipers of type 0 versus heavy swipers of type 1
    base = synthetic_windows(40, cfg, rng).reshape(40, 8, 13)
    base[:, :, 3:] = 0.0
    base[:20, :, 3] = 0.8
    base[20:, :, 4] = 0.8
    Z = ae.transform(base.reshape(40, -1))
    d = np.linalg.norm(Z[:, None] - Z[None], axis=2)
    same = np.add.outer(np.arange(40) < 20, np.arange(40) < 20) != 1
    off = ~np.eye(40, dtype=bool)
    assert d[~same].mean() > d[same & off].mean()


# K-means++


def test_single_cluster_is_mean():
    X = np.random.default_rng(6).normal(size=(25, 3))
    km = KMeansPP(1, random_state=0).fit(X)
    assert np.all(km.labels_ == 0)
    np.testing.assert_allclose(km.cluster_centers_[0], X.mean(axis=0))


def test_seeding_law_on_a_line():
    p = seeding_probabilities(np.array([0.0, 1.0, 10.0]), [0])
    assert p[2] == pytest.approx(100 / 101)
    assert p[0] == 0.0


def test_too_many_clusters():
    with pytest.raises(DegenerateInputError):
        KMeansPP(3).fit(np.array([[0.0], [0.0], [1.0]]))


def test_separated_blobs_ari():
    assert kmeans_blobs_ari(0) == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_lloyd_never_increases_inertia(seed, k):
    X = np.random.default_rng(seed).normal(size=(30, 2))
    km = KMeansPP(k, random_state=seed).fit(X)
    path = np.array(km.inertia_path_)
    assert np.all(np.diff(path) <= 1e-9 * (1 + path[:-1]))
    assert len(np.unique(km.labels_)) == k


def test_silhouette_reward_degenerate():
    X = np.random.default_rng(7).normal(size=(5, 2))
    assert silhouette_reward(X, np.zeros(5, int)) == 0.0
    assert silhouette_reward(X, np.arange(5)) == 0.0


def test_match_labels_keeps_ids():
    prev = np.array([4, 4, 9, 9])
    ids, nxt = match_labels(prev, np.array([1, 1, 0, 0]), 10)
    np.testing.assert_array_equal(ids, prev)
    ids, nxt = match_labels(prev, np.array([1, 1, 0, 2]), 10)
    assert list(ids) == [4, 4, 9, 10] and nxt == 11


# k selector


def test_greedy_is_argmax():
    sel = KSelector(2, 8, hidden=16, rng=np.random.default_rng(8))
    s = np.array([0.1, 0.5, 0.2, 0.0])
    assert sel.select(s) == 2 + int(np.argmax(sel.online.forward(s)))


def test_ddqn_target_arithmetic():
    q_online = np.array([0.0, 0.0, 5.0])  # online argmax is the third action
    q_target = np.array([9.0, 9.0, 2.0])
    assert ddqn_target(1.0, 0.9, q_online, q_target) == pytest.approx(2.8)
    assert ddqn_target(1.0, 0.9, q_online, q_target, done=True) == 1.0


def test_latent_summary_shape():
    s = latent_summary(np.random.default_rng(9).normal(size=(10, 8)), 4, 2, 8)
    assert s.shape == (4,) and s[3] == pytest.approx(2 / 6)


def test_selector_finds_planted_k():
    assert kselector_planted(0) >= 0.8


def test_abstraction_groups_planted_blobs():
    rng = np.random.default_rng(10)
    Z, truth = planted_blobs(rng, 3, n=30, sep=40.0)

    class Identity:
        def partial_fit(self, X, n_steps=1):
            return self

        def transform(self, X):
            return X

    fa = FeatureAbstraction(AbstractionParams(fixed_k=3), Identity(), None)
    counts = rng.integers(0, 3, size=(30, 10))
    res = fa.update(Z, counts, rng.uniform(1e6, 1e8, size=(30, 2)), rng)
    assert adjusted_rand_score(truth, res.labels) == 1.0
    assert sum(res.sizes.values()) == 30
    for g, dist in res.swipe_dist.items():
        assert dist.sum() == pytest.approx(1.0)


# swipe statistics


def test_swipe_distribution_examples():
    np.testing.assert_allclose(estimate_swipe_distribution([[1, 2, 0], [1, 0, 4]]),
                               [0.25, 0.25, 0.5])
    np.testing.assert_allclose(estimate_swipe_distribution([[0, 0, 0, 0]]), [0.25] * 4)
    with pytest.raises(DataError):
        estimate_swipe_distribution(np.zeros((0, 3)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 50), min_size=5, max_size=5), min_size=1, max_size=6))
def test_swipe_distribution_sums_to_one(counts):
    assert abs(estimate_swipe_distribution(counts).sum() - 1.0) < 1e-12


def test_curve_without_swipes_is_zero():
    sessions = [[0, 1, 2, 0, 5, False], [1, 1, 2, 3, 9, False]]
    np.testing.assert_array_equal(cumulative_swipe_curve(sessions, 1, 2, 10), np.zeros(10))
    assert cumulative_swipe_curve(sessions, 1, 3, 10).size == 0


def test_curve_with_immediate_swipes_reaches_one():
    sessions = [[u, 0, 1, 0, 1, True] for u in range(4)]
    c = cumulative_swipe_curve(sessions, 0, 1, 6)
    assert c[0] == 0.0 and np.all(c[1:] == 1.0)


def test_identical_groups_identical_curves():
    a = [[0, 0, 1, 0, 3, True], [1, 0, 1, 2, 7, False]]
    b = [[u, 5, t, s, e, w] for u, _, t, s, e, w in a]
    np.testing.assert_array_equal(cumulative_swipe_curve(a, 0, 1, 10),
                                  cumulative_swipe_curve(b, 5, 1, 10))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 49), st.booleans()), min_size=1, max_size=30))
def test_curve_is_monotone_probability(ends):
    sessions = [[i, 0, 0, 0, e, w] for i, (e, w) in enumerate(ends)]
    c = cumulative_swipe_curve(sessions, 0, 0, 50)
    assert np.all((c >= 0) & (c <= 1)) and np.all(np.diff(c) >= 0)
