"""Feature abstraction: status compression, group-count selection, grouping."""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.metrics import silhouette_score
from sklearn.utils.validation import check_array, check_is_fitted

from .emulation import status_features
from .errors import DataError, DegenerateInputError
from .nn import DenseNetwork, Optimizer, OptimizerConfig, ReplayBuffer, huber, mse
from .physical import ap_positions, levy_traces, link_rates

# ------------------------------------------------------------ autoencoder


class StatusAutoencoder(BaseEstimator, TransformerMixin):
    """Dense autoencoder over flattened status windows.

    The encoder is ``D -> hidden -> latent`` with a ReLU hidden layer; the
    decoder mirrors it. ``transform`` returns latent codes.
    """

    def __init__(self, hidden=64, latent=8, n_steps=3000, batch_size=32,
                 learning_rate=1e-3, holdout=0.2, random_state=0):
        self.hidden = hidden
        self.latent = latent
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.holdout = holdout
        self.random_state = random_state

    # the pair of networks behaves as one model for training and grad checks
    @property
    def params(self):
        return self.encoder_.params + self.decoder_.params

    def forward_cache(self, X):
        z, enc = self.encoder_.forward_cache(X)
        out, dec = self.decoder_.forward_cache(z)
        return out, (enc, dec)

    def backward(self, cache, grad):
        enc, dec = cache
        g_dec, dz = self.decoder_.backward(dec, grad)
        g_enc, dx = self.encoder_.backward(enc, dz)
        return g_enc + g_dec, dx

    def _init(self, n_features, rng):
        self.n_features_in_ = n_features
        self.encoder_ = DenseNetwork([n_features, self.hidden, self.latent],
                                     ["relu", "linear"], rng)
        self.decoder_ = DenseNetwork([self.latent, self.hidden, n_features],
                                     ["relu", "linear"], rng)
        self._opt = Optimizer(OptimizerConfig("adam", self.learning_rate))

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if len(X) < 32:
            raise DataError(f"need at least 32 windows, got {len(X)}")
        rng = np.random.default_rng(self.random_state)
        order = rng.permutation(len(X))
        n_hold = int(round(self.holdout * len(X)))
        self.holdout_idx_ = np.sort(order[:n_hold])
        train = X[np.sort(order[n_hold:])]
        self._init(X.shape[1], rng)
        self._rng = rng
        held = X[self.holdout_idx_] if n_hold else train
        self.initial_holdout_mse_ = self.reconstruction_error(held)
        self.loss_curve_ = []
        self._train(train, self.n_steps)
        self.holdout_mse_ = self.reconstruction_error(held)
        return self

    def partial_fit(self, X, n_steps=1):
        """A few more steps on new windows (initialises if unfitted)."""
        X = check_array(X, dtype=np.float64)
        if not hasattr(self, "encoder_"):
            self._rng = np.random.default_rng(self.random_state)
            self._init(X.shape[1], self._rng)
            self.loss_curve_ = []
        self._train(X, n_steps)
        return self

    def _train(self, X, n_steps):
        for _ in range(n_steps):
            batch = X[self._rng.integers(0, len(X), size=min(self.batch_size, len(X)))]
            out, cache = self.forward_cache(batch)
            value, grad = mse(out, batch)
            grads, _ = self.backward(cache, grad)
            self._opt.step(self.params, grads)
            self.loss_curve_.append(value)

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.encoder_.forward(X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "decoder_")
        return self.decoder_.forward(np.asarray(Z, dtype=float))

    def reconstruction_error(self, X):
        out, _ = self.forward_cache(np.asarray(X, dtype=float))
        return float(np.mean((out - X) ** 2))


def synthetic_windows(n, config, rng):
    """Status windows of Levy walkers with random swipe histories.

    Used to pretrain the autoencoder and the group-count selector before the
    twin has seen any real user.
    """
    ab = config.abstraction
    w, v = ab.window, config.catalog.n_types
    traces = levy_traces(n, w, config.levy, config.arena, config.slot_duration, rng)
    aps = ap_positions(config.n_aps, config.arena)
    # swipe counters grow along the window with a per-user type mix
    mix = rng.dirichlet(np.full(v, 0.5), size=n)
    base = rng.poisson(rng.uniform(0, ab.swipe_cap / 2, size=(n, 1)) * mix)
    out = np.empty((n, w, 3 + v))
    counts = base.astype(float)
    for t in range(w):
        rates = link_rates(traces[:, t], aps, config.channel,
                           rng.normal(0, config.channel.shadow_sigma_db, (n, len(aps))))
        out[:, t] = status_features(traces[:, t], rates, counts, config.arena,
                                    ab.rate_cap, ab.swipe_cap)
        counts = counts + (rng.random((n, 1)) < 0.3) * _one_hot(mix, rng)
    return out.reshape(n, -1)


def _one_hot(mix, rng):
    cum = mix.cumsum(axis=1)
    pick = (rng.random((len(mix), 1)) > cum).sum(axis=1)
    pick = np.minimum(pick, mix.shape[1] - 1)
    return np.eye(mix.shape[1])[pick]


# ----------------------------------------------------------------- K-means++


def seeding_probabilities(X, chosen):
    """Probability of each point becoming the next K-means++ seed."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    d2 = np.min(((X[:, None, :] - X[None, chosen, :]) ** 2).sum(axis=2), axis=1)
    total = d2.sum()
    if total == 0:
        return np.full(len(X), 1.0 / len(X))
    return d2 / total


class KMeansPP(BaseEstimator, ClusterMixin):
    """K-means with squared-distance seeding.

    Nearest-centroid ties go to the lowest centroid index; a cluster that
    empties is re-seeded at the point farthest from its current centroid.
    """

    def __init__(self, n_clusters=2, max_iter=100, random_state=None):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def _seed(self, X, rng):
        n, k = len(X), self.n_clusters
        chosen = [int(rng.integers(n))]
        for _ in range(1, k):
            p = seeding_probabilities(X, chosen)
            chosen.append(int(rng.choice(n, p=p)))
        return X[chosen].copy()

    @staticmethod
    def _assign(X, centers):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        return labels, float(d2[np.arange(len(X)), labels].sum())

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        k = int(self.n_clusters)
        if k < 1:
            raise DegenerateInputError("n_clusters must be >= 1")
        n_distinct = len(np.unique(X, axis=0))
        if k > n_distinct:
            raise DegenerateInputError(f"k={k} exceeds {n_distinct} distinct points")
        rng = np.random.default_rng(self.random_state)
        centers = self._seed(X, rng)
        labels, inertia = self._assign(X, centers)
        path = [inertia]
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            new = centers.copy()
            for c in range(k):
                members = X[labels == c]
                if len(members):
                    new[c] = members.mean(axis=0)
            new_labels, _ = self._assign(X, new)
            new_labels = self._fill_empty(X, new, new_labels)
            new_labels, inertia = self._assign(X, new)
            if inertia > path[-1] * (1 + 1e-12) + 1e-12:
                raise DegenerateInputError("Lloyd step increased the within-cluster sum")
            path.append(inertia)
            centers = new
            if np.array_equal(new_labels, labels):
                labels = new_labels
                break
            labels = new_labels
        self.cluster_centers_ = centers
        self.labels_ = labels
        self.inertia_ = path[-1]
        self.inertia_path_ = path
        self.n_iter_ = n_iter
        return self

    def _fill_empty(self, X, centers, labels):
        for c in range(len(centers)):
            if np.any(labels == c):
                continue
            d2 = ((X - centers[labels]) ** 2).sum(axis=1)
            far = int(np.argmax(d2))
            centers[c] = X[far]
            labels, _ = self._assign(X, centers)
        return labels

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return self._assign(check_array(X, dtype=np.float64), self.cluster_centers_)[0]


def kmeanspp_update(latents, k, rng):
    km = KMeansPP(n_clusters=k, random_state=rng).fit(latents)
    return km.labels_, km.cluster_centers_


def silhouette_reward(X, labels):
    """Mean silhouette, or 0 when it is undefined (one cluster or all singletons)."""
    n_labels = len(np.unique(labels))
    if n_labels < 2 or n_labels >= len(X):
        return 0.0
    return float(silhouette_score(X, labels))


# -------------------------------------------------------------- k selector


def ddqn_target(reward, gamma, q_online_next, q_target_next, done=False):
    """Double-DQN bootstrap: online net picks the action, target net scores it."""
    if done:
        return float(reward)
    a = int(np.argmax(q_online_next))
    return float(reward + gamma * q_target_next[a])


def latent_summary(latents, k_prev, k_min, k_max):
    """Selector state: mean norm, mean pairwise distance, variance, previous k."""
    Z = np.asarray(latents, dtype=float)
    norm = float(np.mean(np.linalg.norm(Z, axis=1)))
    if len(Z) > 1:
        d = np.linalg.norm(Z[:, None] - Z[None], axis=2)
        spread = float(d.sum() / (len(Z) * (len(Z) - 1)))
    else:
        spread = 0.0
    var = float(np.mean(np.var(Z, axis=0)))
    span = max(k_max - k_min, 1)
    # log scaling keeps the state O(1) whatever the latent magnitude
    return np.array([np.log1p(norm), np.log1p(spread), np.log1p(var), (k_prev - k_min) / span])


def linear_epsilon(step, start, end, n_steps):
    frac = min(step / n_steps, 1.0)
    return start + frac * (end - start)


class KSelector:
    """DDQN over the number of multicast groups."""

    def __init__(self, k_min=2, k_max=8, hidden=64, gamma=0.9, learning_rate=1e-3,
                 eps_start=1.0, eps_end=0.05, eps_steps=2000, target_sync=100,
                 replay_capacity=1000, batch_size=32, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.k_min, self.k_max = k_min, k_max
        self.actions = np.arange(k_min, k_max + 1)
        self.online = DenseNetwork([4, hidden, hidden, len(self.actions)], rng=rng)
        self.target = self.online.copy()
        self.gamma = gamma
        self.eps = (eps_start, eps_end, eps_steps)
        self.target_sync = target_sync
        self.batch_size = batch_size
        self.replay = ReplayBuffer(replay_capacity)
        self.opt = Optimizer(OptimizerConfig("adam", learning_rate))
        self.steps = 0
        self.acts = 0

    @classmethod
    def from_params(cls, ab, dec, rng):
        return cls(ab.k_min, ab.k_max, dec.hidden, dec.gamma, dec.learning_rate,
                   dec.eps_start, dec.eps_end, dec.eps_steps, dec.target_sync,
                   dec.replay_capacity, dec.batch_size, rng)

    @property
    def epsilon(self):
        return linear_epsilon(self.acts, *self.eps)

    def q_values(self, state):
        return self.online.forward(np.asarray(state, dtype=float))

    def select(self, state, mode="greedy", rng=None):
        if mode == "explore":
            eps = self.epsilon
            self.acts += 1
            if rng.random() < eps:
                return int(self.actions[rng.integers(len(self.actions))])
        return int(self.actions[int(np.argmax(self.q_values(state)))])

    def observe(self, state, k, reward, next_state, done=False):
        self.replay.push((np.asarray(state, float), int(k - self.k_min), float(reward),
                          np.asarray(next_state, float), bool(done)))

    def train_step(self, rng):
        batch = self.replay.sample(min(self.batch_size, len(self.replay)), rng)
        S = np.array([b[0] for b in batch])
        A = np.array([b[1] for b in batch])
        R = np.array([b[2] for b in batch])
        S2 = np.array([b[3] for b in batch])
        done = np.array([b[4] for b in batch])
        a2 = np.argmax(self.online.forward(S2), axis=1)
        q2 = self.target.forward(S2)[np.arange(len(batch)), a2]
        y = R + self.gamma * q2 * (~done)
        q, cache = self.online.forward_cache(S)
        target = q.copy()
        target[np.arange(len(batch)), A] = y
        value, grad = huber(q, target)
        grads, _ = self.online.backward(cache, grad)
        self.opt.step(self.online.params, grads)
        self.steps += 1
        if self.steps % self.target_sync == 0:
            self.target = self.online.copy()
        return value


# --------------------------------------------------------------- grouping


def estimate_swipe_distribution(counts):
    """Normalised total swipe counts of a group; uniform when nobody swiped."""
    c = np.asarray(counts, dtype=float)
    if c.ndim == 1:
        c = c[None]
    if len(c) == 0:
        raise DataError("empty group")
    total = c.sum(axis=0)
    s = total.sum()
    if s == 0:
        return np.full(c.shape[1], 1.0 / c.shape[1])
    return total / s


def match_labels(prev_ids, new_labels, next_id):
    """Map fresh cluster indices onto stable group ids by member overlap.

    Returns ``(group_ids, next_id)``; clusters left unmatched get new ids.
    """
    new_labels = np.asarray(new_labels)
    clusters = np.unique(new_labels)
    mapping = {}
    if prev_ids is not None:
        prev_ids = np.asarray(prev_ids)
        old = np.unique(prev_ids)
        overlap = np.array([[np.sum((new_labels == c) & (prev_ids == g)) for g in old]
                            for c in clusters])
        rows, cols = linear_sum_assignment(-overlap)
        for r, c in zip(rows, cols):
            mapping[int(clusters[r])] = int(old[c])
    for c in clusters:
        if int(c) not in mapping:
            mapping[int(c)] = next_id
            next_id += 1
    return np.array([mapping[int(c)] for c in new_labels]), next_id


@dataclass
class GroupingResult:
    labels: np.ndarray
    centroids: np.ndarray
    k: int
    swipe_dist: dict = field(default_factory=dict)
    min_rate: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)
    silhouette: float = 0.0

    @property
    def groups(self):
        return sorted(self.swipe_dist)


class FeatureAbstraction:
    """Per-epoch pipeline: encode windows, choose k, cluster, summarise groups."""

    def __init__(self, params, autoencoder, selector, ae_steps_per_epoch=20):
        self.params = params
        self.ae = autoencoder
        self.selector = selector
        self.ae_steps_per_epoch = ae_steps_per_epoch
        self.labels = None
        self.next_id = 0
        self.k = params.fixed_k or params.k_min
        self._pending = None

    def update(self, windows, swipe_counts, rates, rng, learn=True):
        ab = self.params
        if learn and self.ae_steps_per_epoch:
            self.ae.partial_fit(windows, self.ae_steps_per_epoch)
        Z = self.ae.transform(windows)
        n_distinct = len(np.unique(np.round(Z, 12), axis=0))
        state = latent_summary(Z, self.k, ab.k_min, ab.k_max)
        if ab.fixed_k is not None:
            k = ab.fixed_k
        else:
            k = self.selector.select(state, "explore" if learn else "greedy", rng)
        k = max(1, min(k, n_distinct))
        labels, centroids = kmeanspp_update(Z, k, rng)
        reward = silhouette_reward(Z, labels)
        if ab.fixed_k is None and learn:
            if self._pending is not None:
                s, a, r = self._pending
                self.selector.observe(s, a, r, state)
            self._pending = (state, min(max(k, ab.k_min), ab.k_max), reward)
            if len(self.selector.replay):
                for _ in range(ab.selector_steps_per_epoch):
                    self.selector.train_step(rng)
        ids, self.next_id = match_labels(self.labels, labels, self.next_id)
        self.labels, self.k = ids, k
        counts = np.asarray(swipe_counts, dtype=float)
        best = np.asarray(rates, dtype=float).max(axis=1)
        result = GroupingResult(ids, centroids, k, silhouette=reward)
        for g in np.unique(ids):
            members = ids == g
            result.swipe_dist[int(g)] = estimate_swipe_distribution(counts[members])
            result.min_rate[int(g)] = float(best[members].min())
            result.sizes[int(g)] = int(members.sum())
        return result


def pretrain_selector(selector, latent_batches, params, rng, n_steps):
    """Offline DDQN training on a stream of latent sets, one per pseudo-epoch."""
    k = params.k_min
    batches = list(latent_batches)
    state = latent_summary(batches[0], k, params.k_min, params.k_max)
    i = 0
    while selector.steps < n_steps:
        Z = batches[i % len(batches)]
        k = selector.select(state, "explore", rng)
        labels, _ = kmeanspp_update(Z, min(k, len(np.unique(Z, axis=0))), rng)
        reward = silhouette_reward(Z, labels)
        i += 1
        nxt = latent_summary(batches[i % len(batches)], k, params.k_min, params.k_max)
        selector.observe(state, k, reward, nxt)
        selector.train_step(rng)
        state = nxt
    return selector


# ------------------------------------------------------------ swipe curves


def cumulative_swipe_curve(sessions, group, video_type, n_slots):
    """Share of a group's sessions of one type swiped away by each slot.

    ``sessions`` rows are ``(uid, group, type, start, end, swiped)``. The
    denominator is every such session of the episode, so the curve is
    non-decreasing and ends at the overall swipe share. No sessions gives an
    empty array.
    """
    rows = [s for s in sessions if s[1] == group and s[2] == video_type]
    if not rows:
        return np.zeros(0)
    ends = np.array([s[4] for s in rows if s[5]], dtype=int)
    hits = np.bincount(ends[(ends >= 0) & (ends < n_slots)], minlength=n_slots)[:n_slots]
    return np.cumsum(hits) / len(rows)
