"""Gradient checks, scheduler-vs-oracle comparisons and small learning sanity runs."""

import numpy as np
from sklearn.metrics import adjusted_rand_score

from .abstraction import (KMeansPP, KSelector, StatusAutoencoder, latent_summary,
                          pretrain_selector)
from .baselines import ActorCritic, heuristic_schedule
from .config import AbstractionParams
from .decision import (BranchingDuelingQNet, GroupModel, SmoothUtility, VersionAgent,
                       grid_oracle, schedule_resources)
from .nn import DenseNetwork, RecurrentCell, check_model, gradient_check
from .physical import VideoCatalog

GRAD_TOL = 1e-4


def random_instances(n, n_groups, seed=0, catalog=None):
    """Random ``(models, capacity)`` pairs; ``n_groups`` may be an int or a tuple to cycle."""
    catalog = catalog or VideoCatalog()
    sizes = (n_groups,) if np.isscalar(n_groups) else tuple(n_groups)
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        models = []
        for _ in range(sizes[i % len(sizes)]):
            q = int(rng.integers(catalog.n_versions))
            models.append(GroupModel(int(rng.integers(1, 11)), rng.uniform(5e6, 100e6),
                                     catalog.size_bits(q), catalog.transcode_units(q)))
        out.append((models, float(rng.choice([1000, 2000, 4000, 8000]))))
    return out


# ------------------------------------------------------------ grad checks


def _weighted(model, x, w):
    """Check ``sum(w * model(x))`` so every output gets a distinct weight."""
    def value():
        return float(np.sum(w * model.forward_cache(x)[0]))
    _, cache = model.forward_cache(x)
    grads, _ = model.backward(cache, w)
    return gradient_check(model.params, value, grads)


def grad_dense(rng):
    net = DenseNetwork([5, 7, 3], ["tanh", "linear"], rng)
    return check_model(net, rng.normal(size=(4, 5)), rng.normal(size=(4, 3)))


def grad_recurrent(rng):
    cell = RecurrentCell(2, 6, 2, rng)
    return check_model(cell, rng.normal(size=(3, 5, 2)), rng.normal(size=(3, 2)))


def grad_autoencoder(rng):
    ae = StatusAutoencoder(hidden=6, latent=3)
    ae._init(5, rng)
    x = rng.normal(size=(4, 5))
    return check_model(ae, x, x)


def grad_k_selector(rng):
    sel = KSelector(2, 5, hidden=8, rng=rng)
    return check_model(sel.online, rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), "huber")


def grad_dueling(rng):
    net = BranchingDuelingQNet(6, 3, 4, hidden=8, rng=rng)
    return _weighted(net, rng.normal(size=(5, 6)), rng.normal(size=(5, 3, 4)))


def grad_critic(rng):
    ac = ActorCritic(n_branches=2, hidden=8, rng=rng)
    x = rng.uniform(size=(4, ac.state_dim + ac.action_dim))
    return check_model(ac.critic, x, rng.normal(size=(4, 1)))


def grad_actor_through_critic(rng):
    """Policy gradient: d(-mean Q(s, mu(s))) / d(actor params)."""
    ac = ActorCritic(n_branches=2, hidden=8, rng=rng)
    S = rng.uniform(size=(4, ac.state_dim))

    def value():
        mu = ac.actor.forward(S)
        return float(-ac.critic.forward(np.hstack([S, mu])).mean())

    mu, a_cache = ac.actor.forward_cache(S)
    qa, q_cache = ac.critic.forward_cache(np.hstack([S, mu]))
    _, dx = ac.critic.backward(q_cache, -np.ones_like(qa) / len(S))
    grads, _ = ac.actor.backward(a_cache, dx[:, ac.state_dim:])
    return gradient_check(ac.actor.params, value, grads)


def grad_scheduler_objective(rng, h=1e-6):
    models, cap = random_instances(1, 3, seed=int(rng.integers(1 << 31)))[0]
    util = SmoothUtility(models, cap)
    x = rng.uniform(0.05, 0.3, size=2 * util.m)
    g = util.gradient(x)
    num = np.array([(util.value(x + h * e) - util.value(x - h * e)) / (2 * h)
                    for e in np.eye(len(x))])
    return float(np.linalg.norm(g - num) / (np.linalg.norm(g) + np.linalg.norm(num)))


GRAD_CHECKS = {
    "dense": grad_dense,
    "recurrent": grad_recurrent,
    "autoencoder": grad_autoencoder,
    "k_selector": grad_k_selector,
    "branching_dueling": grad_dueling,
    "ddpg_critic": grad_critic,
    "ddpg_actor": grad_actor_through_critic,
    "scheduler_objective": grad_scheduler_objective,
}


# --------------------------------------------------------------- oracles


def scheduler_vs_oracle(n=50, seed=0):
    """Worst (SQP objective / grid optimum) and worst KKT residual on 2-3 group instances."""
    worst, kkt = np.inf, 0.0
    for models, cap in random_instances(n, (2, 3), seed):
        res = schedule_resources(models, cap)
        util = SmoothUtility(models, cap)
        ratio = util.exact(np.concatenate([res.bw, res.cp])) / grid_oracle(models, cap)
        worst, kkt = min(worst, ratio), max(kkt, res.kkt)
    return float(worst), float(kkt)


def greedy_vs_oracle(n=50, seed=0):
    worst = np.inf
    for models, cap in random_instances(n, 2, seed):
        bw, cp = heuristic_schedule(models, cap)
        util = SmoothUtility(models, cap)
        worst = min(worst, util.exact(np.concatenate([bw, cp])) / grid_oracle(models, cap))
    return float(worst)


# ------------------------------------------------------- learning sanity


def planted_blobs(rng, k=3, n=30, dim=8, sep=10.0):
    """``n`` latent points in ``k`` well separated unit-variance blobs."""
    centers = rng.normal(0.0, 1.0, size=(k, dim))
    d = np.linalg.norm(centers[:, None] - centers[None], axis=2)
    centers *= sep / d[np.triu_indices(k, 1)].min()
    labels = np.arange(n) % k
    return centers[labels] + rng.normal(0.0, 0.3, size=(n, dim)), labels


def kselector_planted(seed=0, k=3, n_steps=5000, n_eval=50):
    """Share of greedy evaluation epochs on which the selector picks the planted k."""
    rng = np.random.default_rng(seed)
    ab = AbstractionParams()
    sel = KSelector(ab.k_min, ab.k_max, hidden=64, eps_steps=2000, rng=rng)
    batches = [planted_blobs(rng, k)[0] for _ in range(64)]
    pretrain_selector(sel, batches, ab, rng, n_steps)
    hits, k_prev = 0, ab.k_min
    for _ in range(n_eval):
        Z = planted_blobs(rng, k)[0]
        k_prev = sel.select(latent_summary(Z, k_prev, ab.k_min, ab.k_max), "greedy")
        hits += k_prev == k
    return hits / n_eval


# joint reward of the 2-branch toy problem; the best pair is (2, 0)
TOY_REWARD = np.array([[0.1, 0.3, 0.0],
                       [0.4, 0.6, 0.3],
                       [1.0, 0.8, 0.7]])


def dueling_toy(seed=0, n_steps=5000):
    """Train the branching agent on a one-state, two-branch problem.

    Returns ``(greedy joint action, optimal joint action)``.
    """
    rng = np.random.default_rng(seed)
    agent = VersionAgent(2, 2, 3, hidden=32, eps_steps=2000, rng=rng)
    state = np.array([1.0, 0.5])
    mask = np.ones(2, dtype=bool)
    for _ in range(n_steps):
        a = agent.select(state, mask, "explore", rng)
        agent.observe(state, a, TOY_REWARD[a[0], a[1]], state, mask, done=True)
        agent.train_step(rng)
    best = np.unravel_index(np.argmax(TOY_REWARD), TOY_REWARD.shape)
    return tuple(int(x) for x in agent.select(state, mask)), tuple(int(x) for x in best)


def actor_critic_toy(seed=0, n_steps=3000):
    """One group whose reward is its own share; returns the greedy mean share."""
    rng = np.random.default_rng(seed)
    ac = ActorCritic(n_branches=1, hidden=32, rng=rng, sigma_steps=n_steps)
    state = np.array([0.5, 0.5, 0.0])
    mask = np.ones(1, dtype=bool)
    for _ in range(n_steps):
        raw, bw, cp = ac.act(state, mask, "explore", rng)
        ac.observe(state, raw, 0.5 * (bw[0] + cp[0]), state, done=True)
        ac.train_step(rng)
    _, bw, cp = ac.act(state, mask)
    return float(0.5 * (bw[0] + cp[0]))


def kmeans_blobs_ari(seed=0, sigma=1.0):
    """ARI of K-means++ on two blobs whose centres are 10 sigma apart."""
    rng = np.random.default_rng(seed)
    truth = np.repeat([0, 1], 50)
    X = rng.normal(0.0, sigma, size=(100, 2)) + np.where(truth[:, None] == 1, 10 * sigma, 0.0)
    labels = KMeansPP(2, random_state=seed).fit(X).labels_
    return float(adjusted_rand_score(truth, labels))


def run_learning(seeds=(0, 1, 2)):
    out = []
    share = kselector_planted(seeds[0])
    out.append(("kselector_planted", share >= 0.8, f"planted k chosen on {share:.0%} of epochs"))
    wins = [dueling_toy(s) for s in seeds]
    ok = sum(a == b for a, b in wins)
    out.append(("dueling_toy", ok == len(seeds), f"optimal on {ok}/{len(seeds)} seeds"))
    shares = [actor_critic_toy(s) for s in seeds]
    out.append(("actor_critic_toy", min(shares) > 0.9, f"min greedy share {min(shares):.3f}"))
    ari = min(kmeans_blobs_ari(s) for s in seeds)
    out.append(("kmeans_ari", ari == 1.0, f"min ARI {ari:.3f}"))
    return out


def run_all(seed=0):
    out = []
    for name, fn in GRAD_CHECKS.items():
        err = fn(np.random.default_rng(seed))
        out.append((f"grad:{name}", err < GRAD_TOL, f"rel err {err:.2e}"))
    ratio, kkt = scheduler_vs_oracle(seed=seed)
    out.append(("scheduler_oracle", ratio >= 0.99 and kkt < 1e-6,
                f"worst ratio {ratio:.4f}, worst kkt {kkt:.1e}"))
    ratio = greedy_vs_oracle(seed=seed)
    out.append(("greedy_oracle", ratio >= 0.95, f"worst ratio {ratio:.4f}"))
    return out + run_learning()
