"""Comparison schemes: greedy scheduling and an actor-critic scheduler."""

import numpy as np

from .decision import BufferPlan, SmoothUtility, project_capped_simplex
from .nn import DenseNetwork, Optimizer, OptimizerConfig, ReplayBuffer, mse
from .abstraction import linear_epsilon

# ----------------------------------------------------------------- greedy


def heuristic_schedule(models, compute_capacity, step=0.05, slot_duration=1.0, w1=1.0,
                       beta=20.0, joint_margin=1e-3, polish=True):
    """Grant ``step`` of resources one move at a time to the best marginal gain.

    A move gives one group ``step`` of bandwidth, of compute, or of both. The
    joint move exists because a transcoding group gains almost nothing from
    either resource alone; it is only taken when it beats the group's best
    single move by more than ``joint_margin`` (relative), so a group limited
    by one resource does not soak up the other. Groups are scanned in index
    order and the first strictly largest gain wins.

    With ``polish`` the greedy result is then hill-climbed by moving ``step``
    of one or both resources from one group to another while that helps.
    Returns ``(bw, cp)``.
    """
    util = SmoothUtility(models, compute_capacity, slot_duration, w1, beta)
    m = util.m
    units = int(round(1.0 / step))
    nb, nc = np.zeros(m, dtype=int), np.zeros(m, dtype=int)
    left = np.array([units, units])

    def value(i, b, c):
        return util.group_value(i, b * step, c * step)

    current = np.array([value(i, 0, 0) for i in range(m)])
    while left.any():
        best, pick = 0.0, None
        for i in range(m):
            gains = {}
            for mv in ((1, 0), (0, 1), (1, 1)):
                if np.all(left >= mv):
                    gains[mv] = value(i, nb[i] + mv[0], nc[i] + mv[1]) - current[i]
            single = [(g, mv) for mv, g in gains.items() if mv != (1, 1)]
            cand = max(single, key=lambda t: t[0]) if single else (-np.inf, None)
            if (1, 1) in gains and gains[(1, 1)] > max(cand[0], 0.0) * (1 + joint_margin):
                cand = (gains[(1, 1)], (1, 1))
            if cand[1] is not None and cand[0] > best:
                best, pick = cand[0], (i, cand[1])
        if pick is None:
            break
        i, mv = pick
        nb[i] += mv[0]
        nc[i] += mv[1]
        left -= mv
        current[i] = value(i, nb[i], nc[i])

    # index m stands for the unallocated pool, which carries no value
    nb, nc = np.append(nb, units - nb.sum()), np.append(nc, units - nc.sum())
    current = np.append(current, 0.0)

    def val(i, b, c):
        return 0.0 if i == m else value(i, b, c)

    while polish:
        best, pick = 1e-12, None
        for i in range(m):
            for j in range(m + 1):
                if i == j:
                    continue
                for db, dc in ((1, 0), (0, 1), (1, 1), (1, -1), (-1, 1)):
                    bi, ci, bj, cj = nb[i] + db, nc[i] + dc, nb[j] - db, nc[j] - dc
                    if min(bi, ci, bj, cj) < 0:
                        continue
                    gain = val(i, bi, ci) + val(j, bj, cj) - current[i] - current[j]
                    if gain > best:
                        best, pick = gain, (i, j, db, dc)
        if pick is None:
            break
        i, j, db, dc = pick
        nb[i] += db
        nc[i] += dc
        nb[j] -= db
        nc[j] -= dc
        current[i], current[j] = val(i, nb[i], nc[i]), val(j, nb[j], nc[j])
    nb, nc = nb[:m], nc[:m]
    return nb / units, nc / units


# --------------------------------------------------------------- buffering


def sequential_buffering(group, playback, capacity, size, rho=0.9, n_segments=20,
                         buffer_cap=10):
    """Segments of the currently watched videos in playback order.

    ``playback`` lists ``(video, next_segment, buffered)`` per viewer where
    ``buffered`` is the set of segment indices already held. Segments are taken
    one playback step at a time across viewers.
    """
    queues = []
    for video, nxt, held in playback:
        queues.append([(video, j) for j in range(nxt, min(nxt + buffer_cap, n_segments + 1))
                       if j not in held])
    items, seen, used = [], set(), 0.0
    depth = 0
    while any(depth < len(q) for q in queues):
        for q in queues:
            if depth >= len(q) or q[depth] in seen:
                continue
            if used + size > rho * capacity + 1e-9:
                return BufferPlan(group, items, capacity)
            seen.add(q[depth])
            used += size
            items.append((q[depth][0], q[depth][1], 0))
        depth += 1
    return BufferPlan(group, items, capacity)


# ------------------------------------------------------------ actor-critic


class ActorCritic:
    """Deterministic-policy-gradient scheduler over per-group time shares.

    The actor emits a sigmoid-squashed raw allocation of length ``2 * B``
    (bandwidth then compute); inactive branches are masked and each resource
    is projected onto ``{x >= 0, sum <= 1}``. The critic scores the raw action.
    """

    def __init__(self, n_branches=8, state_per_branch=3, hidden=64, actor_lr=1e-3,
                 critic_lr=1e-3, gamma=0.9, tau=0.005, sigma_start=0.3, sigma_end=0.01,
                 sigma_steps=2000, replay_capacity=1000, batch_size=32, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_branches = n_branches
        s_dim, a_dim = n_branches * state_per_branch, 2 * n_branches
        self.state_dim, self.action_dim = s_dim, a_dim
        self.actor = DenseNetwork([s_dim, hidden, a_dim], ["relu", "sigmoid"], rng)
        self.critic = DenseNetwork([s_dim + a_dim, hidden, hidden, 1], rng=rng)
        self.actor_target, self.critic_target = self.actor.copy(), self.critic.copy()
        self.actor_opt = Optimizer(OptimizerConfig("adam", actor_lr))
        self.critic_opt = Optimizer(OptimizerConfig("adam", critic_lr))
        self.gamma, self.tau = gamma, tau
        self.sigma = (sigma_start, sigma_end, sigma_steps)
        self.replay = ReplayBuffer(replay_capacity)
        self.batch_size = batch_size
        self.acts = 0

    @classmethod
    def from_params(cls, bp, dec, rng, n_branches=8):
        return cls(n_branches, 3, dec.hidden, bp.actor_lr, bp.critic_lr, bp.gamma, bp.tau,
                   bp.sigma_start, bp.sigma_end, bp.sigma_steps, dec.replay_capacity,
                   dec.batch_size, rng)

    @property
    def noise(self):
        return linear_epsilon(self.acts, *self.sigma)

    def project(self, raw, mask):
        b = self.n_branches
        raw = np.where(np.concatenate([mask, mask]), raw, 0.0)
        return project_capped_simplex(raw[:b]), project_capped_simplex(raw[b:])

    def act(self, state, mask, mode="greedy", rng=None, sigma=None):
        raw = self.actor.forward(state)
        if mode == "explore":
            s = self.noise if sigma is None else sigma
            self.acts += 1
            if s > 0:
                raw = np.clip(raw + rng.normal(0.0, s, size=raw.shape), 0.0, 1.0)
        bw, cp = self.project(raw, np.asarray(mask, bool))
        return raw, bw, cp

    def observe(self, state, raw, reward, next_state, done=False):
        self.replay.push((np.asarray(state, float), np.asarray(raw, float), float(reward),
                          np.asarray(next_state, float), bool(done)))

    def train_step(self, rng):
        batch = self.replay.sample(min(self.batch_size, len(self.replay)), rng)
        S = np.array([b[0] for b in batch])
        A = np.array([b[1] for b in batch])
        R = np.array([b[2] for b in batch])
        S2 = np.array([b[3] for b in batch])
        done = np.array([b[4] for b in batch])
        a2 = self.actor_target.forward(S2)
        q2 = self.critic_target.forward(np.hstack([S2, a2]))[:, 0]
        y = (R + self.gamma * q2 * (~done))[:, None]
        q, cache = self.critic.forward_cache(np.hstack([S, A]))
        c_loss, grad = mse(q, y)
        grads, _ = self.critic.backward(cache, grad)
        self.critic_opt.step(self.critic.params, grads)
        # policy gradient: ascend Q(s, mu(s)) through the critic
        mu, a_cache = self.actor.forward_cache(S)
        qa, q_cache = self.critic.forward_cache(np.hstack([S, mu]))
        _, dx = self.critic.backward(q_cache, -np.ones_like(qa) / len(S))
        a_grads, _ = self.actor.backward(a_cache, dx[:, self.state_dim:])
        self.actor_opt.step(self.actor.params, a_grads)
        self.actor_target.soft_update(self.actor, self.tau)
        self.critic_target.soft_update(self.critic, self.tau)
        return c_loss, float(-qa.mean())


def ddpg_state(snapshot, slots, rate_cap=200e6, buffer_cap=10.0, n_versions=3, last=None):
    """Per-branch (min rate, buffer level, last version); no swipe statistics."""
    state = np.zeros((len(slots), 3))
    mask = np.zeros(len(slots), dtype=bool)
    last = last or {}
    for i, g in enumerate(slots):
        if g is None:
            continue
        gs = snapshot.groups[g]
        state[i] = (min(gs.rate / rate_cap, 1.0), gs.buffer / buffer_cap,
                    last.get(g, 0) / max(n_versions - 1, 1))
        mask[i] = True
    return state.reshape(-1), mask


def ddpg_act(ac, state, mask, mode="greedy", rng=None):
    return ac.act(state, mask, mode, rng)


def ddpg_train(ac, rng):
    return ac.train_step(rng)
