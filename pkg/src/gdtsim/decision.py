"""Decision making: buffering, version choice, time-share scheduling, arbitration."""

from dataclasses import dataclass, field, replace

import numpy as np

from .abstraction import linear_epsilon
from .errors import DecisionError, NumericError, ShapeError
from .nn import DenseNetwork, Optimizer, OptimizerConfig, ReplayBuffer, huber

MODEL, LEARNED = "model", "learned"
WATCH, SEQUENTIAL = "watch", "sequential"

# ------------------------------------------------------- watch probability


def group_preference(swipe_dist):
    """Preference implied by a swipe distribution: ``pref ∝ 1 - swipe``."""
    p = 1.0 - np.asarray(swipe_dist, dtype=float)
    s = p.sum()
    if s <= 0:
        return np.full(len(p), 1.0 / len(p))
    return p / s


def group_hazards(swipe_dist, base=0.3):
    return base * (1.0 - group_preference(swipe_dist))


def watch_probability(hazards, j):
    """Probability that a viewer reaches segment ``j`` (1-based).

    ``hazards`` is a scalar per-segment hazard or the sequence ``h(1), h(2), ...``.
    """
    if j < 1:
        raise ValueError("segment index must be >= 1")
    h = np.asarray(hazards, dtype=float)
    if h.ndim == 0:
        return float((1.0 - h) ** (j - 1))
    return float(np.prod(1.0 - h[: j - 1]))


class WatchProbTable:
    """Watch probabilities per (group, video, segment) from group swipe stats."""

    def __init__(self, swipe_dists, video_type, base=0.3):
        self.hazard = {g: group_hazards(d, base) for g, d in swipe_dists.items()}
        self.video_type = video_type

    def __call__(self, group, video, j):
        return watch_probability(self.hazard[group][self.video_type(video)], j)

    def depth(self, group, video, depth):
        """Probability of surviving ``depth`` more swipe opportunities."""
        h = self.hazard[group][self.video_type(video)]
        return float((1.0 - h) ** depth)


# ---------------------------------------------------------------- buffering


def estimate_epoch_capacity(rate, epoch_slots, share, slot_duration=1.0):
    if rate < 0:
        raise ValueError("rate must be >= 0")
    return rate * slot_duration * epoch_slots * share


def expected_shares(groups, previous):
    """Previous epoch's share per group; ``1/M`` for the first epoch or new groups."""
    m = len(groups)
    return {g: previous.get(g, 1.0 / m) for g in groups}


@dataclass
class BufferPlan:
    group: int
    items: list  # (video, segment, placeholder version)
    capacity: float

    @property
    def count(self):
        return len(self.items)

    def keys(self):
        return [(v, j) for v, j, _ in self.items]


def plan_buffering(group, candidates, capacity, size, rho=0.9):
    """Admit candidates by descending watch probability within ``rho * capacity``.

    ``candidates`` maps ``(video, segment)`` to a watch probability; ``size``
    is the lowest-version segment size in bits.
    """
    order = sorted(candidates, key=lambda k: (-candidates[k], k[0], k[1]))
    items, used = [], 0.0
    for v, j in order:
        if used + size > rho * capacity + 1e-9:
            break
        used += size
        items.append((v, j, 0))
    return BufferPlan(group, items, capacity)


def watch_candidates(demand, table, group):
    """Watch probabilities for a group's outstanding demand."""
    return {key: table.depth(group, key[0], depth) for key, (depth, _, _) in demand.items()}


# ------------------------------------------------------------- decisions


@dataclass
class Decision:
    versions: dict
    bw: dict
    cp: dict
    buffering: str = WATCH
    capacity: dict = field(default_factory=dict)
    swipe_dists: dict = field(default_factory=dict)
    tag: str = MODEL

    @property
    def groups(self):
        return sorted(self.versions)


def project_capped_simplex(x):
    """Euclidean projection onto ``{x >= 0, sum(x) <= 1}``."""
    x = np.asarray(x, dtype=float)
    y = np.maximum(x, 0.0)
    if y.sum() <= 1.0:
        return y
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(x) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    y = np.maximum(x - theta, 0.0)
    # rounding can leave the sum a few ulps above one
    s = y.sum()
    if s > 1.0:
        y = y / s
    return y


def validate_decision(decision, groups=None, n_versions=3, tol=1e-12):
    """Raise DecisionError unless shares are non-negative sub-simplices."""
    gs = decision.groups
    if groups is not None and set(gs) != set(groups):
        raise DecisionError(f"decision groups {gs} != active groups {sorted(groups)}")
    for name in ("bw", "cp"):
        shares = getattr(decision, name)
        if set(shares) != set(gs):
            raise DecisionError(f"{name} shares cover {sorted(shares)}, expected {gs}")
        vals = np.array([shares[g] for g in gs], dtype=float)
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise DecisionError(f"negative or non-finite {name} share")
        if vals.sum() > 1.0 + tol:
            raise DecisionError(f"{name} shares sum to {vals.sum():.15g} > 1")
    for g in gs:
        if not 0 <= int(decision.versions[g]) < n_versions:
            raise DecisionError(f"version {decision.versions[g]} out of range")
    if decision.buffering not in (WATCH, SEQUENTIAL):
        raise DecisionError(f"unknown buffering policy {decision.buffering!r}")
    return decision


# --------------------------------------------------------- scheduler model


@dataclass
class GroupModel:
    """What the scheduler needs to know about one served group."""

    size: float
    rate: float  # multicast rate, bps
    seg_bits: float  # size of one segment of the chosen version
    units_per_seg: float  # transcode units per segment (0 for the top version)


def group_models(groups, sizes, rates, versions, catalog):
    return [GroupModel(sizes[g], rates[g], catalog.size_bits(int(versions[g])),
                       catalog.transcode_units(int(versions[g]))) for g in groups]


class SmoothUtility:
    """Sum of ``n * w1 * ln(1 + softmin(a, b))`` over groups.

    ``a = x_bw * R T / s`` and ``b = x_cp * C T / (u s)`` count segments per slot
    that bandwidth and compute can carry; softmin uses sharpness ``beta``.
    """

    def __init__(self, models, compute_capacity, slot_duration=1.0, w1=1.0, beta=20.0):
        self.m = len(models)
        self.n = np.array([g.size for g in models], dtype=float)
        self.kb = np.array([g.rate * slot_duration / g.seg_bits for g in models])
        self.top = np.array([g.units_per_seg == 0 for g in models])
        self.kc = np.array([0.0 if t else compute_capacity * slot_duration / g.units_per_seg
                            for g, t in zip(models, self.top)])
        self.w1 = w1
        self.beta = beta

    def split(self, x):
        return x[: self.m], x[self.m:]

    def _softmin(self, a, b):
        beta = self.beta
        lo = np.minimum(a, b)
        ea, eb = np.exp(-beta * (a - lo)), np.exp(-beta * (b - lo))
        s = ea + eb
        m = lo - np.log(s) / beta
        p = ea / s
        return m, p

    def parts(self, x):
        xb, xc = self.split(np.asarray(x, dtype=float))
        a, b = xb * self.kb, xc * self.kc
        m, p = self._softmin(a, b)
        m = np.where(self.top, a, m)
        p = np.where(self.top, 1.0, p)
        return a, b, m, p

    def value(self, x):
        _, _, m, _ = self.parts(x)
        if np.any(m <= -1):
            raise NumericError("smoothed utility undefined")
        v = float(np.sum(self.n * self.w1 * np.log1p(m)))
        if not np.isfinite(v):
            raise NumericError("non-finite scheduler objective")
        return v

    def exact(self, x):
        """The unsmoothed objective with a true minimum."""
        xb, xc = self.split(np.asarray(x, dtype=float))
        a = xb * self.kb
        m = np.where(self.top, a, np.minimum(a, xc * self.kc))
        return float(np.sum(self.n * self.w1 * np.log1p(m)))

    def group_value(self, i, xb, xc, smooth=True):
        a, b = xb * self.kb[i], xc * self.kc[i]
        if self.top[i]:
            m = a
        elif smooth:
            m, _ = self._softmin(np.array([a]), np.array([b]))
            m = float(m[0])
        else:
            m = min(a, b)
        return self.n[i] * self.w1 * np.log1p(m)

    def gradient(self, x):
        _, _, m, p = self.parts(x)
        c = self.n * self.w1 / (1.0 + m)
        return np.concatenate([c * p * self.kb, c * (1.0 - p) * self.kc])

    def hessian_blocks(self, x):
        """Per-group 2x2 Hessians in ``(x_bw, x_cp)``."""
        _, _, m, p = self.parts(x)
        c = self.n * self.w1
        q = np.where(self.top, 0.0, self.beta * p * (1.0 - p))
        gm = np.stack([p * self.kb, (1.0 - p) * self.kc], axis=1)
        curv = np.stack([np.stack([-q * self.kb ** 2, q * self.kb * self.kc], 1),
                         np.stack([q * self.kb * self.kc, -q * self.kc ** 2], 1)], 1)
        blocks = (c / (1.0 + m))[:, None, None] * curv \
            - (c / (1.0 + m) ** 2)[:, None, None] * gm[:, :, None] * gm[:, None, :]
        return blocks


def project_shares(x, m):
    return np.concatenate([project_capped_simplex(x[:m]), project_capped_simplex(x[m:])])


def kkt_residual(util, x):
    """Projected-gradient residual ``||x - P(x + grad)||_inf`` (0 at a KKT point)."""
    return float(np.max(np.abs(x - project_shares(x + util.gradient(x), util.m))))


@dataclass
class ScheduleResult:
    bw: np.ndarray
    cp: np.ndarray
    objective: float
    kkt: float
    iterations: int


def _project_rows(Y, W):
    """Row-wise ``argmin sum((z - y)**2 / w)`` over ``{z >= 0, sum(z) <= 1}``."""
    Z = np.maximum(Y, 0.0)
    for i in np.flatnonzero(Z.sum(axis=1) > 1.0):
        y, w = Y[i], W[i]
        t = y / w
        o = np.argsort(-t)
        theta = (np.cumsum(y[o]) - 1.0) / np.cumsum(w[o])
        # theta[0] < t[o][0] always, so the valid prefix is never empty
        th = theta[np.flatnonzero(theta < t[o])[-1]]
        z = np.maximum(y - th * w, 0.0)
        Z[i] = z / max(z.sum(), 1.0)
    return Z


def _qp_subproblem(g, blocks, x0, m, tol=1e-8, max_iter=20000, fixed=None):
    """Minimise ``-g.d + d'Bd/2`` over the feasible set.

    Accelerated projected gradient in the metric of diag(B) (Jacobi scaling),
    with adaptive restart; stops once the iterate settles and the Euclidean
    projected-gradient residual is below ``tol``. Works on (resource, group)
    arrays internally. Entries flagged in ``fixed`` (shape (2, m)) stay at 0.
    """
    # B = -H + delta I, applied blockwise over (bw_i, cp_i)
    B = -blocks
    delta = 1e-10 * max(1.0, float(np.max(np.abs(B))) if B.size else 1.0)
    B = B + delta * np.eye(2)[None]
    diag = np.stack([B[:, 0, 0], B[:, 1, 1]])
    diag = np.maximum(diag, 1e-6 * max(float(diag.max()), 1e-12))
    W = 1.0 / diag
    s = np.sqrt(diag).T
    L = float(np.max(np.linalg.eigvalsh(B / s[:, :, None] / s[:, None, :])))
    G = g.reshape(2, m)
    X0 = x0.reshape(2, m)
    ones = np.ones_like(W)
    fixed = np.zeros((2, m), dtype=bool) if fixed is None else fixed

    def proj(Y, metric):
        return np.where(fixed, 0.0, _project_rows(np.where(fixed, -1.0, Y), metric))

    def grad(Z):
        return np.einsum("kij,jk->ik", B, Z - X0) - G

    z = np.where(fixed, 0.0, X0)
    y, t = z.copy(), 1.0
    for _ in range(max_iter):
        z_new = proj(y - W * grad(y) / L, W)
        if np.max(np.abs(z_new - z)) < tol and np.max(
                np.abs(z_new - proj(z_new - grad(z_new), ones))) < tol:
            z = z_new
            break
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if float(np.sum((y - z_new) * diag * (z_new - z))) > 0:  # adaptive restart
            t_new, t = 1.0, 1.0
        y = z_new + ((t - 1.0) / t_new) * (z_new - z)
        t, z = t_new, z_new
    return z.reshape(-1)


def balanced_start(util):
    """Bandwidth by group size; compute matched so transcoding groups sit on the kink."""
    n = np.maximum(util.n, 1e-9)
    bw = n / n.sum()
    need = np.where(util.top, 0.0, bw * util.kb / np.where(util.top, 1.0, util.kc))
    if need.sum() > 1.0:
        need = need / need.sum()
    return np.concatenate([bw, need])


def schedule_resources(models, compute_capacity, slot_duration=1.0, w1=1.0, beta=20.0,
                       max_outer=100, step_tol=1e-6, x0=None, kkt_tol=1e-7):
    """Time shares of bandwidth and compute maximising the smoothed utility.

    Sequential quadratic programming: each iteration maximises a quadratic
    model of the objective over the two capped simplices, then backtracks
    along the resulting direction until the Armijo condition holds.
    """
    if not models:
        raise DecisionError("no groups to schedule")
    util = SmoothUtility(models, compute_capacity, slot_duration, w1, beta)
    m = util.m
    # compute is worthless to groups served at the stored version, so their
    # compute shares are pinned at 0 instead of drifting along a flat direction
    fixed = np.stack([np.zeros(m, dtype=bool), util.top])
    if x0 is None:
        x0 = balanced_start(util)
    x = np.asarray(x0, float).copy()
    x[m:][util.top] = 0.0
    x = project_shares(x, m)
    f = util.value(x)
    it = 0
    for it in range(1, max_outer + 1):
        g = util.gradient(x)
        r = kkt_residual(util, x)
        if r < kkt_tol:
            break
        # inexact inner solves far from the solution, tight ones close to it
        z = _qp_subproblem(g, util.hessian_blocks(x), x, m, tol=min(1e-6, max(1e-3 * kkt_tol, 0.1 * r)),
                           fixed=fixed)
        d = z - x
        slope = float(g @ d)
        alpha = 1.0
        while alpha > 1e-12:
            f_new = util.value(x + alpha * d)
            if f_new >= f + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            break
        step = alpha * d
        x, f = project_shares(x + step, m), f_new
        # a short step alone can stop one Newton-like iteration too early
        if np.linalg.norm(step) < step_tol and kkt_residual(util, x) < kkt_tol:
            break
    x = project_shares(x, m)
    return ScheduleResult(x[:m], x[m:], util.value(x), kkt_residual(util, x), it)


def grid_oracle(models, compute_capacity, slot_duration=1.0, w1=1.0, step=0.01,
                smooth=False, beta=20.0):
    """Exhaustive search of full-budget splits on a grid (2 or 3 groups)."""
    util = SmoothUtility(models, compute_capacity, slot_duration, w1, beta)
    n = int(round(1 / step))
    grid = np.arange(n + 1) * step
    U = np.array([[[util.group_value(i, b, c, smooth) for c in grid] for b in grid]
                  for i in range(util.m)])
    if util.m == 1:
        return float(U[0].max())
    if util.m == 2:
        # leftover of a resource always goes to the other group
        return float((U[0] + U[1][::-1, ::-1]).max())
    if util.m != 3:
        raise ValueError("grid oracle supports 1-3 groups")
    i1, i2 = np.triu_indices(n + 1)
    i2 = i2 - i1  # pairs with i1 + i2 <= n
    best = -np.inf
    for b1 in range(n + 1):
        for b2 in range(n + 1 - b1):
            b3 = n - b1 - b2
            v = U[0, b1, i1] + U[1, b2, i2] + U[2, b3, n - i1 - i2]
            best = max(best, float(v.max()))
    return best


# ---------------------------------------------------------- model-based rule


def myopic_versions(groups, demand, rates, bw_est, cp_est, compute_capacity, catalog,
                    slot_duration=1.0):
    """Highest version whose per-slot delivery and transcoding fit the estimates.

    ``demand[g]`` is the number of distinct segments the group consumes per
    slot. Falls back to the lowest version when nothing fits.
    """
    out = {}
    for g in groups:
        need = max(demand.get(g, 1), 1)
        choice = 0
        for q in range(catalog.n_versions - 1, -1, -1):
            bits_ok = bw_est[g] * rates[g] * slot_duration >= need * catalog.size_bits(q)
            cpu_ok = cp_est[g] * compute_capacity * slot_duration >= \
                need * catalog.transcode_units(q)
            if bits_ok and cpu_ok:
                choice = q
                break
        out[g] = choice
    return out


def schedule_for(versions, snapshot, beta=20.0, kkt_tol=1e-7):
    """SQP shares for given versions."""
    gs = sorted(versions)
    cat = snapshot.catalog
    models = group_models(gs, {g: snapshot.groups[g].size for g in gs},
                          {g: snapshot.groups[g].rate for g in gs}, versions, cat)
    res = schedule_resources(models, snapshot.compute_capacity, snapshot.slot_duration,
                             snapshot.weights.bitrate, beta, kkt_tol=kkt_tol)
    return ({g: float(v) for g, v in zip(gs, res.bw)},
            {g: float(v) for g, v in zip(gs, res.cp)}, res)


def model_based_decision(snapshot, bw_est, cp_est, rho=0.9, beta=20.0, buffering=WATCH):
    gs = snapshot.group_ids
    versions = myopic_versions(gs, {g: snapshot.groups[g].streams for g in gs},
                               {g: snapshot.groups[g].rate for g in gs}, bw_est, cp_est,
                               snapshot.compute_capacity, snapshot.catalog,
                               snapshot.slot_duration)
    return build_decision(versions, snapshot, bw_est, MODEL, beta, buffering)


def build_decision(versions, snapshot, bw_est, tag, beta=20.0, buffering=WATCH, kkt_tol=1e-7):
    bw, cp, _ = schedule_for(versions, snapshot, beta, kkt_tol)
    cap = {g: estimate_epoch_capacity(snapshot.groups[g].rate, snapshot.epoch_slots,
                                      bw_est[g], snapshot.slot_duration)
           for g in snapshot.group_ids}
    return Decision(dict(versions), bw, cp, buffering, cap,
                    {g: snapshot.groups[g].swipe_dist for g in snapshot.group_ids}, tag)


# ------------------------------------------------------------- twin model


@dataclass(frozen=True)
class GroupSnapshot:
    size: int
    rate: float
    streams: int  # distinct segments consumed per slot
    buffer: float  # mean buffered seconds of members
    hazard: float  # expected per-segment swipe hazard
    last_bitrate: float
    swipe_dist: np.ndarray


@dataclass(frozen=True)
class DTSnapshot:
    """Immutable view of the twin used for rollouts."""

    groups: dict
    n_users: int
    compute_capacity: float
    slot_duration: float
    epoch_slots: int
    buffer_cap: float
    catalog: object
    weights: object

    @property
    def group_ids(self):
        return sorted(self.groups)


def rollout_qoe(decision, snapshot, horizon=None):
    """Fluid prediction of mean per-user, per-slot QoE under ``decision``.

    Each group's streams share its delivered segments evenly; swipes remove
    the expected fraction ``hazard`` of buffered content every slot.
    """
    cat, w = snapshot.catalog, snapshot.weights
    horizon = snapshot.epoch_slots if horizon is None else horizon
    if horizon == 0 or not snapshot.groups:
        return 0.0
    r_min, r_max = min(cat.bitrates), max(cat.bitrates)
    dt = snapshot.slot_duration
    total = 0.0
    for g, gs in snapshot.groups.items():
        q = int(decision.versions[g])
        rate = cat.bitrates[q]
        seg_bits, units = cat.size_bits(q), cat.transcode_units(q)
        by_bw = decision.bw[g] * gs.rate * dt / seg_bits
        by_cp = np.inf if units == 0 else decision.cp[g] * snapshot.compute_capacity * dt / units
        inflow = min(by_bw, by_cp) / max(gs.streams, 1)
        util = w.bitrate * np.log1p(rate / r_min)
        switch = w.switch * abs(rate - gs.last_bitrate) / r_max if gs.last_bitrate > 0 else 0.0
        b = gs.buffer
        acc = 0.0
        for t in range(horizon):
            played = min(b, 1.0)
            acc += played * util - w.rebuffer * (1.0 - played) * dt
            if t == 0:
                acc -= played * switch
            b = min(max(b - played, 0.0) * (1.0 - gs.hazard) + inflow, snapshot.buffer_cap)
        total += gs.size * acc
    return total / (snapshot.n_users * horizon)


@dataclass
class ArbitrationRecord:
    epoch: int
    model_pred_qoe: float
    learned_pred_qoe: float
    winner: str


def arbitrate(model_decision, learned_decision, snapshot, horizon=None, epoch=0):
    """Pick the candidate with the higher twin-predicted QoE; ties go to the model."""
    qm = rollout_qoe(model_decision, snapshot, horizon)
    ql = rollout_qoe(learned_decision, snapshot, horizon)
    winner = LEARNED if ql > qm else MODEL
    chosen = learned_decision if winner == LEARNED else model_decision
    best, other = (ql, qm) if winner == LEARNED else (qm, ql)
    assert best >= other
    return chosen, ArbitrationRecord(epoch, qm, ql, winner)


# ------------------------------------------------- branching dueling Q-net


class BranchingDuelingQNet:
    """Shared trunk, one value head, one advantage head per branch.

    ``Q_d(s, a) = V(s) + A_d(s, a) - mean_a A_d(s, a)``.
    """

    def __init__(self, state_dim, n_branches, n_actions, hidden=64, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_branches, self.n_actions = n_branches, n_actions
        self.trunk = DenseNetwork([state_dim, hidden, hidden], ["relu", "relu"], rng)
        self.value = DenseNetwork([hidden, 1], ["linear"], rng)
        self.adv = DenseNetwork([hidden, n_branches * n_actions], ["linear"], rng)

    @property
    def networks(self):
        return [self.trunk, self.value, self.adv]

    @property
    def params(self):
        return self.trunk.params + self.value.params + self.adv.params

    def copy(self):
        other = BranchingDuelingQNet.__new__(BranchingDuelingQNet)
        other.n_branches, other.n_actions = self.n_branches, self.n_actions
        other.trunk, other.value, other.adv = (n.copy() for n in self.networks)
        return other

    def set_networks(self, nets):
        trunk, value, adv = nets
        for mine, theirs in zip(self.networks, (trunk, value, adv)):
            if mine.sizes != theirs.sizes:
                raise ShapeError(f"checkpoint sizes {theirs.sizes} != {mine.sizes}")
            mine.set_params(theirs.params)

    def forward_cache(self, S):
        S = np.asarray(S, dtype=float)
        squeeze = S.ndim == 1
        h, c_t = self.trunk.forward_cache(S)
        v, c_v = self.value.forward_cache(h)
        a, c_a = self.adv.forward_cache(h)
        a = a.reshape(len(h), self.n_branches, self.n_actions)
        q = v[:, :, None] + a - a.mean(axis=2, keepdims=True)
        return (q[0] if squeeze else q), (c_t, c_v, c_a, squeeze)

    def forward(self, S):
        return self.forward_cache(S)[0]

    __call__ = forward

    def backward(self, cache, grad_q):
        c_t, c_v, c_a, squeeze = cache
        gq = np.asarray(grad_q, dtype=float)
        if squeeze:
            gq = gq[None]
        g_v = gq.sum(axis=(1, 2))[:, None]
        g_a = gq - gq.mean(axis=2, keepdims=True)
        gv_params, dh_v = self.value.backward(c_v, g_v)
        ga_params, dh_a = self.adv.backward(c_a, g_a.reshape(len(gq), -1))
        gt_params, dx = self.trunk.backward(c_t, dh_v + dh_a)
        return gt_params + gv_params + ga_params, dx

    def value_of(self, S):
        h = self.trunk.forward(np.asarray(S, dtype=float))
        return self.value.forward(h)


class VersionAgent:
    """Per-branch epsilon-greedy DDQN over the branching dueling network."""

    def __init__(self, state_dim, n_branches, n_actions, hidden=64, gamma=0.9,
                 learning_rate=1e-3, eps_start=1.0, eps_end=0.05, eps_steps=2000,
                 target_sync=100, replay_capacity=1000, batch_size=32, rng=None):
        self.online = BranchingDuelingQNet(state_dim, n_branches, n_actions, hidden, rng)
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
    def from_params(cls, dec, n_branches, n_actions, rng, state_dim=None):
        return cls(state_dim or 4 * n_branches, n_branches, n_actions, dec.hidden, dec.gamma,
                   dec.learning_rate, dec.eps_start, dec.eps_end, dec.eps_steps,
                   dec.target_sync, dec.replay_capacity, dec.batch_size, rng)

    @property
    def epsilon(self):
        return linear_epsilon(self.acts, *self.eps)

    def select(self, state, mask=None, mode="greedy", rng=None, epsilon=None):
        q = self.online.forward(state)
        greedy = np.argmax(q, axis=1)
        if mode == "explore":
            eps = self.epsilon if epsilon is None else epsilon
            self.acts += 1
            rand = rng.random(len(greedy)) < eps
            greedy = np.where(rand, rng.integers(0, q.shape[1], size=len(greedy)), greedy)
        if mask is not None:
            greedy = np.where(mask, greedy, 0)
        return greedy

    def observe(self, state, actions, reward, next_state, mask, done=False):
        self.replay.push((np.asarray(state, float), np.asarray(actions, int), float(reward),
                          np.asarray(next_state, float), np.asarray(mask, bool), bool(done)))

    def train_step(self, rng):
        batch = self.replay.sample(min(self.batch_size, len(self.replay)), rng)
        S = np.array([b[0] for b in batch])
        A = np.array([b[1] for b in batch])
        R = np.array([b[2] for b in batch])
        S2 = np.array([b[3] for b in batch])
        M = np.array([b[4] for b in batch])
        done = np.array([b[5] for b in batch])
        n = len(batch)
        q2_online = self.online.forward(S2)
        q2_target = self.target.forward(S2)
        a2 = np.argmax(q2_online, axis=2)
        boot = np.take_along_axis(q2_target, a2[:, :, None], axis=2)[:, :, 0]
        y = R[:, None] + self.gamma * boot * (~done)[:, None]
        q, cache = self.online.forward_cache(S)
        rows = np.arange(n)[:, None]
        branches = np.arange(q.shape[1])[None, :]
        chosen = q[rows, branches, A]
        # Huber summed over active branches, averaged over the batch
        diff_pred = np.where(M, chosen, 0.0)
        diff_tgt = np.where(M, y, 0.0)
        value, g = huber(diff_pred, diff_tgt)
        g = g * diff_pred.shape[1]
        grad_q = np.zeros_like(q)
        grad_q[rows, branches, A] = np.where(M, g, 0.0)
        grads, _ = self.online.backward(cache, grad_q)
        self.opt.step(self.online.params, grads)
        self.steps += 1
        if self.steps % self.target_sync == 0:
            self.target = self.online.copy()
        return value * diff_pred.shape[1]


def version_state(snapshot, slots, compute_scale=1e4, rate_cap=200e6, base=0.3):
    """Branch-major state (4 features per slot) and the active-branch mask."""
    state = np.zeros((len(slots), 4))
    mask = np.zeros(len(slots), dtype=bool)
    for i, g in enumerate(slots):
        if g is None:
            continue
        gs = snapshot.groups[g]
        state[i] = (min(gs.rate / rate_cap, 1.0), gs.size / snapshot.n_users,
                    snapshot.compute_capacity / compute_scale, gs.hazard / base)
        mask[i] = True
    return state.reshape(-1), mask


def branch_slots(group_ids, n_branches):
    """Map sorted group ids onto branch positions (None for unused branches)."""
    gs = sorted(group_ids)[:n_branches]
    return gs + [None] * (n_branches - len(gs))


def learned_decision(agent, snapshot, bw_est, rng, explore=True, beta=20.0):
    slots = branch_slots(snapshot.group_ids, agent.online.n_branches)
    state, mask = version_state(snapshot, slots)
    acts = agent.select(state, mask, "explore" if explore else "greedy", rng)
    versions = {g: int(a) for g, a in zip(slots, acts) if g is not None}
    # groups beyond the branch count share the last branch's choice
    for g in snapshot.group_ids:
        versions.setdefault(g, int(acts[-1]))
    return build_decision(versions, snapshot, bw_est, LEARNED, beta), (state, acts, mask)


def twin_samples(agent, snapshot, bw_est, rng, n_samples, beta=20.0):
    """Try epsilon-greedy version tuples inside the twin and store them as transitions.

    Each sample is one exploration step of the agent, so the epsilon schedule
    advances with twin experience as well as with real epochs.
    """
    slots = branch_slots(snapshot.group_ids, agent.online.n_branches)
    state, mask = version_state(snapshot, slots)
    for _ in range(n_samples):
        acts = agent.select(state, mask, "explore", rng)
        versions = {g: int(a) for g, a in zip(slots, acts) if g is not None}
        for g in snapshot.group_ids:
            versions.setdefault(g, int(acts[-1]))
        # a sample only needs a score, so its schedule is solved loosely
        dec = build_decision(versions, snapshot, bw_est, LEARNED, beta, kkt_tol=1e-4)
        # the twin expects the state to persist over one epoch
        agent.observe(state, acts, rollout_qoe(dec, snapshot), state, mask)


def synthetic_snapshot(rng, n_users, catalog, weights, epoch_slots=10, buffer_cap=10.0,
                       k_range=(2, 8), capacities=(1000.0, 2000.0, 4000.0, 8000.0),
                       rate_range=(40e6, 250e6), slot_duration=1.0):
    """A random twin view for pretraining the version agent before deployment."""
    k = int(rng.integers(k_range[0], k_range[1] + 1))
    k = min(k, n_users)
    sizes = 1 + rng.multinomial(n_users - k, np.full(k, 1.0 / k))
    lo, hi = np.log(rate_range[0]), np.log(rate_range[1])
    groups = {}
    for g, n in enumerate(sizes):
        last = catalog.bitrates[int(rng.integers(catalog.n_versions))] if rng.random() < 0.8 \
            else 0.0
        groups[g] = GroupSnapshot(size=int(n), rate=float(np.exp(rng.uniform(lo, hi))),
                                  streams=int(rng.integers(1, n + 1)),
                                  buffer=float(rng.uniform(0.0, buffer_cap / 2)),
                                  hazard=float(rng.uniform(0.15, 0.3)), last_bitrate=last,
                                  swipe_dist=rng.dirichlet(np.ones(catalog.n_types)))
    return DTSnapshot(groups, n_users, float(rng.choice(capacities)), slot_duration,
                      epoch_slots, buffer_cap, catalog, weights)


def pretrain_versions(agent, make_snapshot, rng, n_snapshots, samples_per, steps_per,
                      beta=20.0):
    """Train the version agent on twin rollouts of synthetic snapshots."""
    for _ in range(n_snapshots):
        snap = make_snapshot(rng)
        bw_est = expected_shares(snap.group_ids, {})
        twin_samples(agent, snap, bw_est, rng, samples_per, beta)
        for _ in range(steps_per):
            agent.train_step(rng)
    return agent


def replace_shares(decision, bw, cp):
    return replace(decision, bw=dict(bw), cp=dict(cp))
