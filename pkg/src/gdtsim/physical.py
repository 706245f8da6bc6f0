"""Ground-truth physical network: mobility, channel, swiping, delivery, QoE."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DecisionError

# ---------------------------------------------------------------- mobility


def pareto_length(u, x_min, alpha, x_max=None):
    """Inverse-CDF Pareto draw, optionally truncated to ``[x_min, x_max]``."""
    u = np.asarray(u, dtype=float)
    if x_max is None:
        return x_min * (1.0 - u) ** (-1.0 / alpha)
    tail = (x_min / x_max) ** alpha
    return x_min * (1.0 - u * (1.0 - tail)) ** (-1.0 / alpha)


def _reflect(pos, heading, arena):
    w, h = arena
    x, y = pos[..., 0], pos[..., 1]
    lo, hi = x < 0, x > w
    x = np.where(lo, -x, np.where(hi, 2 * w - x, x))
    heading = np.where(lo | hi, np.pi - heading, heading)
    lo, hi = y < 0, y > h
    y = np.where(lo, -y, np.where(hi, 2 * h - y, y))
    heading = np.where(lo | hi, -heading, heading)
    return np.stack([np.clip(x, 0, w), np.clip(y, 0, h)], axis=-1), heading


class LevyMobility:
    """Levy-walk users: Pareto flight lengths flown at a capped speed.

    A flight longer than ``speed * dt`` continues in later slots along the same
    heading; arena walls reflect both position and heading.
    """

    def __init__(self, positions, params, arena, dt):
        self.positions = np.array(positions, dtype=float)
        self.params = params
        self.arena = tuple(arena)
        self.dt = dt
        n = len(self.positions)
        self.remaining = np.zeros(n)
        self.heading = np.zeros(n)

    def step(self, rng):
        p = self.params
        n = len(self.positions)
        u_len, u_dir = rng.random(n), rng.random(n)
        fresh = self.remaining <= 1e-12
        self.remaining = np.where(
            fresh, pareto_length(u_len, p.x_min, p.alpha, p.max_step), self.remaining)
        self.heading = np.where(fresh, 2 * np.pi * u_dir, self.heading)
        move = np.minimum(self.remaining, p.speed * self.dt)
        step = move[:, None] * np.stack([np.cos(self.heading), np.sin(self.heading)], axis=1)
        self.positions, self.heading = _reflect(self.positions + step, self.heading, self.arena)
        self.remaining = self.remaining - move
        return self.positions


def levy_step(position, params, rng, arena=(1000.0, 1000.0), dt=1.0, flight=None):
    """Advance one user by one slot; returns ``(position', flight')``.

    ``flight`` is ``(remaining_length, heading)`` or None to draw a new one.
    """
    walker = LevyMobility(np.asarray(position, dtype=float)[None], params, arena, dt)
    if flight is not None:
        walker.remaining[0], walker.heading[0] = flight
    walker.step(rng)
    return walker.positions[0].copy(), (float(walker.remaining[0]), float(walker.heading[0]))


def levy_traces(n_traces, length, params, arena, dt, rng):
    """Independent Levy trajectories, shape ``(n_traces, length, 2)``."""
    start = rng.random((n_traces, 2)) * np.asarray(arena)
    walker = LevyMobility(start, params, arena, dt)
    out = np.empty((n_traces, length, 2))
    out[:, 0] = start
    for t in range(1, length):
        out[:, t] = walker.step(rng)
    return out


# ----------------------------------------------------------------- channel


def path_loss_db(distance, params, shadowing=0.0):
    d = np.maximum(np.asarray(distance, dtype=float), params.d0)
    return params.pl0_db + 10.0 * params.exponent * np.log10(d / params.d0) + shadowing


def achievable_rate(pl_db, params):
    snr_db = params.tx_power_dbm - np.asarray(pl_db, dtype=float) - params.noise_dbm
    return params.bandwidth_hz * np.log2(1.0 + 10.0 ** (snr_db / 10.0))


def ap_positions(n_aps, arena):
    w, h = arena
    return np.array([[(i + 0.5) * w / n_aps, h / 2.0] for i in range(n_aps)])


def link_rates(positions, aps, params, shadowing=0.0):
    """Achievable rate of every (user, AP) link, bps."""
    d = np.linalg.norm(np.asarray(positions)[:, None, :] - aps[None, :, :], axis=2)
    return achievable_rate(path_loss_db(d, params, shadowing), params)


class Shadowing:
    """AR(1) log-normal shadowing per (user, AP) link, in dB."""

    def __init__(self, shape, params, rng):
        self.params = params
        self.state = rng.normal(0.0, params.shadow_sigma_db, size=shape)

    def step(self, rng):
        p = self.params
        noise = rng.normal(0.0, p.shadow_sigma_db, size=self.state.shape)
        self.state = p.shadow_rho * self.state + np.sqrt(1 - p.shadow_rho ** 2) * noise
        return self.state


# ------------------------------------------------------------------ videos


@dataclass(frozen=True)
class VideoCatalog:
    n_types: int = 10
    videos_per_type: int = 20
    n_segments: int = 20
    segment_seconds: float = 1.0
    bitrates: tuple = (1e6, 2.5e6, 5e6)
    transcode_units_per_mbit: float = 250.0

    @classmethod
    def from_params(cls, p):
        return cls(p.n_types, p.videos_per_type, p.n_segments, p.segment_seconds,
                   tuple(p.bitrates), p.transcode_units_per_mbit)

    @property
    def n_versions(self):
        return len(self.bitrates)

    def video_type(self, video):
        return video // self.videos_per_type

    def size_bits(self, version):
        return self.bitrates[version] * self.segment_seconds

    def transcode_units(self, version):
        """Compute units to transcode one segment down from the top version."""
        if version == self.n_versions - 1:
            return 0.0
        return self.transcode_units_per_mbit * self.size_bits(version) / 1e6


def swipe_hazard(preference, video_type, base=0.3):
    return base * (1.0 - preference[video_type])


def swipe_decision(preference, video_type, segment_idx, rng, base=0.3):
    """True when the viewer leaves after watching ``segment_idx`` segments.

    ``rng`` may be a Generator or an already-drawn uniform in [0, 1).
    """
    if segment_idx < 1:
        raise ValueError("segment_idx must be >= 1")
    u = rng.random() if hasattr(rng, "random") else float(rng)
    return u < swipe_hazard(preference, video_type, base)


# ----------------------------------------------------------- users, feeds


@dataclass
class User:
    uid: int
    preference: np.ndarray
    swipe_counts: np.ndarray
    group: int = -1
    video: int = -1
    pos: int = 0
    next_index: int = 0
    buffer: dict = field(default_factory=dict)
    rebuffer: float = 0.0
    last_bitrate: float = 0.0
    session: int = -1

    def buffered_seconds(self, catalog):
        return catalog.segment_seconds * sum(
            1 for (v, j) in self.buffer if v == self.video and j > self.pos)


class Feed:
    """Shared playlist streamed to one multicast group."""

    def __init__(self, gid):
        self.gid = gid
        self.videos = []
        self.progress = {}


@dataclass
class PlaybackEvents:
    played: np.ndarray
    previous: np.ndarray
    rebuffer: np.ndarray
    swiped: np.ndarray
    delivered_bits: dict = field(default_factory=dict)
    budget_bits: dict = field(default_factory=dict)
    group_rates: dict = field(default_factory=dict)


class PhysicalNetwork:
    """Owns the ground truth of one episode."""

    def __init__(self, config, streams):
        self.config = config
        self.catalog = VideoCatalog.from_params(config.catalog)
        self.dt = config.slot_duration
        self.aps = ap_positions(config.n_aps, config.arena)
        init = streams["init"]
        n = config.n_users
        start = init.random((n, 2)) * np.asarray(config.arena)
        self.mobility = LevyMobility(start, config.levy, config.arena, self.dt)
        self.shadowing = Shadowing((n, config.n_aps), config.channel, streams["channel"])
        prefs = self._preferences(init)
        v = self.catalog.n_types
        self.users = [User(i, prefs[i], np.zeros(v)) for i in range(n)]
        self.feeds = {}
        self.sessions = []
        self.slot = 0
        self._content = streams["content"]
        self._refresh_rates()

    def _preferences(self, rng):
        cfg = self.config
        v, n = cfg.catalog.n_types, cfg.n_users
        if cfg.preferences == "dirichlet":
            return rng.dirichlet(np.ones(v), size=n)
        prefs = np.full((n, v), (1 - cfg.archetype_weight) / (v - 1))
        order = rng.permutation(n)
        self.archetype = np.zeros(n, dtype=int)
        self.archetype[order[n // 2:]] = 1
        prefs[np.arange(n), self.archetype] = cfg.archetype_weight
        return prefs

    # world dynamics -------------------------------------------------
    @property
    def positions(self):
        return self.mobility.positions

    def advance(self, streams):
        self.slot += 1
        self.mobility.step(streams["mobility"])
        self.shadowing.step(streams["channel"])
        self._refresh_rates()

    def _refresh_rates(self):
        self.rates = link_rates(self.positions, self.aps, self.config.channel,
                                self.shadowing.state)
        self.best_rate = self.rates.max(axis=1)
        self.best_ap = self.rates.argmax(axis=1)

    def members(self, gid):
        return [u for u in self.users if u.group == gid]

    def group_rate(self, gid):
        """Multicast rate: the slowest member's best-AP rate."""
        idx = [u.uid for u in self.users if u.group == gid]
        return float(self.best_rate[idx].min()) if idx else 0.0

    # grouping ---------------------------------------------------------
    def _feed_video(self, feed, index):
        while len(feed.videos) <= index:
            members = [u for u in self.users if u.group == feed.gid]
            weights = (np.mean([u.preference for u in members], axis=0) if members
                       else np.full(self.catalog.n_types, 1.0 / self.catalog.n_types))
            weights = weights / weights.sum()
            vtype = int(self._content.choice(self.catalog.n_types, p=weights))
            idx = int(self._content.integers(self.catalog.videos_per_type))
            feed.videos.append(vtype * self.catalog.videos_per_type + idx)
        return feed.videos[index]

    def next_video(self, user):
        return self._feed_video(self.feeds[user.group], user.next_index)

    def assign_groups(self, labels):
        labels = [int(x) for x in labels]
        if len(labels) != len(self.users):
            raise DecisionError("one label per user required")
        keep = set(labels)
        for gid in list(self.feeds):
            if gid not in keep:
                del self.feeds[gid]
        frontier = {}
        for u, g in zip(self.users, labels):
            if u.group == g:
                frontier[g] = max(frontier.get(g, 0), u.next_index)
        for g in keep:
            self.feeds.setdefault(g, Feed(g))
        for u, g in zip(self.users, labels):
            if u.group == g:
                continue
            u.group = g
            u.next_index = frontier.get(g, 0)
            u.buffer = {k: q for k, q in u.buffer.items() if k[0] == u.video}
            if u.video < 0:
                self._advance(u, swiped=False)

    # playback ---------------------------------------------------------
    def _advance(self, u, swiped):
        if u.session >= 0:
            rec = self.sessions[u.session]
            rec[4], rec[5] = self.slot, bool(swiped)
        feed = self.feeds[u.group]
        new = self._feed_video(feed, u.next_index)
        u.buffer = {k: q for k, q in u.buffer.items() if k[0] == new}
        u.video, u.pos = new, 0
        u.next_index += 1
        self.sessions.append([u.uid, u.group, self.catalog.video_type(new), self.slot, -1, False])
        u.session = len(self.sessions) - 1

    def play(self, swipe_u):
        """Consume one segment per viewer; returns per-user playback arrays."""
        n = len(self.users)
        played, prev = np.zeros(n), np.zeros(n)
        stall, swiped = np.zeros(n), np.zeros(n, dtype=bool)
        cat, base = self.catalog, self.config.catalog.swipe_hazard
        for u in self.users:
            if u.video < 0:
                continue
            q = u.buffer.pop((u.video, u.pos + 1), None)
            if q is None:
                stall[u.uid] = self.dt
                u.rebuffer += self.dt
                continue
            rate = cat.bitrates[q]
            played[u.uid], prev[u.uid] = rate, u.last_bitrate
            u.last_bitrate = rate
            u.pos += 1
            vtype = cat.video_type(u.video)
            if u.pos >= cat.n_segments:
                self._advance(u, swiped=False)
            elif swipe_decision(u.preference, vtype, u.pos, swipe_u[u.uid], base):
                u.swipe_counts[vtype] += 1
                swiped[u.uid] = True
                self._advance(u, swiped=True)
        return PlaybackEvents(played, prev, stall, swiped)

    def demand(self, gid):
        """Segments some member of ``gid`` still needs.

        Returns ``{(video, segment): (depth, is_current, needing uids)}`` where
        ``depth`` is the number of further swipe hazards a viewer must survive
        before reaching the segment (0 for the next segment to play).
        """
        out = {}
        cap = self.config.catalog.buffer_cap
        n_seg = self.catalog.n_segments
        for u in self.users:
            if u.group != gid or u.video < 0 or len(u.buffer) >= cap:
                continue
            nxt = self.next_video(u)
            wants = [(u.video, j, j - u.pos - 1, True)
                     for j in range(u.pos + 1, min(u.pos + cap, n_seg) + 1)]
            wants += [(nxt, j, j - 1, False) for j in range(1, cap + 1)]
            for v, j, depth, current in wants:
                if (v, j) in u.buffer:
                    continue
                rec = out.get((v, j))
                if rec is None:
                    out[(v, j)] = (depth, current, [u.uid])
                else:
                    rec[2].append(u.uid)
                    if depth < rec[0] or (depth == rec[0] and current and not rec[1]):
                        out[(v, j)] = (depth, current, rec[2])
        return out

    def deliver(self, plans, versions, bw_share, cp_share, compute_capacity):
        """Transmit each group's plan within its airtime and compute budget.

        ``plans[g]`` lists ``(video, segment)`` keys in transmission order.
        Partially sent or transcoded segments keep their progress.
        """
        delivered, budgets, rates = {}, {}, {}
        cat = self.catalog
        cap = self.config.catalog.buffer_cap
        for g, plan in plans.items():
            if bw_share[g] < 0 or cp_share[g] < 0:
                raise DecisionError(f"negative share for group {g}")
            if g not in self.feeds:
                raise DecisionError(f"unknown group {g}")
            rate = self.group_rate(g)
            bits = bw_share[g] * rate * self.dt
            units = cp_share[g] * compute_capacity * self.dt
            rates[g], budgets[g] = rate, bits
            q = int(versions[g])
            size, cost = cat.size_bits(q), cat.transcode_units(q)
            feed = self.feeds[g]
            sent = 0.0
            for key in plan:
                prog = feed.progress.setdefault((key, q), [0.0, 0.0])
                use = min(cost - prog[1], units)
                prog[1] += use
                units -= use
                if prog[1] < cost - 1e-9:
                    break
                use = min(size - prog[0], bits)
                prog[0] += use
                bits -= use
                sent += use
                if prog[0] < size - 1e-9:
                    break
                del feed.progress[(key, q)]
                self._store(g, key, q, cap)
            feed.progress = {k: p for k, p in feed.progress.items() if p[0] > 0 or p[1] > 0}
            delivered[g] = sent
        return delivered, budgets, rates

    def _store(self, gid, key, version, cap):
        v, j = key
        for u in self.users:
            if u.group != gid or key in u.buffer or len(u.buffer) >= cap:
                continue
            if (v == u.video and j > u.pos) or v == self.next_video(u):
                u.buffer[key] = version


def deliver_and_play(net, plans, versions, bw_share, cp_share, compute_capacity, swipe_u):
    """Playback of already-buffered segments, then this slot's delivery."""
    events = net.play(swipe_u)
    delivered, budgets, rates = net.deliver(plans, versions, bw_share, cp_share,
                                            compute_capacity)
    events.delivered_bits, events.budget_bits, events.group_rates = delivered, budgets, rates
    return events


def qoe_slot(events, weights, bitrates):
    """Per-user QoE of one slot: log utility minus stall and switch penalties."""
    r_min, r_max = min(bitrates), max(bitrates)
    played = events.played
    utility = np.where(played > 0, weights.bitrate * np.log1p(played / r_min), 0.0)
    switching = np.where((played > 0) & (events.previous > 0),
                         weights.switch * np.abs(played - events.previous) / r_max, 0.0)
    stall = weights.rebuffer * events.rebuffer
    return utility - stall - switching, utility, stall, switching
