"""Episode engine: ties the physical network, the twin loops and the schemes together."""

import copy
import functools
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import baselines as bl
from . import decision as dm
from .abstraction import (FeatureAbstraction, KSelector, StatusAutoencoder, pretrain_selector,
                          synthetic_windows)
from .emulation import (COLLECTED, CollectionController, ConstantPredictor, DTStore,
                        ExternalLoop, OraclePredictor, train_predictor)
from .errors import GDTError, SimulationError
from .nn import load_networks
from .physical import (PhysicalNetwork, VideoCatalog, deliver_and_play, levy_traces,
                       qoe_slot)
from .rng import RngStreams, substream

SLOT_COLUMNS = ("slot", "epoch", "qoe", "utility", "stall", "switching", "n_groups")


@dataclass
class SimClock:
    decision_epoch: int
    slot: int = 0

    @property
    def epoch(self):
        return self.slot // self.decision_epoch

    @property
    def at_boundary(self):
        return self.slot % self.decision_epoch == 0

    def tick(self):
        self.slot += 1


# ------------------------------------------------------------- pretraining


def _pretrain_key(config):
    d = config.to_dict()
    keep = ("n_users", "n_aps", "arena", "slot_duration", "decision_epoch", "levy", "channel",
            "loop", "abstraction", "decision", "catalog", "qoe")
    return json.dumps({k: d[k] for k in keep}, sort_keys=True)


@functools.lru_cache(maxsize=32)
def _pretrained(seed, key):
    from .config import config_from_dict
    config = config_from_dict(json.loads(key))
    lp, ab = config.loop, config.abstraction
    predictor = None
    if lp.predictor == "trained":
        rng = substream(seed, "init:predictor")
        traces = levy_traces(lp.n_label_traces, lp.label_trace_len, config.levy,
                             config.arena, config.slot_duration, rng)
        predictor = train_predictor(traces, lp, int(rng.integers(2 ** 31)))
    rng = substream(seed, "init:abstraction")
    windows = synthetic_windows(ab.n_pretrain_windows, config, rng)
    ae = StatusAutoencoder(ab.hidden, ab.latent, ab.ae_steps, ab.ae_batch,
                           random_state=int(rng.integers(2 ** 31))).fit(windows)
    selector = KSelector.from_params(ab, config.decision, rng)
    if ab.fixed_k is None and ab.selector_pretrain_steps:
        batches = [ae.transform(synthetic_windows(config.n_users, config, rng))
                   for _ in range(32)]
        pretrain_selector(selector, batches, ab, rng, ab.selector_pretrain_steps)
    return predictor, ae, selector


@functools.lru_cache(maxsize=32)
def _pretrained_versions(seed, key):
    from .config import config_from_dict
    config = config_from_dict(json.loads(key))
    dec, ab = config.decision, config.abstraction
    catalog = VideoCatalog.from_params(config.catalog)
    n_branches = max(ab.k_max, ab.fixed_k or 0)
    rng = substream(seed, "init:versions")
    agent = dm.VersionAgent.from_params(dec, n_branches, catalog.n_versions, rng)

    def make(r):
        return dm.synthetic_snapshot(r, config.n_users, catalog, config.qoe,
                                     config.decision_epoch, float(config.catalog.buffer_cap),
                                     (ab.k_min, n_branches), slot_duration=config.slot_duration)

    dm.pretrain_versions(agent, make, rng, dec.pretrain_snapshots, dec.pretrain_samples,
                         dec.pretrain_steps, dec.softmin_sharpness)
    return agent


def pretrained_models(config):
    """Per-seed pretrained predictor, autoencoder and k-selector (fresh copies)."""
    return copy.deepcopy(_pretrained(config.seed, _pretrain_key(config)))


# ---------------------------------------------------------------- scenario


@dataclass
class Agents:
    versions: object = None  # VersionAgent (data-model scheme)
    scheduler: object = None  # ActorCritic (drl scheme)
    pending: object = None  # last deployed learned action awaiting its real reward


@dataclass
class ScenarioState:
    config: object
    streams: RngStreams
    net: PhysicalNetwork
    loop: ExternalLoop
    abstraction: FeatureAbstraction
    agents: Agents
    clock: SimClock

    def fingerprint(self):
        """Digest of everything that defines the initial world and twin."""
        h = hashlib.sha256()
        for arr in (self.net.positions, self.net.aps, self.net.rates,
                    np.array([u.preference for u in self.net.users])):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(self.loop.store.state_hash().encode())
        return h.hexdigest()


def _swipe_matrix(net):
    return np.array([u.swipe_counts for u in net.users])


def init_scenario(config, checkpoint=None):
    """Place users and APs, pretrain the twin models and run the slot-0 collection."""
    config.validate()
    streams = RngStreams(config.seed)
    net = PhysicalNetwork(config, streams)
    predictor, ae, selector = pretrained_models(config)
    lp, ab = config.loop, config.abstraction
    if lp.predictor == "oracle":
        predictor = OraclePredictor(net.mobility)
    elif lp.predictor == "dummy":
        predictor = ConstantPredictor(np.asarray(config.arena, float) / 2)
    store = DTStore(net.positions, net.rates, _swipe_matrix(net), ab.window, config.arena,
                    ab.rate_cap, ab.swipe_cap)
    loop = ExternalLoop(store, predictor, CollectionController.from_params(lp), net.aps,
                        config.channel)
    abstraction = FeatureAbstraction(ab, ae, selector)
    agents = Agents()
    n_branches = max(ab.k_max, ab.fixed_k or 0)
    rng = substream(config.seed, "init:agents")
    if config.scheme == "data-model":
        if checkpoint is None and config.decision.pretrain_snapshots > 0:
            agents.versions = copy.deepcopy(_pretrained_versions(config.seed,
                                                                 _pretrain_key(config)))
        else:
            agents.versions = dm.VersionAgent.from_params(config.decision, n_branches,
                                                          net.catalog.n_versions, rng)
        if checkpoint is not None:
            agents.versions.online.set_networks(load_networks(checkpoint))
            agents.versions.target = agents.versions.online.copy()
    elif config.scheme == "drl":
        agents.scheduler = bl.ActorCritic.from_params(config.baseline, config.decision, rng,
                                                      n_branches)
    return ScenarioState(config, streams, net, loop, abstraction, agents,
                         SimClock(config.decision_epoch))


# ----------------------------------------------------------------- reports


@dataclass
class EpisodeReport:
    scheme: str
    seed: int
    compute_capacity: float
    config_digest: str
    slots: list = field(default_factory=list)
    telemetry: list = field(default_factory=list)
    arbitration: list = field(default_factory=list)
    sessions: list = field(default_factory=list)
    group_counts: list = field(default_factory=list)
    n_slots: int = 0
    position_digest: str = ""

    @property
    def total_qoe(self):
        return float(sum(r[2] for r in self.slots))

    @property
    def mean_qoe(self):
        """Per-user, per-slot QoE averaged over the episode (0 when empty)."""
        return self.total_qoe / len(self.slots) if self.slots else 0.0

    def to_dict(self):
        return {
            "scheme": self.scheme, "seed": self.seed,
            "compute_capacity": self.compute_capacity, "config_digest": self.config_digest,
            "n_slots": self.n_slots,
            "slots": [list(r) for r in self.slots],
            "telemetry": [list(r) for r in self.telemetry],
            "arbitration": [[a.epoch, a.model_pred_qoe, a.learned_pred_qoe, a.winner]
                            for a in self.arbitration],
            "sessions": [list(s) for s in self.sessions],
            "group_counts": list(self.group_counts),
            "position_digest": self.position_digest,
        }

    def serialize(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------- decisions


def dt_snapshot(state, grouping):
    """Immutable twin view built from DT records plus the AP's playback state."""
    cfg, net = state.config, state.net
    cat = net.catalog
    base = cfg.catalog.swipe_hazard
    groups = {}
    for g in grouping.groups:
        members = net.members(g)
        hz = dm.group_hazards(grouping.swipe_dist[g], base)
        videos = {u.video for u in members if u.video >= 0}
        types = [cat.video_type(u.video) for u in members if u.video >= 0]
        groups[g] = dm.GroupSnapshot(
            size=len(members),
            rate=grouping.min_rate[g],
            streams=max(len(videos), 1),
            buffer=float(np.mean([u.buffered_seconds(cat) for u in members])),
            hazard=float(np.mean(hz[types])) if types else float(np.mean(hz)),
            last_bitrate=float(np.mean([u.last_bitrate for u in members])),
            swipe_dist=grouping.swipe_dist[g])
    return dm.DTSnapshot(groups, cfg.n_users, cfg.compute_capacity, cfg.slot_duration,
                         cfg.decision_epoch, float(cfg.catalog.buffer_cap), cat, cfg.qoe)


def _myopic(snapshot, bw_est, cp_est):
    gs = snapshot.group_ids
    return dm.myopic_versions(gs, {g: snapshot.groups[g].streams for g in gs},
                              {g: snapshot.groups[g].rate for g in gs}, bw_est, cp_est,
                              snapshot.compute_capacity, snapshot.catalog,
                              snapshot.slot_duration)


def _capacity(snapshot, bw_est):
    return {g: dm.estimate_epoch_capacity(snapshot.groups[g].rate, snapshot.epoch_slots,
                                          bw_est[g], snapshot.slot_duration)
            for g in snapshot.group_ids}


def decide(state, snapshot, previous, epoch_reward, learn=True):
    """One decision epoch for the configured scheme; returns ``(Decision, record)``."""
    cfg, agents = state.config, state.agents
    dec_p = cfg.decision
    rng = state.streams["exploration"]
    gs = snapshot.group_ids
    bw_est = dm.expected_shares(gs, previous.bw if previous else {})
    cp_est = dm.expected_shares(gs, previous.cp if previous else {})
    beta = dec_p.softmin_sharpness
    record = None
    if cfg.scheme == "data-model":
        agent = agents.versions
        if agents.pending is not None and epoch_reward is not None and learn:
            s, acts, mask = agents.pending
            agent.observe(s, acts, epoch_reward, s, mask)
        model = dm.model_based_decision(snapshot, bw_est, cp_est, dec_p.rho, beta)
        learned, action = dm.learned_decision(agent, snapshot, bw_est, rng, learn, beta)
        if learn:
            dm.twin_samples(agent, snapshot, bw_est, rng, dec_p.dt_samples_per_epoch, beta)
            for _ in range(dec_p.train_steps_per_epoch):
                agent.train_step(rng)
        chosen, record = dm.arbitrate(model, learned, snapshot, epoch=state.clock.epoch)
        agents.pending = action if chosen is learned else None
    elif cfg.scheme == "heuristic":
        versions = _myopic(snapshot, bw_est, cp_est)
        models = dm.group_models(gs, {g: snapshot.groups[g].size for g in gs},
                                 {g: snapshot.groups[g].rate for g in gs}, versions,
                                 snapshot.catalog)
        bw, cp = bl.heuristic_schedule(models, snapshot.compute_capacity,
                                       cfg.baseline.greedy_step, snapshot.slot_duration,
                                       cfg.qoe.bitrate, beta)
        chosen = dm.Decision(versions, dict(zip(gs, map(float, bw))),
                             dict(zip(gs, map(float, cp))), dm.WATCH,
                             _capacity(snapshot, bw_est),
                             {g: snapshot.groups[g].swipe_dist for g in gs}, dm.MODEL)
    else:
        ac = agents.scheduler
        slots = dm.branch_slots(gs, ac.n_branches)
        last = {g: v for g, v in (previous.versions.items() if previous else ())}
        s, mask = bl.ddpg_state(snapshot, slots, cfg.abstraction.rate_cap,
                                cfg.catalog.buffer_cap, snapshot.catalog.n_versions, last)
        if agents.pending is not None and epoch_reward is not None and learn:
            s_prev, raw_prev = agents.pending
            ac.observe(s_prev, raw_prev, epoch_reward, s)
            for _ in range(cfg.baseline.train_steps_per_epoch):
                bl.ddpg_train(ac, rng)
        raw, bw, cp = bl.ddpg_act(ac, s, mask, "explore" if learn else "greedy", rng)
        agents.pending = (s, raw)
        versions = _myopic(snapshot, bw_est, cp_est)
        # the scheduler only sees rates, buffers and versions; no swipe statistics
        chosen = dm.Decision(versions, {g: float(bw[i]) for i, g in enumerate(slots)
                                        if g is not None},
                             {g: float(cp[i]) for i, g in enumerate(slots) if g is not None},
                             dm.SEQUENTIAL, _capacity(snapshot, bw_est), {}, dm.LEARNED)
        for g in gs:
            chosen.bw.setdefault(g, 0.0)
            chosen.cp.setdefault(g, 0.0)
    dm.validate_decision(chosen, gs, snapshot.catalog.n_versions)
    return chosen, record


def slot_plans(state, decision, table):
    """Transmission order for every group in this slot."""
    cfg, net = state.config, state.net
    size = net.catalog.size_bits(0)
    per_slot = cfg.decision_epoch
    plans = {}
    for g in decision.groups:
        cap = decision.capacity[g] / per_slot
        if decision.buffering == dm.WATCH:
            cands = dm.watch_candidates(net.demand(g), table, g)
            plan = dm.plan_buffering(g, cands, cap, size, cfg.decision.rho)
        else:
            playback = [(u.video, u.pos + 1, {j for (v, j) in u.buffer if v == u.video})
                        for u in net.members(g) if u.video >= 0]
            plan = bl.sequential_buffering(g, playback, cap, size, cfg.decision.rho,
                                           net.catalog.n_segments, cfg.catalog.buffer_cap)
        plans[g] = plan.keys()
    return plans


# ------------------------------------------------------------------ episode


def run_episode(config, checkpoint=None, learn=True):
    """Simulate ``config.n_slots`` slots and return an EpisodeReport."""
    state = init_scenario(config, checkpoint)
    net, loop, clock = state.net, state.loop, state.clock
    streams = state.streams
    report = EpisodeReport(config.scheme, config.seed, config.compute_capacity,
                           config.digest(), n_slots=config.n_slots)
    decision, table = None, None
    epoch_qoe = []
    trace = hashlib.sha256()
    for slot in range(config.n_slots):
        try:
            if slot > 0:
                net.advance(streams)
            trace.update(np.ascontiguousarray(net.positions).tobytes())
            loop.tick(slot, net.positions.copy(), net.rates.copy(), _swipe_matrix(net))
            if clock.at_boundary:
                store = loop.store
                grouping = state.abstraction.update(store.windows(), store.swipe_counts,
                                                    store.rates, streams["exploration"], learn)
                net.assign_groups(grouping.labels)
                snapshot = dt_snapshot(state, grouping)
                reward = float(np.mean(epoch_qoe)) if epoch_qoe else None
                decision, rec = decide(state, snapshot, decision, reward, learn)
                if rec is not None:
                    report.arbitration.append(rec)
                report.group_counts.append(grouping.k)
                table = dm.WatchProbTable(decision.swipe_dists or {}, net.catalog.video_type,
                                          config.catalog.swipe_hazard)
                epoch_qoe = []
            plans = slot_plans(state, decision, table)
            swipe_u = streams["swipe"].random(config.n_users)
            events = deliver_and_play(net, plans, decision.versions, decision.bw, decision.cp,
                                      config.compute_capacity, swipe_u)
            total, util, stall, switch = qoe_slot(events, config.qoe, net.catalog.bitrates)
        except GDTError as exc:
            raise SimulationError(slot, exc) from exc
        q = float(total.mean())
        epoch_qoe.append(q)
        report.slots.append((slot, clock.epoch, q, float(util.mean()), float(stall.mean()),
                             float(switch.mean()), len(decision.groups)))
        clock.tick()
    report.telemetry = [tuple(r) for r in loop.telemetry]
    report.sessions = [list(s) for s in net.sessions]
    report.position_digest = trace.hexdigest()
    return report


__all__ = ["SimClock", "ScenarioState", "EpisodeReport", "init_scenario", "run_episode",
           "pretrained_models", "dt_snapshot", "decide", "slot_plans", "COLLECTED",
           "SLOT_COLUMNS"]
