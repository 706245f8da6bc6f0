"""Simulation configuration.

Every section maps one-to-one onto a nested mapping in the YAML config file::

    n_users: 30
    seed: 7
    channel:
      exponent: 3.0
    loop:
      predictor: trained
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError

SCHEMES = ("data-model", "heuristic", "drl")
PREDICTORS = ("trained", "oracle", "dummy")


@dataclass
class ChannelParams:
    pl0_db: float = 40.0
    d0: float = 1.0
    exponent: float = 3.0
    shadow_sigma_db: float = 4.0
    shadow_rho: float = 0.9
    tx_power_dbm: float = 30.0
    noise_dbm: float = -100.0
    bandwidth_hz: float = 20e6

    def validate(self):
        _positive(self, "channel", ("d0", "exponent", "bandwidth_hz", "pl0_db"))
        if self.shadow_sigma_db < 0:
            raise ConfigError("channel.shadow_sigma_db", "must be >= 0")
        if not 0 <= self.shadow_rho < 1:
            raise ConfigError("channel.shadow_rho", "must lie in [0, 1)")


@dataclass
class LevyParams:
    x_min: float = 1.0
    alpha: float = 1.5
    max_step: float = 100.0
    speed: float = 1.0  # m/s

    def validate(self):
        _positive(self, "levy", ("x_min", "alpha", "max_step", "speed"))
        if self.max_step < self.x_min:
            raise ConfigError("levy.max_step", "must be >= x_min")


@dataclass
class CatalogParams:
    n_types: int = 10
    videos_per_type: int = 20
    n_segments: int = 20
    segment_seconds: float = 1.0
    bitrates: tuple = (1e6, 2.5e6, 5e6)
    # compute units needed per Mbit of transcoded output; top version is free
    transcode_units_per_mbit: float = 250.0
    buffer_cap: int = 10
    swipe_hazard: float = 0.3

    def validate(self):
        _positive(self, "catalog", ("n_types", "videos_per_type", "n_segments",
                                    "segment_seconds", "transcode_units_per_mbit",
                                    "buffer_cap", "swipe_hazard"))
        rates = list(self.bitrates)
        if len(rates) < 1 or any(r <= 0 for r in rates):
            raise ConfigError("catalog.bitrates", "must be positive")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ConfigError("catalog.bitrates", "must be strictly increasing")
        if not 0 < self.swipe_hazard <= 1:
            raise ConfigError("catalog.swipe_hazard", "must lie in (0, 1]")


@dataclass
class QoEWeights:
    bitrate: float = 1.0
    rebuffer: float = 4.0
    switch: float = 1.0

    def validate(self):
        for name in ("bitrate", "rebuffer", "switch"):
            if getattr(self, name) < 0:
                raise ConfigError(f"qoe.{name}", "must be >= 0")


@dataclass
class LoopParams:
    predictor: str = "trained"
    t_init: int = 4
    t_min: int = 1
    t_max: int = 64
    theta_lo: float = 3.0
    theta_hi: float = 10.0
    factor: int = 2
    window: int = 8
    hidden: int = 32
    train_steps: int = 5000
    batch_size: int = 32
    learning_rate: float = 1e-3
    n_label_traces: int = 100
    label_trace_len: int = 120

    def validate(self):
        if self.predictor not in PREDICTORS:
            raise ConfigError("loop.predictor", f"must be one of {PREDICTORS}")
        _positive(self, "loop", ("t_min", "t_max", "factor", "window", "hidden",
                                 "train_steps", "batch_size", "n_label_traces"))
        if not self.t_min <= self.t_init <= self.t_max:
            raise ConfigError("loop.t_init", "must lie in [t_min, t_max]")
        if not 0 <= self.theta_lo < self.theta_hi:
            raise ConfigError("loop.theta_lo", "must satisfy 0 <= theta_lo < theta_hi")
        if self.label_trace_len <= self.window + 1:
            raise ConfigError("loop.label_trace_len", "must exceed window + 1")


@dataclass
class AbstractionParams:
    window: int = 8
    latent: int = 8
    hidden: int = 64
    ae_steps: int = 3000
    ae_batch: int = 32
    n_pretrain_windows: int = 512
    k_min: int = 2
    k_max: int = 8
    fixed_k: Optional[int] = None
    selector_pretrain_steps: int = 600
    selector_steps_per_epoch: int = 8
    rate_cap: float = 200e6
    swipe_cap: float = 20.0

    def validate(self):
        _positive(self, "abstraction", ("window", "latent", "hidden", "ae_steps",
                                        "ae_batch", "k_min", "rate_cap", "swipe_cap"))
        if self.k_max < self.k_min:
            raise ConfigError("abstraction.k_max", "must be >= k_min")
        if self.fixed_k is not None and self.fixed_k < 1:
            raise ConfigError("abstraction.fixed_k", "must be >= 1")


@dataclass
class DecisionParams:
    rho: float = 0.9
    softmin_sharpness: float = 20.0
    gamma: float = 0.9
    learning_rate: float = 1e-3
    hidden: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_steps: int = 2000
    target_sync: int = 100
    replay_capacity: int = 1000
    batch_size: int = 32
    dt_samples_per_epoch: int = 24
    train_steps_per_epoch: int = 48
    # twin pretraining of the version agent on synthetic snapshots
    pretrain_snapshots: int = 100
    pretrain_samples: int = 20
    pretrain_steps: int = 20

    def validate(self):
        if not 0 < self.rho <= 1:
            raise ConfigError("decision.rho", "must lie in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ConfigError("decision.gamma", "must lie in [0, 1)")
        _positive(self, "decision", ("softmin_sharpness", "hidden", "eps_steps",
                                     "target_sync", "replay_capacity", "batch_size"))


@dataclass
class BaselineParams:
    greedy_step: float = 0.05
    sigma_start: float = 0.3
    sigma_end: float = 0.01
    sigma_steps: int = 2000
    tau: float = 0.005
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    gamma: float = 0.9
    train_steps_per_epoch: int = 16

    def validate(self):
        if not 0 < self.greedy_step <= 1:
            raise ConfigError("baseline.greedy_step", "must lie in (0, 1]")
        if not 0 < self.tau <= 1:
            raise ConfigError("baseline.tau", "must lie in (0, 1]")


@dataclass
class SimConfig:
    n_users: int = 30
    n_aps: int = 2
    arena: tuple = (1000.0, 1000.0)
    slot_duration: float = 1.0
    n_slots: int = 200
    decision_epoch: int = 10
    compute_capacity: float = 4000.0
    scheme: str = "data-model"
    seed: int = 0
    # "dirichlet" draws Dirichlet(1) preferences; "archetypes" plants two groups
    preferences: str = "dirichlet"
    archetype_weight: float = 0.9
    channel: ChannelParams = field(default_factory=ChannelParams)
    levy: LevyParams = field(default_factory=LevyParams)
    catalog: CatalogParams = field(default_factory=CatalogParams)
    qoe: QoEWeights = field(default_factory=QoEWeights)
    loop: LoopParams = field(default_factory=LoopParams)
    abstraction: AbstractionParams = field(default_factory=AbstractionParams)
    decision: DecisionParams = field(default_factory=DecisionParams)
    baseline: BaselineParams = field(default_factory=BaselineParams)

    def validate(self):
        if self.n_users < 1:
            raise ConfigError("n_users", "must be >= 1")
        if self.n_aps < 1:
            raise ConfigError("n_aps", "must be >= 1")
        if len(self.arena) != 2 or min(self.arena) <= 0:
            raise ConfigError("arena", "must be a positive (width, height) pair")
        if self.slot_duration <= 0:
            raise ConfigError("slot_duration", "must be > 0")
        if self.n_slots < 0:
            raise ConfigError("n_slots", "must be >= 0")
        if self.decision_epoch < 1:
            raise ConfigError("decision_epoch", "must be >= 1")
        if self.compute_capacity <= 0:
            raise ConfigError("compute_capacity", "must be > 0")
        if self.scheme not in SCHEMES:
            raise ConfigError("scheme", f"must be one of {SCHEMES}")
        if self.seed < 0:
            raise ConfigError("seed", "must be >= 0")
        if self.preferences not in ("dirichlet", "archetypes"):
            raise ConfigError("preferences", "must be 'dirichlet' or 'archetypes'")
        if not 0 < self.archetype_weight < 1:
            raise ConfigError("archetype_weight", "must lie in (0, 1)")
        for section in _SECTIONS:
            getattr(self, section).validate()
        if self.abstraction.window != self.loop.window:
            raise ConfigError("abstraction.window", "must equal loop.window")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_SECTIONS = {
    "channel": ChannelParams,
    "levy": LevyParams,
    "catalog": CatalogParams,
    "qoe": QoEWeights,
    "loop": LoopParams,
    "abstraction": AbstractionParams,
    "decision": DecisionParams,
    "baseline": BaselineParams,
}


def _positive(obj, section, names):
    for name in names:
        if not getattr(obj, name) > 0:
            raise ConfigError(f"{section}.{name}", "must be > 0")


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls, data, prefix):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{prefix}{key}", "unknown field")
        if isinstance(known[key].default, tuple):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data):
    data = dict(data or {})
    sections = {}
    for name, cls in _SECTIONS.items():
        sub = data.pop(name, None) or {}
        if not isinstance(sub, dict):
            raise ConfigError(name, "must be a mapping")
        sections[name] = _build(cls, sub, f"{name}.")
    top = _build(SimConfig, data, "")
    return dataclasses.replace(top, **sections).validate()


def load_config(path, seed=None):
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if seed is not None:
        data["seed"] = int(seed)
    return config_from_dict(data)


def default_digests():
    """Per-module digests of the default parameters, for run manifests."""
    out = {}
    for name, cls in _SECTIONS.items():
        blob = json.dumps(_plain(dataclasses.asdict(cls())), sort_keys=True).encode()
        out[name] = hashlib.sha256(blob).hexdigest()[:12]
    return out
