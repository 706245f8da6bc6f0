import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fast_config
from gdtsim.config import SimConfig, config_from_dict, load_config
from gdtsim.errors import ConfigError
from gdtsim.rng import RngStreams, derive_seed_sequence, substream
from gdtsim.simulation import SimClock, init_scenario, run_episode


# configuration


@pytest.mark.parametrize("field, value", [("n_users", 0), ("n_aps", 0), ("slot_duration", 0.0),
                                          ("decision_epoch", 0), ("scheme", "nope"),
                                          ("compute_capacity", -1.0)])
def test_invalid_config_names_field(field, value):
    with pytest.raises(ConfigError) as exc:
        SimConfig(**{field: value}).validate()
    assert exc.value.field == field


def test_nested_invalid_field():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"channel": {"exponent": -3}})
    assert exc.value.field == "channel.exponent"


def test_unknown_field_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"levy": {"bogus": 1}})


def test_yaml_roundtrip(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("n_users: 7\nchannel:\n  exponent: 3.5\nloop:\n  predictor: oracle\n")
    cfg = load_config(path, seed=11)
    assert (cfg.n_users, cfg.seed, cfg.channel.exponent, cfg.loop.predictor) == \
        (7, 11, 3.5, "oracle")
    assert config_from_dict(cfg.to_dict()).digest() == cfg.digest()


# random streams


def test_same_label_same_draws():
    a, b = substream(5, "mobility"), substream(5, "mobility")
    np.testing.assert_array_equal(a.random(10), b.random(10))


def test_labels_are_independent():
    a, b = substream(5, "mobility"), substream(5, "channel")
    assert not np.array_equal(a.random(10), b.random(10))


def test_streams_cache_and_child():
    s = RngStreams(3)
    assert s["swipe"] is s["swipe"]
    np.testing.assert_array_equal(s.child("init").random(4), substream(3, "init").random(4))


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        derive_seed_sequence(-1, "init")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 63), st.text(min_size=1, max_size=12))
def test_substream_reproducible(seed, label):
    np.testing.assert_array_equal(substream(seed, label).integers(0, 1 << 30, 5),
                                  substream(seed, label).integers(0, 1 << 30, 5))


# clock


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 200))
def test_clock_epoch_rule(epoch_len, n):
    clock = SimClock(epoch_len)
    for _ in range(n):
        clock.tick()
    assert clock.slot == n
    assert clock.epoch == n // epoch_len
    assert clock.at_boundary == (n % epoch_len == 0)


# scenario and episodes


def test_init_scenario_counts():
    cfg = fast_config(n_aps=2, n_users=40, seed=7, scheme="heuristic")
    state = init_scenario(cfg)
    assert len(state.net.aps) == 2
    assert len(state.net.users) == 40
    pos = state.net.positions
    assert pos.min() >= 0 and pos.max() <= 1000


def test_init_scenario_deterministic():
    cfg = fast_config(seed=4, scheme="heuristic")
    a, b = init_scenario(cfg), init_scenario(cfg)
    assert a.fingerprint() == b.fingerprint()
    np.testing.assert_array_equal(a.net.positions, b.net.positions)
    assert all(r.source == "collected" for r in a.loop.store.records())


def test_empty_episode():
    rep = run_episode(fast_config(n_slots=0, scheme="heuristic"))
    assert rep.slots == [] and rep.total_qoe == 0.0


@pytest.mark.parametrize("scheme", ["data-model", "heuristic", "drl"])
def test_episode_rows_and_determinism(scheme):
    cfg = fast_config(n_slots=100, scheme=scheme, seed=2)
    a, b = run_episode(cfg), run_episode(cfg)
    assert len(a.slots) == 100
    assert [r[0] for r in a.slots] == list(range(100))
    assert a.serialize() == b.serialize()
    assert np.isfinite(a.mean_qoe)


def test_exploration_does_not_move_users():
    cfg = fast_config(seed=3)
    learn = run_episode(cfg, learn=True)
    frozen = run_episode(cfg, learn=False)
    other = run_episode(cfg.replace(scheme="drl"))
    assert learn.position_digest == frozen.position_digest == other.position_digest
