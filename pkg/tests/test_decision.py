import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import gdtsim.decision as dm
from conftest import fast_config
from gdtsim.abstraction import ddqn_target
from gdtsim.config import QoEWeights
from gdtsim.errors import DecisionError, EmptyBufferError
from gdtsim.nn.optim import huber
from gdtsim.physical import VideoCatalog
from gdtsim.selftest import dueling_toy, random_instances
from gdtsim.simulation import decide, dt_snapshot, init_scenario

CAT = VideoCatalog()


# watch probability


def test_zero_hazard_always_watched():
    assert all(dm.watch_probability(0.0, j) == 1.0 for j in range(1, 30))


def test_constant_hazard_fourth_segment():
    assert dm.watch_probability(0.3, 4) == pytest.approx(0.343)
    assert dm.watch_probability([0.3, 0.3, 0.3, 0.9], 4) == pytest.approx(0.343)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.integers(1, 19))
def test_watch_probability_non_increasing(h, j):
    assert dm.watch_probability(h, j + 1) <= dm.watch_probability(h, j)


def test_group_preference_is_simplex():
    p = dm.group_preference([0.5, 0.5, 0.0])
    assert p.sum() == pytest.approx(1.0) and p[2] > p[0]


# capacity and buffering


def test_capacity_examples():
    assert dm.estimate_epoch_capacity(0.0, 10, 0.5) == 0.0
    assert dm.estimate_epoch_capacity(3e6, 10, 0.5) == pytest.approx(15e6)


def test_first_epoch_equal_shares():
    assert dm.expected_shares([1, 2, 3, 4], {}) == {g: 0.25 for g in [1, 2, 3, 4]}
    assert dm.expected_shares([1, 2], {1: 0.7})[1] == 0.7


def test_buffer_plan_examples():
    cands = {(0, j): 0.9 ** j for j in range(1, 8)}
    assert dm.plan_buffering(0, cands, 0.0, 1e6).count == 0
    assert dm.plan_buffering(0, cands, 3.5e6, 1e6, rho=1.0).count == 3


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.tuples(st.integers(0, 5), st.integers(1, 20)), st.floats(0, 1),
                       max_size=30), st.floats(0, 40e6))
def test_buffer_plan_sorted_and_within_budget(cands, cap):
    plan = dm.plan_buffering(0, cands, cap, 1e6, rho=0.9)
    probs = [cands[k] for k in plan.keys()]
    assert probs == sorted(probs, reverse=True)
    assert plan.count * 1e6 <= 0.9 * cap + 1e-6


# branching dueling network


def test_dueling_aggregation():
    net = dm.BranchingDuelingQNet(2, 1, 3, hidden=4)
    net.value.set_params([np.zeros((4, 1)), np.array([1.0])])
    net.adv.set_params([np.zeros((4, 3)), np.array([1.0, 2.0, 3.0])])
    np.testing.assert_allclose(net.forward(np.ones(2))[0], [0.0, 1.0, 2.0])


def test_zero_params_pick_first_action():
    agent = dm.VersionAgent(4, 2, 3, hidden=8)
    for n in agent.online.networks:
        n.set_params([np.zeros_like(p) for p in n.params])
    q = agent.online.forward(np.ones(4))
    assert np.all(q == q[0, 0])
    np.testing.assert_array_equal(agent.select(np.ones(4)), [0, 0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_advantages_centre_on_value(seed):
    rng = np.random.default_rng(seed)
    net = dm.BranchingDuelingQNet(5, 3, 4, hidden=8, rng=rng)
    S = rng.normal(size=(6, 5))
    q = net.forward(S)
    np.testing.assert_allclose(q.mean(axis=2), np.repeat(net.value_of(S), 3, axis=1),
                               atol=1e-12)


def test_zero_epsilon_is_greedy():
    rng = np.random.default_rng(1)
    agent = dm.VersionAgent(4, 3, 3, hidden=8, rng=rng)
    s = rng.normal(size=4)
    got = agent.select(s, np.ones(3, bool), "explore", rng, epsilon=0.0)
    np.testing.assert_array_equal(got, np.argmax(agent.online.forward(s), axis=1))


def test_masked_branches_choose_zero():
    agent = dm.VersionAgent(4, 3, 3, hidden=8, rng=np.random.default_rng(2))
    got = agent.select(np.ones(4), np.array([True, False, False]))
    assert list(got[1:]) == [0, 0]


def test_agent_target_arithmetic():
    rng = np.random.default_rng(3)
    agent = dm.VersionAgent(2, 1, 3, hidden=4, gamma=0.9, rng=rng)
    s = np.array([0.2, -0.4])
    agent.observe(s, [1], 1.0, s, [True])
    q_on, q_tg = agent.online.forward(s)[0], agent.target.forward(s)[0]
    y = ddqn_target(1.0, 0.9, q_on, q_tg)
    # the 2.8 example: reward 1, gamma 0.9, target value 2 at the online argmax
    assert ddqn_target(1.0, 0.9, np.array([0, 1, 0]), np.array([5, 2, 5])) == pytest.approx(2.8)
    expected, _ = huber(np.array([[q_on[1]]]), np.array([[y]]))
    assert agent.train_step(rng) == pytest.approx(expected)


def test_empty_replay_raises():
    with pytest.raises(EmptyBufferError):
        dm.VersionAgent(2, 1, 2).train_step(np.random.default_rng(0))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_dueling_toy_optimal(seed):
    got, best = dueling_toy(seed)
    assert got == best


# scheduler


def test_identical_groups_split_evenly():
    g = dm.GroupModel(5, 40e6, CAT.size_bits(0), CAT.transcode_units(0))
    res = dm.schedule_resources([g, g], 2000.0)
    np.testing.assert_allclose(res.bw, [0.5, 0.5], atol=1e-6)
    np.testing.assert_allclose(res.cp, [0.5, 0.5], atol=1e-6)


def test_scheduler_against_grid():
    for models, cap in random_instances(10, (2, 3), seed=11):
        res = dm.schedule_resources(models, cap)
        util = dm.SmoothUtility(models, cap)
        ratio = util.exact(np.concatenate([res.bw, res.cp])) / dm.grid_oracle(models, cap)
        assert ratio >= 0.99
        assert res.kkt < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 6))
def test_schedule_is_feasible(seed, m):
    models, cap = random_instances(1, m, seed)[0]
    res = dm.schedule_resources(models, cap)
    for x in (res.bw, res.cp):
        assert np.all(x >= 0) and x.sum() <= 1 + 1e-12
    util = dm.SmoothUtility(models, cap)
    assert np.all(res.cp[util.top] == 0)


def test_scheduler_rejects_empty():
    with pytest.raises(DecisionError):
        dm.schedule_resources([], 1000.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_capped_simplex_projection(x):
    y = dm.project_capped_simplex(x)
    assert np.all(y >= 0) and y.sum() <= 1 + 1e-12
    # idempotent
    np.testing.assert_allclose(dm.project_capped_simplex(y), y, atol=1e-12)


# model-based version rule


def test_myopic_extremes():
    gs = [0, 1]
    kw = dict(demand={0: 1, 1: 3}, rates={0: 50e6, 1: 20e6}, catalog=CAT)
    hi = dm.myopic_versions(gs, bw_est={0: np.inf, 1: np.inf}, cp_est={0: np.inf, 1: np.inf},
                            compute_capacity=1000.0, **kw)
    lo = dm.myopic_versions(gs, bw_est={0: 0.0, 1: 0.0}, cp_est={0: 0.0, 1: 0.0},
                            compute_capacity=1000.0, **kw)
    assert hi == {0: 2, 1: 2} and lo == {0: 0, 1: 0}


def snapshot(rng, n_groups=3, capacity=2000.0):
    return dm.synthetic_snapshot(rng, 20, CAT, QoEWeights(), k_range=(n_groups, n_groups),
                                 capacities=(capacity,))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_model_decision_valid(seed):
    snap = snapshot(np.random.default_rng(seed))
    est = dm.expected_shares(snap.group_ids, {})
    dec = dm.model_based_decision(snap, est, est)
    dm.validate_decision(dec, snap.group_ids, CAT.n_versions)


def test_validate_rejects_oversubscription():
    bad = dm.Decision({0: 0, 1: 0}, {0: 0.7, 1: 0.7}, {0: 0.0, 1: 0.0})
    with pytest.raises(DecisionError):
        dm.validate_decision(bad)


# arbitration


def test_rollout_zero_horizon():
    snap = snapshot(np.random.default_rng(4))
    est = dm.expected_shares(snap.group_ids, {})
    assert dm.rollout_qoe(dm.model_based_decision(snap, est, est), snap, 0) == 0.0


def test_tie_goes_to_model():
    snap = snapshot(np.random.default_rng(5))
    est = dm.expected_shares(snap.group_ids, {})
    dec = dm.model_based_decision(snap, est, est)
    learned = dm.replace_shares(dec, dec.bw, dec.cp)
    chosen, rec = dm.arbitrate(dec, learned, snap)
    assert chosen is dec and rec.winner == "model"


def test_higher_prediction_wins(monkeypatch):
    model, learned = object(), object()
    monkeypatch.setattr(dm, "rollout_qoe", lambda d, s, h=None: 5.0 if d is learned else 4.0)
    chosen, rec = dm.arbitrate(model, learned, None)
    assert chosen is learned and rec.winner == "learned"
    assert (rec.model_pred_qoe, rec.learned_pred_qoe) == (4.0, 5.0)


def test_arbitration_leaves_store_untouched():
    cfg = fast_config(seed=1)
    state = init_scenario(cfg)
    store = state.loop.store
    rng = np.random.default_rng(0)
    grouping = state.abstraction.update(store.windows(), store.swipe_counts, store.rates, rng)
    state.net.assign_groups(grouping.labels)
    snap = dt_snapshot(state, grouping)
    before = store.state_hash()
    dec, rec = decide(state, snap, None, None)
    assert store.state_hash() == before
    assert rec.winner in ("model", "learned")
    dm.validate_decision(dec, snap.group_ids)
