import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import fast_config
from gdtsim import harness as hx
from gdtsim.errors import ConfigError, GDTError


def fake_episode(cfg):
    return cfg.seed + cfg.compute_capacity / 1000.0 + {"data-model": 2, "heuristic": 1,
                                                       "drl": 0}[cfg.scheme]


def test_sweep_counts_rows(tmp_path):
    res = hx.run_sweep(hx.SweepSpec(), tmp_path, episode=fake_episode)
    assert res.ok and len(res.raw) == 60 and len(res.summary) == 12
    rows = hx.read_csv(tmp_path / "qoe_vs_compute.csv")
    assert len(rows) == 60
    assert list(rows[0]) == list(hx.RAW_COLUMNS)
    assert (tmp_path / "manifest.json").exists()


def test_summary_of_one_two_three():
    raw = [("heuristic", 1000.0, s, float(s + 1)) for s in range(3)]
    (_, _, mean, hw, n), = hx.summarize(raw)
    assert mean == 2.0 and n == 3
    assert hw == pytest.approx(stats.t.ppf(0.975, 2) * 1.0 / math.sqrt(3), rel=1e-12)


def test_half_width_single_value():
    assert hx.half_width([4.2]) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=8))
def test_summary_recomputable(values):
    raw = [("drl", 1.0, i, v) for i, v in enumerate(values)]
    (_, _, mean, hw, n), = hx.summarize(raw)
    assert n == len(values) and hw >= 0
    assert mean == pytest.approx(np.mean(values), abs=1e-12)


def test_sweep_byte_identical(tmp_path):
    spec = hx.SweepSpec(seeds=(0, 1))
    for d in ("a", "b"):
        hx.run_sweep(spec, tmp_path / d, episode=fake_episode)
    for name in ("qoe_vs_compute.csv", "qoe_summary.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_episode_error_flushes_marker(tmp_path):
    def boom(cfg):
        if cfg.compute_capacity == 4000.0:
            raise GDTError("boom")
        return 1.0

    res = hx.run_sweep(hx.SweepSpec(schemes=("drl",), seeds=(0,)), tmp_path, episode=boom)
    assert not res.ok and "boom" in res.error
    rows = hx.read_csv(tmp_path / "qoe_vs_compute.csv")
    assert len(rows) == 3 and rows[-1]["scheme"] == hx.ERROR_MARKER


def test_non_finite_qoe_is_an_error():
    res = hx.run_sweep(hx.SweepSpec(schemes=("drl",), seeds=(0,)),
                       episode=lambda cfg: float("nan"))
    assert not res.ok and res.raw == []


@pytest.mark.parametrize("kw", [{"seeds": ()}, {"capacities": (2000.0, 1000.0)},
                                {"schemes": ("bogus",)}])
def test_sweep_spec_invalid(kw):
    with pytest.raises(ConfigError):
        hx.SweepSpec(**kw).validate()


def test_ordering_and_monotone():
    summary = [("data-model", 1.0, 3.0, 0.5, 5), ("heuristic", 1.0, 2.0, 0.5, 5),
               ("drl", 1.0, 1.0, 0.5, 5), ("data-model", 2.0, 3.0, 0.5, 5),
               ("heuristic", 2.0, 2.8, 0.5, 5), ("drl", 2.0, 1.0, 0.5, 5)]
    assert hx.ordering_holds(summary) == {1.0: True, 2.0: False}
    assert hx.monotone_within([-1.0, -1.02, 0.5])
    assert not hx.monotone_within([-1.0, -1.05])


# swipe curves


def planted_report(n_slots=100, n_types=3, seed=0):
    rng = np.random.default_rng(seed)
    sessions = []
    for g in range(2):
        for t in range(n_types):
            for uid in range(20):
                end = int(rng.integers(n_slots))
                sessions.append([uid, g, t, 0, end, bool(rng.random() < 0.5)])
    return SimpleNamespace(sessions=sessions, n_slots=n_slots)


def test_curve_rows_count_and_contract():
    rows = hx.extract_swipe_curves(planted_report())
    assert len(rows) == 600
    for g in range(2):
        m = hx.curve_matrix(rows, g, 3, 100)
        assert m.min() >= 0 and m.max() <= 1
        assert np.all(np.diff(m, axis=1) >= 0)


def test_single_group_warns_but_emits():
    rep = planted_report()
    rep.sessions = [s for s in rep.sessions if s[1] == 0]
    with pytest.warns(RuntimeWarning):
        rows = hx.extract_swipe_curves(rep)
    assert len(rows) == 300


def test_divergence_of_identical_groups_is_zero():
    rep = planted_report()
    rep.sessions += [[u, 2, t, a, b, s] for u, g, t, a, b, s in rep.sessions if g == 0]
    rows = hx.extract_swipe_curves(rep)
    assert hx.divergence(rows, 0, 2, 3, 100) == (0.0, 0.0)


def test_largest_groups():
    rep = SimpleNamespace(sessions=[[0, 3, 0, 0, 1, True]] * 2 + [[0, 1, 0, 0, 1, True]] * 5
                          + [[0, 7, 0, 0, 1, True]] * 2)
    assert hx.largest_groups(rep) == [1, 3]


# loop diagnostics


@pytest.fixture(scope="module")
def loops(tmp_path_factory):
    cfg = fast_config(n_users=6, n_slots=120, seed=1)
    out = tmp_path_factory.mktemp("loops")
    return hx.run_loop_diagnostics(cfg, out_dir=out), out, cfg


def test_loop_variants_written(loops):
    res, out, _ = loops
    assert set(res) == {"oracle", "trained", "dummy"}
    for v in res:
        rows = hx.read_csv(out / v / "loop_telemetry.csv")
        assert list(rows[0]) == list(hx.TELEMETRY_COLUMNS) and len(rows) == 120


def test_oracle_reaches_t_max(loops):
    res, _, cfg = loops
    assert res["oracle"][1].final_t_c == cfg.loop.t_max


def test_dummy_reaches_t_min(loops):
    res, _, cfg = loops
    s = res["dummy"][1]
    assert s.final_t_c == cfg.loop.t_min and s.t_min_after <= 10


def test_loop_telemetry_finite(loops):
    res, _, _ = loops
    for tel, _ in res.values():
        assert np.all(np.isfinite(np.array(tel, dtype=float)))
