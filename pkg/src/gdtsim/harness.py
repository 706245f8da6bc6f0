"""Experiment orchestration: capacity sweeps, swipe curves, loop diagnostics, CSV output."""

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .abstraction import cumulative_swipe_curve
from .config import PREDICTORS, SCHEMES, SimConfig, default_digests
from .errors import ConfigError, GDTError
from .simulation import SLOT_COLUMNS, init_scenario, run_episode

log = logging.getLogger(__name__)

RAW_COLUMNS = ("scheme", "capacity", "seed", "mean_episode_qoe")
SUMMARY_COLUMNS = ("scheme", "capacity", "mean_qoe", "half_width", "n_seeds")
CURVE_COLUMNS = ("mg_id", "video_type", "slot", "cum_swipe_prob")
TELEMETRY_COLUMNS = ("slot", "t_c", "rmse", "collected", "emulated")
ARBITRATION_COLUMNS = ("epoch", "model_pred_qoe", "learned_pred_qoe", "winner")
ERROR_MARKER = "ERROR"


def write_csv(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(path, config, **extra):
    """JSON manifest: config hash, seed and digests of every module's defaults."""
    data = {"config_digest": config.digest(), "seed": config.seed, "version": __version__,
            "module_defaults": default_digests()}
    data.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")
    return path


# ------------------------------------------------------------------ sweeps


@dataclass
class SweepSpec:
    capacities: tuple = (1000.0, 2000.0, 4000.0, 8000.0)
    schemes: tuple = SCHEMES
    seeds: tuple = (0, 1, 2, 3, 4)
    template: SimConfig = field(default_factory=SimConfig)

    def validate(self):
        for name in ("capacities", "schemes", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"sweep.{name}", "must be nonempty")
        if any(b <= a for a, b in zip(self.capacities, self.capacities[1:])):
            raise ConfigError("sweep.capacities", "must be strictly increasing")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ConfigError("sweep.schemes", f"unknown schemes {bad}")
        return self


@dataclass
class SweepResult:
    raw: list
    summary: list
    error: str = None

    @property
    def ok(self):
        return self.error is None


def half_width(values, level=0.95):
    """t-distribution half-width of the mean; 0 for a single value."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return 0.0
    q = stats.t.ppf(0.5 + level / 2, len(v) - 1)
    return float(q * v.std(ddof=1) / math.sqrt(len(v)))


def summarize(raw):
    """Summary rows ``(scheme, capacity, mean, half_width, n)`` in first-seen order."""
    groups = {}
    for scheme, cap, _, q in raw:
        groups.setdefault((scheme, cap), []).append(float(q))
    return [(s, c, float(np.mean(v)), half_width(v), len(v)) for (s, c), v in groups.items()]


def run_sweep(spec, out_dir=None, episode=None):
    """Run every (scheme, capacity, seed) episode and emit raw and summary rows.

    ``episode`` maps a config to its mean episode QoE (defaults to a full
    simulation). An episode error stops the sweep: rows so far are flushed,
    followed by a marker row, and the result carries the error text.
    """
    spec.validate()
    episode = episode or (lambda cfg: run_episode(cfg).mean_qoe)
    raw, error = [], None
    try:
        for scheme in spec.schemes:
            for cap in spec.capacities:
                for seed in spec.seeds:
                    cfg = spec.template.replace(scheme=scheme, compute_capacity=float(cap),
                                                seed=int(seed))
                    q = float(episode(cfg))
                    if not np.isfinite(q):
                        raise GDTError(f"non-finite QoE for {scheme} C={cap} seed={seed}")
                    log.info("%s C=%g seed=%d qoe=%.4f", scheme, cap, seed, q)
                    raw.append((scheme, float(cap), int(seed), q))
    except GDTError as exc:
        error = f"{type(exc).__name__}: {exc}"
        log.error("sweep stopped: %s", error)
    summary = summarize(raw)
    if out_dir is not None:
        rows = list(raw)
        if error is not None:
            rows.append((ERROR_MARKER, "", "", error))
        write_csv(Path(out_dir) / "qoe_vs_compute.csv", RAW_COLUMNS, rows)
        write_csv(Path(out_dir) / "qoe_summary.csv", SUMMARY_COLUMNS, summary)
        write_manifest(Path(out_dir) / "manifest.json", spec.template,
                       capacities=list(spec.capacities), schemes=list(spec.schemes),
                       seeds=list(spec.seeds), error=error)
    return SweepResult(raw, summary, error)


def ordering_holds(summary, order=("data-model", "heuristic", "drl")):
    """Per capacity, is each scheme above the next by more than the larger's half-width?"""
    table = {(s, c): (m, h) for s, c, m, h, _ in summary}
    caps = sorted({c for _, c, *_ in summary})
    out = {}
    for c in caps:
        ok = True
        for hi, lo in zip(order, order[1:]):
            (m1, h1), (m2, _) = table[(hi, c)], table[(lo, c)]
            ok &= m1 - m2 > h1
        out[c] = bool(ok)
    return out


def monotone_within(means, tol=0.03):
    """Each adjacent pair satisfies ``q[i+1] >= q[i] - tol * |q[i]|``."""
    return all(b >= a - tol * abs(a) for a, b in zip(means, means[1:]))


# ------------------------------------------------------------ swipe curves


def extract_swipe_curves(report, n_slots=None):
    """Cumulative swipe curves for every (group, video type) seen in the episode."""
    sessions = report.sessions
    n_slots = report.n_slots if n_slots is None else n_slots
    groups = sorted({int(s[1]) for s in sessions})
    if len(groups) < 2:
        warnings.warn(f"swipe curves from {len(groups)} group(s); divergence is undefined",
                      RuntimeWarning, stacklevel=2)
    rows = []
    for g in groups:
        types = sorted({int(s[2]) for s in sessions if s[1] == g})
        for t in types:
            curve = cumulative_swipe_curve(sessions, g, t, n_slots)
            rows.extend((g, t, j, float(p)) for j, p in enumerate(curve))
    return rows


def curve_matrix(rows, group, n_types, n_slots):
    out = np.zeros((n_types, n_slots))
    for g, t, j, p in rows:
        if g == group:
            out[t, j] = p
    return out


def divergence(rows, g0, g1, n_types, n_slots, early=0.1):
    """(final-slot L1 gap, mean L1 gap over the first ``early`` share of slots)."""
    gap = np.abs(curve_matrix(rows, g0, n_types, n_slots)
                 - curve_matrix(rows, g1, n_types, n_slots)).sum(axis=0)
    head = max(1, int(round(early * n_slots)))
    return float(gap[-1]), float(gap[:head].mean())


def largest_groups(report, n=2):
    counts = {}
    for s in report.sessions:
        counts[int(s[1])] = counts.get(int(s[1]), 0) + 1
    return sorted(counts, key=lambda g: (-counts[g], g))[:n]


# ------------------------------------------------------- loop diagnostics


def run_loop_only(config):
    """Physical world plus the external loop, no abstraction or decisions.

    Returns the telemetry rows and the collection period in force at the end.
    """
    state = init_scenario(config)
    net, loop = state.net, state.loop
    for slot in range(config.n_slots):
        if slot > 0:
            net.advance(state.streams)
        counts = np.array([u.swipe_counts for u in net.users])
        loop.tick(slot, net.positions.copy(), net.rates.copy(), counts)
    return [tuple(r) for r in loop.telemetry], loop.ctrl.period


@dataclass
class LoopSummary:
    variant: str
    final_t_c: int
    collected: int
    baseline_collected: int
    mean_rmse: float
    t_min_after: int = None  # collection events until T_min first reached

    @property
    def reduction(self):
        return self.baseline_collected / max(self.collected, 1)


def summarize_loop(variant, telemetry, config, final_period):
    lp = config.loop
    collections = [r for r in telemetry if r[3] > 0]
    emulated = [r[2] for r in telemetry if r[4] > 0]
    # the t_c column is the period in force before each update, so the period
    # set by collection i shows up on collection i + 1
    hit = next((i for i, r in enumerate(collections) if r[1] == lp.t_min), None)
    if hit is None and final_period == lp.t_min:
        hit = len(collections)
    return LoopSummary(variant, int(final_period), len(collections),
                       len(telemetry) // lp.t_min if telemetry else 0,
                       float(np.mean(emulated)) if emulated else 0.0, hit)


def run_loop_diagnostics(config, variants=PREDICTORS, out_dir=None):
    """Telemetry and summaries for each predictor variant."""
    out = {}
    for v in variants:
        cfg = config.replace(loop=_with(config.loop, predictor=v))
        tel, period = run_loop_only(cfg)
        out[v] = (tel, summarize_loop(v, tel, cfg, period))
        if out_dir is not None:
            write_csv(Path(out_dir) / v / "loop_telemetry.csv", TELEMETRY_COLUMNS, tel)
    if out_dir is not None:
        write_manifest(Path(out_dir) / "manifest.json", config, variants=list(variants))
    return out


def _with(section, **changes):
    from dataclasses import replace
    return replace(section, **changes)


# ----------------------------------------------------------- single runs


def write_episode(report, out_dir, config):
    out = Path(out_dir)
    write_csv(out / "slots.csv", SLOT_COLUMNS, report.slots)
    write_csv(out / "loop_telemetry.csv", TELEMETRY_COLUMNS, report.telemetry)
    write_csv(out / "arbitration.csv", ARBITRATION_COLUMNS,
              [(a.epoch, a.model_pred_qoe, a.learned_pred_qoe, a.winner)
               for a in report.arbitration])
    write_manifest(out / "manifest.json", config, scheme=config.scheme,
                   mean_qoe=report.mean_qoe, position_digest=report.position_digest)
    return out


__all__ = ["SweepSpec", "SweepResult", "run_sweep", "summarize", "half_width",
           "ordering_holds", "monotone_within", "extract_swipe_curves", "divergence",
           "largest_groups", "run_loop_only", "run_loop_diagnostics", "summarize_loop",
           "LoopSummary", "write_csv", "read_csv", "write_manifest", "write_episode",
           "RAW_COLUMNS", "SUMMARY_COLUMNS", "CURVE_COLUMNS", "TELEMETRY_COLUMNS",
           "ARBITRATION_COLUMNS", "ERROR_MARKER"]
