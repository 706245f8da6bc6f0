"""Command line entry point: ``gdtsim run|sweep|curves|loops|selftest``."""

import argparse
import logging
import sys
from pathlib import Path

from . import harness as hx
from .config import SCHEMES, SimConfig, load_config
from .errors import GDTError


def _config(args):
    if args.config:
        cfg = load_config(args.config, seed=args.seed)
    else:
        cfg = SimConfig() if args.seed is None else SimConfig(seed=args.seed)
    if getattr(args, "scheme", None):
        cfg = cfg.replace(scheme=args.scheme)
    return cfg.validate()


def cmd_run(args):
    from .simulation import run_episode
    cfg = _config(args)
    report = run_episode(cfg, checkpoint=args.load_checkpoint)
    hx.write_episode(report, args.out, cfg)
    print(f"{cfg.scheme} seed={cfg.seed} C={cfg.compute_capacity:g} "
          f"mean_qoe={report.mean_qoe:.4f}")
    return 0


def cmd_sweep(args):
    cfg = _config(args)
    schemes = (args.scheme,) if args.scheme else SCHEMES
    seeds = tuple(range(args.n_seeds)) if args.seed is None else (args.seed,)
    spec = hx.SweepSpec(tuple(args.capacities), schemes, seeds, cfg)
    result = hx.run_sweep(spec, args.out)
    for s, c, m, h, n in result.summary:
        print(f"{s:>10} C={c:>6g} qoe={m:8.4f} +- {h:.4f} (n={n})")
    if not result.ok:
        print(f"error: {result.error}", file=sys.stderr)
        return 1
    return 0


def cmd_curves(args):
    from .simulation import run_episode
    cfg = _config(args)
    if args.planted:
        cfg = cfg.replace(preferences="archetypes")
    report = run_episode(cfg)
    rows = hx.extract_swipe_curves(report)
    hx.write_csv(Path(args.out) / "swipe_curves.csv", hx.CURVE_COLUMNS, rows)
    hx.write_manifest(Path(args.out) / "manifest.json", cfg, planted=bool(args.planted))
    print(f"{len(rows)} curve rows")
    return 0


def cmd_loops(args):
    cfg = _config(args)
    out = hx.run_loop_diagnostics(cfg, out_dir=args.out)
    for v, (_, s) in out.items():
        print(f"{v:>8}: final T_c={s.final_t_c} collections={s.collected} "
              f"reduction={s.reduction:.1f}x mean_rmse={s.mean_rmse:.2f}")
    return 0


def cmd_selftest(args):
    """Gradient checks on every learned component plus the scheduler oracles."""
    from . import selftest
    ok = True
    for name, passed, detail in selftest.run_all():
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok &= passed
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="gdtsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="YAML scenario file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--scheme", choices=SCHEMES)
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--load-checkpoint", type=Path, dest="load_checkpoint")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("run", help="single episode")
    common(sp)
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("sweep", help="QoE against compute capacity")
    common(sp)
    sp.add_argument("--capacities", type=float, nargs="+", default=[1000, 2000, 4000, 8000])
    sp.add_argument("--n-seeds", type=int, default=5, dest="n_seeds")
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("curves", help="cumulative swipe curves per group and type")
    common(sp)
    sp.add_argument("--planted", action="store_true", help="two planted preference archetypes")
    sp.set_defaults(func=cmd_curves)
    sp = sub.add_parser("loops", help="external-loop diagnostics for each predictor")
    common(sp)
    sp.set_defaults(func=cmd_loops)
    sp = sub.add_parser("selftest", help="gradient checks and oracle comparisons")
    common(sp)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GDTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
