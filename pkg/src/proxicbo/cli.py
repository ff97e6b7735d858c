"""Command line front end.

Subcommands
-----------
onebit-sparse, onebit-image, lidar, doppler
    Run the corresponding benchmark. Results go to the output directory:
    ``trials.csv`` (one row per trial/method/metric), ``aggregates.csv``,
    ``run_config.json`` (the fully resolved configuration), ``run_meta.json``
    (per-trial digests and counters), and PNG figures unless disabled.
theory-check
    Run the contraction check on the quadratic test objective and report
    the fitted decay slope against the guaranteed rate.
prox-selftest
    Randomized self-checks of every proximal operator.

Exit codes: 0 on success, 1 when a check fails, 2 for invalid
configuration, 3 when the fraction of diverged solves exceeds the
configured limit.
"""

import argparse
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (BenchConfig, monotonicity_flags, run_benchmark,
                    theory_check, write_aggregates_csv, write_trials_csv)
from .errors import ConfigError, ProxicboError

EXPERIMENT_COMMANDS = ("onebit-sparse", "onebit-image", "lidar", "doppler")


def _load_packaged_config(name):
    fname = name.replace("-", "_") + ".json"
    path = resources.files("proxicbo").joinpath(f"configs/{fname}")
    return json.loads(path.read_text())


def _deep_merge(base, overlay):
    out = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _int_list(text):
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma list of ints: {text!r}")


def _resolve_config(args):
    cfg = _load_packaged_config(args.command)
    if args.paper_scale:
        cfg = _deep_merge(cfg, cfg.get("paper_scale", {}))
    cfg.pop("paper_scale", None)
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {args.config}: {err}")
        cfg = _deep_merge(cfg, user)
    if args.trials is not None:
        cfg["trials"] = args.trials
    if args.particles is not None:
        cfg["particle_grid"] = args.particles
    if args.methods is not None:
        cfg["methods"] = args.methods.split(",")
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.timing:
        cfg["timing"] = True
    if args.no_plots:
        cfg["plots"] = False
    return BenchConfig.from_config(cfg)


def _cmd_benchmark(args):
    cfg = _resolve_config(args)
    out_dir = Path(args.out or f"proxicbo_results/{args.command}")
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = run_benchmark(cfg)
    write_trials_csv(out_dir / "trials.csv", summary.records)
    write_aggregates_csv(out_dir / "aggregates.csv", summary.aggregates)
    (out_dir / "run_config.json").write_text(
        json.dumps({"version": __version__, **cfg.to_config()}, indent=2,
                   default=str) + "\n")
    flags = monotonicity_flags(summary.aggregates)
    for flag in flags:
        print(f"note: {flag['experiment']} {flag['method']} success rate "
              f"drops {flag['drop']:.3f} from N={flag['n_from']} "
              f"to N={flag['n_to']}")
    (out_dir / "run_meta.json").write_text(
        json.dumps({"n_ref_failed": summary.n_ref_failed,
                    "divergence_fraction": summary.divergence_fraction,
                    "monotonicity_flags": flags,
                    "trials": summary.meta}, indent=2) + "\n")
    if cfg.plots:
        from .plots import plot_benchmark
        plot_benchmark(summary.aggregates, out_dir, cfg.experiment.kind)
    for row in summary.aggregates:
        if row["stat_name"] == "success_rate":
            print(f"{row['experiment']} {row['method']} "
                  f"N={row['n_particles']}: success rate "
                  f"{row['stat_value']:.3f}")
    print(f"wrote {out_dir}/trials.csv ({len(summary.records)} rows)")
    if summary.n_ref_failed:
        print(f"note: reference failed to converge in "
              f"{summary.n_ref_failed} trial(s)")
    if summary.divergence_fraction > cfg.divergence_limit:
        print(f"divergence fraction {summary.divergence_fraction:.3f} "
              f"exceeds limit {cfg.divergence_limit:.3f}", file=sys.stderr)
        return 3
    return 0


def _cmd_theory_check(args):
    params = {}
    if args.config:
        try:
            params = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {args.config}: {err}")
    if args.seed is not None:
        params["seed"] = args.seed
    try:
        result = theory_check(**params)
    except TypeError as err:
        raise ConfigError(f"bad theory-check parameters: {err}")
    out_dir = Path(args.out or "proxicbo_results/theory-check")
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "theory_decay.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "time", "moment"])
        for i, (t, m) in enumerate(zip(result.times, result.moments)):
            writer.writerow([i, repr(float(t)), repr(float(m))])
    (out_dir / "theory_summary.json").write_text(json.dumps({
        "kappa": result.kappa, "fitted_slope": result.slope,
        "threshold": result.threshold, "passed": result.passed}, indent=2)
        + "\n")
    if not args.no_plots:
        from .plots import plot_theory
        plot_theory(result, out_dir)
    verdict = "PASS" if result.passed else "FAIL"
    print(f"{verdict}: kappa={result.kappa:.4f} fitted slope="
          f"{result.slope:.4f} required <= {result.threshold:.4f}")
    return 0 if result.passed else 1


def _selftest_nonexpansive(op, rng, pairs=200):
    d = op.dim or 8
    for _ in range(pairs):
        u = rng.normal(scale=3.0, size=d)
        v = rng.normal(scale=3.0, size=d)
        mu = float(rng.uniform(0.05, 4.0))
        lhs = np.linalg.norm(op.prox(u, mu) - op.prox(v, mu))
        if lhs > np.linalg.norm(u - v) + 1e-10:
            return False
    return True


def _cmd_prox_selftest(args):
    from . import prox as P

    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    ops = [
        ("Zero", P.Zero()),
        ("L1", P.L1(0.5)),
        ("Box", P.Box(-1.0, 1.0)),
        ("L1Box", P.L1Box(0.3, -1.0, 2.0)),
        ("Indicator", P.Indicator(np.zeros(8), np.full(8, np.inf))),
        ("TvBox", P.TvBox(0.15, 6, 6, 0.0, 1.0)),
    ]
    failures = 0
    for name, op in ops:
        ok = _selftest_nonexpansive(op, rng)
        print(f"{'PASS' if ok else 'FAIL'} {name}: prox is non-expansive")
        failures += not ok
    for name, op in [("Box", P.Box(-1.0, 1.0)),
                     ("Indicator", P.Indicator(np.zeros(8), np.ones(8)))]:
        v = rng.normal(scale=3.0, size=(50, 8))
        once = op.prox(v, 1.0)
        ok = np.array_equal(op.prox(once, 1.0), once)
        print(f"{'PASS' if ok else 'FAIL'} {name}: projection is idempotent")
        failures += not ok
    # certificate for the TV prox: a gap-driven run must land within a
    # whisker, in objective value, of a much tighter solve
    op = P.TvBox(0.2, 8, 8, 0.0, 1.0, inner_iters=4000, inner_tol=1e-10)
    tight = P.TvBox(0.2, 8, 8, 0.0, 1.0, inner_iters=20000, inner_tol=1e-14)
    b = rng.uniform(size=64)
    lam = 0.7 * op.weight

    def phi(x):
        img = x.reshape(8, 8)
        return 0.5 * np.sum((x - b) ** 2) + lam * op._tv(img)

    excess = phi(op.prox(b, 0.7)) - phi(tight.prox(b, 0.7))
    ok = excess <= 1e-8
    print(f"{'PASS' if ok else 'FAIL'} TvBox: prox objective excess "
          f"{excess:.2e} <= 1e-08")
    failures += not ok
    return 1 if failures else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="proxicbo",
        description="Consensus-based composite optimization benchmarks")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, blurb in [
            ("onebit-sparse", "sparse recovery from one-bit measurements"),
            ("onebit-image", "image recovery from one-bit measurements"),
            ("lidar", "single-photon lidar parameter estimation"),
            ("doppler", "lidar estimation with radial velocity")]:
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--config", help="JSON file overlaying the defaults")
        p.add_argument("--trials", type=int, help="number of trials")
        p.add_argument("--particles", type=_int_list,
                       help="comma list of ensemble sizes")
        p.add_argument("--methods", help="comma list of methods to run")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--workers", type=int, help="process pool size")
        p.add_argument("--out", help="output directory")
        p.add_argument("--paper-scale", action="store_true",
                       help="use the full-size problem dimensions")
        p.add_argument("--timing", action="store_true",
                       help="record wall times (breaks byte reproducibility)")
        p.add_argument("--no-plots", action="store_true",
                       help="skip figure rendering")
        p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("theory-check",
                       help="contraction rate check on a quadratic")
    p.add_argument("--config", help="JSON file with theory-check parameters")
    p.add_argument("--seed", type=int, help="ensemble seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_theory_check)

    p = sub.add_parser("prox-selftest",
                       help="randomized checks of the proximal operators")
    p.add_argument("--seed", type=int, help="RNG seed for the checks")
    p.set_defaults(func=_cmd_prox_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ProxicboError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
