"""
Private Regression Tests - Command Line
Run one DP hypothesis test, a significance/power experiment, or the
limiting-distribution diagnostic

Usage:
    python dptest.py test linear-f --input bike.csv --x hr --y temp --rho 2.0 --seed 1
    python dptest.py experiment power --testers linear-f,linear-f-np --trials 2000
    python dptest.py diagnostic --n 100000 --slope 0 --sigma-e 1 --delta 6

Exit status: 0 when the run completes (whatever the test decides), 2 on a usage
error, 3 on a data error.
"""

import argparse
import logging
import sys
from dataclasses import asdict
from typing import List, Optional, Sequence

from data_io import (Exponential, GeneratorSpec, LogNormal, MixtureSpec, Normal,
                     Uniform, generate, read_csv, subsample, write_table_csv)
from dp_primitives import ClipBound, PrivacyBudget, RandomSource
from errors import DPTestError, InsufficientSamples, InvalidConfig, InvalidSpec
from harness import (DEFAULT_RHO_GRID, MIN_DIAGNOSTIC_SAMPLES, MIXTURE_TESTERS,
                     NONPRIVATE_TESTERS, PRIVATE_TESTERS, TrialSampler,
                     compare_algorithms, convergence_diagnostic, make_tester,
                     write_report)
from linear_model import GroupedDataset
from monte_carlo import CI_SAMPLER_NORMAL, CI_SAMPLER_RELEASE, MCConfig
from suffstat_testers import NULL_SLOPE_GROUP1, NULL_SLOPE_POOLED

logger = logging.getLogger("dptest")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

# Generator flags default to None so an explicit one can be told apart from
# --input; these are the values used when none is given
GENERATOR_DEFAULTS = {
    "n": 500,
    "x_dist": "normal:0.5,1",
    "slope": 1.0,
    "intercept": 0.0,
    "sigma_e": 0.35,
    "slope2": None,   # mixture designs: same as --slope
    "frac1": 0.5,
}

DIAGNOSTIC_DELTA = 6.0

X_DISTRIBUTIONS = {
    "normal": Normal,
    "uniform": Uniform,
    "exponential": Exponential,
    "lognormal": LogNormal,
}


class UsageError(Exception):
    """Flags that parse but do not make sense together"""


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0,
                   help="master random seed (default: %(default)s)")
    p.add_argument("--verbose", action="store_true",
                   help="debug logging (default: %(default)s)")


def _add_generator(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("generator")
    g.add_argument("--n", type=int, default=None,
                   help=f"rows (default: {GENERATOR_DEFAULTS['n']})")
    g.add_argument("--x-dist", default=None,
                   help="x distribution NAME:P1[,P2] with NAME in "
                        f"{'/'.join(X_DISTRIBUTIONS)} (default: {GENERATOR_DEFAULTS['x_dist']})")
    g.add_argument("--slope", type=float, default=None,
                   help=f"slope, group 1 slope for mixtures (default: {GENERATOR_DEFAULTS['slope']})")
    g.add_argument("--intercept", type=float, default=None,
                   help=f"intercept of linear designs (default: {GENERATOR_DEFAULTS['intercept']})")
    g.add_argument("--sigma-e", type=float, default=None,
                   help=f"noise standard deviation (default: {GENERATOR_DEFAULTS['sigma_e']})")
    g.add_argument("--slope2", type=float, default=None,
                   help="group 2 slope for mixtures (default: same as --slope)")
    g.add_argument("--frac1", type=float, default=None,
                   help=f"share of rows in group 1 (default: {GENERATOR_DEFAULTS['frac1']})")


def _add_privacy(p: argparse.ArgumentParser, delta: float = 2.0) -> None:
    p.add_argument("--delta", type=float, default=delta,
                   help="clipping bound (default: %(default)s)")
    p.add_argument("--alpha", type=float, default=0.05,
                   help="significance level (default: %(default)s)")
    p.add_argument("--k", type=int, default=1000,
                   help="simulated null statistics per test (default: %(default)s)")
    p.add_argument("--target-slope", type=float, default=0.0,
                   help="slope under H0 for the ci tester (default: %(default)s)")
    p.add_argument("--null-slope", choices=[NULL_SLOPE_POOLED, NULL_SLOPE_GROUP1],
                   default=NULL_SLOPE_POOLED,
                   help="null-model slope for mixture-f (default: %(default)s)")
    p.add_argument("--literal-residual-term", action="store_true",
                   help="use the xybar variant of the last residual term (default: %(default)s)")
    p.add_argument("--ci-sampler", choices=[CI_SAMPLER_RELEASE, CI_SAMPLER_NORMAL],
                   default=CI_SAMPLER_RELEASE,
                   help="bootstrap slope draws for the ci tester (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dptest",
                                     description="Differentially private tests for "
                                                 "simple linear regression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="run one test on a CSV file or generated data")
    p.add_argument("tester", choices=PRIVATE_TESTERS + NONPRIVATE_TESTERS)
    data = p.add_argument_group("input")
    data.add_argument("--input", default=None, help="CSV file (default: %(default)s)")
    data.add_argument("--x", default="x", help="x column (default: %(default)s)")
    data.add_argument("--y", default="y", help="y column (default: %(default)s)")
    data.add_argument("--group", default=None,
                      help="group label column for mixture testers (default: %(default)s)")
    data.add_argument("--subsample", type=float, default=None,
                      help="keep this fraction of rows (default: %(default)s)")
    _add_generator(p)
    p.add_argument("--rho", type=float, default=0.5,
                   help="zCDP budget (default: %(default)s)")
    _add_privacy(p)
    p.add_argument("--record", default=None,
                   help="also write the decision to this CSV (default: %(default)s)")
    _add_common(p)

    p = sub.add_parser("experiment", help="estimate significance or power")
    p.add_argument("mode", choices=["power", "significance"])
    _add_generator(p)
    p.add_argument("--testers", default="linear-f",
                   help="comma-separated tester names (default: %(default)s)")
    p.add_argument("--rho-grid", default=",".join(str(r) for r in DEFAULT_RHO_GRID),
                   help="comma-separated rho values (default: %(default)s)")
    _add_privacy(p)
    p.add_argument("--trials", type=int, default=2000,
                   help="trials per (tester, rho) cell (default: %(default)s)")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel workers, -1 for all cores (default: %(default)s)")
    p.add_argument("--out", default="results.csv",
                   help="results CSV (default: %(default)s)")
    _add_common(p)

    p = sub.add_parser("diagnostic", help="KS distance of the F statistic to its limit")
    _add_generator(p)
    p.add_argument("--rho", type=float, default=0.5,
                   help="zCDP budget (default: %(default)s)")
    p.add_argument("--delta", type=float, default=DIAGNOSTIC_DELTA,
                   help="clipping bound (default: %(default)s)")
    p.add_argument("--samples", type=int, default=2000,
                   help="statistics to draw (default: %(default)s)")
    p.add_argument("--nonprivate", action="store_true",
                   help="use the non-private statistic (default: %(default)s)")
    p.add_argument("--out", default="convergence.csv",
                   help="report CSV (default: %(default)s)")
    _add_common(p)
    return parser


# ---------------------------------------------------------------------------
# Flag resolution
# ---------------------------------------------------------------------------

def parse_x_dist(text: str):
    """'normal:0.5,1' -> Normal(0.5, 1.0)"""
    name, _, params = text.partition(":")
    if name not in X_DISTRIBUTIONS:
        raise InvalidSpec(f"unknown x distribution {name!r}")
    try:
        values = [float(v) for v in params.split(",")] if params else []
    except ValueError:
        raise InvalidSpec(f"bad distribution parameters {params!r}")
    try:
        return X_DISTRIBUTIONS[name](*values)
    except TypeError:
        raise InvalidSpec(f"wrong number of parameters for {name}: {params!r}")


def generator_flags_given(args) -> List[str]:
    return [flag for flag in GENERATOR_DEFAULTS if getattr(args, flag, None) is not None]


def spec_from_args(args, mixture: bool) -> GeneratorSpec:
    opts = {k: (getattr(args, k) if getattr(args, k) is not None else v)
            for k, v in GENERATOR_DEFAULTS.items()}
    mix = None
    if mixture:
        slope2 = opts["slope2"] if opts["slope2"] is not None else opts["slope"]
        mix = MixtureSpec(slope2=slope2, frac1=opts["frac1"])
    return GeneratorSpec(x_dist=parse_x_dist(opts["x_dist"]), slope=opts["slope"],
                         intercept=opts["intercept"], sigma_e=opts["sigma_e"],
                         n=opts["n"], mixture=mix)


def parse_grid(text: str) -> List[float]:
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --rho-grid {text!r}")
    if not grid:
        raise UsageError("--rho-grid is empty")
    return grid


def _log_config(args) -> None:
    logger.info("resolved configuration: %s", {k: v for k, v in sorted(vars(args).items())})
    logger.info("seed: %d", args.seed)


def _banner(title: str) -> None:
    print("=" * 60)
    print(title)
    print("=" * 60)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_test(args) -> int:
    mixture = args.tester in MIXTURE_TESTERS
    try:
        if args.input and generator_flags_given(args):
            raise UsageError("give either --input or generator flags, not both")
        if args.input and mixture and not args.group:
            raise UsageError(f"tester {args.tester} needs --group with --input")
        spec = None if args.input else spec_from_args(args, mixture)
        cfg = MCConfig(k=args.k, alpha=args.alpha)
        tester = make_tester(args.tester, PrivacyBudget(args.rho), ClipBound(args.delta),
                             cfg, args.target_slope, args.null_slope,
                             args.literal_residual_term, args.ci_sampler)
        root = RandomSource(args.seed)
    except (UsageError, DPTestError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    _log_config(args)

    data_rng, test_rng = root.spawn(2)
    try:
        if args.input:
            data = read_csv(args.input, args.x, args.y, args.group if mixture else None)
            source = args.input
        else:
            data = generate(spec, data_rng)
            source = f"generated ({spec.x_dist}, slope={spec.slope}, n={spec.n})"
        if args.subsample is not None:
            data = subsample(data, args.subsample, data_rng)
        if mixture and not isinstance(data, GroupedDataset):
            raise InvalidConfig(f"tester {args.tester} needs grouped data")
        decision = tester(data, test_rng)
    except (DPTestError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA

    _banner(f"TEST: {args.tester}")
    print(f"Data:       {source} (n={data.n})")
    print(f"Decision:   {decision.outcome.value}")
    print(f"Reason:     {decision.reason.value}")
    if decision.statistic is not None:
        print(f"Statistic:  {decision.statistic:.6g}")
    if decision.threshold is not None:
        print(f"Threshold:  {decision.threshold:.6g}")
    if decision.p_value is not None:
        print(f"p-value:    {decision.p_value:.4g}")
    if decision.interval is not None:
        print(f"Interval:   ({decision.interval[0]:.6g}, {decision.interval[1]:.6g})")

    if args.record:
        lo, hi = decision.interval if decision.interval else (None, None)
        record = {"tester": args.tester, "n": data.n, "rho": args.rho,
                  "seed": args.seed, "outcome": decision.outcome.value,
                  "reason": decision.reason.value, "statistic": decision.statistic,
                  "threshold": decision.threshold, "p_value": decision.p_value,
                  "interval_lo": lo, "interval_hi": hi}
        try:
            write_table_csv([record], args.record)
        except OSError as exc:
            logger.error("%s", exc)
            return EXIT_DATA
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        names = [t.strip() for t in args.testers.split(",") if t.strip()]
        unknown = [t for t in names if t not in PRIVATE_TESTERS + NONPRIVATE_TESTERS]
        if not names or unknown:
            raise UsageError(f"bad --testers {args.testers!r}")
        kinds = {t in MIXTURE_TESTERS for t in names}
        if len(kinds) > 1:
            raise UsageError("cannot mix linear and mixture testers in one experiment")
        if args.trials < 1:
            raise UsageError(f"--trials must be at least 1, got {args.trials}")
        grid = parse_grid(args.rho_grid)
        spec = spec_from_args(args, mixture=kinds.pop())
        if args.mode == "significance":
            spec = spec.null()
        cfg = MCConfig(k=args.k, alpha=args.alpha)
        delta = ClipBound(args.delta)
        private = [t for t in names if t in PRIVATE_TESTERS]
        nonprivate = [t for t in names if t in NONPRIVATE_TESTERS]
        cells = [[make_tester(t, PrivacyBudget(rho), delta, cfg, args.target_slope,
                              args.null_slope, args.literal_residual_term, args.ci_sampler)
                  for t in private] for rho in grid]
        cells.append([make_tester(t, cfg=cfg) for t in nonprivate])
        root = RandomSource(args.seed)
    except (UsageError, DPTestError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    _log_config(args)

    sampler = TrialSampler(spec)
    streams = root.spawn(len(cells))
    rows = []
    try:
        for testers, child in zip(cells, streams):
            if testers:
                rows.extend(compare_algorithms([sampler], testers, args.trials, child,
                                               args.jobs))
        write_report(rows, args.out)
    except (DPTestError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA

    _banner(f"EXPERIMENT: {args.mode} (n={spec.n}, trials={args.trials})")
    for row in rows:
        rho = "-" if row.rho is None else f"{row.rho:g}"
        print(f"  {row.tester:>13}  rho={rho:>6}  rate={row.rate:.4f} +/- {row.stderr:.4f}")
    print(f"\nResults written to {args.out}")
    return EXIT_OK


def cmd_diagnostic(args) -> int:
    try:
        if args.samples < MIN_DIAGNOSTIC_SAMPLES:
            raise InsufficientSamples(f"--samples must be at least {MIN_DIAGNOSTIC_SAMPLES}")
        spec = spec_from_args(args, mixture=False)
        budget = PrivacyBudget(args.rho)
        delta = ClipBound(args.delta)
        root = RandomSource(args.seed)
    except DPTestError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    _log_config(args)

    try:
        report = convergence_diagnostic(spec, spec.n, budget, delta, args.samples,
                                        root, private=not args.nonprivate)
        write_table_csv([asdict(report)], args.out)
    except (DPTestError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA

    _banner("CONVERGENCE DIAGNOSTIC")
    print(f"n={report.n}  eta^2={report.noncentrality:.4g}  samples={report.samples} "
          f"(excluded {report.excluded})")
    print(f"KS distance: {report.ks_distance:.4f} (p={report.ks_pvalue:.3g})")
    print(f"Mean / variance: {report.mean:.4f} / {report.variance:.4f}")
    print(f"\nReport written to {args.out}")
    return EXIT_OK


COMMANDS = {"test": cmd_test, "experiment": cmd_experiment, "diagnostic": cmd_diagnostic}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
                        stream=sys.stderr)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
