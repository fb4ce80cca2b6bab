"""Command-line interface: ``estimate``, ``simulate``, ``sweep`` and ``dump-dgp``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import dgp, harness
from .data import DataError, read_historical_csv, read_trial_csv, write_historical_csv, write_trial_csv
from .estimators import (
    EstimationError,
    ancova_estimate,
    oracle_adjust_estimate,
    prognostic_adjust_estimate,
    tmle_estimate,
    unadjusted_estimate,
    within_trial_estimate,
)
from .learners import CrossFitPlan, LearnerError, cross_fit_predict, default_library, parse_library
from .numerics import make_rng

DEFAULT_SEED = 12345
ESTIMATOR_NAMES = ("unadjusted", "ancova", "prog-historical", "within-trial", "tmle", "tmle-linear", "oracle")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _name_list(text: str) -> list[str]:
    names = [x.strip() for x in text.split(",") if x.strip()]
    bad = [x for x in names if x not in ESTIMATOR_NAMES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown estimator(s) {bad}; choose from {ESTIMATOR_NAMES}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trialadjust", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--learners", help="learner library as JSON text (object or list)")
    common.add_argument("--folds", type=int, default=10, help="cross-fitting folds")
    common.add_argument("--sl-folds", type=int, default=10, help="super-learner CV folds")

    est = sub.add_parser("estimate", parents=[common], help="estimate the ATE on a trial CSV")
    est.add_argument("--data", required=True)
    est.add_argument("--estimator", choices=ESTIMATOR_NAMES, default="within-trial")
    est.add_argument("--historical", help="historical controls CSV (prog-historical)")
    est.add_argument("--pi1", type=float, default=0.5)
    est.add_argument("--loo", action="store_true", help="leave-one-out cross-fitting")
    est.add_argument("--score-only", action="store_true",
                     help="within-trial/prog-historical: adjust for the score without raw covariates")

    for name, helptext in (("simulate", "run the scenario study"), ("sweep", "run the sample-size sweep")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--effect", choices=dgp.EFFECTS, default="heterogeneous")
        p.add_argument("--reps", type=int, default=250)
        p.add_argument("--estimators", type=_name_list, default=list(harness.DEFAULT_ESTIMATORS))
        p.add_argument("--workers", type=int, default=None,
                       help=f"worker processes (default: ${harness.WORKERS_ENV} or 1)")
        p.add_argument("--out", required=True, help="results CSV")
        p.add_argument("--svg", help="optional SVG chart path")
        p.add_argument("--config", help="SimulationPlan JSON file; overrides the flags")
        if name == "simulate":
            p.add_argument("--shift", choices=dgp.SHIFTS, default=None,
                           help="single scenario; omit for all six")
            p.add_argument("--n", type=int, default=200)
            p.add_argument("--n-hist", type=int, default=4000)
        else:
            p.add_argument("--grid", type=_int_list, default=list(harness.SWEEP_GRID))

    dump = sub.add_parser("dump-dgp", help="write a simulated trial (and historical) CSV")
    dump.add_argument("--effect", choices=dgp.EFFECTS, default="heterogeneous")
    dump.add_argument("--n", type=int, default=200)
    dump.add_argument("--seed", type=int, default=DEFAULT_SEED)
    dump.add_argument("--out", required=True)
    dump.add_argument("--historical-out")
    dump.add_argument("--n-hist", type=int, default=4000)
    dump.add_argument("--shift", choices=dgp.SHIFTS, default="none")
    return parser


def _estimate(args) -> int:
    data = read_trial_csv(args.data, pi1=args.pi1)
    learners = parse_library(args.learners) if args.learners else default_library()
    plan = CrossFitPlan("loo" if args.loo else "v-fold", args.folds, args.seed)
    name = args.estimator
    if name == "unadjusted":
        res = unadjusted_estimate(data, args.alpha)
    elif name == "ancova":
        res = ancova_estimate(data, alpha=args.alpha)
    elif name == "prog-historical":
        if not args.historical:
            raise DataError("prog-historical needs --historical")
        hist = read_historical_csv(args.historical)
        res = prognostic_adjust_estimate(data, hist, learners, v=args.sl_folds, seed=args.seed,
                                         raw_covariates=not args.score_only, alpha=args.alpha)
    elif name == "within-trial":
        init = _crossfit(learners, data, plan, args.sl_folds)
        res = within_trial_estimate(data, plan=plan, alpha=args.alpha, initial=init,
                                    score_only=args.score_only)
    elif name in ("tmle", "tmle-linear"):
        init = _crossfit(learners, data, plan, args.sl_folds)
        res = tmle_estimate(data, plan=plan, alpha=args.alpha, initial=init,
                            submodel="additive-eps" if name == "tmle" else "linear-fluctuation")
    else:
        res = oracle_adjust_estimate(data, args.alpha)
    print(res.to_json())
    return 0


def _crossfit(learners, data, plan, sl_folds):
    return cross_fit_predict(learners, data, plan, sl_folds=sl_folds)


def _plan(args, sweep: bool) -> harness.SimulationPlan:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            return harness.plan_from_json(fh.read())
    kw = dict(alpha=args.alpha, folds=args.folds, sl_folds=args.sl_folds)
    if args.learners:
        kw["learners"] = parse_library(args.learners)
    if sweep:
        return harness.sweep_plan(args.reps, args.seed, args.grid, args.effect, args.estimators, **kw)
    if args.shift is None:
        return harness.scenario_plan(args.reps, args.seed, args.n, args.n_hist, args.estimators, **kw)
    scen = [dgp.ScenarioConfig(args.effect, args.shift, args.n, args.n_hist, args.seed)]
    return harness.SimulationPlan(scen, list(args.estimators), args.reps, args.seed, **kw)


def _simulate(args, sweep: bool) -> int:
    plan = _plan(args, sweep)

    def progress(sc, rows):
        for r in rows:
            print(f"{r.scenario:28s} n={r.n:<4d} {r.estimator:16s} se={r.mean_est_se:.4f} "
                  f"emp={r.empirical_se:.4f} power={r.power:.3f} cov={r.coverage:.3f}",
                  file=sys.stderr)

    rows = harness.run_study(plan, args.workers, progress)
    harness.write_metrics_csv(rows, args.out)
    if args.svg:
        metric = "power" if sweep else "mean_est_se"
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(harness.svg_chart(rows, metric))
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _dump(args) -> int:
    trial = dgp.sample_trial(args.n, args.effect, make_rng(args.seed, 0, 0))
    write_trial_csv(trial, args.out)
    if args.historical_out:
        hist = dgp.sample_historical(args.n_hist, args.effect, args.shift, make_rng(args.seed, 0, 1))
        write_historical_csv(hist, args.historical_out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "estimate":
            return _estimate(args)
        if args.command in ("simulate", "sweep"):
            return _simulate(args, args.command == "sweep")
        return _dump(args)
    except (DataError, EstimationError, LearnerError, OSError, ValueError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
