"""Monte Carlo engine for the scenario and sample-size studies."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import dgp
from .data import DesignSpec
from .estimators import (
    ALPHA,
    EstimateResult,
    ancova_estimate,
    oracle_adjust_estimate,
    prognostic_adjust_estimate,
    tmle_estimate,
    unadjusted_estimate,
    within_trial_estimate,
)
from .learners import CrossFitPlan, LearnerSpec, cross_fit_predict, default_library
from .numerics import make_rng

log = logging.getLogger(__name__)

DEFAULT_ESTIMATORS = ("unadjusted", "prog-historical", "within-trial", "tmle", "oracle")
SWEEP_GRID = tuple(range(50, 201, 10)) + tuple(range(225, 401, 25))
SCENARIOS = (
    ("homogeneous", "none"),
    ("heterogeneous", "none"),
    ("heterogeneous", "obs-small"),
    ("heterogeneous", "obs-large"),
    ("heterogeneous", "unobs-small"),
    ("heterogeneous", "unobs-large"),
)
WORKERS_ENV = "TRIALADJUST_WORKERS"
METRIC_COLUMNS = ("estimator", "scenario", "n", "mean_est_se", "empirical_se", "power",
                  "coverage", "mean_bias", "reps_used", "failures")


@dataclass
class SimulationPlan:
    scenarios: list[dgp.ScenarioConfig]
    estimators: list[str] = field(default_factory=lambda: list(DEFAULT_ESTIMATORS))
    reps: int = 250
    master_seed: int = 12345
    alpha: float = ALPHA
    sweep: list[int] | None = None
    learners: list[LearnerSpec] = field(default_factory=default_library)
    folds: int = 10
    sl_folds: int = 10

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise ValueError(f"unknown estimators {unknown}; choose from {sorted(ESTIMATORS)}")
        if self.sweep is not None and any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise ValueError("sweep sizes must be strictly increasing")

    @classmethod
    def from_dict(cls, obj: dict) -> "SimulationPlan":
        obj = dict(obj)
        obj["scenarios"] = [dgp.ScenarioConfig(**s) for s in obj.get("scenarios", [])]
        if "learners" in obj:
            obj["learners"] = [LearnerSpec.from_dict(x) for x in obj["learners"]]
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["learners"] = [s.to_dict() for s in self.learners]
        return d


# ---------------------------------------------------------------------------
# One replication

class _Replication:
    """Lazily sampled data and shared nuisance fits for one replication."""

    def __init__(self, scenario: dgp.ScenarioConfig, rep_index: int, master_seed: int,
                 learners, folds: int, sl_folds: int):
        self.scenario = scenario
        self.rep_index = rep_index
        self.master_seed = master_seed
        self.learners = learners
        self.folds = folds
        self.sl_folds = sl_folds
        self.trial = dgp.sample_trial(scenario.n, scenario.effect,
                                      make_rng(master_seed, rep_index, 0))
        self.learner_seed = int(make_rng(master_seed, rep_index, 2).integers(2**31))
        self._historical = None
        self._crossfit = None

    @property
    def historical(self):
        if self._historical is None:
            self._historical = dgp.sample_historical(
                self.scenario.n_hist, self.scenario.effect, self.scenario.shift,
                make_rng(self.master_seed, self.rep_index, 1),
            )
        return self._historical

    @property
    def crossfit(self):
        if self._crossfit is None:
            plan = CrossFitPlan("v-fold", min(self.folds, self.trial.n // 2), self.learner_seed)
            self._crossfit = cross_fit_predict(self.learners, self.trial, plan, sl_folds=self.sl_folds)
        return self._crossfit


ESTIMATORS: dict[str, Callable[[_Replication, float], EstimateResult]] = {
    "unadjusted": lambda r, a: unadjusted_estimate(r.trial, a),
    "ancova": lambda r, a: ancova_estimate(r.trial, DesignSpec(), a),
    "prog-historical": lambda r, a: prognostic_adjust_estimate(
        r.trial, r.historical, r.learners, v=r.sl_folds, seed=r.learner_seed, alpha=a),
    "within-trial": lambda r, a: within_trial_estimate(r.trial, initial=r.crossfit, alpha=a),
    "tmle": lambda r, a: tmle_estimate(r.trial, initial=r.crossfit, submodel="additive-eps", alpha=a),
    "tmle-linear": lambda r, a: tmle_estimate(r.trial, initial=r.crossfit,
                                              submodel="linear-fluctuation", alpha=a),
    "oracle": lambda r, a: oracle_adjust_estimate(r.trial, a),
}


@dataclass
class ReplicationResult:
    rep_index: int
    truth: float
    estimates: dict[str, EstimateResult | None]
    errors: dict[str, str]
    sampled_historical: bool


def run_replication(scenario: dgp.ScenarioConfig, estimators: Sequence[str], rep_index: int,
                    master_seed: int, learners=None, alpha: float = ALPHA, folds: int = 10,
                    sl_folds: int = 10, truth: float | None = None) -> ReplicationResult:
    """Run every estimator on the same trial (and historical) draw.

    The trial stream depends only on ``(master_seed, rep_index)``, so all
    scenarios with the same effect and ``n`` share their trial draws. A
    failing estimator is recorded, not raised.
    """
    rep = _Replication(scenario, rep_index, master_seed, learners or default_library(), folds, sl_folds)
    if truth is None:
        truth = dgp.true_ate(scenario.effect)[0]
    estimates: dict[str, EstimateResult | None] = {}
    errors: dict[str, str] = {}
    for name in estimators:
        try:
            estimates[name] = ESTIMATORS[name](rep, alpha)
        except Exception as err:  # noqa: BLE001 - failures are counted per estimator
            log.warning("rep %d: %s failed: %s", rep_index, name, err)
            estimates[name] = None
            errors[name] = f"{type(err).__name__}: {err}"
    return ReplicationResult(rep_index, truth, estimates, errors, rep._historical is not None)


# ---------------------------------------------------------------------------
# Aggregation

@dataclass
class MetricsRow:
    estimator: str
    scenario: str
    n: int
    mean_est_se: float
    empirical_se: float
    power: float
    coverage: float
    mean_bias: float
    reps_used: int
    failures: int

    @property
    def flagged(self) -> bool:
        return self.reps_used < 2


def aggregate(results: Sequence[ReplicationResult], estimator: str, scenario: str = "",
              n: int = 0, alpha: float = ALPHA) -> MetricsRow:
    ok = [r for r in results if r.estimates.get(estimator) is not None]
    failures = len(results) - len(ok)
    if len(ok) < 2:
        nan = float("nan")
        return MetricsRow(estimator, scenario, n, nan, nan, nan, nan, nan, len(ok), failures)
    psi = np.array([r.estimates[estimator].psi_hat for r in ok])
    se = np.array([r.estimates[estimator].se for r in ok])
    pvals = np.array([r.estimates[estimator].p_value for r in ok])
    covered = np.array([r.estimates[estimator].covers(r.truth) for r in ok])
    truth = np.array([r.truth for r in ok])
    return MetricsRow(
        estimator, scenario, n,
        mean_est_se=float(se.mean()),
        empirical_se=float(psi.std(ddof=1)),
        power=float(np.mean(pvals < alpha)),
        coverage=float(covered.mean()),
        mean_bias=float(psi.mean() - truth.mean()),
        reps_used=len(ok),
        failures=failures,
    )


# ---------------------------------------------------------------------------
# Studies

def _worker_count(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


def _run_chunk(args):
    scenario, estimators, reps, master_seed, learners, alpha, folds, sl_folds, truth = args
    return [run_replication(scenario, estimators, r, master_seed, learners, alpha, folds, sl_folds, truth)
            for r in reps]


def run_scenario(plan: SimulationPlan, scenario: dgp.ScenarioConfig, workers: int | None = None,
                 pool: ProcessPoolExecutor | None = None) -> list[ReplicationResult]:
    """All replications of one scenario, ordered by replication index."""
    truth = dgp.true_ate(scenario.effect)[0]
    common = (plan.estimators, plan.master_seed, plan.learners, plan.alpha, plan.folds,
              plan.sl_folds, truth)
    if pool is None:
        return _run_chunk((scenario, common[0], range(plan.reps), *common[1:]))
    k = _worker_count(workers)
    chunks = [range(i, plan.reps, k * 4) for i in range(min(plan.reps, k * 4))]
    out: list[ReplicationResult] = []
    for part in pool.map(_run_chunk, [(scenario, common[0], c, *common[1:]) for c in chunks]):
        out.extend(part)
    return sorted(out, key=lambda r: r.rep_index)


def run_study(plan: SimulationPlan, workers: int | None = None, progress=None) -> list[MetricsRow]:
    """Metrics rows for every (scenario, estimator); sweep plans expand over n.

    Results do not depend on ``workers``: replications are seeded by index
    and merged in index order.
    """
    scenarios = list(plan.scenarios)
    if plan.sweep is not None:
        scenarios = [dgp.ScenarioConfig(s.effect, s.shift, n, 10 * n, s.seed)
                     for s in plan.scenarios for n in plan.sweep]
    k = _worker_count(workers)
    rows: list[MetricsRow] = []
    pool = ProcessPoolExecutor(k) if k > 1 else None
    try:
        for sc in scenarios:
            results = run_scenario(plan, sc, k, pool)
            for est in plan.estimators:
                rows.append(aggregate(results, est, sc.label, sc.n, plan.alpha))
            if progress is not None:
                progress(sc, rows[-len(plan.estimators):])
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def scenario_plan(reps: int = 250, master_seed: int = 12345, n: int = 200, n_hist: int = 4000,
                  estimators: Sequence[str] = DEFAULT_ESTIMATORS, **kw) -> SimulationPlan:
    scenarios = [dgp.ScenarioConfig(e, s, n, n_hist) for e, s in SCENARIOS]
    return SimulationPlan(scenarios, list(estimators), reps, master_seed, **kw)


def sweep_plan(reps: int = 250, master_seed: int = 12345, grid: Sequence[int] = SWEEP_GRID,
               effect: str = "heterogeneous", estimators: Sequence[str] = DEFAULT_ESTIMATORS,
               **kw) -> SimulationPlan:
    return SimulationPlan([dgp.ScenarioConfig(effect, "none", grid[0], 10 * grid[0])],
                          list(estimators), reps, master_seed, sweep=list(grid), **kw)


def run_scenario_study(plan: SimulationPlan, workers: int | None = None, progress=None):
    return run_study(plan, workers, progress)


def run_sweep_study(plan: SimulationPlan, workers: int | None = None, progress=None):
    if plan.sweep is None:
        raise ValueError("sweep study needs a list of sample sizes")
    return run_study(plan, workers, progress)


# ---------------------------------------------------------------------------
# Output

def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for r in rows:
        writer.writerow([_cell(getattr(r, c)) for c in METRIC_COLUMNS])
    return buf.getvalue()


def write_metrics_csv(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(metrics_csv(rows))


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        out = []
        for rec in csv.DictReader(fh):
            out.append(MetricsRow(
                rec["estimator"], rec["scenario"], int(rec["n"]),
                *(float(rec[c]) for c in METRIC_COLUMNS[3:8]),
                int(rec["reps_used"]), int(rec["failures"]),
            ))
        return out


_PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d")


def svg_chart(rows: Sequence[MetricsRow], metric: str = "power", title: str | None = None,
              width: int = 640, height: int = 400) -> str:
    """Line chart of ``metric`` with one polyline per estimator.

    The x axis is n; when every row shares one n (the scenario study) it is
    the scenario label instead.
    """
    names = list(dict.fromkeys(r.estimator for r in rows))
    by_scenario = len({r.n for r in rows}) == 1 and len({r.scenario for r in rows}) > 1
    if by_scenario:
        labels = list(dict.fromkeys(r.scenario for r in rows))
        xkey = lambda r: labels.index(r.scenario)  # noqa: E731
        ticks = list(enumerate(labels))
    else:
        xkey = lambda r: r.n  # noqa: E731
        ticks = [(n, str(n)) for n in sorted({r.n for r in rows})]
    xs = [x for x, _ in ticks]
    vals = [getattr(r, metric) for r in rows if not math.isnan(getattr(r, metric))]
    lo, hi = (min(vals + [0.0]), max(vals + [1.0])) if vals else (0.0, 1.0)
    left, right, top, bottom = 60, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (pw * (x - xs[0]) / (xs[-1] - xs[0]) if len(xs) > 1 else pw / 2)

    def sy(v):
        return top + ph * (1.0 - (v - lo) / (hi - lo if hi > lo else 1.0))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle">{title or metric}</text>',
           f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">'
           f'{"scenario" if by_scenario else "n"}</text>']
    for x, label in ticks:
        out.append(f'<text x="{sx(x):.1f}" y="{top + ph + 18}" font-size="9" text-anchor="middle">{label}</text>')
    for t in np.linspace(lo, hi, 5):
        out.append(f'<text x="{left - 6}" y="{sy(t) + 3:.1f}" font-size="9" text-anchor="end">{t:.2f}</text>')
    for i, name in enumerate(names):
        pts = sorted((xkey(r), getattr(r, metric)) for r in rows if r.estimator == name)
        pts = [(x, v) for x, v in pts if not math.isnan(v)]
        colour = _PALETTE[i % len(_PALETTE)]
        path = " ".join(f"{sx(x):.1f},{sy(v):.1f}" for x, v in pts)
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{path}"/>')
        y = top + 14 * (i + 1)
        out.append(f'<text x="{left + pw + 10}" y="{y}" font-size="11" fill="{colour}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plan_from_json(text: str) -> SimulationPlan:
    return SimulationPlan.from_dict(json.loads(text))
