"""Average-treatment-effect estimators sharing one plug-in and influence-curve core.

Every estimator reduces to a pair of per-row arm predictions
``mu(1, W_i)``, ``mu(0, W_i)``. The estimate is the sample mean of their
difference and the standard error comes from the empirical variance of the
influence curve, with the known randomization probability in the weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .data import (
    AugmentedTrialDataset,
    DataError,
    DesignSpec,
    HistoricalDataset,
    TrialDataset,
    build_design,
    counterfactual_designs,
)
from .learners import (
    CrossFitPlan,
    CrossFitResult,
    LearnerSpec,
    cross_fit_predict,
    default_library,
    fit_regression,
)
from .numerics import SingularDesignError, fit_least_squares, normal_quantile, solve_least_squares, two_sided_p_value

ALPHA = 0.05


class EstimationError(ValueError):
    """An estimator could not be computed for the given data."""


@dataclass
class EstimateResult:
    estimator: str
    psi_hat: float
    psi1_hat: float
    psi0_hat: float
    se: float
    ci_lower: float
    ci_upper: float
    p_value: float
    alpha: float = ALPHA
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "psi_hat": self.psi_hat,
            "psi1_hat": self.psi1_hat,
            "psi0_hat": self.psi0_hat,
            "se": self.se,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    def covers(self, truth: float) -> bool:
        return self.ci_lower <= truth <= self.ci_upper


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# Plug-in and influence curve

def arm_predictions(mu, data: TrialDataset) -> tuple[np.ndarray, np.ndarray]:
    """``(mu(1, W_i), mu(0, W_i))`` from a callable ``mu(a, W)`` or a ready pair."""
    if callable(mu):
        mu1 = np.asarray(mu(1, data.W), dtype=float)
        mu0 = np.asarray(mu(0, data.W), dtype=float)
    else:
        mu1, mu0 = (np.asarray(m, dtype=float) for m in mu)
    for arm, m in ((1, mu1), (0, mu0)):
        m = np.broadcast_to(m, (data.n,))
        bad = np.flatnonzero(~np.isfinite(m))
        if bad.size:
            raise EstimationError(f"non-finite prediction for arm {arm} at row {int(bad[0])}")
    return np.broadcast_to(mu1, (data.n,)).astype(float), np.broadcast_to(mu0, (data.n,)).astype(float)


def plugin_ate(mu, data: TrialDataset) -> tuple[float, float, float]:
    mu1, mu0 = arm_predictions(mu, data)
    psi1, psi0 = float(mu1.mean()), float(mu0.mean())
    return psi1, psi0, psi1 - psi0


def influence_curve(mu, data: TrialDataset, psi1_hat: float, psi0_hat: float) -> np.ndarray:
    """Per-row ``phi_1 - phi_0`` with ``phi_a = 1{A=a}/pi_a (Y - mu(a,W)) + mu(a,W) - psi_a``."""
    mu1, mu0 = arm_predictions(mu, data)
    pi1 = data.pi1
    phi1 = data.A / pi1 * (data.Y - mu1) + (mu1 - psi1_hat)
    phi0 = (1.0 - data.A) / (1.0 - pi1) * (data.Y - mu0) + (mu0 - psi0_hat)
    return phi1 - phi0


def if_variance(mu, data: TrialDataset, psi1_hat: float, psi0_hat: float):
    """Returns ``(sigma_inf_sq, se, influence_curve)`` with ``se = sigma_inf / sqrt(n)``."""
    ic = influence_curve(mu, data, psi1_hat, psi0_hat)
    sigma2 = float(np.mean(ic**2))
    return sigma2, math.sqrt(sigma2 / data.n), ic


def _result(name: str, mu, data: TrialDataset, alpha: float, diagnostics=None) -> EstimateResult:
    mu_pair = arm_predictions(mu, data)
    psi1, psi0, psi = plugin_ate(mu_pair, data)
    _, se, _ = if_variance(mu_pair, data, psi1, psi0)
    diagnostics = dict(diagnostics or {})
    if se > 0.0:
        z = normal_quantile(1.0 - alpha / 2.0)
        lo, hi = psi - z * se, psi + z * se
        p = float(two_sided_p_value(psi / se))
    else:
        lo = hi = psi
        p = 1.0 if psi == 0.0 else 0.0
        diagnostics["degenerate_ci"] = True
    return EstimateResult(name, psi, psi1, psi0, se, lo, hi, p, alpha, diagnostics)


# ---------------------------------------------------------------------------
# Linear adjustment

@dataclass
class LinearFit:
    """Least-squares fit of Y on a trial design, evaluable under either arm."""

    coef: np.ndarray
    columns: list[str]
    dropped: list[str]
    mu1: np.ndarray
    mu0: np.ndarray
    fitted: np.ndarray

    def coefficient(self, name: str) -> float:
        return float(self.coef[self.columns.index(name)])


def fit_linear(data: TrialDataset, spec: DesignSpec, on_singular: str = "drop") -> LinearFit:
    """OLS on ``build_design``; later collinear columns are dropped (or raise)."""
    X = build_design(data, spec)
    names = spec.column_names(data)
    if on_singular == "raise":
        try:
            coef, dropped = solve_least_squares(X, data.Y), []
        except SingularDesignError as err:
            name = names[err.column]
            raise SingularDesignError(
                err.column, f"design column {err.column} ({name!r}) is linearly dependent on earlier columns"
            ) from None
    else:
        coef, dropped = fit_least_squares(X, data.Y)
    treat = 1 if spec.include_intercept else 0
    if treat in dropped:
        raise EstimationError("treatment column is collinear with the intercept")
    X1, X0 = counterfactual_designs(data, spec)
    return LinearFit(coef, names, [names[j] for j in dropped], X1 @ coef, X0 @ coef, X @ coef)


def unadjusted_estimate(data: TrialDataset, alpha: float = ALPHA) -> EstimateResult:
    """Difference in arm means; the SE uses constant arm-mean predictions."""
    if data.n1 == 0 or data.n0 == 0:
        raise EstimationError("both arms must be nonempty")
    m1 = float(data.Y[data.A == 1].mean())
    m0 = float(data.Y[data.A == 0].mean())
    return _result("unadjusted", (np.full(data.n, m1), np.full(data.n, m0)), data, alpha)


def ancova_estimate(data: TrialDataset, spec: DesignSpec | None = None, alpha: float = ALPHA,
                    name: str = "ancova", on_singular: str = "drop") -> EstimateResult:
    spec = spec or DesignSpec()
    fit = fit_linear(data, spec, on_singular)
    treat_name = spec.column_names(data)[1 if spec.include_intercept else 0]
    beta_a = fit.coefficient(treat_name)
    diagnostics = {
        "treatment_coefficient": beta_a * (2.0 if spec.treatment_coding == "pm1" else 1.0),
        "dropped_columns": fit.dropped,
        "n_columns": len(fit.columns) - len(fit.dropped),
    }
    return _result(name, (fit.mu1, fit.mu0), data, alpha, diagnostics)


def prognostic_adjust_estimate(trial: TrialDataset, historical: HistoricalDataset | None = None,
                               learners: Sequence[LearnerSpec] | None = None, v: int = 10,
                               seed: int = 0, spec: DesignSpec | None = None,
                               score: np.ndarray | None = None, raw_covariates: bool = True,
                               alpha: float = ALPHA) -> EstimateResult:
    """Linear adjustment for a prognostic score learned on historical controls.

    A precomputed ``score`` (for example the true control mean) skips the
    learning step.
    """
    diagnostics: dict[str, Any] = {}
    if score is None:
        if historical is None:
            raise EstimationError("need historical data or a precomputed score")
        if historical.p != trial.p:
            raise DataError(f"historical data has {historical.p} covariates, trial has {trial.p}")
        rho = fit_regression(learners or default_library(), historical.W, historical.Y, v=v, seed=seed)
        score = rho(0, trial.W)
        diagnostics["selected_learner"] = rho.learner
        if hasattr(rho.model, "cv_mse"):
            diagnostics["cv_mse"] = rho.model.cv_mse
    spec = spec or DesignSpec(covariate_columns=None if raw_covariates else [])
    est = ancova_estimate(trial, spec.with_score(np.asarray(score, dtype=float)), alpha,
                          name="prog-historical")
    est.diagnostics.update(diagnostics)
    return est


def oracle_adjust_estimate(data: TrialDataset, alpha: float = ALPHA) -> EstimateResult:
    """Linear adjustment for the true conditional means ``m1`` and ``m0`` (simulation only)."""
    if not isinstance(data, AugmentedTrialDataset):
        raise DataError("oracle adjustment needs an augmented dataset with m0/m1 columns")
    spec = DesignSpec(covariate_columns=[], extra_columns={"m1": data.m1, "m0": data.m0})
    return ancova_estimate(data, spec, alpha, name="oracle")


# ---------------------------------------------------------------------------
# TMLE

def tmle_epsilon(mu, data: TrialDataset) -> float:
    """Least-squares fluctuation ``eps`` of the additive submodel ``mu + eps * a_pm``.

    Equals ``(1/n)(n1*Ybar1 - n0*Ybar0) - (1/n)(sum_{A=1} mu(1,W) - sum_{A=0} mu(0,W))``.
    """
    mu1, mu0 = arm_predictions(mu, data)
    resid = data.Y - np.where(data.A == 1, mu1, mu0)
    return float(np.dot(data.A_pm, resid) / data.n)


def tmle_update(data: TrialDataset, mu, submodel: str = "additive-eps",
                spec: DesignSpec | None = None):
    """Targeted update of initial arm predictions.

    ``additive-eps`` shifts the arms apart by ``eps * a_pm``. ``linear-fluctuation``
    regresses Y on ``[1, a_pm, covariates, mu(a, W)]`` and uses that linear
    function, re-evaluated at each arm, as the update.

    Returns ``(mu1_star, mu0_star, diagnostics)``.
    """
    mu1, mu0 = arm_predictions(mu, data)
    if submodel == "additive-eps":
        eps = tmle_epsilon((mu1, mu0), data)
        return mu1 + eps, mu0 - eps, {"epsilon_star": eps}
    if submodel == "linear-fluctuation":
        spec = spec or DesignSpec()
        spec = replace(spec, treatment_coding="pm1").with_score(np.where(data.A == 1, mu1, mu0), mu1, mu0)
        fit = fit_linear(data, spec)
        diagnostics = {
            "beta_treatment_pm": fit.coefficient("A_pm"),
            "beta_initial": fit.coefficient("score") if "score" not in fit.dropped else 0.0,
            "dropped_columns": fit.dropped,
        }
        return fit.mu1, fit.mu0, diagnostics
    raise ValueError(f"unknown submodel {submodel!r}")


def score_equation(data: TrialDataset, mu) -> float:
    """``(1/n) sum A_pm (Y - mu(A, W))``; zero after a targeted update."""
    mu1, mu0 = arm_predictions(mu, data)
    return float(np.dot(data.A_pm, data.Y - np.where(data.A == 1, mu1, mu0)) / data.n)


def initial_fit(data: TrialDataset, learners=None, plan: CrossFitPlan | None = None,
                initial=None) -> CrossFitResult | tuple:
    if initial is not None:
        return initial
    return cross_fit_predict(learners or default_library(), data, plan or CrossFitPlan())


def _initial_pair(init):
    if isinstance(init, CrossFitResult):
        return (init.mu1, init.mu0), {"selected_learner": list(init.selected)}
    return init, {}


def tmle_estimate(data: TrialDataset, learners=None, plan: CrossFitPlan | None = None,
                  submodel: str | None = None, alpha: float = ALPHA, initial=None,
                  spec: DesignSpec | None = None) -> EstimateResult:
    """Cross-fit TMLE of the ATE.

    ``submodel`` defaults to ``additive-eps`` under 1:1 randomization and to
    ``linear-fluctuation`` otherwise. ``initial`` may supply the arm
    predictions (a :class:`CrossFitResult` or a ``(mu1, mu0)`` pair) instead
    of fitting them.
    """
    if data.n1 == 0 or data.n0 == 0:
        raise EstimationError("both arms must be nonempty")
    if submodel is None:
        submodel = "additive-eps" if data.pi1 == 0.5 else "linear-fluctuation"
    mu, diagnostics = _initial_pair(initial_fit(data, learners, plan, initial))
    mu1s, mu0s, upd = tmle_update(data, mu, submodel, spec)
    diagnostics.update(upd)
    diagnostics["submodel"] = submodel
    diagnostics["score_equation"] = score_equation(data, (mu1s, mu0s))
    name = "tmle" if submodel == "additive-eps" else "tmle-linear"
    return _result(name, (mu1s, mu0s), data, alpha, diagnostics)


def within_trial_estimate(data: TrialDataset, learners=None, plan: CrossFitPlan | None = None,
                          spec: DesignSpec | None = None, alpha: float = ALPHA, initial=None,
                          score_only: bool = False) -> EstimateResult:
    """Linear adjustment for a prognostic score learned on the trial itself.

    The score is the cross-fitted prediction of Y from (A, W) at the observed
    arm. In the plug-in step it is re-evaluated at the forced arm, so the
    adjusted fit is a function of (a, w) like any other outcome regression.
    """
    init = initial_fit(data, learners, plan, initial)
    (mu1, mu0), diagnostics = _initial_pair(init)
    mu1, mu0 = arm_predictions((mu1, mu0), data)
    spec = spec or DesignSpec(covariate_columns=[] if score_only else None)
    spec = spec.with_score(np.where(data.A == 1, mu1, mu0), mu1, mu0)
    est = ancova_estimate(data, spec, alpha, name="within-trial")
    est.diagnostics.update(diagnostics)
    return est
