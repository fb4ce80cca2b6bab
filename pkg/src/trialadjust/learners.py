"""Outcome-regression learners, a discrete super learner and cross-fitting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import _stumps
from .data import TrialDataset
from .numerics import fit_least_squares


class LearnerError(ValueError):
    """A learner could not be fitted or configured."""


class StratificationError(LearnerError):
    """A training fold lacks one of the treatment arms."""


def _check_xy(X, y, min_rows: int = 1):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise LearnerError("X and y have different numbers of rows")
    if X.shape[0] < min_rows:
        raise LearnerError(f"need at least {min_rows} rows, got {X.shape[0]}")
    return X, y


def _standardizer(X):
    loc = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    return loc, scale


# ---------------------------------------------------------------------------
# Candidate learners. Each ``fit`` returns an object with ``predict(X)``.

class _Constant:
    def __init__(self, value):
        self.value = float(value)

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.value)


class MeanLearner:
    """Predicts the training mean. Needs one row."""

    name = "mean"

    def fit(self, X, y):
        X, y = _check_xy(X, y, 1)
        return _Constant(y.mean())


class _Linear:
    def __init__(self, intercept, coef, loc=None, scale=None):
        self.intercept = intercept
        self.coef = coef
        self.loc = loc
        self.scale = scale

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        if self.loc is not None:
            X = (X - self.loc) / self.scale
        return self.intercept + X @ self.coef


class OLSLearner:
    """Main-effects least squares with intercept; dependent columns get zero weight.

    Needs at least two rows.
    """

    name = "ols"

    def fit(self, X, y):
        X, y = _check_xy(X, y, 2)
        D = np.column_stack([np.ones(X.shape[0]), X])
        coef, _ = fit_least_squares(D, y)
        return _Linear(coef[0], coef[1:])


class RidgeLearner:
    """Ridge regression on standardized features.

    The penalty is picked from a log grid by exact leave-one-out error,
    computed in closed form from a single SVD.
    """

    name = "ridge"

    def __init__(self, grid: Sequence[float] | None = None):
        self.grid = np.asarray(grid if grid is not None else np.logspace(-3, 3, 13), dtype=float)

    def fit(self, X, y):
        X, y = _check_xy(X, y, 3)
        n = X.shape[0]
        loc, scale = _standardizer(X)
        Z = (X - loc) / scale
        ybar = y.mean()
        yc = y - ybar
        U, d, Vt = np.linalg.svd(Z, full_matrices=False)
        uty = U.T @ yc
        d2 = d**2
        best = (math.inf, 0.0)
        for lam in self.grid * n:
            shrink = d2 / (d2 + lam)
            fitted = U @ (shrink * uty)
            h = 1.0 / n + (U**2) @ shrink
            loo = (yc - fitted) / np.maximum(1.0 - h, 1e-12)
            err = float(np.mean(loo**2))
            if err < best[0]:
                best = (err, lam)
        lam = best[1]
        coef = Vt.T @ (d / (d2 + lam) * uty)
        fit = _Linear(ybar, coef, loc, scale)
        fit.penalty = lam
        return fit


class _KNN:
    def __init__(self, Z, y, k, loc, scale):
        self.Z, self.y, self.k, self.loc, self.scale = Z, y, k, loc, scale
        self._zz = np.einsum("ij,ij->i", Z, Z)

    def predict(self, X):
        Q = (np.asarray(X, dtype=float) - self.loc) / self.scale
        d2 = np.einsum("ij,ij->i", Q, Q)[:, None] + self._zz[None, :] - 2.0 * Q @ self.Z.T
        k = min(self.k, self.Z.shape[0])
        if k == self.Z.shape[0]:
            return np.full(Q.shape[0], self.y.mean())
        nn = np.argpartition(d2, k - 1, axis=1)[:, :k]
        return self.y[nn].mean(axis=1)


class KNNLearner:
    """k-nearest-neighbour averaging on standardized features (Euclidean)."""

    name = "knn"

    def __init__(self, k: int = 5):
        if int(k) < 1:
            raise LearnerError("k must be a positive integer")
        self.k = int(k)

    def fit(self, X, y):
        X, y = _check_xy(X, y, 1)
        loc, scale = _standardizer(X)
        return _KNN((X - loc) / scale, y.copy(), self.k, loc, scale)


class _Stumps:
    def __init__(self, f0, feat, thr, left, right, rounds):
        self.f0, self.feat, self.thr, self.left, self.right = f0, feat, thr, left, right
        self.rounds = rounds

    def predict(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        return _stumps.predict_stumps(X, self.f0, self.feat, self.thr, self.left, self.right, self.rounds)


class GBTStumpsLearner:
    """Least-squares gradient boosting of depth-1 regression trees.

    The number of rounds (at most ``rounds``) is chosen by ``cv_folds``-fold
    cross-validation of the staged error, then the model is refit on all rows.
    """

    name = "gbt-stumps"

    def __init__(self, rounds: int = 200, learning_rate: float = 0.1, min_leaf: int = 5,
                 cv_folds: int = 3, seed: int = 0, max_bins: int = 256):
        self.rounds = int(rounds)
        self.learning_rate = float(learning_rate)
        self.min_leaf = int(min_leaf)
        self.cv_folds = int(cv_folds)
        self.seed = int(seed)
        self.max_bins = int(max_bins)
        if self.rounds < 1 or self.min_leaf < 1 or not self.learning_rate > 0:
            raise LearnerError("invalid gbt-stumps hyperparameters")

    def _boost(self, X, y, rounds):
        codes, thr, n_thr = _stumps.make_bins(X, self.max_bins)
        return _stumps.fit_stumps(codes, y, thr, n_thr, rounds, self.learning_rate, self.min_leaf)

    def fit(self, X, y):
        X, y = _check_xy(X, y, 2 * self.min_leaf)
        X = np.ascontiguousarray(X)
        n = X.shape[0]
        best_rounds = self.rounds
        if self.cv_folds >= 2 and n >= 2 * self.cv_folds * self.min_leaf:
            folds = make_folds(n, self.cv_folds, self.seed)
            sse = np.zeros(self.rounds + 1)
            for f in range(self.cv_folds):
                tr, te = folds != f, folds == f
                model = self._boost(np.ascontiguousarray(X[tr]), y[tr], self.rounds)
                sse += _stumps.staged_sse(np.ascontiguousarray(X[te]), y[te], *model)
            best_rounds = int(np.argmin(sse))
        f0, feat, thr, left, right = self._boost(X, y, max(best_rounds, 1))
        return _Stumps(f0, feat, thr, left, right, best_rounds)


REGISTRY: dict[str, Callable[..., Any]] = {
    MeanLearner.name: MeanLearner,
    OLSLearner.name: OLSLearner,
    RidgeLearner.name: RidgeLearner,
    KNNLearner.name: KNNLearner,
    GBTStumpsLearner.name: GBTStumpsLearner,
}


@dataclass(frozen=True)
class LearnerSpec:
    name: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in REGISTRY:
            raise LearnerError(f"unknown learner {self.name!r}; choose from {sorted(REGISTRY)}")
        try:
            self.build()
        except TypeError as err:
            raise LearnerError(f"bad hyperparameters for {self.name!r}: {err}") from None

    def build(self):
        return REGISTRY[self.name](**self.hyperparameters)

    @property
    def label(self) -> str:
        if not self.hyperparameters:
            return self.name
        args = ",".join(f"{k}={v}" for k, v in sorted(self.hyperparameters.items()))
        return f"{self.name}({args})"

    @classmethod
    def from_dict(cls, obj: dict) -> "LearnerSpec":
        return cls(obj["name"], dict(obj.get("hyperparameters", {})))

    def to_dict(self) -> dict:
        return {"name": self.name, "hyperparameters": dict(self.hyperparameters)}


def default_library() -> list[LearnerSpec]:
    return [
        LearnerSpec("mean"),
        LearnerSpec("ols"),
        LearnerSpec("ridge"),
        LearnerSpec("knn", {"k": 5}),
        LearnerSpec("knn", {"k": 10}),
        LearnerSpec("gbt-stumps", {"rounds": 200}),
    ]


def parse_library(text: str) -> list[LearnerSpec]:
    """Learner specs from JSON text: one object or a list of objects."""
    obj = json.loads(text)
    if isinstance(obj, dict):
        obj = [obj]
    return [LearnerSpec.from_dict(o) for o in obj]


def fit_learner(spec: LearnerSpec, X, y):
    """Fit one candidate; the returned object has ``predict(X)``."""
    return spec.build().fit(X, y)


# ---------------------------------------------------------------------------
# Folds and the discrete super learner

def make_folds(n: int, v: int, seed: int, strata=None) -> np.ndarray:
    """Seeded fold labels in ``0..v-1``, stratified by ``strata`` when given.

    Within each stratum rows are permuted and dealt round-robin; the dealing
    continues across strata so fold sizes differ by at most one.
    """
    if v < 2 or v > n:
        raise LearnerError(f"cannot split {n} rows into {v} folds")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x5F01D])))
    folds = np.empty(n, dtype=np.int64)
    if strata is None:
        groups = [np.arange(n)]
    else:
        strata = np.asarray(strata)
        groups = [np.flatnonzero(strata == s) for s in np.unique(strata)]
    offset = 0
    for g in groups:
        perm = g[rng.permutation(g.size)]
        folds[perm] = (offset + np.arange(g.size)) % v
        offset += g.size
    return folds


@dataclass
class SuperLearnerFit:
    selected: str
    model: Any
    cv_mse: dict[str, float]

    def predict(self, X):
        return self.model.predict(X)


def discrete_super_learner(candidates: Sequence[LearnerSpec], X, y, v: int = 10, seed: int = 0,
                           strata=None) -> SuperLearnerFit:
    """Pick the candidate with the lowest ``v``-fold CV mean squared error.

    A candidate that fails on any fold scores ``inf``. Ties go to the
    earlier candidate. The winner is refit on every row.
    """
    X, y = _check_xy(X, y, 1)
    n = X.shape[0]
    if not candidates:
        raise LearnerError("empty candidate library")
    if v < 2 or n < 2 * v:
        raise LearnerError(f"super learner needs v >= 2 and n >= 2v (n={n}, v={v})")
    folds = make_folds(n, v, seed, strata)
    cv_mse: dict[str, float] = {}
    for spec in candidates:
        learner = spec.build()
        sse = 0.0
        try:
            for f in range(v):
                tr, te = folds != f, folds == f
                pred = learner.fit(X[tr], y[tr]).predict(X[te])
                sse += float(np.sum((y[te] - pred) ** 2))
            mse = sse / n
            if not math.isfinite(mse):
                mse = math.inf
        except (LearnerError, np.linalg.LinAlgError, ValueError):
            mse = math.inf
        cv_mse[spec.label] = mse
    best = min(range(len(candidates)), key=lambda i: (cv_mse[candidates[i].label], i))
    if not math.isfinite(cv_mse[candidates[best].label]):
        raise LearnerError("every candidate learner failed")
    chosen = candidates[best]
    return SuperLearnerFit(chosen.label, fit_learner(chosen, X, y), cv_mse)


# ---------------------------------------------------------------------------
# Regression functions of (a, w)

@dataclass
class RegressionFn:
    """Fitted conditional mean ``mu(a, w)``.

    ``uses_treatment`` says whether the arm is the first feature; a
    prognostic model fitted on control-only data ignores ``a``.
    """

    model: Any
    uses_treatment: bool
    learner: str = ""
    train_rows: np.ndarray | None = None

    def __call__(self, a, W) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        if self.uses_treatment:
            a = np.broadcast_to(np.asarray(a, dtype=float), (W.shape[0],))
            return self.model.predict(np.column_stack([a, W]))
        return self.model.predict(W)


def _fit_any(learner, X, y, v: int, seed: int, strata=None):
    """Fit a LearnerSpec, a candidate list (super learner) or a ``fit``-able object."""
    if isinstance(learner, LearnerSpec):
        return fit_learner(learner, X, y), learner.label
    if isinstance(learner, (list, tuple)):
        if len(learner) == 1:
            return fit_learner(learner[0], X, y), learner[0].label
        sl = discrete_super_learner(learner, X, y, v=v, seed=seed, strata=strata)
        return sl, sl.selected
    return learner.fit(X, y), getattr(learner, "name", type(learner).__name__)


def fit_regression(learner, W, y, A=None, v: int = 10, seed: int = 0) -> RegressionFn:
    """Fit ``mu(a, w)`` on (A, W) jointly, or on W alone when ``A`` is None."""
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    X = W if A is None else np.column_stack([np.asarray(A, dtype=float), W])
    model, label = _fit_any(learner, X, y, v, seed, strata=A)
    return RegressionFn(model, A is not None, label, np.arange(W.shape[0]))


@dataclass(frozen=True)
class CrossFitPlan:
    scheme: str = "v-fold"
    v: int = 10
    seed: int = 0
    stratify: bool = True

    def __post_init__(self):
        if self.scheme not in ("v-fold", "loo"):
            raise ValueError("scheme must be 'v-fold' or 'loo'")
        if self.scheme == "v-fold" and self.v < 2:
            raise ValueError("v-fold cross-fitting needs v >= 2")

    def folds(self, data: TrialDataset) -> np.ndarray:
        if self.scheme == "loo":
            return np.arange(data.n)
        return make_folds(data.n, self.v, self.seed, data.A if self.stratify else None)


@dataclass
class CrossFitResult:
    """Out-of-fold predictions ``mu(1, W_i)``, ``mu(0, W_i)`` and ``mu(A_i, W_i)``."""

    mu1: np.ndarray
    mu0: np.ndarray
    observed: np.ndarray
    folds: np.ndarray
    selected: list[str]
    train_rows: list[np.ndarray]

    def at(self, A) -> np.ndarray:
        return np.where(np.asarray(A) == 1, self.mu1, self.mu0)


def cross_fit_predict(learner, data: TrialDataset, plan: CrossFitPlan,
                      target: str = "both-arms", sl_folds: int = 10):
    """Cross-fitted predictions from a model of Y on (A, W).

    Each row is predicted by a fit that never saw the row's fold. With
    ``target="observed-arm"`` the array ``mu(A_i, W_i)`` is returned; with
    ``"both-arms"`` a :class:`CrossFitResult`.
    """
    if target not in ("both-arms", "observed-arm"):
        raise ValueError("target must be 'both-arms' or 'observed-arm'")
    folds = plan.folds(data)
    n_folds = int(folds.max()) + 1
    X = np.column_stack([data.A, data.W])
    mu1 = np.empty(data.n)
    mu0 = np.empty(data.n)
    selected, train_rows = [], []
    for f in range(n_folds):
        te = folds == f
        tr = ~te
        a_tr = data.A[tr]
        if a_tr.min() == a_tr.max():
            raise StratificationError(f"training set for fold {f} contains only one arm")
        # inner super-learner folds: smaller when the training set is tiny
        v_inner = min(sl_folds, int(tr.sum()) // 2)
        model, label = _fit_any(learner, X[tr], data.Y[tr], v_inner, plan.seed * 1_000_003 + f,
                                strata=a_tr)
        Wte = data.W[te]
        k = Wte.shape[0]
        both = model.predict(np.vstack([np.column_stack([np.ones(k), Wte]),
                                        np.column_stack([np.zeros(k), Wte])]))
        mu1[te] = both[:k]
        mu0[te] = both[k:]
        selected.append(label)
        train_rows.append(np.flatnonzero(tr))
    observed = np.where(data.A == 1, mu1, mu0)
    if target == "observed-arm":
        return observed
    return CrossFitResult(mu1, mu0, observed, folds, selected, train_rows)
