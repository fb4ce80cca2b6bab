"""Simulation model: seven observed covariates, one unobserved, continuous outcome.

Normal parameters are (mean, sd); exponential and gamma use rates.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .data import AugmentedTrialDataset, HistoricalDataset
from .numerics import Bernoulli, Exponential, Gamma, Normal, Uniform, make_rng

ATE = 0.84
NOISE = Normal(0.0, 1.3)
P = 7

EFFECTS = ("homogeneous", "heterogeneous")
SHIFTS = ("none", "obs-small", "obs-large", "unobs-small", "unobs-large")

# Historical-only replacement marginals: (variable, distribution).
SHIFT_MARGINALS = {
    "none": None,
    "obs-small": ("W1", Uniform(-4.0, -1.0)),
    "obs-large": ("W1", Uniform(-7.0, -4.0)),
    "unobs-small": ("U", Uniform(0.5, 1.5)),
    "unobs-large": ("U", Uniform(1.5, 2.5)),
}

TRIAL_MARGINALS = {
    "W1": Uniform(-2.0, 1.0),
    "W2": Uniform(-2.0, 1.0),
    "W3": Normal(0.0, 3.0),
    "W4": Exponential(0.8),
    "W5": Gamma(5.0, 10.0),
    "W6": Uniform(1.0, 2.0),
    "W7": Uniform(1.0, 2.0),
    "U": Uniform(0.0, 1.0),
}


@dataclass(frozen=True)
class ScenarioConfig:
    effect: str = "heterogeneous"
    shift: str = "none"
    n: int = 200
    n_hist: int = 4000
    seed: int = 12345

    def __post_init__(self):
        if self.effect not in EFFECTS:
            raise ValueError(f"effect must be one of {EFFECTS}")
        if self.shift not in SHIFTS:
            raise ValueError(f"shift must be one of {SHIFTS}")
        if self.n < 4 or self.n_hist < 0:
            raise ValueError("need n >= 4 and n_hist >= 0")

    @property
    def label(self) -> str:
        return f"{self.effect}/{self.shift}"


def _cols(w):
    w = np.asarray(w, dtype=float)
    return (w[..., j] for j in range(P))


def _shift_terms(w1, s2, u):
    # float casts: adding boolean arrays would act as logical OR
    fired = (
        np.asarray(w1 < -4.1, dtype=float)
        + np.asarray(w1 < -6.1, dtype=float)
        + np.asarray(u > 1.1, dtype=float)
        + np.asarray(u > 1.55, dtype=float)
    )
    return -4.1 * fired * s2


def m0(w, u):
    """Control-arm conditional mean. Vectorized over leading axes of ``w``."""
    w1, w2, w3, w4, w5, w6, w7 = _cols(w)
    u = np.asarray(u, dtype=float)
    s2 = np.sin(np.abs(w2))
    return (
        4.1 * s2
        + 1.5 * (np.abs(w4) > 0.25)
        + 1.5 * np.sin(np.abs(w5))
        + 1.4 * (np.abs(w3) > 2.5)
        + _shift_terms(w1, s2, u)
    )


def m1(w, u, effect: str = "heterogeneous"):
    """Treated-arm conditional mean."""
    if effect == "homogeneous":
        return ATE + m0(w, u)
    if effect != "heterogeneous":
        raise ValueError(f"effect must be one of {EFFECTS}")
    w1, w2, w3, w4, w5, w6, w7 = _cols(w)
    u = np.asarray(u, dtype=float)
    s2 = np.sin(np.abs(w2))
    return (
        4.3 * s2**2
        + 1.3 * (np.abs(w4) > 0.25)
        + 4.1 * (w2 > 0) * np.sin(np.abs(w5))
        + 1.6 * np.sin(np.abs(w6))
        + 1.4 * (np.abs(w3) > 2.5)
        + _shift_terms(w1, s2, u)
    )


def _draw_covariates(n: int, rng: np.random.Generator, shift: str = "none"):
    marg = dict(TRIAL_MARGINALS)
    if SHIFT_MARGINALS[shift] is not None:
        var, dist = SHIFT_MARGINALS[shift]
        marg[var] = dist
    W = np.column_stack([marg[f"W{j}"].draw(rng, n) for j in range(1, P + 1)])
    U = marg["U"].draw(rng, n)
    return W, U


def sample_trial(n: int, effect: str, rng: np.random.Generator) -> AugmentedTrialDataset:
    """One trial of size ``n`` with both potential outcomes retained.

    Redraws the arm assignment in the (probability ~2^-n) event that an arm
    is empty.
    """
    W, U = _draw_covariates(n, rng)
    A = Bernoulli(0.5).draw(rng, n)
    while A.min() == A.max():
        A = Bernoulli(0.5).draw(rng, n)
    mu0 = m0(W, U)
    mu1 = m1(W, U, effect)
    Y0 = mu0 + NOISE.draw(rng, n)
    Y1 = mu1 + NOISE.draw(rng, n)
    Y = np.where(A == 1, Y1, Y0)
    return AugmentedTrialDataset(W, A, Y, 0.5, U=U, Y0=Y0, Y1=Y1, m0=mu0, m1=mu1)


def sample_historical(n_hist: int, effect: str, shift: str, rng: np.random.Generator) -> HistoricalDataset:
    """Control-only external sample; ``shift`` replaces the W1 or U marginal.

    ``effect`` is accepted for symmetry; control outcomes do not depend on it.
    """
    if shift not in SHIFTS:
        raise ValueError(f"shift must be one of {SHIFTS}")
    W, U = _draw_covariates(n_hist, rng, shift)
    Y = m0(W, U) + NOISE.draw(rng, n_hist)
    return HistoricalDataset(W, Y)


@functools.lru_cache(maxsize=None)
def true_ate(effect: str, draws: int = 10_000_000, seed: int = 20240101) -> tuple[float, float]:
    """Population ATE and its Monte Carlo standard error.

    Homogeneous is exact. Heterogeneous averages ``m1 - m0`` over ``draws``
    trial covariate vectors, in chunks to bound memory.
    """
    if effect == "homogeneous":
        return ATE, 0.0
    if effect != "heterogeneous":
        raise ValueError(f"effect must be one of {EFFECTS}")
    rng = make_rng(seed, 0xA7E)
    total = total_sq = 0.0
    left = draws
    while left > 0:
        k = min(left, 1_000_000)
        W, U = _draw_covariates(k, rng)
        d = m1(W, U, effect) - m0(W, U)
        total += float(d.sum())
        total_sq += float(np.dot(d, d))
        left -= k
    mean = total / draws
    var = max(total_sq / draws - mean**2, 0.0)
    return mean, math.sqrt(var / draws)
