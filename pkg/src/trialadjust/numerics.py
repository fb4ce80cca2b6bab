"""Numerical kernel: least squares, normal quantiles and seeded sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

RANK_TOL = 1e-10


class SingularDesignError(np.linalg.LinAlgError):
    """Raised when a design column is linearly dependent on earlier columns."""

    def __init__(self, column: int, message: str | None = None):
        self.column = column
        super().__init__(message or f"design column {column} is linearly dependent on earlier columns")


def _as_design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("design must be a 2-d array")
    if not np.all(np.isfinite(X)):
        raise ValueError("design contains non-finite entries")
    return X


def dependent_columns(X, tol: float = RANK_TOL) -> list[int]:
    """Indices of columns whose QR pivot falls below ``tol`` times the largest pivot.

    The decomposition is unpivoted, so a column is flagged only when it is
    (numerically) spanned by the columns to its left.
    """
    X = _as_design(X)
    if X.shape[1] == 0:
        return []
    r = np.abs(np.diag(np.linalg.qr(X, mode="r")))
    top = r.max()
    if top == 0.0:
        return list(range(X.shape[1]))
    return [int(j) for j in np.flatnonzero(r < tol * top)]


def solve_least_squares(X, y, tol: float = RANK_TOL) -> np.ndarray:
    """Least-squares coefficients via a Householder QR decomposition.

    Raises :class:`SingularDesignError` naming the first dependent column.
    """
    X = _as_design(X)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if y.shape != (n,):
        raise ValueError(f"response has shape {y.shape}, expected ({n},)")
    if n < k:
        raise SingularDesignError(n, f"{k} columns but only {n} rows")
    if k == 0:
        return np.zeros(0)
    q, r = np.linalg.qr(X, mode="reduced")
    diag = np.abs(np.diag(r))
    bad = np.flatnonzero(diag < tol * diag.max()) if diag.max() > 0 else np.array([0])
    if bad.size:
        raise SingularDesignError(int(bad[0]))
    return solve_triangular(r, q.T @ y, lower=False)


def fit_least_squares(X, y, tol: float = RANK_TOL) -> tuple[np.ndarray, list[int]]:
    """Least squares that drops dependent columns instead of failing.

    Returns the full-length coefficient vector (zeros at dropped positions)
    and the list of dropped column indices. Columns are dropped left to
    right, so the later of two collinear columns is the one removed.
    """
    X = _as_design(X)
    keep = list(range(X.shape[1]))
    dropped: list[int] = []
    while True:
        try:
            beta = solve_least_squares(X[:, keep], y, tol=tol)
            break
        except SingularDesignError as err:
            if err.column >= len(keep):
                raise
            dropped.append(keep.pop(err.column))
    coef = np.zeros(X.shape[1])
    coef[keep] = beta
    return coef, sorted(dropped)


def normal_cdf(x):
    return special.ndtr(x)


def normal_quantile(p):
    """Inverse standard-normal CDF."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr <= 0.0) | (arr >= 1.0)) or np.any(np.isnan(arr)):
        raise ValueError(f"probability must lie in (0, 1), got {p!r}")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def two_sided_p_value(z):
    return 2.0 * special.ndtr(-np.abs(z))


# ---------------------------------------------------------------------------
# Seeded sampling

def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *keys)``.

    Distinct key tuples map to independent streams through SeedSequence
    entropy mixing, which is how per-replication streams are derived.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("Uniform requires high > low")

    def draw(self, rng, size=None):
        return rng.uniform(self.low, self.high, size)

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def var(self):
        return (self.high - self.low) ** 2 / 12.0


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("Normal requires sd > 0")

    def draw(self, rng, size=None):
        return rng.normal(self.mean, self.sd, size)

    @property
    def var(self):
        return self.sd**2


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("Exponential requires rate > 0")

    def draw(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    @property
    def mean(self):
        return 1.0 / self.rate

    @property
    def var(self):
        return 1.0 / self.rate**2


@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma requires shape > 0 and rate > 0")

    def draw(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    @property
    def mean(self):
        return self.shape / self.rate

    @property
    def var(self):
        return self.shape / self.rate**2


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("Bernoulli requires p in [0, 1]")

    def draw(self, rng, size=None):
        u = rng.random(size)
        return (u < self.p).astype(float) if size is not None else float(u < self.p)

    @property
    def mean(self):
        return self.p

    @property
    def var(self):
        return self.p * (1.0 - self.p)


def sample(rng: np.random.Generator, dist, size=None):
    """One draw (or ``size`` draws) from ``dist``."""
    return dist.draw(rng, size)
