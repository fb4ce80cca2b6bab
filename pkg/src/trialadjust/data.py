"""Trial and historical datasets, CSV I/O and design-matrix construction."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent trial data."""


def _readonly(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Randomized two-arm trial: covariates ``W`` (n x p), arm ``A`` and outcome ``Y``."""

    W: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    pi1: float = 0.5

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        object.__setattr__(self, "W", _readonly(W))
        object.__setattr__(self, "A", _readonly(self.A))
        object.__setattr__(self, "Y", _readonly(self.Y))
        n = self.Y.shape[0]
        if self.A.shape != (n,) or self.W.shape[0] != n:
            raise DataError(f"length mismatch: W has {self.W.shape[0]} rows, A {self.A.shape[0]}, Y {n}")
        if not np.all((self.A == 0) | (self.A == 1)):
            raise DataError("treatment indicator must be 0/1")
        if not 0.0 < self.pi1 < 1.0:
            raise DataError("pi1 must lie in (0, 1)")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.Y))):
            raise DataError("missing or non-finite values are not supported")
        if n < 4:
            raise DataError("a trial needs at least 4 participants")
        if self.n1 == 0 or self.n0 == 0:
            raise DataError("both arms must be nonempty")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.W.shape[1]

    @property
    def n1(self) -> int:
        return int(self.A.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def A_pm(self) -> np.ndarray:
        return 2.0 * self.A - 1.0


@dataclass(frozen=True, eq=False)
class HistoricalDataset:
    """Control-only external data used to learn a prognostic score."""

    W: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        object.__setattr__(self, "W", _readonly(W))
        object.__setattr__(self, "Y", _readonly(self.Y))
        if self.W.shape[0] != self.Y.shape[0]:
            raise DataError("length mismatch between historical W and Y")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True, eq=False)
class AugmentedTrialDataset(TrialDataset):
    """Simulated trial carrying the latent truth alongside the observed data."""

    U: np.ndarray = None
    Y0: np.ndarray = None
    Y1: np.ndarray = None
    m0: np.ndarray = None
    m1: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        for name in ("U", "Y0", "Y1", "m0", "m1"):
            val = getattr(self, name)
            if val is None:
                raise DataError(f"augmented dataset is missing column {name!r}")
            arr = _readonly(val)
            if arr.shape != (self.n,):
                raise DataError(f"augmented column {name!r} has wrong length")
            object.__setattr__(self, name, arr)
        if not np.array_equal(self.Y, np.where(self.A == 1, self.Y1, self.Y0)):
            raise DataError("observed Y is inconsistent with the potential outcomes")

    def trial(self) -> TrialDataset:
        return TrialDataset(self.W, self.A, self.Y, self.pi1)


# ---------------------------------------------------------------------------
# CSV

_W_COL = re.compile(r"^w(\d+)$")
AUGMENTED_COLUMNS = ("u", "y0", "y1", "m0", "m1")


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number") from None
    if not np.isfinite(value):
        raise DataError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return value


def read_trial_csv(path, pi1: float = 0.5) -> TrialDataset:
    """Read a ``y,a,w1..wp`` CSV. Augmented columns, when all present, are kept.

    Row indices in error messages are 1-based data rows (header excluded).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    for required in ("y", "a"):
        if required not in header:
            raise DataError(f"{path}: missing column {required!r}")
    w_cols = sorted(
        ((int(m.group(1)), i) for i, h in enumerate(header) if (m := _W_COL.match(h))),
    )
    if [k for k, _ in w_cols] != list(range(1, len(w_cols) + 1)):
        raise DataError(f"{path}: covariate columns must be w1..wp without gaps")
    # header order is kept for the covariates
    w_idx = [i for i, h in enumerate(header) if _W_COL.match(h)]

    idx = {h: i for i, h in enumerate(header)}
    ys, as_, ws = [], [], []
    extra = {c: [] for c in AUGMENTED_COLUMNS if c in idx}
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} cells, found {len(row)}")
        ys.append(_parse_float(row[idx["y"]], r, "y"))
        a = _parse_float(row[idx["a"]], r, "a")
        if a not in (0.0, 1.0):
            raise DataError(f"row {r}, column 'a': treatment must be 0 or 1, got {row[idx['a']]!r}")
        as_.append(a)
        ws.append([_parse_float(row[i], r, header[i]) for i in w_idx])
        for c in extra:
            extra[c].append(_parse_float(row[idx[c]], r, c))

    W = np.array(ws, dtype=float).reshape(len(rows), len(w_idx))
    if len(extra) == len(AUGMENTED_COLUMNS):
        return AugmentedTrialDataset(
            W, as_, ys, pi1,
            U=extra["u"], Y0=extra["y0"], Y1=extra["y1"], m0=extra["m0"], m1=extra["m1"],
        )
    return TrialDataset(W, np.array(as_), np.array(ys), pi1)


def read_historical_csv(path) -> HistoricalDataset:
    """Historical controls as ``y,w1..wp``; an ``a`` column, if present, must be all 0."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if "y" not in header:
        raise DataError(f"{path}: missing column 'y'")
    w_idx = [i for i, h in enumerate(header) if _W_COL.match(h)]
    a_idx = header.index("a") if "a" in header else None
    ys, ws = [], []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} cells, found {len(row)}")
        if a_idx is not None and _parse_float(row[a_idx], r, "a") != 0.0:
            raise DataError(f"row {r}, column 'a': historical data must be control-only")
        ys.append(_parse_float(row[header.index("y")], r, "y"))
        ws.append([_parse_float(row[i], r, header[i]) for i in w_idx])
    return HistoricalDataset(np.array(ws, dtype=float).reshape(len(rows), len(w_idx)), np.array(ys))


def write_historical_csv(data: HistoricalDataset, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["y"] + [f"w{j + 1}" for j in range(data.p)])
        for i in range(data.n):
            writer.writerow([_fmt(data.Y[i])] + [_fmt(v) for v in data.W[i]])


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def write_trial_csv(data: TrialDataset, path) -> None:
    header = ["y", "a"] + [f"w{j + 1}" for j in range(data.p)]
    cols = [data.Y, data.A] + [data.W[:, j] for j in range(data.p)]
    if isinstance(data, AugmentedTrialDataset):
        header += list(AUGMENTED_COLUMNS)
        cols += [data.U, data.Y0, data.Y1, data.m0, data.m1]
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(data.n):
            writer.writerow([_fmt(c[i]) for c in cols])


# ---------------------------------------------------------------------------
# Design matrices

@dataclass(frozen=True, eq=False)
class DesignSpec:
    """How to turn a trial into a regression design.

    Column order is ``[intercept?, treatment, covariates..., score?, interactions...]``.
    ``score`` is a fixed extra column. When ``score_treated``/``score_control``
    are also given the score depends on the arm, and counterfactual designs
    substitute them for the forced arm.
    """

    include_intercept: bool = True
    treatment_coding: str = "01"
    covariate_columns: Sequence[int] | None = None
    center_covariates: bool = True
    score: np.ndarray | None = None
    score_treated: np.ndarray | None = None
    score_control: np.ndarray | None = None
    interactions: bool = False
    extra_columns: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.treatment_coding not in ("01", "pm1"):
            raise ValueError("treatment_coding must be '01' or 'pm1'")
        if (self.score_treated is None) != (self.score_control is None):
            raise ValueError("score_treated and score_control must be given together")
        if self.score_treated is not None and self.score is None:
            raise ValueError("an arm-dependent score also needs the observed-arm score")

    def columns_for(self, data: TrialDataset) -> list[int]:
        cols = list(range(data.p)) if self.covariate_columns is None else list(self.covariate_columns)
        for c in cols:
            if not 0 <= c < data.p:
                raise DataError(f"covariate column {c} out of range for p={data.p}")
        return cols

    def with_score(self, score, treated=None, control=None) -> "DesignSpec":
        return replace(self, score=score, score_treated=treated, score_control=control)

    def column_names(self, data: TrialDataset) -> list[str]:
        cols = self.columns_for(data)
        names = ["intercept"] if self.include_intercept else []
        names.append("A" if self.treatment_coding == "01" else "A_pm")
        names += [f"w{c + 1}" for c in cols]
        names += list(self.extra_columns)
        if self.score is not None:
            names.append("score")
        if self.interactions:
            names += [f"A:w{c + 1}" for c in cols]
        return names


def _treatment_column(a: np.ndarray, coding: str) -> np.ndarray:
    return a.astype(float) if coding == "01" else 2.0 * a - 1.0


def _design(data: TrialDataset, spec: DesignSpec, a: np.ndarray, score) -> np.ndarray:
    cols = spec.columns_for(data)
    W = data.W[:, cols]
    if spec.center_covariates:
        W = W - data.W[:, cols].mean(axis=0)
    t = _treatment_column(a, spec.treatment_coding)
    parts = []
    if spec.include_intercept:
        parts.append(np.ones(data.n))
    parts.append(t)
    parts += [W[:, j] for j in range(W.shape[1])]
    for v in spec.extra_columns.values():
        v = np.asarray(v, dtype=float)
        if v.shape != (data.n,):
            raise DataError("extra column has the wrong length")
        parts.append(v)
    if score is not None:
        score = np.asarray(score, dtype=float)
        if score.shape != (data.n,):
            raise DataError(f"score column has length {score.shape[0]}, expected {data.n}")
        parts.append(score)
    if spec.interactions:
        parts += [t * W[:, j] for j in range(W.shape[1])]
    return np.column_stack(parts)


def build_design(data: TrialDataset, spec: DesignSpec) -> np.ndarray:
    return _design(data, spec, data.A, spec.score)


def counterfactual_designs(data: TrialDataset, spec: DesignSpec) -> tuple[np.ndarray, np.ndarray]:
    """Designs with every row's arm forced to 1 and to 0.

    Centering constants come from the observed covariates, so these are the
    observed design evaluated at a different treatment value.
    """
    ones, zeros = np.ones(data.n), np.zeros(data.n)
    if spec.score_treated is not None:
        s1, s0 = spec.score_treated, spec.score_control
    else:
        s1 = s0 = spec.score
    return _design(data, spec, ones, s1), _design(data, spec, zeros, s0)
