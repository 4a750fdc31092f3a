"""Expected-cosine lower bound and first-order accuracy curve.

For unit-norm features of one class with per-dimension variances v_i and
means m_i, let ``lam = sum(v_i)`` and ``alpha = sum(m_i**2)``. A prototype
averaged from T samples has expected cosine to the class of at least

    alpha / sqrt(lam / T + alpha)

(to first order), and accuracy is modelled as ``eta`` times that bound with
T = K + Z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import CapacityError, DegenerateVectorError, UndefinedBoundError
from .featurestore import NormalizedView

__all__ = [
    "TheoryParams",
    "estimate_params",
    "dataset_params",
    "lower_bound",
    "fit_eta",
    "accuracy_curve",
    "mc_expected_cosine",
    "MCEstimate",
]


@dataclass(frozen=True)
class TheoryParams:
    lam: float
    alpha: float
    eta: float = 1.0
    dim: int = 0

    def with_eta(self, eta: float) -> "TheoryParams":
        return TheoryParams(self.lam, self.alpha, float(eta), self.dim)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    trials: int


def estimate_params(class_rows) -> tuple:
    """(lam, alpha) from one class's normalised rows, unbiased variances."""
    x = np.atleast_2d(np.asarray(class_rows, dtype=np.float64))
    if x.shape[0] < 2:
        raise CapacityError(f"need at least 2 rows to estimate variance, got {x.shape[0]}")
    mean = x.mean(axis=0)
    var = x.var(axis=0, ddof=1)
    return float(var.sum()), float(np.dot(mean, mean))


def dataset_params(view: NormalizedView, classes: Iterable[int] | None = None) -> TheoryParams:
    """Unweighted average of the per-class (lam, alpha) estimates."""
    if classes is None:
        classes = range(view.num_classes)
    lams, alphas = [], []
    for c in classes:
        lam, alpha = estimate_params(view.rows_of(c))
        lams.append(lam)
        alphas.append(alpha)
    if not lams:
        raise CapacityError("no classes to estimate from")
    return TheoryParams(lam=float(np.mean(lams)), alpha=float(np.mean(alphas)), dim=view.dim)


def lower_bound(params: TheoryParams, t: float) -> float:
    if not params.alpha > 0:
        raise UndefinedBoundError("alpha must be positive for the cosine bound")
    if t < 1:
        raise ValueError("T must be >= 1")
    return params.alpha / math.sqrt(params.lam / t + params.alpha)


def fit_eta(points: Sequence, params: TheoryParams) -> float:
    """Least-squares eta for ``acc ~ eta * lower_bound(T)`` over (T, acc) points."""
    points = list(points)
    if not points:
        raise CapacityError("fit_eta needs at least one (T, accuracy) point")
    b = np.array([lower_bound(params, t) for t, _ in points])
    a = np.array([float(acc) for _, acc in points])
    if np.any(a <= 0) or np.any(a > 1):
        raise ValueError("accuracies must lie in (0, 1]")
    return float(np.dot(a, b) / np.dot(b, b))


def accuracy_curve(params: TheoryParams, k: int, z_values: Iterable[int]) -> list:
    return [(int(z), params.eta * lower_bound(params, k + z)) for z in z_values]


def mc_expected_cosine(class_rows, t: int, trials: int = 1000, seed: int = 0) -> MCEstimate:
    """Monte Carlo estimate of E_P E_X[cos(P, X)] for mean-of-T prototypes.

    Each trial draws T distinct rows, averages them into P and takes the mean
    cosine of P to every row of the class.
    """
    x = np.atleast_2d(np.asarray(class_rows, dtype=np.float64))
    n = x.shape[0]
    if t < 1 or t > n:
        raise CapacityError(f"T={t} must be between 1 and the class size {n}")
    if trials < 100:
        raise ValueError("use at least 100 trials")
    rng = np.random.default_rng(seed)
    idx = np.argsort(rng.random((trials, n)), axis=1)[:, :t]
    vals = kernels.mc_trial_cosines(x, np.ascontiguousarray(idx, dtype=np.int64))
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise DegenerateVectorError(f"trial {bad} produced a zero prototype", index=bad)
    return MCEstimate(mean=float(vals.mean()), stderr=float(vals.std(ddof=1) / math.sqrt(trials)), trials=trials)
