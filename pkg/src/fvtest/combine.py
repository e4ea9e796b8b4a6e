"""Aggregate test over several function classes, and the Cauchy combination.

The aggregate test standardizes every row of the statistic matrix with
leave-one-row-out moments (the observed row included in the pool), averages
squared z-scores across classes and ranks the observed summary among the
bootstrap ones. Under the null the rows are exchangeable, so the rank
p-value is valid in finite samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyInput, InsufficientBootstrap

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class StatMatrix:
    """Row 0 holds the observed statistics, rows ``1..B`` bootstrap draws.

    All columns of a row must come from the same multiplier vector.
    """

    T: np.ndarray
    class_specs: tuple = ()
    seed: int | None = None

    def __post_init__(self):
        T = np.array(self.T, dtype=float)
        if T.ndim != 2 or T.shape[0] < 2 or T.shape[1] < 1:
            raise ValueError(f"statistic matrix must be (B+1, L) with B >= 1, L >= 1; got {T.shape}")
        if not np.all(np.isfinite(T)):
            raise ValueError("statistic matrix has non-finite entries")
        T.setflags(write=False)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "class_specs", tuple(self.class_specs))

    @property
    def B(self) -> int:
        return self.T.shape[0] - 1

    @property
    def L(self) -> int:
        return self.T.shape[1]

    def columns(self, idx: Sequence[int]) -> StatMatrix:
        idx = list(idx)
        specs = tuple(self.class_specs[i] for i in idx) if self.class_specs else ()
        return StatMatrix(self.T[:, idx], specs, self.seed)


@dataclass(frozen=True)
class AggregateResult:
    Q0: float
    Qb: np.ndarray
    p_aggregate: float
    per_class_p: np.ndarray
    p_cauchy: float
    labels: tuple = field(default=())


def _floor(sigma, mu):
    return np.maximum(sigma, SIGMA_FLOOR * (1.0 + np.abs(mu)))


def _all_loo_moments(T):
    """Leave-one-row-out mean and sd for every row at once, shapes ``(B+1, L)``.

    Uses deviations from the full-column mean: with ``d = T - mean`` and
    ``SS = sum d^2`` the leave-``b``-out sum of squares is
    ``SS - d_b^2 (1 + 1/B)``.
    """
    B = T.shape[0] - 1
    m = T.mean(axis=0)
    d = T - m
    ss = np.sum(d * d, axis=0)
    mu = m - d / B
    var = (ss - d * d * (1.0 + 1.0 / B)) / (B - 1)
    sigma = np.sqrt(np.maximum(var, 0.0))
    return mu, _floor(sigma, mu)


def leave_one_out_moments(T, b: int):
    """Mean and sd of each column over all rows except ``b`` (row 0 is the observed one).

    The mean divides by ``B`` and the variance by ``B - 1``, matching the
    ``B`` rows left in the pool.
    """
    T = T.T if isinstance(T, StatMatrix) else np.asarray(T, dtype=float)
    B = T.shape[0] - 1
    if B < 2:
        raise InsufficientBootstrap(f"leave-one-out moments need B >= 2, got B = {B}")
    if not 0 <= b <= B:
        raise IndexError(f"row {b} outside 0..{B}")
    rest = np.delete(T, b, axis=0)
    mu = rest.sum(axis=0) / B
    sigma = np.sqrt(np.sum((rest - mu) ** 2, axis=0) / (B - 1))
    return mu, _floor(sigma, mu)


def per_class_pvalues(T) -> np.ndarray:
    """``(1 + #{b >= 1: T[b, l] > T[0, l]}) / (B + 1)`` for each column."""
    T = T.T if isinstance(T, StatMatrix) else np.asarray(T, dtype=float)
    B = T.shape[0] - 1
    exceed = np.sum(T[1:] > T[0], axis=0)
    return (1.0 + exceed) / (B + 1.0)


def aggregate_test(stats: StatMatrix) -> AggregateResult:
    T = stats.T
    B = stats.B
    if B < 2:
        raise InsufficientBootstrap(f"aggregate test needs B >= 2, got B = {B}")
    mu, sigma = _all_loo_moments(T)
    Q = np.mean(((T - mu) / sigma) ** 2, axis=1)
    Q0, Qb = float(Q[0]), Q[1:]
    p = (1.0 + np.sum(Qb >= Q0)) / (B + 1.0)
    per_class = per_class_pvalues(T)
    labels = tuple(getattr(s, "label", str(s)) for s in stats.class_specs)
    return AggregateResult(Q0=Q0, Qb=Qb, p_aggregate=float(p), per_class_p=per_class,
                           p_cauchy=cauchy_combine(per_class), labels=labels)


def cauchy_combine(p, weights=None) -> float:
    """Cauchy combination of p-values (Liu & Xie, 2020).

    ``S = sum w_i tan((0.5 - p_i) pi)`` and the combined p-value is
    ``0.5 - arctan(S) / pi``, evaluated as ``arctan2(1, S) / pi`` to keep
    precision when ``S`` is large.
    """
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 0:
        raise EmptyInput("no p-values to combine")
    if weights is None:
        w = np.full(p.size, 1.0 / p.size)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != p.shape or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise ValueError("weights must be non-negative, one per p-value, and sum to 1")
    p = np.clip(p, 1e-10, 1.0 - 1e-10)
    s = float(np.sum(w * np.tan((0.5 - p) * np.pi)))
    return float(np.arctan2(1.0, s) / np.pi)
