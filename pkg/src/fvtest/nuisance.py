"""Penalized natural cubic spline regression and propensity models.

Splines are parameterized by their values ``g`` at the knots. Second
derivatives at the interior knots are the linear map ``S @ g`` with
``S = R^{-1} Q^T`` and the roughness penalty ``int f''^2`` equals
``g^T Q R^{-1} Q^T g`` (Green & Silverman, 1994, ch. 2). The resulting basis
matrix is well conditioned, and linear functions are exactly representable,
so they pass through the penalty unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import LengthMismatch, Nonconvergence, SingularSystem

PROPENSITY_CLIP = 0.01
DEFAULT_PENALTY_GRID = tuple(np.logspace(-6, 2, 20))
BACKFIT_MAX_CYCLES = 30
BACKFIT_TOL = 1e-8
IRLS_MAX_ITER = 50


def default_num_knots(n: int) -> int:
    return min(10, n // 10 + 2)


def quantile_knots(x, num_knots: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    knots = np.unique(np.quantile(x, np.linspace(0.0, 1.0, num_knots)))
    return knots


def _second_derivative_map(knots):
    """Return ``(S, K)``: interior second derivatives ``S @ g`` and penalty ``K``."""
    k = len(knots)
    if k < 3:
        return np.zeros((k, k)), np.zeros((k, k))
    h = np.diff(knots)
    m = k - 2
    Q = np.zeros((k, m))
    R = np.zeros((m, m))
    for j in range(m):
        Q[j, j] = 1.0 / h[j]
        Q[j + 1, j] = -1.0 / h[j] - 1.0 / h[j + 1]
        Q[j + 2, j] = 1.0 / h[j + 1]
        R[j, j] = (h[j] + h[j + 1]) / 3.0
        if j + 1 < m:
            R[j, j + 1] = R[j + 1, j] = h[j + 1] / 6.0
    S_interior = sla.solve(R, Q.T, assume_a="pos")
    S = np.zeros((k, k))
    S[1:-1] = S_interior
    K = Q @ S_interior
    return S, 0.5 * (K + K.T)


def natural_spline_basis(knots, x) -> np.ndarray:
    """Basis matrix ``N`` with ``f(x) = N @ g`` for knot values ``g``.

    Beyond the boundary knots the spline continues linearly.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = len(knots)
    S, _ = _second_derivative_map(knots)
    A = np.zeros((len(x), k))  # weights on g
    C = np.zeros((len(x), k))  # weights on second derivatives
    h = np.diff(knots)
    lo, hi = knots[0], knots[-1]

    inside = (x >= lo) & (x <= hi)
    idx = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, k - 2)
    rows = np.flatnonzero(inside)
    i = idx[rows]
    xi = x[rows]
    hi_ = h[i]
    a = (xi - knots[i]) / hi_
    b = (knots[i + 1] - xi) / hi_
    A[rows, i] = b
    A[rows, i + 1] = a
    cub = (xi - knots[i]) * (knots[i + 1] - xi) / 6.0
    C[rows, i] = -cub * (1.0 + b)
    C[rows, i + 1] = -cub * (1.0 + a)

    left = np.flatnonzero(x < lo)
    if left.size:
        d = x[left] - lo
        A[left, 0] = 1.0 - d / h[0]
        A[left, 1] = d / h[0]
        C[left, 1] = -d * h[0] / 6.0
    right = np.flatnonzero(x > hi)
    if right.size:
        d = x[right] - hi
        A[right, -1] = 1.0 + d / h[-1]
        A[right, -2] = -d / h[-1]
        C[right, -2] = d * h[-1] / 6.0
    return A + C @ S


@dataclass(frozen=True)
class SmoothFit:
    knots: np.ndarray
    coefficients: np.ndarray
    penalty: float
    x_range: tuple[float, float]
    edf: float = float("nan")

    def __post_init__(self):
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if len(self.coefficients) != len(self.knots):
            raise ValueError("one coefficient per knot expected")
        if self.penalty < 0:
            raise ValueError("penalty must be non-negative")

    def predict(self, x) -> np.ndarray:
        return natural_spline_basis(self.knots, x) @ self.coefficients


def predict(fit, x) -> np.ndarray:
    return fit.predict(x)


def _check_xy(x, y, weights=None):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise LengthMismatch(f"x has {x.size} entries, y has {y.size}")
    if weights is not None:
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape != x.shape:
            raise LengthMismatch("weights length differs from x")
    return x, y, weights


class _PenalizedSystem:
    """Cached cross-products for repeated solves over a penalty grid."""

    def __init__(self, x, y, knots, weights=None):
        self.knots = knots
        self.N = natural_spline_basis(knots, x)
        _, self.K = _second_derivative_map(knots)
        w = np.ones_like(y) if weights is None else weights
        self.w = w
        self.y = y
        Nw = self.N * w[:, None]
        self.NtN = Nw.T @ self.N
        self.Nty = Nw.T @ y

    def solve(self, penalty):
        lhs = self.NtN + penalty * self.K
        try:
            cho = sla.cho_factor(lhs, lower=True, check_finite=False)
        except sla.LinAlgError:
            raise SingularSystem(
                f"penalized normal equations singular (knots={len(self.knots)}, penalty={penalty:g}); "
                "reduce num_knots"
            ) from None
        if np.min(np.abs(np.diag(cho[0]))) < 1e-12 * np.sqrt(np.max(np.abs(np.diag(lhs)))):
            raise SingularSystem(f"penalized normal equations near singular at penalty={penalty:g}")
        coef = sla.cho_solve(cho, self.Nty, check_finite=False)
        edf = float(np.trace(sla.cho_solve(cho, self.NtN, check_finite=False)))
        return coef, edf

    def gcv(self, penalty):
        coef, edf = self.solve(penalty)
        resid = self.y - self.N @ coef
        rss = float(np.sum(self.w * resid**2))
        n = self.y.size
        if n - edf <= 1e-9 * n:
            return np.inf, coef, edf  # saturated: GCV undefined
        return n * rss / (n - edf) ** 2, coef, edf


def fit_spline(x, y, num_knots: int | None = None, penalty: float = 0.0, *,
               knots=None, weights=None) -> SmoothFit:
    """Penalized least-squares natural cubic spline.

    Minimizes ``sum w_i (y_i - f(x_i))^2 + penalty * int f''^2``. Knots default
    to ``num_knots`` quantiles of ``x``; pass ``knots`` to fix them.
    """
    x, y, weights = _check_xy(x, y, weights)
    if penalty < 0:
        raise ValueError("penalty must be non-negative")
    if np.ptp(x) == 0:
        raise SingularSystem("x is constant; no spline can be fitted")
    if knots is None:
        if num_knots is None:
            num_knots = default_num_knots(x.size)
        if x.size < max(4, num_knots):
            raise SingularSystem(f"need at least max(4, num_knots)={max(4, num_knots)} points, got {x.size}")
        knots = quantile_knots(x, num_knots)
    else:
        knots = np.asarray(knots, dtype=float)
    system = _PenalizedSystem(x, y, knots, weights)
    coef, edf = system.solve(penalty)
    return SmoothFit(knots=knots, coefficients=coef, penalty=float(penalty),
                     x_range=(float(x.min()), float(x.max())), edf=edf)


def _select_by_gcv(system, grid):
    scores = []
    for lam in grid:
        score, _, _ = system.gcv(lam)
        scores.append(score)
    scores = np.array(scores)
    best = np.min(scores)
    if not np.isfinite(best):
        return float(max(grid))
    # near-equal scores are ties; roundoff must not decide between them
    tol = 1e-10 * abs(best) + 1e-14 * np.mean(system.w * system.y**2)
    tied = np.flatnonzero(scores <= best + tol)
    return float(max(grid[i] for i in tied))


def select_penalty_gcv(x, y, num_knots: int | None = None, penalty_grid: Sequence[float] = DEFAULT_PENALTY_GRID,
                       *, weights=None) -> float:
    """Grid value minimizing ``n * RSS / (n - tr H)^2``; ties go to the larger penalty."""
    grid = [float(p) for p in penalty_grid]
    if not grid or min(grid) < 0:
        raise ValueError("penalty grid must be non-empty and non-negative")
    if len(grid) == 1:
        return grid[0]
    x, y, weights = _check_xy(x, y, weights)
    if num_knots is None:
        num_knots = default_num_knots(x.size)
    if x.size < max(4, num_knots):
        raise SingularSystem(f"need at least max(4, num_knots)={max(4, num_knots)} points, got {x.size}")
    if np.ptp(x) == 0:
        raise SingularSystem("x is constant; no spline can be fitted")
    system = _PenalizedSystem(x, y, quantile_knots(x, num_knots), weights)
    return _select_by_gcv(system, grid)


@dataclass(frozen=True)
class AdditiveFit:
    """``f(X) = intercept + sum_j f_j(X[:, j])`` with each ``f_j`` centered on the training data."""

    intercept: float
    components: tuple[SmoothFit, ...]
    offsets: tuple[float, ...]
    cycles: int = 0

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        out = np.full(X.shape[0], self.intercept)
        for j, (comp, off) in enumerate(zip(self.components, self.offsets)):
            out += comp.predict(X[:, j]) - off
        return out


def fit_smoother(X, y, num_knots: int | None = None, penalty_grid: Sequence[float] = DEFAULT_PENALTY_GRID,
                 *, weights=None, penalties: Sequence[float] | None = None):
    """Fit ``y`` on the columns of ``X``: one spline if univariate, else additive backfitting.

    Penalties are chosen by GCV (per component, on the first backfitting
    cycle) unless ``penalties`` is given. Columns with fewer than four distinct
    values enter linearly (a two-knot spline).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise LengthMismatch(f"X has {X.shape[0]} rows, y has {y.size}")
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if num_knots is None:
        num_knots = default_num_knots(n)
    grid = np.asarray(penalty_grid, dtype=float)

    systems = []
    for j in range(p):
        col = X[:, j]
        if np.ptp(col) == 0:
            systems.append(None)
            continue
        k = num_knots if np.unique(col).size >= 4 else 2
        systems.append((col, quantile_knots(col, k)))

    def fit_component(j, target, lam):
        col, knots = systems[j]
        system = _PenalizedSystem(col, target, knots, w)
        if lam is None:
            lam = grid[0] if grid.size == 1 else _select_by_gcv(system, list(grid))
        coef, edf = system.solve(lam)
        fit = SmoothFit(knots=knots, coefficients=coef, penalty=float(lam),
                        x_range=(float(col.min()), float(col.max())), edf=edf)
        values = system.N @ coef
        off = float(np.average(values, weights=w))
        return fit, off, values - off

    active = [j for j in range(p) if systems[j] is not None]
    intercept = float(np.average(y, weights=w))
    flat = SmoothFit(knots=np.array([0.0, 1.0]), coefficients=np.zeros(2), penalty=0.0, x_range=(0.0, 0.0))
    comps = [flat] * p
    offs = [0.0] * p
    if not active:
        return AdditiveFit(intercept=intercept, components=tuple(comps), offsets=tuple(offs))

    lams = list(penalties) if penalties is not None else [None] * p
    contrib = np.zeros((p, n))
    cycles = 0
    for cycles in range(1, BACKFIT_MAX_CYCLES + 1):
        delta = 0.0
        for j in active:
            partial = y - intercept - contrib.sum(axis=0) + contrib[j]
            fit, off, values = fit_component(j, partial, lams[j])
            lams[j] = fit.penalty
            if comps[j] is not flat:
                delta = max(delta, float(np.max(np.abs(fit.coefficients - comps[j].coefficients))))
            else:
                delta = np.inf
            comps[j], offs[j], contrib[j] = fit, off, values
        if len(active) == 1 or delta < BACKFIT_TOL:
            break
    return AdditiveFit(intercept=intercept, components=tuple(comps), offsets=tuple(offs), cycles=cycles)


@dataclass(frozen=True)
class PropensityModel:
    """Treatment probability model, clipped to ``[clip, 1 - clip]``."""

    kind: str  # "known_constant" or "spline_logistic"
    constant: float | None = None
    fit: AdditiveFit | None = None
    clip: float = PROPENSITY_CLIP
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        if self.kind == "known_constant":
            p = np.full(n, self.constant, dtype=float)
        else:
            p = _expit(self.fit.predict(X))
        return np.clip(p, self.clip, 1.0 - self.clip)


def _expit(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def fit_propensity(dataset, known_constant: float | None = None, *, num_knots: int | None = None,
                   penalty_grid: Sequence[float] = DEFAULT_PENALTY_GRID, clip: float = PROPENSITY_CLIP,
                   tol: float = 1e-8) -> PropensityModel:
    """Propensity score model for ``dataset.treatment`` given its adjustment covariates.

    A known constant (argument, or ``dataset.known_propensity``) short-circuits
    the fit. Otherwise an additive spline logistic regression is fitted by
    penalized IRLS; penalties are chosen by weighted GCV on the first working
    response and held fixed afterwards.
    """
    if dataset.treatment is None:
        raise ValueError("dataset has no treatment column")
    if known_constant is None:
        known_constant = dataset.known_propensity
    if known_constant is not None:
        return PropensityModel(kind="known_constant", constant=float(known_constant), clip=clip)

    t = np.asarray(dataset.treatment, dtype=float)
    X = dataset.adjustment_set()
    tbar = t.mean()
    if tbar in (0.0, 1.0):
        # no overlap at all; the clip is the only positivity guard available
        return PropensityModel(kind="known_constant", constant=tbar, clip=clip,
                               extra={"degenerate_treatment": True})

    eta = np.full(t.size, np.log(tbar / (1 - tbar)))
    penalties = None
    fit = None
    for it in range(1, IRLS_MAX_ITER + 1):
        p = np.clip(_expit(eta), 1e-10, 1 - 1e-10)
        w = p * (1 - p)
        z = eta + (t - p) / w
        fit = fit_smoother(X, z, num_knots, penalty_grid, weights=w, penalties=penalties)
        penalties = [c.penalty for c in fit.components]
        new_eta = fit.predict(X)
        change = np.max(np.abs(new_eta - eta))
        eta = new_eta
        if change < tol * (1.0 + np.max(np.abs(eta))):
            return PropensityModel(kind="spline_logistic", fit=fit, clip=clip, iterations=it)
    raise Nonconvergence(f"penalized IRLS did not converge in {IRLS_MAX_ITER} iterations")
