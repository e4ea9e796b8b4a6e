"""Function classes and their supremum statistics.

Two classes are provided:

* :class:`IndicatorClass` -- thresholded indicators ``1{v <= v0}``; the
  supremum runs over the observed conditioning values.
* :class:`RkhsClass` -- the span of the first ``D`` periodic Sobolev
  eigenfunctions under the constraint
  ``gamma * a'Γa + (1 - gamma) * a'Va <= C``. The supremum has the closed form
  ``eta^{-1} (sqrt(n) U)' M^{-1} (sqrt(n) U)`` with ``M = gamma Γ + (1 - gamma) V``.

Every statistic is a function of ``(v, phi)`` alone. Bootstrap versions
replace ``phi_i`` by ``xi_i * phi_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateConditioning, DomainError, LengthMismatch, SingularPenalty

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class IndicatorClass:
    @property
    def label(self) -> str:
        return "indicator"


@dataclass(frozen=True)
class RkhsClass:
    D: int = 100
    gamma: float = 1.0
    eta: float = 1.0

    def __post_init__(self):
        D = int(self.D)
        if D < 2:
            raise ValueError("D must be at least 2")
        if D % 2:
            D += 1
        object.__setattr__(self, "D", D)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    @property
    def label(self) -> str:
        return f"rkhs(D={self.D},gamma={self.gamma:.6g},eta={self.eta:g})"


FunctionClassSpec = Union[IndicatorClass, RkhsClass]


def rkhs_basis(x, D: int) -> np.ndarray:
    """Eigenfunctions ``sqrt2 cos(2 j pi x)``, ``sqrt2 sin(2 j pi x)`` for ``j = 1..D/2``.

    Scalar ``x`` gives a length-``D`` vector, array ``x`` an ``(n, D)`` matrix.
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
        raise DomainError("basis is defined on [0, 1]")
    if D % 2:
        D += 1
    freq = 2.0 * np.pi * np.arange(1, D // 2 + 1)
    arg = np.outer(x, freq)
    out = np.empty((x.size, D))
    out[:, 0::2] = SQRT2 * np.cos(arg)
    out[:, 1::2] = SQRT2 * np.sin(arg)
    return out[0] if scalar else out


def rkhs_eigenvalues(D: int) -> np.ndarray:
    """``lambda_{2j-1} = lambda_{2j} = (2 j pi)^{-4}``."""
    j = np.repeat(np.arange(1, D // 2 + 1), 2)
    return (2.0 * np.pi * j) ** -4.0


def scale_to_unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    lo, hi = np.min(v), np.max(v)
    if not hi > lo:
        raise DegenerateConditioning("conditioning variable is constant")
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0)


@dataclass(frozen=True)
class RkhsWorkspace:
    Phi: np.ndarray  # (n, D) centered basis
    gamma_diag: np.ndarray  # diagonal of Γ, 1 / lambda_j
    Vmat: np.ndarray
    U: np.ndarray
    v_scaled: np.ndarray
    phi: np.ndarray  # centered scores
    weighted: np.ndarray  # phi_i * Phi_i., the rows the multipliers act on

    @property
    def n(self) -> int:
        return self.Phi.shape[0]

    @property
    def D(self) -> int:
        return self.Phi.shape[1]

    @property
    def Gamma(self) -> np.ndarray:
        return np.diag(self.gamma_diag)

    def penalty_matrix(self, gamma: float) -> np.ndarray:
        M = (1.0 - gamma) * self.Vmat
        M[np.diag_indices_from(M)] += gamma * self.gamma_diag
        return M

    def multiplier_scores(self, xi) -> np.ndarray:
        """``n^{-1} sum_i xi_i phi_i Phi_i.`` for one vector or a ``(B, n)`` batch."""
        return (np.asarray(xi, dtype=float) @ self.weighted) / self.n


def _centered_phi(scores):
    phi = np.asarray(scores.phi, dtype=float)
    return phi - phi.mean()


def build_workspace(scores, D: int = 100) -> RkhsWorkspace:
    n = scores.n
    if n < 3:
        raise ValueError("need at least 3 observations")
    if D % 2:
        D += 1
    v01 = scale_to_unit(scores.v)
    basis = rkhs_basis(v01, D)
    Phi = basis - basis.mean(axis=0)
    Vmat = (Phi.T @ Phi) / n
    Vmat = 0.5 * (Vmat + Vmat.T)
    phi = _centered_phi(scores)
    weighted = phi[:, None] * Phi
    U = (np.ones(n) @ weighted) / n
    return RkhsWorkspace(Phi=Phi, gamma_diag=1.0 / rkhs_eigenvalues(D), Vmat=Vmat, U=U,
                         v_scaled=v01, phi=phi, weighted=weighted)


class RkhsSolver:
    """Cholesky factorization of ``M = gamma Γ + (1 - gamma) V`` shared across bootstrap draws.

    With ``ridge=True`` a singular ``M`` is regularized by
    ``1e-10 * tr(M) / D * I`` instead of raising :class:`SingularPenalty`.
    """

    def __init__(self, ws: RkhsWorkspace, gamma: float, eta: float = 1.0, ridge: bool = False):
        self.ws = ws
        self.gamma = float(gamma)
        self.eta = float(eta)
        M = ws.penalty_matrix(gamma)
        self.ridged = False
        try:
            self.cho = self._factor(M)
        except SingularPenalty:
            if not ridge:
                raise
            M = M + 1e-10 * np.trace(M) / M.shape[0] * np.eye(M.shape[0])
            self.cho = self._factor(M)
            self.ridged = True
        self.M = M

    @staticmethod
    def _factor(M):
        try:
            cho = sla.cho_factor(M, lower=True, check_finite=False)
        except sla.LinAlgError:
            raise SingularPenalty("penalty matrix is not positive definite") from None
        d = np.abs(np.diag(cho[0]))
        if d.min() ** 2 <= 1e-13 * np.max(np.diag(M)):
            raise SingularPenalty("penalty matrix is numerically singular")
        return cho

    def solve(self, rhs):
        return sla.cho_solve(self.cho, rhs, check_finite=False)

    def statistic(self, U):
        """``eta^{-1} n U' M^{-1} U`` for a vector ``U`` or each row of a ``(B, D)`` batch."""
        U = np.asarray(U, dtype=float)
        n = self.ws.n
        if U.ndim == 1:
            return float(n * (U @ self.solve(U)) / self.eta)
        sol = self.solve(U.T)
        return n * np.einsum("bd,db->b", U, sol) / self.eta

    def maximizer(self, U):
        return math.sqrt(self.ws.n) * self.solve(U) / self.eta


def rkhs_stat(ws: RkhsWorkspace, gamma: float, eta: float = 1.0, *, ridge: bool = False):
    """Closed-form RKHS statistic and its maximizing coefficients ``a_hat``."""
    solver = RkhsSolver(ws, gamma, eta, ridge=ridge)
    return solver.statistic(ws.U), solver.maximizer(ws.U)


class RkhsFamily:
    """RKHS statistics for many ``gamma`` values at once.

    With ``Γ^{-1/2} V Γ^{-1/2} = Q diag(w) Q'`` every penalty matrix of the
    family is ``Γ^{1/2} Q diag(gamma + (1 - gamma) w) Q' Γ^{1/2}``, so one
    symmetric eigendecomposition serves the whole grid and all draws.
    """

    def __init__(self, ws: RkhsWorkspace, gammas, eta: float = 1.0):
        self.ws = ws
        self.gammas = np.asarray(gammas, dtype=float)
        self.eta = float(eta)
        s = 1.0 / np.sqrt(ws.gamma_diag)
        A = s[:, None] * ws.Vmat * s[None, :]
        w, Q = np.linalg.eigh(0.5 * (A + A.T))
        w = np.clip(w, 0.0, None)
        denom = self.gammas[None, :] + (1.0 - self.gammas[None, :]) * w[:, None]
        if np.any(denom <= 1e-14 * max(1.0, w.max(initial=0.0))):
            raise SingularPenalty("gamma = 0 with rank-deficient V")
        self.weights = 1.0 / denom  # (D, K)
        self.transform = s[:, None] * Q  # U -> Q' Γ^{-1/2} U via U @ transform

    def statistics(self, U) -> np.ndarray:
        """``(K,)`` for one ``U``; ``(B, K)`` for a batch."""
        Z = np.asarray(U, dtype=float) @ self.transform
        return self.ws.n * (Z**2 @ self.weights) / self.eta


class _IndicatorLayout:
    """Sorted order and tie-group ends of the conditioning values."""

    def __init__(self, v):
        v = np.asarray(v, dtype=float)
        self.n = v.size
        self.order = np.argsort(v, kind="stable")
        vs = v[self.order]
        last = np.ones(self.n, dtype=bool)
        last[:-1] = vs[1:] != vs[:-1]
        self.ends = np.flatnonzero(last)
        self.thresholds = vs[self.ends]
        self.frac = (self.ends + 1) / self.n


def _indicator_from_weights(layout, w):
    """Indicator statistic for weights ``w`` (vector or ``(B, n)`` batch, original order)."""
    w = np.asarray(w, dtype=float)
    ws = w[..., layout.order]
    csum = np.cumsum(ws, axis=-1)
    total = csum[..., -1:]
    proc = (csum[..., layout.ends] - layout.frac * total) / math.sqrt(layout.n)
    return np.abs(proc)


def indicator_stat(scores, *, layout=None):
    """Supremum over thresholds ``v0`` in the observed values, ``O(n log n)``.

    Returns ``(T, threshold)``; the smallest maximizing threshold wins ties.
    """
    layout = layout or _IndicatorLayout(scores.v)
    phi = _centered_phi(scores)
    vals = _indicator_from_weights(layout, np.ones(layout.n) * phi)
    k = int(np.argmax(vals))
    return float(vals[k]), float(layout.thresholds[k])


def indicator_bootstrap(scores, Xi, *, layout=None) -> np.ndarray:
    layout = layout or _IndicatorLayout(scores.v)
    phi = _centered_phi(scores)
    Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
    return _indicator_from_weights(layout, Xi * phi).max(axis=-1)


def bootstrap_linear_form(ws_or_scores, class_spec: FunctionClassSpec, xi, *, solver: RkhsSolver | None = None) -> float:
    """One multiplier-bootstrap statistic for multipliers ``xi``.

    Indicator needs the score set; RKHS needs the workspace (pass ``solver``
    to reuse a factorization across draws).
    """
    xi = np.asarray(xi, dtype=float)
    if isinstance(class_spec, IndicatorClass):
        scores = ws_or_scores
        if xi.shape != (scores.n,):
            raise LengthMismatch(f"xi has shape {xi.shape}, expected ({scores.n},)")
        layout = _IndicatorLayout(scores.v)
        return float(_indicator_from_weights(layout, xi * _centered_phi(scores)).max())
    ws = ws_or_scores
    if xi.shape != (ws.n,):
        raise LengthMismatch(f"xi has shape {xi.shape}, expected ({ws.n},)")
    if solver is None:
        solver = RkhsSolver(ws, class_spec.gamma, class_spec.eta, ridge=True)
    return solver.statistic(ws.multiplier_scores(xi))


def gamma_grid(K: int = 50, gamma_min: float = 1e-5, gamma_max: float = 1e-3) -> np.ndarray:
    """Geometric grid ``gamma_max * (gamma_min / gamma_max)^((k-1)/(K-1))``, descending."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if not 0 < gamma_min <= gamma_max <= 1:
        raise ValueError("need 0 < gamma_min <= gamma_max <= 1")
    if K == 1:
        return np.array([float(gamma_max)])
    k = np.arange(K)
    grid = gamma_max * (gamma_min / gamma_max) ** (k / (K - 1))
    grid[0], grid[-1] = gamma_max, gamma_min
    return grid
