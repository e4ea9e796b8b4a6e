"""Per-observation influence scores for each supported function-valued parameter.

For an estimand with conditioning variable ``V`` the score of observation
``i`` is ``phi_i``, built so that for any function ``h``

    n^{-1} sum_i phi_i * (h(V_i) - mean(h(V)))

is the one-step estimate of ``int Psi_v h^c dP_V``. Function classes only
ever see ``(v, phi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import nuisance
from .datamodel import Dataset, validate
from .errors import PositivityViolation, RoleMismatch, SingularSystem


@dataclass(frozen=True)
class ScoreSet:
    v: np.ndarray
    phi: np.ndarray
    psi_v: np.ndarray
    theta_hat: float
    estimand_tag: str = ""
    nuisance_info: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for name in ("v", "phi", "psi_v"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.v.size == self.phi.size == self.psi_v.size):
            raise ValueError("v, phi and psi_v must have equal lengths")
        if not (np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.phi)) and np.all(np.isfinite(self.psi_v))):
            raise ValueError("scores must be finite")

    @property
    def n(self) -> int:
        return int(self.phi.size)


@dataclass(frozen=True)
class EstimandConfig:
    estimand_tag: str = "cond_mean"
    num_knots: int | None = None
    penalty_grid: Sequence[float] = nuisance.DEFAULT_PENALTY_GRID
    propensity: str = "auto"  # "auto", "known_constant" or "spline_logistic"
    known_propensity: float | None = None
    propensity_clip: float = nuisance.PROPENSITY_CLIP
    conditioning_index: int = 0
    fit_psi_v: bool = True


def conditioning_values(dataset: Dataset, config: EstimandConfig | None = None) -> np.ndarray:
    idx = 0 if config is None else config.conditioning_index
    return np.asarray(dataset.conditioning[:, idx], dtype=float)


def _diagnostic_fit(v, target, config):
    """Spline fit of ``target`` on ``v`` evaluated at ``v``; constant fallback for degenerate ``v``."""
    if not config.fit_psi_v:
        return np.full(v.size, float(np.mean(target)))
    try:
        return nuisance.fit_smoother(v, target, config.num_knots, config.penalty_grid).predict(v)
    except SingularSystem:
        return np.full(v.size, float(np.mean(target)))


def one_step_estimate(scores: ScoreSet, h_values) -> float:
    """``n^{-1} sum phi_i (h_i - mean(h))`` for the values ``h_i = h(V_i)``."""
    h = np.asarray(h_values, dtype=float)
    return float(np.mean(scores.phi * (h - h.mean())))


def scores_condmean(dataset: Dataset, config: EstimandConfig | None = None) -> ScoreSet:
    """Scores for ``E[Y | V]``: ``phi_i = Y_i - mean(Y)``; no nuisance enters."""
    config = config or EstimandConfig("cond_mean")
    y = np.asarray(dataset.outcome, dtype=float)
    ybar = float(np.mean(y))
    v = conditioning_values(dataset, config)
    return ScoreSet(v=v, phi=y - ybar, psi_v=_diagnostic_fit(v, y, config), theta_hat=ybar,
                    estimand_tag="cond_mean")


def riesz_weights(t, pi) -> np.ndarray:
    """``t / pi - (1 - t) / (1 - pi)``."""
    t = np.asarray(t, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0) or np.any(pi >= 1):
        raise PositivityViolation("propensity scores must lie strictly inside (0, 1)")
    return t / pi - (1.0 - t) / (1.0 - pi)


def _arm_predictions(mu_fit, X):
    if isinstance(mu_fit, Mapping):
        return mu_fit[0].predict(X), mu_fit[1].predict(X)
    fit0, fit1 = mu_fit
    return fit0.predict(X), fit1.predict(X)


def scores_cate(dataset: Dataset, mu_fit, pi, config: EstimandConfig | None = None) -> ScoreSet:
    """AIPW scores for the CATE.

    ``mu_fit`` holds the arm-specific outcome regressions, either as
    ``(fit_for_T0, fit_for_T1)`` or ``{0: ..., 1: ...}``; ``pi`` is a
    propensity model (anything with ``predict(X)``).
    """
    config = config or EstimandConfig("cate")
    if dataset.treatment is None:
        raise RoleMismatch("cate scores need a treatment column")
    X = dataset.adjustment_set()
    t = np.asarray(dataset.treatment, dtype=float)
    y = np.asarray(dataset.outcome, dtype=float)
    mu0, mu1 = _arm_predictions(mu_fit, X)
    alpha = riesz_weights(t, pi.predict(X))
    mu_t = np.where(t == 1, mu1, mu0)
    contrast = mu1 - mu0
    phi = contrast + alpha * (y - mu_t)
    v = conditioning_values(dataset, config)
    return ScoreSet(v=v, phi=phi, psi_v=_diagnostic_fit(v, contrast, config), theta_hat=float(np.mean(phi)),
                    estimand_tag="cate")


def scores_condcov(dataset: Dataset, mu_y_fit, mu_x_fit, config: EstimandConfig | None = None) -> ScoreSet:
    """Scores for the conditional covariance of outcome and secondary outcome given ``Z``.

    ``phi_i = (Y_i - mu_y(Z_i)) (X_i - mu_x(Z_i))``, with ``Z`` the adjustment set.
    """
    config = config or EstimandConfig("cond_cov")
    if dataset.secondary_outcome is None:
        raise RoleMismatch("cond_cov scores need a secondary_outcome column")
    Z = dataset.adjustment_set()
    ry = np.asarray(dataset.outcome, dtype=float) - mu_y_fit.predict(Z)
    rx = np.asarray(dataset.secondary_outcome, dtype=float) - mu_x_fit.predict(Z)
    phi = ry * rx
    v = conditioning_values(dataset, config)
    return ScoreSet(v=v, phi=phi, psi_v=_diagnostic_fit(v, phi, config), theta_hat=float(np.mean(phi)),
                    estimand_tag="cond_cov")


def center_scores(scores: ScoreSet) -> ScoreSet:
    """Subtract the mean of ``phi``.

    Input whose mean is already zero up to rounding comes back unchanged, so
    centering is idempotent bit for bit.
    """
    phi = scores.phi
    for _ in range(3):
        m = np.mean(phi)
        if abs(m) <= 1e-14 * np.max(np.abs(phi), initial=0.0):
            break
        phi = phi - m
    if phi is scores.phi:
        return scores
    return replace(scores, phi=phi)


def fit_cate_nuisances(dataset: Dataset, config: EstimandConfig):
    X = dataset.adjustment_set()
    t = np.asarray(dataset.treatment)
    y = np.asarray(dataset.outcome, dtype=float)
    fits = {}
    for arm in (0, 1):
        mask = t == arm
        if mask.sum() < 4:
            raise SingularSystem(f"treatment arm {arm} has {mask.sum()} observations; need at least 4")
        fits[arm] = nuisance.fit_smoother(X[mask], y[mask], config.num_knots, config.penalty_grid)
    kind = config.propensity
    known = config.known_propensity if config.known_propensity is not None else dataset.known_propensity
    if kind == "spline_logistic":
        known = None
    elif kind == "known_constant" and known is None:
        raise ValueError("propensity kind known_constant requires a known_propensity value")
    pi = nuisance.fit_propensity(dataset, known_constant=known, num_knots=config.num_knots,
                                 penalty_grid=config.penalty_grid, clip=config.propensity_clip)
    return fits, pi


def compute_scores(dataset: Dataset, config: EstimandConfig | None = None) -> ScoreSet:
    """Validate ``dataset``, fit the nuisances its estimand needs and return the scores."""
    validate(dataset)
    if config is None:
        config = EstimandConfig(dataset.estimand_tag)
    elif config.estimand_tag != dataset.estimand_tag:
        raise RoleMismatch(f"config estimand {config.estimand_tag} does not match dataset {dataset.estimand_tag}")
    tag = dataset.estimand_tag
    if tag == "cond_mean":
        return scores_condmean(dataset, config)
    if tag == "cate":
        fits, pi = fit_cate_nuisances(dataset, config)
        scores = scores_cate(dataset, fits, pi, config)
        info = {"propensity": pi.kind, "penalties": [[c.penalty for c in fits[a].components] for a in (0, 1)]}
        return replace(scores, nuisance_info=info)
    Z = dataset.adjustment_set()
    fy = nuisance.fit_smoother(Z, dataset.outcome, config.num_knots, config.penalty_grid)
    fx = nuisance.fit_smoother(Z, dataset.secondary_outcome, config.num_knots, config.penalty_grid)
    scores = scores_condcov(dataset, fy, fx, config)
    info = {"penalties": [[c.penalty for c in f.components] for f in (fy, fx)]}
    return replace(scores, nuisance_info=info)
