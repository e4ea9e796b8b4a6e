"""Multiplier-bootstrap calibration.

Multipliers for replicate ``b`` come from their own stream, keyed on
``(seed, b)`` through :class:`numpy.random.SeedSequence` spawn keys, so any
subset of replicates can be regenerated independently and results never
depend on evaluation order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .combine import StatMatrix
from .errors import DegenerateScores, SingularPenalty
from .estimands import ScoreSet, center_scores
from .funclasses import (
    FunctionClassSpec,
    IndicatorClass,
    RkhsClass,
    RkhsFamily,
    RkhsSolver,
    _IndicatorLayout,
    build_workspace,
    indicator_bootstrap,
    indicator_stat,
)

DISTRIBUTIONS = ("rademacher", "standard_normal")
CONVENTIONS = ("alg1", "plus_one")


@dataclass(frozen=True)
class MultiplierConfig:
    distribution: str = "rademacher"
    B: int = 800
    seed: int = 0
    convention: str = "plus_one"

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}")
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit non-negative integer")


@dataclass(frozen=True)
class TestResult:
    statistic: float
    boot_stats: np.ndarray
    p_value: float
    p_alg1: float
    p_plus_one: float
    class_spec: FunctionClassSpec
    seed: int
    convention: str
    argmax_info: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class


def draw_multipliers(n: int, config: MultiplierConfig, b: int) -> np.ndarray:
    """Multiplier vector for replicate ``b``; a pure function of ``(seed, b, n)``."""
    ss = np.random.SeedSequence(int(config.seed), spawn_key=(int(b),))
    rng = np.random.Generator(np.random.PCG64(ss))
    if config.distribution == "rademacher":
        return 2.0 * rng.integers(0, 2, size=n).astype(float) - 1.0
    return rng.standard_normal(n)


def draw_multiplier_matrix(n: int, config: MultiplierConfig) -> np.ndarray:
    """``(B, n)`` matrix whose row ``b - 1`` is ``draw_multipliers(n, config, b)``."""
    Xi = np.empty((config.B, n))
    for b in range(1, config.B + 1):
        Xi[b - 1] = draw_multipliers(n, config, b)
    return Xi


def p_value_convention(count_exceed: int, B: int, convention: str = "alg1") -> float:
    """``count / B`` ("alg1") or ``(1 + count) / (B + 1)`` ("plus_one")."""
    if not 0 <= count_exceed <= B:
        raise ValueError("count_exceed must lie in 0..B")
    if convention == "alg1":
        return count_exceed / B
    if convention == "plus_one":
        return (1.0 + count_exceed) / (B + 1.0)
    raise ValueError(f"unknown convention {convention!r}")


def _warn_if_degenerate(scores):
    if not np.any(scores.phi):
        warnings.warn("all influence scores are zero; the test is degenerate", DegenerateScores, stacklevel=3)


def run_test(scores: ScoreSet, class_spec: FunctionClassSpec, config: MultiplierConfig | None = None,
             *, multipliers: np.ndarray | None = None) -> TestResult:
    """Bootstrap test for a single function class.

    ``multipliers`` (a ``(B, n)`` array) overrides the seeded draws.
    """
    config = config or MultiplierConfig()
    scores = center_scores(scores)
    _warn_if_degenerate(scores)
    Xi = draw_multiplier_matrix(scores.n, config) if multipliers is None else np.asarray(multipliers, dtype=float)
    B = Xi.shape[0]
    if isinstance(class_spec, IndicatorClass):
        layout = _IndicatorLayout(scores.v)
        stat, thr = indicator_stat(scores, layout=layout)
        boot = indicator_bootstrap(scores, Xi, layout=layout)
        info = {"threshold": thr}
    else:
        ws = build_workspace(scores, class_spec.D)
        solver = RkhsSolver(ws, class_spec.gamma, class_spec.eta, ridge=True)
        stat = solver.statistic(ws.U)
        boot = solver.statistic(ws.multiplier_scores(Xi))
        info = {"a_hat": solver.maximizer(ws.U).tolist(), "ridged": solver.ridged}
    count = int(np.sum(boot > stat))
    p1 = p_value_convention(count, B, "alg1")
    p2 = p_value_convention(count, B, "plus_one")
    return TestResult(statistic=float(stat), boot_stats=np.asarray(boot), p_value=p2 if config.convention == "plus_one" else p1,
                      p_alg1=p1, p_plus_one=p2, class_spec=class_spec, seed=int(config.seed),
                      convention=config.convention, argmax_info=info)


def joint_statistics(scores: ScoreSet, class_specs: Sequence[FunctionClassSpec],
                     config: MultiplierConfig | None = None, *, multipliers: np.ndarray | None = None,
                     diagnostics: bool = False):
    """Observed and bootstrap statistics for several classes from one set of multiplier draws.

    Returns a :class:`StatMatrix`; with ``diagnostics=True`` also a list with
    the maximizer (threshold or ``a_hat``) of each class.
    """
    config = config or MultiplierConfig()
    scores = center_scores(scores)
    _warn_if_degenerate(scores)
    Xi = draw_multiplier_matrix(scores.n, config) if multipliers is None else np.asarray(multipliers, dtype=float)
    B = Xi.shape[0]
    specs = list(class_specs)
    T = np.empty((B + 1, len(specs)))
    info: list = [None] * len(specs)

    ind = [j for j, s in enumerate(specs) if isinstance(s, IndicatorClass)]
    if ind:
        layout = _IndicatorLayout(scores.v)
        stat, thr = indicator_stat(scores, layout=layout)
        boot = indicator_bootstrap(scores, Xi, layout=layout)
        for j in ind:
            T[0, j], T[1:, j], info[j] = stat, boot, {"threshold": thr}

    groups: dict = {}
    for j, s in enumerate(specs):
        if isinstance(s, RkhsClass):
            groups.setdefault((s.D, s.eta), []).append(j)
    for (D, eta), cols in groups.items():
        ws = build_workspace(scores, D)
        Ub = ws.multiplier_scores(Xi)
        gammas = [specs[j].gamma for j in cols]
        try:
            fam = RkhsFamily(ws, gammas, eta)
            T[0, cols] = fam.statistics(ws.U)
            T[1:, cols] = fam.statistics(Ub)
        except SingularPenalty:
            for j in cols:
                solver = RkhsSolver(ws, specs[j].gamma, eta, ridge=True)
                T[0, j] = solver.statistic(ws.U)
                T[1:, j] = solver.statistic(Ub)
        if diagnostics:
            for j in cols:
                solver = RkhsSolver(ws, specs[j].gamma, eta, ridge=True)
                info[j] = {"a_hat": solver.maximizer(ws.U).tolist(), "ridged": solver.ridged}
    stats = StatMatrix(T, tuple(specs), int(config.seed))
    return (stats, info) if diagnostics else stats
