"""Simulation designs and the Monte Carlo rejection-rate harness.

Each replicate derives its data stream and its multiplier seed from
``(master_seed, example, setting, n, rep)``, so a cell's result depends only
on its own coordinates: not on grid order, and not on how replicates are
spread over worker processes.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy

from .boot import MultiplierConfig, joint_statistics
from .combine import aggregate_test, cauchy_combine, per_class_pvalues
from .datamodel import Dataset
from .errors import FvtestError, InvalidSetting
from .estimands import EstimandConfig, compute_scores
from .funclasses import IndicatorClass, RkhsClass, gamma_grid

METHODS = ("indicator", "fixed_rkhs", "combined_rkhs", "aggregate", "cauchy")
DEFAULT_COEFS = {"beta0": 0.0, "beta1": 1.0, "gamma0": 1.0, "gamma1": 1.0}

PROFILES = {
    "desk": {"ns": (125, 250, 500), "n_reps": 500, "B": 300},
    "full": {"ns": (125, 250, 500, 1000, 2000), "n_reps": 500, "B": 800},
}

TABLE_COLUMNS = ("method", "example", "setting", "n", "alpha", "n_reps", "rejection_rate", "mc_stderr",
                 "dgp_params", "status")


@dataclass(frozen=True)
class DgpSpec:
    example: int
    setting: int
    n: int
    coefficients: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0
    noise: str = "variance"  # Example 2: "variance" reads N(0, 0.5) as var 0.5, "sd" as sd 0.5
    z_support: str = "printed"  # Example 3 setting 3: "printed" Z~U(0,1), "symmetric" Z~U(-1,1)

    def __post_init__(self):
        if self.example not in (1, 2, 3):
            raise InvalidSetting(f"example must be 1, 2 or 3, got {self.example}")
        if self.setting not in (1, 2, 3):
            raise InvalidSetting(f"setting must be 1, 2 or 3, got {self.setting}")
        if self.n < 25:
            raise InvalidSetting(f"n must be at least 25, got {self.n}")
        if self.noise not in ("variance", "sd"):
            raise InvalidSetting("noise must be 'variance' or 'sd'")
        if self.z_support not in ("printed", "symmetric"):
            raise InvalidSetting("z_support must be 'printed' or 'symmetric'")

    def params(self) -> dict:
        out: dict = {}
        if self.example == 2:
            out.update({**DEFAULT_COEFS, **dict(self.coefficients)})
            out["noise"] = self.noise
        if self.example == 3 and self.setting == 3:
            out["z_support"] = self.z_support
        return out

    def params_text(self) -> str:
        return ";".join(f"{k}={v}" for k, v in self.params().items())

    def generate(self, rng) -> Dataset:
        if self.example == 1:
            return gen_example1(self.setting, self.n, rng)
        if self.example == 2:
            return gen_example2(self.setting, self.n, rng, self.coefficients, noise=self.noise)
        return gen_example3(self.setting, self.n, rng, z_support=self.z_support)


def _check_setting(setting):
    if setting not in (1, 2, 3):
        raise InvalidSetting(f"setting must be 1, 2 or 3, got {setting}")


def gen_example1(setting: int, n: int, rng) -> Dataset:
    """Conditional-mean designs with ``X ~ U(-1, 1)`` and ``N(0, 1)`` noise."""
    _check_setting(setting)
    x = rng.uniform(-1.0, 1.0, n)
    eps = rng.standard_normal(n)
    if setting == 1:
        y = eps
    elif setting == 2:
        y = 0.25 * x + eps
    else:
        y = np.sin(np.pi * x * np.sign(x)) + eps
    return Dataset(outcome=y, conditioning=x, estimand_tag="cond_mean")


def gen_example2(setting: int, n: int, rng, coefs: Mapping[str, float] | None = None, *,
                 noise: str = "variance") -> Dataset:
    """Randomized trial with ``P(T = 1) = 0.5`` and effect modifier ``W ~ U(-1, 1)``.

    Setting 1 has a constant effect ``gamma0``; setting 2 a linear effect
    ``gamma0 + gamma1 W``; setting 3 ``gamma0 + gamma1 sin(W)``.
    """
    _check_setting(setting)
    c = {**DEFAULT_COEFS, **dict(coefs or {})}
    if "gamma" in c:
        c["gamma0"] = c.pop("gamma")
    w = rng.uniform(-1.0, 1.0, n)
    t = (rng.uniform(size=n) < 0.5).astype(float)
    sd = math.sqrt(0.5) if noise == "variance" else 0.5
    eps = sd * rng.standard_normal(n)
    if setting == 1:
        effect = np.full(n, c["gamma0"])
    elif setting == 2:
        effect = c["gamma0"] + c["gamma1"] * w
    else:
        effect = c["gamma0"] + c["gamma1"] * np.sin(w)
    y = c["beta0"] + c["beta1"] * w + effect * t + eps
    return Dataset(outcome=y, conditioning=w, treatment=t, estimand_tag="cate", known_propensity=0.5)


def rho_example3(z):
    """``(e^{z^2} - 1) / (e^{z^2} + 1)``, i.e. ``tanh(z^2 / 2)``."""
    return np.tanh(0.5 * np.asarray(z, dtype=float) ** 2)


def gen_example3(setting: int, n: int, rng, *, z_support: str = "printed") -> Dataset:
    """Conditional-covariance designs; ``Y`` is the outcome, ``X`` the secondary outcome."""
    _check_setting(setting)
    if setting == 1:
        y = rng.standard_normal(n)
        x = rng.standard_normal(n)
        z = rng.uniform(-1.0, 1.0, n)
    elif setting == 2:
        z = rng.uniform(0.0, 1.0, n)
        r = rho_example3(z)
        x = rng.standard_normal(n)
        y = r * x + np.sqrt(1.0 - r**2) * rng.standard_normal(n)
    else:
        z = rng.uniform(-1.0 if z_support == "symmetric" else 0.0, 1.0, n)
        x = rng.standard_normal(n)
        y = 0.5 * x * (z > 0) + rng.standard_normal(n)
    return Dataset(outcome=y, conditioning=z, secondary_outcome=x, estimand_tag="cond_cov")


@dataclass(frozen=True)
class PipelineSettings:
    """Function classes and bootstrap settings shared by every method."""

    D: int = 100
    K: int = 50
    gamma_min: float = 1e-5
    gamma_max: float = 1e-3
    eta: float = 1.0
    B: int = 300
    multiplier: str = "rademacher"

    def class_specs(self):
        """Indicator, then the ``K`` grid classes, then the fixed ``gamma = 1`` class."""
        grid = gamma_grid(self.K, self.gamma_min, self.gamma_max)
        return ([IndicatorClass()] + [RkhsClass(self.D, float(g), self.eta) for g in grid]
                + [RkhsClass(self.D, 1.0, self.eta)])


def method_pvalues(scores, settings: PipelineSettings, seed: int, methods: Sequence[str] = METHODS) -> dict:
    """p-value of every requested method from one joint set of multiplier draws."""
    specs = settings.class_specs()
    K = settings.K
    stats = joint_statistics(scores, specs, MultiplierConfig(settings.multiplier, settings.B, seed))
    per_class = per_class_pvalues(stats.T)
    grid_cols = list(range(1, K + 1))
    out = {}
    for m in methods:
        if m == "indicator":
            out[m] = float(per_class[0])
        elif m == "fixed_rkhs":
            out[m] = float(per_class[K + 1])
        elif m == "combined_rkhs":
            out[m] = aggregate_test(stats.columns(grid_cols)).p_aggregate
        elif m == "aggregate":
            out[m] = aggregate_test(stats.columns([0] + grid_cols)).p_aggregate
        elif m == "cauchy":
            out[m] = cauchy_combine(per_class[[0] + grid_cols])
        else:
            raise ValueError(f"unknown method {m!r}")
    return out


def replicate_seeds(master_seed: int, dgp: DgpSpec, rep: int):
    """``(data_seed_sequence, multiplier_seed)`` for one replicate."""
    base = np.random.SeedSequence(int(master_seed), spawn_key=(dgp.example, dgp.setting, dgp.n, dgp.seed, rep))
    data_ss, boot_ss = base.spawn(2)
    boot_seed = int(boot_ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
    return data_ss, boot_seed


def run_replicate(dgp: DgpSpec, rep: int, master_seed: int, settings: PipelineSettings,
                  methods: Sequence[str] = METHODS, estimand_config: EstimandConfig | None = None) -> dict:
    data_ss, boot_seed = replicate_seeds(master_seed, dgp, rep)
    data = dgp.generate(np.random.Generator(np.random.PCG64(data_ss)))
    cfg = estimand_config or EstimandConfig(data.estimand_tag, fit_psi_v=False)
    scores = compute_scores(data, cfg)
    return method_pvalues(scores, settings, boot_seed, methods)


def _run_chunk(args):
    cell, dgp, reps, master_seed, settings, methods = args
    out = {}
    t0 = time.perf_counter()
    for rep in reps:
        try:
            pv = run_replicate(dgp, rep, master_seed, settings, methods)
            out[rep] = [pv[m] for m in methods]
        except (FvtestError, ValueError, np.linalg.LinAlgError) as exc:
            out[rep] = f"{type(exc).__name__}: {exc}"
    return cell, out, time.perf_counter() - t0


@dataclass(frozen=True)
class RejectionRow:
    method: str
    example: int
    setting: int
    n: int
    alpha: float
    n_reps: int
    rejection_rate: float
    mc_stderr: float
    wall_time: float
    dgp_params: str = ""
    status: str = "ok"


@dataclass
class RejectionTable:
    rows: list
    pvalues: dict = field(default_factory=dict)  # (example, setting, n) -> (n_reps, n_methods) array
    methods: tuple = METHODS

    def rate(self, method: str, example: int, setting: int, n: int) -> float:
        for r in self.rows:
            if (r.method, r.example, r.setting, r.n) == (method, example, setting, n):
                return r.rejection_rate
        raise KeyError((method, example, setting, n))

    def row(self, method, example, setting, n) -> RejectionRow:
        for r in self.rows:
            if (r.method, r.example, r.setting, r.n) == (method, example, setting, n):
                return r
        raise KeyError((method, example, setting, n))

    def to_csv(self, path, include_timing: bool = False) -> None:
        """Write one row per (cell, method). Timing is excluded by default so output is reproducible."""
        cols = list(TABLE_COLUMNS) + (["wall_time"] if include_timing else [])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            for r in self.rows:
                rec = asdict(r)
                writer.writerow([_fmt(rec[c]) for c in cols])


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def monte_carlo(dgps: Sequence[DgpSpec], methods: Sequence[str] = METHODS, n_reps: int = 500, alpha: float = 0.05,
                settings: PipelineSettings | None = None, master_seed: int = 0, workers: int = 1,
                chunk_size: int = 25) -> RejectionTable:
    """Rejection rates at level ``alpha`` for every DGP cell and method.

    A replicate failure turns its whole cell into error rows; other cells
    still run.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    settings = settings or PipelineSettings()
    tasks = []
    for cell, dgp in enumerate(dgps):
        for start in range(0, n_reps, chunk_size):
            tasks.append((cell, dgp, range(start, min(n_reps, start + chunk_size)), master_seed, settings, methods))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]

    merged: dict = {}
    timing: dict = {}
    for cell, out, secs in results:
        merged.setdefault(cell, {}).update(out)
        timing[cell] = timing.get(cell, 0.0) + secs

    rows = []
    pvals = {}
    for cell, dgp in enumerate(dgps):
        out = merged[cell]
        errors = [v for v in out.values() if isinstance(v, str)]
        key = (dgp.example, dgp.setting, dgp.n)
        if errors:
            for m in methods:
                rows.append(RejectionRow(m, dgp.example, dgp.setting, dgp.n, alpha, n_reps, float("nan"),
                                         float("nan"), timing[cell], dgp.params_text(), f"error: {errors[0]}"))
            continue
        P = np.array([out[r] for r in range(n_reps)])
        pvals[key] = P
        for j, m in enumerate(methods):
            rate = float(np.mean(P[:, j] <= alpha))
            se = math.sqrt(rate * (1 - rate) / n_reps)
            rows.append(RejectionRow(m, dgp.example, dgp.setting, dgp.n, alpha, n_reps, rate, se, timing[cell],
                                     dgp.params_text()))
    return RejectionTable(rows=rows, pvalues=pvals, methods=methods)


def build_grid(examples: Sequence[int], settings_idx: Sequence[int], ns: Sequence[int], *,
               coefficients: Mapping[str, float] | None = None, noise: str = "variance",
               z_support: str = "printed") -> list:
    return [DgpSpec(e, s, n, dict(coefficients or {}), noise=noise, z_support=z_support)
            for e in examples for s in settings_idx for n in ns]


def run_manifest(config: Mapping, table: RejectionTable | None = None) -> dict:
    """Run metadata: the config echo plus library versions and per-cell timings."""
    from . import __version__

    out = {
        "config": dict(config),
        "versions": {"fvtest": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }
    if table is not None:
        seen = {}
        for r in table.rows:
            seen[f"ex{r.example}-s{r.setting}-n{r.n}"] = r.wall_time
        out["wall_time_seconds"] = seen
    return out


def write_manifest(path, manifest: Mapping) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
