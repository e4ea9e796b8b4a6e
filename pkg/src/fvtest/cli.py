"""Command-line front end: ``fvtest test`` and ``fvtest simulate``.

Settings resolve in order: built-in defaults, then a ``--config`` file of
``key=value`` lines (keys are flag names without the dashes), then flags
given on the command line.

Exit codes: 0 success, 2 data/configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .boot import MultiplierConfig, joint_statistics
from .combine import aggregate_test, cauchy_combine, per_class_pvalues
from .datamodel import ColumnSchema, load_csv
from .errors import DataError, FvtestError, InvalidSetting, NumericError
from .estimands import EstimandConfig, compute_scores
from .simlab import METHODS, PROFILES, PipelineSettings, build_grid, monte_carlo, run_manifest, write_manifest

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3

COMMON_DEFAULTS = {
    "D": 100,
    "K": 50,
    "gamma_min": 1e-5,
    "gamma_max": 1e-3,
    "eta": 1.0,
    "alpha": 0.05,
    "multiplier": "rademacher",
    "out_dir": ".",
    "workers": 1,
}
TEST_DEFAULTS = {**COMMON_DEFAULTS, "B": 800, "estimand": "cond_mean", "class": "aggregate", "propensity": "auto"}
SIM_DEFAULTS = {
    **COMMON_DEFAULTS,
    "profile": "desk",
    "example": "1,2,3",
    "setting": "1,2,3",
    "methods": ",".join(METHODS),
    "noise": "variance",
    "z_support": "printed",
    "coef": "",
}

INT_KEYS = {"D", "K", "B", "reps", "workers", "seed"}
FLOAT_KEYS = {"gamma_min", "gamma_max", "eta", "alpha"}


class UsageError(DataError):
    origin = "cli"


def _add_common(p):
    p.add_argument("--config", help="key=value settings file; flags override it")
    p.add_argument("--D", type=int, help="RKHS basis truncation (default 100)")
    p.add_argument("--K", type=int, help="number of gamma values in the RKHS grid (default 50)")
    p.add_argument("--gamma-min", type=float, dest="gamma_min")
    p.add_argument("--gamma-max", type=float, dest="gamma_max")
    p.add_argument("--eta", type=float)
    p.add_argument("--B", type=int, help="bootstrap replicates")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int, help="master seed (falls back to $FVTEST_SEED, then 0)")
    p.add_argument("--multiplier", choices=("rademacher", "standard_normal"))
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir", dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fvtest", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fvtest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test constancy of a function-valued parameter on a CSV file")
    _add_common(t)
    t.add_argument("--input", help="CSV file with a header row")
    t.add_argument("--schema", help="role=column pairs, e.g. outcome=y,conditioning=x,treatment=t")
    t.add_argument("--estimand", choices=("cond_mean", "cate", "cond_cov"))
    t.add_argument("--class", dest="class", choices=("indicator", "rkhs", "aggregate", "cauchy"))
    t.add_argument("--propensity", help="auto, spline, or known:<p> for a randomized design")

    s = sub.add_parser("simulate", help="Monte Carlo rejection rates for the built-in designs")
    _add_common(s)
    s.add_argument("--profile", choices=tuple(PROFILES))
    s.add_argument("--reps", type=int, help="replicates per cell (profile default if omitted)")
    s.add_argument("--example", help="comma-separated example ids (1,2,3)")
    s.add_argument("--setting", help="comma-separated setting ids (1,2,3)")
    s.add_argument("--n", help="comma-separated sample sizes (profile default if omitted)")
    s.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    s.add_argument("--coef", help="Example 2 coefficients, e.g. beta0=0,beta1=1,gamma0=1,gamma1=1")
    s.add_argument("--noise", choices=("variance", "sd"), help="read Example 2 noise 0.5 as variance or sd")
    s.add_argument("--z-support", dest="z_support", choices=("printed", "symmetric"))
    s.add_argument("--manifest", help="re-run the configuration recorded in a manifest.json")
    s.add_argument("--dry-run", dest="dry_run", action="store_true", help="print the task count and exit")
    return parser


def read_config_file(path) -> dict:
    out = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(cfg):
    out = dict(cfg)
    for k in INT_KEYS & out.keys():
        if out[k] is not None:
            out[k] = int(out[k])
    for k in FLOAT_KEYS & out.keys():
        if out[k] is not None:
            out[k] = float(out[k])
    return out


def resolve(args, defaults) -> dict:
    cfg = dict(defaults)
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("command", "config", "manifest", "dry_run") or value is None:
            continue
        cfg[key] = value
    if cfg.get("seed") is None:
        cfg["seed"] = int(os.environ.get("FVTEST_SEED", 0))
    try:
        return _coerce(cfg)
    except ValueError as exc:
        raise UsageError(f"bad setting value: {exc}") from None


def _int_list(text, what):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{what} must be a comma-separated list of integers, got {text!r}") from None


def _pipeline(cfg) -> PipelineSettings:
    return PipelineSettings(D=cfg["D"], K=cfg["K"], gamma_min=cfg["gamma_min"], gamma_max=cfg["gamma_max"],
                            eta=cfg["eta"], B=cfg["B"], multiplier=cfg["multiplier"])


def _estimand_config(cfg) -> EstimandConfig:
    prop = str(cfg.get("propensity", "auto"))
    if prop.startswith("known:"):
        try:
            value = float(prop.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad propensity {prop!r}") from None
        return EstimandConfig(cfg["estimand"], propensity="known_constant", known_propensity=value)
    if prop == "spline":
        return EstimandConfig(cfg["estimand"], propensity="spline_logistic")
    if prop != "auto":
        raise UsageError(f"propensity must be auto, spline or known:<p>; got {prop!r}")
    return EstimandConfig(cfg["estimand"])


def cmd_test(cfg) -> int:
    if not cfg.get("input") or not cfg.get("schema"):
        raise UsageError("test needs --input and --schema")
    schema = ColumnSchema.parse(cfg["schema"])
    est_cfg = _estimand_config(cfg)
    data = load_csv(cfg["input"], schema, cfg["estimand"])
    scores = compute_scores(data, est_cfg)

    settings = _pipeline(cfg)
    specs = settings.class_specs()
    K = settings.K
    stats, info = joint_statistics(scores, specs, MultiplierConfig(settings.multiplier, settings.B, cfg["seed"]),
                                   diagnostics=True)
    T = stats.T
    B = stats.B
    exceed = np.sum(T[1:] > T[0], axis=0)
    per_class = per_class_pvalues(T)
    grid = list(range(1, K + 1))
    classes = []
    for j, spec in enumerate(specs):
        classes.append({
            "label": spec.label,
            "statistic": float(T[0, j]),
            "p_alg1": float(exceed[j] / B),
            "p_plus_one": float(per_class[j]),
            "argmax": info[j],
        })
    p_aggregate = aggregate_test(stats.columns([0] + grid)).p_aggregate if B >= 2 else None
    p_combined = aggregate_test(stats.columns(grid)).p_aggregate if B >= 2 else None
    p_cauchy = cauchy_combine(per_class[[0] + grid])
    chosen = cfg["class"]
    if chosen == "indicator":
        p_value = float(per_class[0])
    elif chosen == "rkhs":
        p_value = p_combined if K > 1 else float(per_class[1])
    elif chosen == "aggregate":
        p_value = p_aggregate
    else:
        p_value = p_cauchy
    if p_value is None:
        raise UsageError("aggregate p-values need B >= 2")

    report = {
        "estimand": data.estimand_tag,
        "n": data.n,
        "theta_hat": scores.theta_hat,
        "class": chosen,
        "p_value": p_value,
        "reject": bool(p_value <= cfg["alpha"]),
        "p_aggregate": p_aggregate,
        "p_combined_rkhs": p_combined,
        "p_cauchy": p_cauchy,
        "classes": classes,
        "seed": cfg["seed"],
        "config": {k: cfg[k] for k in sorted(cfg) if k != "workers"},
        "version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{chosen} p-value {p_value:.4g} ({'reject' if report['reject'] else 'retain'} at alpha={cfg['alpha']}); "
          f"report written to {path}")
    return EXIT_OK


def _parse_coefs(text):
    out = {}
    for item in filter(None, (s.strip() for s in str(text).split(","))):
        if "=" not in item:
            raise UsageError(f"coefficient {item!r} is not name=value")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"coefficient {item!r} has a non-numeric value") from None
    return out


def simulation_config(cfg) -> dict:
    """Fully resolved, JSON-serializable simulation configuration."""
    profile = PROFILES[cfg["profile"]]
    examples = _int_list(cfg["example"], "--example")
    settings_idx = _int_list(cfg["setting"], "--setting")
    ns = _int_list(cfg["n"], "--n") if cfg.get("n") else list(profile["ns"])
    for e in examples:
        if e not in (1, 2, 3):
            raise InvalidSetting(f"invalid example {e}; choose from 1, 2, 3")
    for s in settings_idx:
        if s not in (1, 2, 3):
            raise InvalidSetting(f"invalid setting {s}; choose from 1, 2, 3")
    for n in ns:
        if n < 25:
            raise InvalidSetting(f"sample size {n} below the minimum of 25")
    methods = [m.strip() for m in str(cfg["methods"]).split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {','.join(METHODS)}")
    return {
        "profile": cfg["profile"],
        "example": examples,
        "setting": settings_idx,
        "n": ns,
        "reps": int(cfg["reps"]) if cfg.get("reps") is not None else profile["n_reps"],
        "B": int(cfg["B"]) if cfg.get("B") is not None else profile["B"],
        "D": cfg["D"],
        "K": cfg["K"],
        "gamma_min": cfg["gamma_min"],
        "gamma_max": cfg["gamma_max"],
        "eta": cfg["eta"],
        "alpha": cfg["alpha"],
        "seed": cfg["seed"],
        "multiplier": cfg["multiplier"],
        "methods": methods,
        "coef": _parse_coefs(cfg.get("coef", "")),
        "noise": cfg["noise"],
        "z_support": cfg["z_support"],
    }


def cmd_simulate(cfg, dry_run: bool = False) -> int:
    sim = simulation_config(cfg)
    grid = build_grid(sim["example"], sim["setting"], sim["n"], coefficients=sim["coef"], noise=sim["noise"],
                      z_support=sim["z_support"])
    n_tasks = len(grid) * sim["reps"]
    if dry_run:
        print(f"profile={sim['profile']} cells={len(grid)} replicates={n_tasks} "
              f"bootstrap_draws={n_tasks * sim['B']}")
        return EXIT_OK
    settings = PipelineSettings(D=sim["D"], K=sim["K"], gamma_min=sim["gamma_min"], gamma_max=sim["gamma_max"],
                                eta=sim["eta"], B=sim["B"], multiplier=sim["multiplier"])
    table = monte_carlo(grid, sim["methods"], sim["reps"], sim["alpha"], settings, sim["seed"],
                        workers=max(1, int(cfg.get("workers", 1))))
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "rejection_table.csv")
    manifest = run_manifest(sim, table)
    manifest["workers"] = int(cfg.get("workers", 1))
    write_manifest(out_dir / "manifest.json", manifest)
    n_err = sum(r.status != "ok" for r in table.rows)
    print(f"{len(table.rows)} rows written to {out_dir / 'rejection_table.csv'}"
          + (f" ({n_err} error rows)" if n_err else ""))
    return EXIT_OK


def _manifest_overrides(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        sim = data["config"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from None
    cfg = dict(sim)
    for key in ("example", "setting", "n", "methods"):
        cfg[key] = ",".join(str(x) for x in sim[key])
    cfg["coef"] = ",".join(f"{k}={v!r}" for k, v in sim["coef"].items())
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "test":
            return cmd_test(resolve(args, TEST_DEFAULTS))
        defaults = dict(SIM_DEFAULTS)
        if args.manifest:
            defaults.update(_manifest_overrides(args.manifest))
        return cmd_simulate(resolve(args, defaults), dry_run=args.dry_run)
    except DataError as exc:
        print(f"fvtest: [{exc.origin}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"fvtest: [{exc.origin}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FvtestError as exc:
        print(f"fvtest: [{exc.origin}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"fvtest: [cli] {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
