"""Columnar dataset representation, CSV ingestion and validation.

A :class:`Dataset` stores each role as a read-only numpy array. Row-wise
access through :class:`Observation` is available for convenience but the rest
of the package works on the arrays directly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import EmptyData, MissingColumn, ParseError, RoleMismatch, ValidationError

ESTIMANDS = ("cond_mean", "cate", "cond_cov")
ROLES = ("outcome", "conditioning", "treatment", "covariate", "secondary_outcome", "ignore")

# roles a dataset must carry for each estimand
REQUIRED_ROLES = {
    "cond_mean": ("outcome", "conditioning"),
    "cate": ("outcome", "conditioning", "treatment"),
    "cond_cov": ("outcome", "conditioning", "secondary_outcome"),
}


@dataclass(frozen=True)
class Observation:
    outcome: float
    conditioning: tuple[float, ...]
    treatment: int | None = None
    covariates: tuple[float, ...] | None = None
    secondary_outcome: float | None = None


@dataclass(frozen=True)
class ColumnSchema:
    """Mapping from CSV column name to role."""

    roles: Mapping[str, str]

    def __post_init__(self):
        bad = {r for r in self.roles.values() if r not in ROLES}
        if bad:
            raise RoleMismatch(f"unknown role(s): {sorted(bad)}")
        outcomes = self.columns_for("outcome")
        if not outcomes:
            raise MissingColumn("schema names no outcome column")
        if len(outcomes) > 1:
            raise RoleMismatch(f"schema needs exactly one outcome column, got {len(outcomes)}")
        if not self.columns_for("conditioning"):
            raise MissingColumn("schema names no conditioning column")
        for single in ("treatment", "secondary_outcome"):
            if len(self.columns_for(single)) > 1:
                raise RoleMismatch(f"at most one {single} column allowed")

    @classmethod
    def parse(cls, text: str) -> ColumnSchema:
        """Parse ``"outcome=y,conditioning=x,covariate=w1+w2"``.

        A role may be repeated, or list several columns joined by ``+``.
        """
        roles: dict[str, str] = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            if "=" not in item:
                raise RoleMismatch(f"schema entry {item!r} is not role=column")
            role, names = (s.strip() for s in item.split("=", 1))
            for name in names.split("+"):
                roles[name.strip()] = role
        return cls(roles)

    def columns_for(self, role: str) -> list[str]:
        return [name for name, r in self.roles.items() if r == role]

    def check_estimand(self, estimand_tag: str) -> None:
        _check_tag(estimand_tag)
        present = set(self.roles.values())
        missing = [r for r in REQUIRED_ROLES[estimand_tag] if r not in present]
        if missing:
            raise RoleMismatch(f"estimand {estimand_tag} needs role(s) {missing} absent from schema")


def _check_tag(tag):
    if tag not in ESTIMANDS:
        raise RoleMismatch(f"unknown estimand {tag!r}; expected one of {ESTIMANDS}")


def _frozen(a, ndim):
    if a is None:
        return None
    arr = np.array(a, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr[:, None]
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Immutable columnar dataset.

    ``conditioning`` and ``covariates`` are 2-D ``(n, p)`` arrays; the others
    are 1-D. ``known_propensity`` marks a randomized design with a fixed
    treatment probability (used by the CATE nuisance step).
    """

    outcome: np.ndarray
    conditioning: np.ndarray
    estimand_tag: str
    treatment: np.ndarray | None = None
    covariates: np.ndarray | None = None
    secondary_outcome: np.ndarray | None = None
    known_propensity: float | None = None
    column_names: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        _check_tag(self.estimand_tag)
        for name, ndim in (("outcome", 1), ("conditioning", 2), ("treatment", 1),
                           ("covariates", 2), ("secondary_outcome", 1)):
            object.__setattr__(self, name, _frozen(getattr(self, name), ndim))

    @property
    def n(self) -> int:
        return int(self.outcome.shape[0])

    @property
    def observations(self) -> list[Observation]:
        return list(self)

    def __len__(self):
        return self.n

    def __iter__(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(
                outcome=float(self.outcome[i]),
                conditioning=tuple(float(v) for v in self.conditioning[i]),
                treatment=None if self.treatment is None else int(self.treatment[i]),
                covariates=None if self.covariates is None else tuple(float(v) for v in self.covariates[i]),
                secondary_outcome=None if self.secondary_outcome is None else float(self.secondary_outcome[i]),
            )

    @classmethod
    def from_observations(cls, observations: Sequence[Observation], estimand_tag: str, **kwargs) -> Dataset:
        obs = list(observations)
        if not obs:
            raise EmptyData("no observations")

        def column(attr):
            vals = [getattr(o, attr) for o in obs]
            n_none = sum(v is None for v in vals)
            if n_none == len(vals):
                return None
            if n_none:
                raise ValidationError([f"field {attr} present on some observations but not all"])
            return np.array(vals, dtype=float)

        return cls(
            outcome=np.array([o.outcome for o in obs], dtype=float),
            conditioning=np.array([o.conditioning for o in obs], dtype=float),
            estimand_tag=estimand_tag,
            treatment=column("treatment"),
            covariates=column("covariates"),
            secondary_outcome=column("secondary_outcome"),
            **kwargs,
        )

    def adjustment_set(self) -> np.ndarray:
        """Covariates used by the nuisance regressions (conditioning if none given)."""
        return self.conditioning if self.covariates is None else self.covariates


def validate(dataset: Dataset) -> Dataset:
    """Return ``dataset`` unchanged if every invariant holds.

    Missing estimand roles raise :class:`RoleMismatch`; value problems are
    collected into a single :class:`ValidationError` listing each offending row.
    """
    tag = dataset.estimand_tag
    _check_tag(tag)
    if tag == "cate" and dataset.treatment is None:
        raise RoleMismatch("estimand cate requires a treatment column")
    if tag == "cond_cov" and dataset.secondary_outcome is None:
        raise RoleMismatch("estimand cond_cov requires a secondary_outcome column")
    n = dataset.n
    if n < 2:
        raise EmptyData(f"need at least 2 observations, got {n}")

    problems = []
    if dataset.conditioning.shape[0] != n or dataset.conditioning.shape[1] < 1:
        problems.append(f"conditioning has shape {dataset.conditioning.shape}, expected ({n}, >=1)")
    for name in ("treatment", "secondary_outcome", "covariates"):
        arr = getattr(dataset, name)
        if arr is not None and arr.shape[0] != n:
            problems.append(f"{name} has {arr.shape[0]} rows, expected {n}")
    if problems:
        raise ValidationError(problems)

    def nonfinite(name, arr):
        bad = ~np.isfinite(arr)
        if arr.ndim == 2:
            bad = bad.any(axis=1)
        for i in np.flatnonzero(bad):
            problems.append(f"row {i}: {name} is not finite")

    nonfinite("outcome", dataset.outcome)
    nonfinite("conditioning", dataset.conditioning)
    if dataset.covariates is not None:
        nonfinite("covariates", dataset.covariates)
    if dataset.secondary_outcome is not None:
        nonfinite("secondary_outcome", dataset.secondary_outcome)
    if dataset.treatment is not None:
        for i in np.flatnonzero((dataset.treatment != 0) & (dataset.treatment != 1)):
            problems.append(f"row {i}: treatment {dataset.treatment[i]!r} is not 0 or 1")
    if dataset.known_propensity is not None and not 0 < dataset.known_propensity < 1:
        problems.append(f"known_propensity {dataset.known_propensity} outside (0, 1)")
    if problems:
        raise ValidationError(problems)
    return dataset


def _parse_cell(text, row, col):
    s = text.strip()
    if not s:
        raise ParseError(f"empty cell at data row {row}, column {col!r}")
    try:
        value = float(s)
    except ValueError:
        raise ParseError(f"non-numeric cell {text!r} at data row {row}, column {col!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite cell {text!r} at data row {row}, column {col!r}")
    return value


def load_csv(path, schema: ColumnSchema, estimand_tag: str, known_propensity: float | None = None) -> Dataset:
    """Read a comma-delimited UTF-8 CSV with a header row into a :class:`Dataset`.

    Data rows are numbered from 1 in error messages.
    """
    schema.check_estimand(estimand_tag)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyData(f"{path}: file is empty") from None
        index = {name: j for j, name in enumerate(header)}
        wanted = [name for name, role in schema.roles.items() if role != "ignore"]
        missing = [name for name in wanted if name not in index]
        if missing:
            raise MissingColumn(f"{path}: column(s) {missing} not in header {header}")
        columns: dict[str, list[float]] = {name: [] for name in wanted}
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"data row {row_no} has {len(row)} fields, header has {len(header)}")
            for name in wanted:
                columns[name].append(_parse_cell(row[index[name]], row_no, name))

    n = len(columns[wanted[0]])
    if n < 2:
        raise EmptyData(f"{path}: need at least 2 data rows, got {n}")

    def stack(role):
        names = schema.columns_for(role)
        if not names:
            return None
        return np.column_stack([columns[c] for c in names])

    treatment = None
    if schema.columns_for("treatment"):
        tname = schema.columns_for("treatment")[0]
        treatment = np.array(columns[tname])
        for i, t in enumerate(treatment):
            if t not in (0.0, 1.0):
                raise ParseError(f"treatment column {tname!r} has non-binary value {t!r} at data row {i + 1}")
    secondary = None
    if schema.columns_for("secondary_outcome"):
        secondary = np.array(columns[schema.columns_for("secondary_outcome")[0]])

    names = {role: tuple(schema.columns_for(role)) for role in ROLES if role != "ignore" and schema.columns_for(role)}
    ds = Dataset(
        outcome=np.array(columns[schema.columns_for("outcome")[0]]),
        conditioning=stack("conditioning"),
        estimand_tag=estimand_tag,
        treatment=treatment,
        covariates=stack("covariate"),
        secondary_outcome=secondary,
        known_propensity=known_propensity,
        column_names=names,
    )
    return validate(ds)


def default_schema(dataset: Dataset) -> ColumnSchema:
    """Schema matching the column names :func:`to_csv` writes for ``dataset``."""
    roles = {}
    for role, names in _column_layout(dataset):
        for name in names:
            roles[name] = role
    return ColumnSchema(roles)


def _column_layout(dataset):
    given = dataset.column_names

    def names(role, default, k):
        if role in given and len(given[role]) == k:
            return list(given[role])
        return [default] if k == 1 and default == "y" else [f"{default}{j + 1}" for j in range(k)]

    layout = [("outcome", names("outcome", "y", 1)),
              ("conditioning", names("conditioning", "v", dataset.conditioning.shape[1]))]
    if dataset.treatment is not None:
        layout.append(("treatment", list(given.get("treatment", ("t",)))))
    if dataset.covariates is not None:
        layout.append(("covariate", names("covariate", "x", dataset.covariates.shape[1])))
    if dataset.secondary_outcome is not None:
        layout.append(("secondary_outcome", list(given.get("secondary_outcome", ("u2",)))))
    return layout


def to_csv(dataset: Dataset, path) -> ColumnSchema:
    """Write ``dataset`` as CSV (shortest round-trip float repr) and return its schema."""
    layout = _column_layout(dataset)
    header = [name for _, names in layout for name in names]
    blocks = []
    for role, _ in layout:
        arr = {
            "outcome": dataset.outcome,
            "conditioning": dataset.conditioning,
            "treatment": dataset.treatment,
            "covariate": dataset.covariates,
            "secondary_outcome": dataset.secondary_outcome,
        }[role]
        blocks.append(arr.reshape(dataset.n, -1))
    table = np.hstack(blocks)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in table:
            writer.writerow([repr(float(v)) for v in row])
    return default_schema(dataset)
