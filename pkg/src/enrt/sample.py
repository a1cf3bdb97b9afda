"""ENRT data model: recruited units, observed ego-networks, CSV ingestion."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class Role(str, Enum):
    EGO = "ego"
    ALTER = "alter"


@dataclass(frozen=True)
class Unit:
    unit_id: str
    role: Role
    ego_id: str
    treatment: int | None
    outcome: float
    covariates: tuple[float, ...] = ()


@dataclass(frozen=True)
class Violation:
    """One failed invariant. ``row`` is the 1-based file line when known."""

    row: int | None
    field: str
    message: str

    def to_json(self) -> str:
        return json.dumps({"row": self.row, "field": self.field, "message": self.message})


class SampleError(ValueError):
    """Raised when a units file or sample cannot be used."""

    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        lines = [
            f"row {v.row}: {v.field}: {v.message}" if v.row is not None else f"{v.field}: {v.message}"
            for v in self.violations
        ]
        super().__init__("; ".join(lines))


@dataclass(frozen=True, eq=False)
class EgocentricSample:
    """Recruited units of an egocentric-network randomized trial.

    Units are kept in file order; egos and alters each get dense positions in
    the order they appear. ``ego_of[i]`` is the unit index of the recruiting ego
    (an ego's own index for egos, -1 when the reference cannot be resolved).
    Treatments are NaN where absent.
    """

    unit_ids: tuple[str, ...]
    is_ego: np.ndarray
    ego_of: np.ndarray
    z: np.ndarray
    y: np.ndarray
    X: np.ndarray
    p_z: float
    covariate_names: tuple[str, ...] = ()
    rows: tuple[int | None, ...] | None = field(default=None, repr=False)

    @classmethod
    def from_units(
        cls,
        units: Iterable[Unit],
        p_z: float,
        covariate_names: Sequence[str] | None = None,
        rows: Sequence[int | None] | None = None,
    ) -> "EgocentricSample":
        units = list(units)
        index = {}
        for i, u in enumerate(units):
            index.setdefault(u.unit_id, i)
        dims = {len(u.covariates) for u in units}
        p = max(dims) if dims else 0
        X = np.full((len(units), p), np.nan)
        for i, u in enumerate(units):
            X[i, : len(u.covariates)] = u.covariates
        if covariate_names is None:
            covariate_names = [f"x_{k + 1}" for k in range(p)]
        s = cls(
            unit_ids=tuple(u.unit_id for u in units),
            is_ego=np.array([u.role == Role.EGO for u in units], dtype=bool),
            ego_of=np.array([index.get(u.ego_id, -1) for u in units], dtype=np.int64),
            z=np.array([np.nan if u.treatment is None else float(u.treatment) for u in units]),
            y=np.array([u.outcome for u in units], dtype=float),
            X=X,
            p_z=float(p_z),
            covariate_names=tuple(covariate_names),
            rows=tuple(rows) if rows is not None else None,
        )
        # ragged covariate rows are NaN-padded in X; keep the raw widths for validation
        object.__setattr__(s, "_covariate_dims", tuple(len(u.covariates) for u in units))
        return s

    @classmethod
    def from_arrays(
        cls,
        alter_ego: Sequence[int],
        n_e: int,
        p_z: float,
        z_ego: Sequence[float] | None = None,
        y_ego: Sequence[float] | None = None,
        y_alter: Sequence[float] | None = None,
        X_ego: np.ndarray | None = None,
        X_alter: np.ndarray | None = None,
        covariate_names: Sequence[str] | None = None,
    ) -> "EgocentricSample":
        """Build a sample with egos first (ids ``e0..``) then alters (``a0..``).

        ``alter_ego[k]`` is the ego position (0..n_e-1) recruiting alter k.
        """
        alter_ego = np.asarray(alter_ego, dtype=np.int64)
        n_a = len(alter_ego)
        n = n_e + n_a
        z = np.full(n, np.nan)
        if z_ego is not None:
            z[:n_e] = np.asarray(z_ego, dtype=float)
        y = np.zeros(n)
        if y_ego is not None:
            y[:n_e] = y_ego
        if y_alter is not None:
            y[n_e:] = y_alter
        if X_ego is None and X_alter is None:
            X = np.zeros((n, 0))
        else:
            X = np.vstack([np.asarray(X_ego, dtype=float), np.asarray(X_alter, dtype=float)])
        if covariate_names is None:
            covariate_names = [f"x_{k + 1}" for k in range(X.shape[1])]
        return cls(
            unit_ids=tuple([f"e{i}" for i in range(n_e)] + [f"a{k}" for k in range(n_a)]),
            is_ego=np.r_[np.ones(n_e, bool), np.zeros(n_a, bool)],
            ego_of=np.r_[np.arange(n_e), alter_ego],
            z=z,
            y=y,
            X=X,
            p_z=float(p_z),
            covariate_names=tuple(covariate_names),
        )

    def with_data(
        self,
        z_ego: np.ndarray | None = None,
        y: np.ndarray | None = None,
    ) -> "EgocentricSample":
        """Copy with new ego treatments and/or outcomes (per unit, file order)."""
        z = self.z
        if z_ego is not None:
            z = np.full(len(self.unit_ids), np.nan)
            z[self.ego_index] = z_ego
        new = EgocentricSample(
            unit_ids=self.unit_ids,
            is_ego=self.is_ego,
            ego_of=self.ego_of,
            z=z,
            y=self.y if y is None else np.asarray(y, dtype=float),
            X=self.X,
            p_z=self.p_z,
            covariate_names=self.covariate_names,
            rows=self.rows,
        )
        # structural caches are shared; they do not depend on z or y
        for name in ("ego_index", "alter_index", "alter_ego", "ego_position", "_covariate_dims"):
            if name in self.__dict__:
                new.__dict__[name] = self.__dict__[name]
        return new

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @cached_property
    def ego_index(self) -> np.ndarray:
        return np.flatnonzero(self.is_ego)

    @cached_property
    def alter_index(self) -> np.ndarray:
        return np.flatnonzero(~self.is_ego)

    @property
    def n_e(self) -> int:
        return len(self.ego_index)

    @property
    def n_a(self) -> int:
        return len(self.alter_index)

    @cached_property
    def ego_position(self) -> np.ndarray:
        """Unit index -> ego position (-1 for non-egos)."""
        pos = np.full(self.n, -1, dtype=np.int64)
        pos[self.ego_index] = np.arange(self.n_e)
        return pos

    @cached_property
    def alter_ego(self) -> np.ndarray:
        """Ego position of each alter's recruiting ego (-1 if unresolved)."""
        of = self.ego_of[self.alter_index]
        out = np.full(len(of), -1, dtype=np.int64)
        ok = of >= 0
        out[ok] = self.ego_position[of[ok]]
        return out

    @property
    def z_ego(self) -> np.ndarray:
        return self.z[self.ego_index]

    @property
    def y_ego(self) -> np.ndarray:
        return self.y[self.ego_index]

    @property
    def y_alter(self) -> np.ndarray:
        return self.y[self.alter_index]

    @property
    def X_ego(self) -> np.ndarray:
        return self.X[self.ego_index]

    @property
    def X_alter(self) -> np.ndarray:
        return self.X[self.alter_index]

    @property
    def ego_network_index(self) -> dict[str, list[str]]:
        out = {self.unit_ids[i]: [] for i in self.ego_index}
        for k, i in enumerate(self.alter_index):
            e = self.alter_ego[k]
            if e >= 0:
                out[self.unit_ids[self.ego_index[e]]].append(self.unit_ids[i])
        return out

    @property
    def units(self) -> tuple[Unit, ...]:
        dims = getattr(self, "_covariate_dims", None)
        out = []
        for i, uid in enumerate(self.unit_ids):
            of = self.ego_of[i]
            ego_id = self.unit_ids[of] if of >= 0 else ""
            t = None if math.isnan(self.z[i]) else int(self.z[i])
            p = dims[i] if dims is not None else self.X.shape[1]
            out.append(
                Unit(
                    unit_id=uid,
                    role=Role.EGO if self.is_ego[i] else Role.ALTER,
                    ego_id=ego_id,
                    treatment=t,
                    outcome=float(self.y[i]),
                    covariates=tuple(float(v) for v in self.X[i, :p]),
                )
            )
        return tuple(out)

    def alters_per_ego(self) -> np.ndarray:
        return np.bincount(self.alter_ego[self.alter_ego >= 0], minlength=self.n_e)


@dataclass(frozen=True)
class ObservedExposures:
    """Observed exposure per unit, in file order."""

    f: np.ndarray

    def alters(self, s: EgocentricSample) -> np.ndarray:
        return self.f[s.alter_index]


def validate_sample(s: EgocentricSample) -> list[Violation]:
    """Return every invariant violation; empty iff the sample is well formed."""
    out: list[Violation] = []

    def row(i: int) -> int | None:
        return s.rows[i] if s.rows is not None else None

    if not (0.0 < s.p_z < 1.0):
        out.append(Violation(None, "p_z", f"treatment probability {s.p_z} not in (0, 1)"))
    if s.n_e < 1:
        out.append(Violation(None, "role", "sample has no egos"))
    seen: dict[str, int] = {}
    for i, uid in enumerate(s.unit_ids):
        if uid in seen:
            out.append(Violation(row(i), "unit_id", f"duplicate unit_id {uid!r}"))
        else:
            seen[uid] = i
    for i in range(s.n):
        uid = s.unit_ids[i]
        has_z = not math.isnan(s.z[i])
        if s.is_ego[i]:
            if s.ego_of[i] != i:
                out.append(Violation(row(i), "ego_id", f"ego {uid!r} must reference itself"))
            if not has_z:
                out.append(Violation(row(i), "z", f"ego {uid!r} has no treatment"))
            elif s.z[i] not in (0.0, 1.0):
                out.append(Violation(row(i), "z", f"ego {uid!r} treatment {s.z[i]} is not binary"))
        else:
            of = s.ego_of[i]
            if of < 0 or not s.is_ego[of]:
                out.append(Violation(row(i), "ego_id", f"alter {uid!r} references a missing ego"))
            if has_z:
                out.append(Violation(row(i), "z", f"alter {uid!r} carries treatment"))
        if not math.isfinite(s.y[i]):
            out.append(Violation(row(i), "y", f"unit {uid!r} outcome is not finite"))
    dims = getattr(s, "_covariate_dims", None)
    if dims is not None and len(set(dims)) > 1:
        out.append(
            Violation(None, "covariates", f"covariate dimensions differ across units: {sorted(set(dims))}")
        )
    return out


def observed_exposures(s: EgocentricSample) -> ObservedExposures:
    """Exposure through the observed star network: an alter inherits its ego's treatment."""
    z_e = s.z_ego
    if np.isnan(z_e).any():
        missing = [s.unit_ids[s.ego_index[k]] for k in np.flatnonzero(np.isnan(z_e))]
        raise SampleError([Violation(None, "z", f"egos without treatment: {missing}")])
    f = np.zeros(s.n)
    if s.n_a:
        if (s.alter_ego < 0).any():
            raise SampleError([Violation(None, "ego_id", "alter references a missing ego")])
        f[s.alter_index] = z_e[s.alter_ego]
    return ObservedExposures(f)


def _parse_float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {text!r}")
    return v


def load_sample(
    path: str | Path,
    p_z: float,
    columns: Mapping[str, str] | None = None,
    covariates: Sequence[str] | None = None,
) -> EgocentricSample:
    """Read a units CSV (``unit_id,role,ego_id,z,y,x_...``) into a validated sample.

    ``columns`` renames the five core columns (keys: unit_id, role, ego_id, z, y).
    Covariates default to every column whose name starts with ``x_``, in header order.
    Raises SampleError listing every problem with its file line number.
    """
    cols = {"unit_id": "unit_id", "role": "role", "ego_id": "ego_id", "z": "z", "y": "y"}
    if columns:
        unknown = set(columns) - set(cols)
        if unknown:
            raise ValueError(f"unknown column keys: {sorted(unknown)}")
        cols.update(columns)
    if not (0.0 < p_z < 1.0):
        raise SampleError([Violation(None, "p_z", f"treatment probability {p_z} not in (0, 1)")])

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in cols.values() if c not in header]
        if missing:
            raise SampleError([Violation(1, "header", f"missing columns {missing}")])
        if covariates is None:
            covariates = [c for c in header if c.startswith("x_")]
        else:
            absent = [c for c in covariates if c not in header]
            if absent:
                raise SampleError([Violation(1, "header", f"missing covariate columns {absent}")])
        problems: list[Violation] = []
        raw: list[tuple[int, dict[str, str]]] = [(line, r) for line, r in enumerate(reader, start=2)]

    units: list[Unit] = []
    rows: list[int] = []
    seen: set[str] = set()
    for line, r in raw:
        if None in r or any(v is None for v in r.values()):
            problems.append(Violation(line, "row", "malformed row (wrong number of fields)"))
            continue
        uid = r[cols["unit_id"]].strip()
        if not uid:
            problems.append(Violation(line, "unit_id", "empty unit_id"))
            continue
        if uid in seen:
            problems.append(Violation(line, "unit_id", f"duplicate unit_id {uid!r}"))
            continue
        seen.add(uid)
        role_text = r[cols["role"]].strip().lower()
        if role_text not in ("ego", "alter"):
            problems.append(Violation(line, "role", f"role must be 'ego' or 'alter', got {role_text!r}"))
            continue
        role = Role(role_text)
        ego_id = r[cols["ego_id"]].strip()
        z_text = r[cols["z"]].strip()
        treatment = None
        if role == Role.EGO:
            if ego_id and ego_id != uid:
                problems.append(Violation(line, "ego_id", f"ego {uid!r} must reference itself"))
            ego_id = uid
            if not z_text:
                problems.append(Violation(line, "z", f"ego {uid!r} has no treatment"))
                continue
            if z_text not in ("0", "1", "0.0", "1.0"):
                problems.append(Violation(line, "z", f"non-binary treatment {z_text!r}"))
                continue
            treatment = int(float(z_text))
        else:
            if z_text:
                problems.append(Violation(line, "z", f"alter {uid!r} carries treatment"))
                continue
            if not ego_id:
                problems.append(Violation(line, "ego_id", f"alter {uid!r} has no ego_id"))
                continue
        try:
            y = _parse_float(r[cols["y"]])
        except ValueError:
            problems.append(Violation(line, "y", f"outcome {r[cols['y']]!r} is not a number"))
            continue
        try:
            x = tuple(_parse_float(r[c]) for c in covariates)
        except (ValueError, TypeError):
            problems.append(Violation(line, "covariates", "covariate value is not a number"))
            continue
        units.append(Unit(uid, role, ego_id, treatment, y, x))
        rows.append(line)

    egos = {u.unit_id for u in units if u.role == Role.EGO}
    for u, line in zip(units, rows):
        if u.role == Role.ALTER and u.ego_id not in egos:
            problems.append(Violation(line, "ego_id", f"alter {u.unit_id!r} references unknown ego {u.ego_id!r}"))
    if not egos and not problems:
        problems.append(Violation(None, "role", "file contains no egos"))
    if problems:
        raise SampleError(sorted(problems, key=lambda v: (v.row or 0)))

    s = EgocentricSample.from_units(units, p_z, covariate_names=list(covariates), rows=rows)
    violations = validate_sample(s)
    if violations:
        raise SampleError(violations)
    return s


def write_sample(s: EgocentricSample, path: str | Path) -> None:
    """Write a sample in the canonical units CSV layout."""
    names = list(s.covariate_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["unit_id", "role", "ego_id", "z", "y", *names])
        for u in s.units:
            z = "" if u.treatment is None else str(u.treatment)
            w.writerow([u.unit_id, u.role.value, u.ego_id, z, repr(u.outcome), *[repr(v) for v in u.covariates]])
