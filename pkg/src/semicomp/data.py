"""Observed-data containers, CSV ingestion and validation.

A subject contributes ``(A, T~, R~, delta_T, delta_R, X)``. Subjects without an
observed intermediate event are stored with ``r_obs == t_obs`` and
``delta_r == 0``. When the intermediate and terminal events are recorded at the
same instant the intermediate event is treated as happening just before the
terminal one; the shifted intermediate time is exposed as
:attr:`Dataset.r_eff`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import SchemaError, ValidationError

REQUIRED_COLUMNS = ("id", "arm", "t_obs", "r_obs", "delta_t", "delta_r")
DEFAULT_TIE_SHIFT = 1e-9

#: (delta_r, delta_t) cells in the order used by reports.
PATH_TYPES = {
    (1, 1): "dead with relapse",
    (1, 0): "censored with relapse",
    (0, 1): "dead without relapse",
    (0, 0): "censored without relapse or death",
}


class StepFunction:
    """Right-continuous piecewise-constant function.

    ``values[k]`` holds on ``[jump_times[k], jump_times[k+1])``; before the
    first jump the function equals ``baseline``.
    """

    __slots__ = ("jump_times", "values", "baseline")

    def __init__(self, jump_times, values, baseline=0.0):
        jump_times = np.asarray(jump_times, dtype=float)
        values = np.asarray(values, dtype=float)
        if jump_times.shape != values.shape or jump_times.ndim != 1:
            raise ValueError("jump_times and values must be 1-d arrays of equal length")
        if jump_times.size > 1 and np.any(np.diff(jump_times) <= 0):
            raise ValueError("jump_times must be strictly increasing")
        self.jump_times = jump_times
        self.values = values
        self.baseline = float(baseline)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side="right") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)] if self.values.size else self.baseline,
                       self.baseline)
        return out if out.ndim else float(out)

    def left_limit(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side="left") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)] if self.values.size else self.baseline,
                       self.baseline)
        return out if out.ndim else float(out)

    @property
    def jumps(self):
        return np.diff(np.concatenate([[self.baseline], self.values]))

    def is_nondecreasing(self, atol=0.0):
        return bool(np.all(self.jumps >= -atol))

    def __sub__(self, other):
        grid = np.union1d(self.jump_times, other.jump_times)
        return StepFunction(grid, self(grid) - other(grid), self.baseline - other.baseline)

    def __add__(self, other):
        grid = np.union1d(self.jump_times, other.jump_times)
        return StepFunction(grid, self(grid) + other(grid), self.baseline + other.baseline)

    def __repr__(self):
        return f"StepFunction(n_jumps={self.jump_times.size}, baseline={self.baseline})"


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    arm: int
    t_obs: float
    r_obs: float
    delta_t: int
    delta_r: int
    covariates: tuple = ()


def _as_readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store of :class:`SubjectRecord` rows.

    ``propensity`` optionally carries known or supplied ``P(A=1 | X)`` per
    subject. ``meta`` holds provenance (e.g. the simulation config).
    """

    ids: tuple
    arm: np.ndarray
    t_obs: np.ndarray
    r_obs: np.ndarray
    delta_t: np.ndarray
    delta_r: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = ()
    tau: float | None = None
    tie_shift: float = DEFAULT_TIE_SHIFT
    propensity: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.ids)
        set_ = object.__setattr__
        set_(self, "ids", tuple(str(i) for i in self.ids))
        set_(self, "arm", _as_readonly(self.arm, int))
        set_(self, "t_obs", _as_readonly(self.t_obs, float))
        set_(self, "r_obs", _as_readonly(self.r_obs, float))
        set_(self, "delta_t", _as_readonly(self.delta_t, int))
        set_(self, "delta_r", _as_readonly(self.delta_r, int))
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1 and cov.size == 0:
            cov = np.zeros((n, 0))
        if cov.ndim == 1:
            cov = cov[:, None]
        set_(self, "covariates", _as_readonly(cov, float))
        set_(self, "covariate_names", tuple(self.covariate_names) or
             tuple(f"x{k + 1}" for k in range(cov.shape[1])))
        if self.propensity is not None:
            set_(self, "propensity", _as_readonly(self.propensity, float))
        _check_columns(self)
        tmax = float(self.t_obs.max())
        if self.tau is None:
            set_(self, "tau", tmax)
        elif self.tau < tmax:
            raise ValidationError(f"tau={self.tau} is smaller than the largest t_obs={tmax}")
        set_(self, "tau", float(self.tau))

    # -- construction -----------------------------------------------------

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord], covariate_names=(), **kwargs):
        records = list(records)
        k = len(records[0].covariates) if records else 0
        cov = np.array([r.covariates for r in records], dtype=float).reshape(len(records), k)
        return cls(
            ids=[r.id for r in records],
            arm=[r.arm for r in records],
            t_obs=[r.t_obs for r in records],
            r_obs=[r.r_obs for r in records],
            delta_t=[r.delta_t for r in records],
            delta_r=[r.delta_r for r in records],
            covariates=cov,
            covariate_names=covariate_names,
            **kwargs,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def subset(self, index) -> "Dataset":
        """Rows selected (with repetition allowed) by an integer index array."""
        index = np.asarray(index, dtype=int)
        ids = tuple(self.ids[i] for i in index)
        return Dataset(
            ids=ids,
            arm=self.arm[index],
            t_obs=self.t_obs[index],
            r_obs=self.r_obs[index],
            delta_t=self.delta_t[index],
            delta_r=self.delta_r[index],
            covariates=self.covariates[index],
            covariate_names=self.covariate_names,
            tau=self.tau,
            tie_shift=self.tie_shift,
            propensity=None if self.propensity is None else self.propensity[index],
            meta=self.meta,
        )

    # -- accessors --------------------------------------------------------

    def __len__(self):
        return len(self.ids)

    @property
    def n(self):
        return len(self.ids)

    @property
    def subjects(self) -> list[SubjectRecord]:
        return [
            SubjectRecord(self.ids[i], int(self.arm[i]), float(self.t_obs[i]), float(self.r_obs[i]),
                          int(self.delta_t[i]), int(self.delta_r[i]), tuple(self.covariates[i].tolist()))
            for i in range(self.n)
        ]

    @property
    def r_eff(self) -> np.ndarray:
        """Intermediate times with exact ``R == T`` ties shifted by ``-tie_shift``."""
        tie = (self.delta_r == 1) & (self.r_obs >= self.t_obs)
        if not tie.any():
            return self.r_obs
        return np.where(tie, self.t_obs - self.tie_shift, self.r_obs)

    @property
    def exit0(self) -> np.ndarray:
        """Time of leaving the initial state (or of censoring in it)."""
        return np.where(self.delta_r == 1, self.r_eff, self.t_obs)

    def covariate(self, name) -> np.ndarray:
        try:
            return self.covariates[:, self.covariate_names.index(name)]
        except ValueError:
            raise SchemaError(f"unknown covariate {name!r}; have {list(self.covariate_names)}") from None

    def arms_present(self):
        return tuple(int(a) for a in np.unique(self.arm))

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({
            "id": list(self.ids),
            "arm": self.arm,
            "t_obs": self.t_obs,
            "r_obs": self.r_obs,
            "delta_t": self.delta_t,
            "delta_r": self.delta_r,
        })
        for k, name in enumerate(self.covariate_names):
            df[name] = self.covariates[:, k]
        return df

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.covariate_names == other.covariate_names
            and self.tau == other.tau
            and all(np.array_equal(getattr(self, c), getattr(other, c))
                    for c in ("arm", "t_obs", "r_obs", "delta_t", "delta_r", "covariates"))
        )

    __hash__ = None


def _check_columns(ds: Dataset):
    n = len(ds.ids)
    if n == 0:
        raise ValidationError("dataset is empty")
    for name in ("arm", "t_obs", "r_obs", "delta_t", "delta_r"):
        if getattr(ds, name).shape != (n,):
            raise ValidationError(f"column {name} has length {getattr(ds, name).shape}, expected {n}")
    if ds.covariates.shape[0] != n:
        raise ValidationError("covariate matrix row count does not match subjects")
    if len(ds.covariate_names) != ds.covariates.shape[1]:
        raise ValidationError("covariate_names does not match covariate columns")
    _validate_rows(ds.arm, ds.t_obs, ds.r_obs, ds.delta_t, ds.delta_r, ds.covariates)
    if ds.propensity is not None:
        p = ds.propensity
        if p.shape != (n,) or not np.all((p > 0) & (p < 1)):
            raise ValidationError("supplied propensity must lie strictly inside (0, 1)")


def _first_bad(mask):
    return int(np.flatnonzero(mask)[0]) + 1


def _validate_rows(arm, t, r, dt, dr, cov):
    """Raise ValidationError naming the first offending (1-based) data row."""
    checks = [
        (~np.isfinite(t) | ~np.isfinite(r), "times must be finite"),
        ((t < 0) | (r < 0), "times must be nonnegative"),
        (~np.isin(arm, (0, 1)), "arm must be 0 or 1"),
        (~np.isin(dt, (0, 1)), "delta_t must be 0 or 1"),
        (~np.isin(dr, (0, 1)), "delta_r must be 0 or 1"),
        ((dr == 1) & (r > t), "r_obs exceeds t_obs although delta_r = 1"),
        ((dr == 0) & (r != t), "r_obs must equal t_obs when delta_r = 0"),
    ]
    if cov.size:
        checks.append((~np.isfinite(cov).all(axis=1), "covariates must be finite"))
    for mask, msg in checks:
        if mask.any():
            raise ValidationError(msg, row=_first_bad(mask))


def _to_float(text):
    try:
        return float(text.strip())
    except ValueError:
        return np.nan


def load_dataset(path, schema: Mapping[str, str] | None = None, covariates: Iterable[str] | None = None,
                 propensity_column: str | None = None, tau: float | None = None,
                 tie_shift: float = DEFAULT_TIE_SHIFT) -> Dataset:
    """Read a subject-level CSV.

    ``schema`` maps canonical names (``id``, ``arm``, ...) to the file's column
    names. Every column that is neither required nor the propensity column is
    a covariate unless ``covariates`` lists them explicitly.
    """
    schema = dict(schema or {})
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    colmap = {canon: schema.get(canon, canon) for canon in REQUIRED_COLUMNS}
    for canon, col in colmap.items():
        if col not in df.columns:
            raise SchemaError(f"missing required column {col!r}" + (f" (for {canon})" if col != canon else ""))
    if propensity_column is not None and propensity_column not in df.columns:
        raise SchemaError(f"missing propensity column {propensity_column!r}")
    used = set(colmap.values()) | {propensity_column}
    if covariates is None:
        cov_names = [c for c in df.columns if c not in used]
    else:
        cov_names = list(covariates)
        for c in cov_names:
            if c not in df.columns:
                raise SchemaError(f"missing covariate column {c!r}")

    def numeric(col):
        # python float() round-trips %.17g exactly; pd.to_numeric does not
        values = np.array([_to_float(v) for v in df[col]], dtype=float)
        bad = np.isnan(values)
        if bad.any():
            row = _first_bad(bad)
            raise ValidationError(f"non-numeric or missing value {df[col].iloc[row - 1]!r} in column {col!r}",
                                  row=row)
        return values

    def binary(col):
        v = numeric(col)
        if np.any(v != np.round(v)):
            raise ValidationError(f"column {col!r} must hold 0/1", row=_first_bad(v != np.round(v)))
        return v.astype(int)

    ids = df[colmap["id"]].tolist()
    arm = binary(colmap["arm"])
    t = numeric(colmap["t_obs"])
    r = numeric(colmap["r_obs"])
    dt = binary(colmap["delta_t"])
    dr = binary(colmap["delta_r"])
    cov = np.column_stack([numeric(c) for c in cov_names]) if cov_names else np.zeros((len(df), 0))
    _validate_rows(arm, t, r, dt, dr, cov)
    prop = numeric(propensity_column) if propensity_column else None
    return Dataset(ids=ids, arm=arm, t_obs=t, r_obs=r, delta_t=dt, delta_r=dr, covariates=cov,
                   covariate_names=tuple(cov_names), tau=tau, tie_shift=tie_shift, propensity=prop,
                   meta={"source": str(path)})


def save_dataset(dataset: Dataset, path) -> Path:
    path = Path(path)
    dataset.to_frame().to_csv(path, index=False, float_format="%.17g")
    return path


@dataclass
class ValidationReport:
    n: int
    path_counts: dict  # (delta_r, delta_t) -> {arm: count}
    covariate_summary: dict  # name -> {stat: value}
    positivity: dict | None = None

    def total(self, cell):
        return sum(self.path_counts[cell].values())

    def to_dict(self):
        return {
            "n": self.n,
            "path_counts": {f"{dr}{dt}": {str(a): c for a, c in v.items()}
                            for (dr, dt), v in self.path_counts.items()},
            "covariate_summary": self.covariate_summary,
            "positivity": self.positivity,
        }

    def format(self):
        lines = [f"{'delta_R':>7} {'delta_T':>7} {'arm 0':>7} {'arm 1':>7} {'total':>7}  description"]
        for cell, desc in PATH_TYPES.items():
            c = self.path_counts[cell]
            lines.append(f"{cell[0]:>7} {cell[1]:>7} {c[0]:>7} {c[1]:>7} {self.total(cell):>7}  {desc}")
        if self.covariate_summary:
            lines.append("")
            lines.append(f"{'covariate':<12} {'mean':>9} {'min':>9} {'max':>9}")
            for name, s in self.covariate_summary.items():
                lines.append(f"{name:<12} {s['mean']:>9.4g} {s['min']:>9.4g} {s['max']:>9.4g}")
        if self.positivity:
            lines.append("")
            lines.append("propensity range: [{min:.4g}, {max:.4g}]".format(**self.positivity))
        return "\n".join(lines)


def validate(dataset: Dataset, propensity=None) -> ValidationReport:
    """Summarise path types per arm, covariates and (optionally) propensity range."""
    counts = {}
    for dr, dt in PATH_TYPES:
        cell = (dataset.delta_r == dr) & (dataset.delta_t == dt)
        counts[(dr, dt)] = {a: int(np.sum(cell & (dataset.arm == a))) for a in (0, 1)}
    summary = {
        name: {
            "mean": float(col.mean()),
            "min": float(col.min()),
            "max": float(col.max()),
            "mean_arm0": float(col[dataset.arm == 0].mean()) if np.any(dataset.arm == 0) else float("nan"),
            "mean_arm1": float(col[dataset.arm == 1].mean()) if np.any(dataset.arm == 1) else float("nan"),
        }
        for name, col in zip(dataset.covariate_names, dataset.covariates.T)
    }
    if propensity is None:
        propensity = dataset.propensity
    pos = None
    if propensity is not None:
        p = np.asarray(propensity, dtype=float)
        pos = {"min": float(p.min()), "max": float(p.max())}
    return ValidationReport(n=dataset.n, path_counts=counts, covariate_summary=summary, positivity=pos)
