"""Plug-in counterfactual cumulative incidences and separable pathway effects.

For a component vector ``a = (a1, a2, a3)`` the curves combine the arm-``a1``
direct hazard, the arm-``a2`` intermediate hazard and the arm-``a3``
intermediate-to-terminal hazard::

    F1(t) = sum_{s<=t} P00(s-) dL1(s)
    F2(t) = sum_{s<=t} P00(s-) dL2(s)
    F3(t) = sum_{s<=t} P00(s-) dL2(s) {1 - P22(s, t)}
    F     = F1 + F3

with the product-limit survival ``P00(s) = prod_{u<=s} (1 - dL1 - dL2)`` and the
intermediate-state survival ``P22`` of :class:`~semicomp.hazards.Hazard3`.
With unit weights and a single arm this is the Aalen-Johansen estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import Dataset, StepFunction
from .errors import ConfigurationError, TruncationError
from .hazards import CLOCKS, CumulativeHazard, Hazard3, HazardSet, fit_hazards

SPE_VECTORS = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1))
SPE_NAMES = ("spe01", "spe02", "spe23", "spe03", "total")
_SPE_PAIRS = {
    "spe01": ((1, 0, 0), (0, 0, 0)),
    "spe02": ((1, 1, 0), (1, 0, 0)),
    "spe23": ((1, 1, 1), (1, 1, 0)),
    "spe03": ((1, 1, 1), (1, 0, 0)),
    "total": ((1, 1, 1), (0, 0, 0)),
}


def resolve_clock(clock, kappa=None):
    """Map a clock name (and optional kappa) to ``(clock, kappa)``."""
    if clock == "markov":
        k = 0.0 if kappa is None else float(kappa)
        if k != 0.0:
            raise ConfigurationError("clock 'markov' implies kappa = 0; use clock 'mixture'")
        return "markov", 0.0
    if clock == "semimarkov":
        k = 1.0 if kappa is None else float(kappa)
        if k != 1.0:
            raise ConfigurationError("clock 'semimarkov' implies kappa = 1; use clock 'mixture'")
        return "semimarkov", 1.0
    if clock == "mixture":
        if kappa is None:
            raise ConfigurationError("clock 'mixture' needs kappa")
        k = float(kappa)
        if not 0.0 <= k <= 1.0:
            raise ConfigurationError(f"kappa must lie in [0, 1], got {k}")
        return "mixture", k
    raise ConfigurationError(f"clock must be markov, semimarkov or mixture, got {clock!r}")


def _state0(L1: CumulativeHazard, L2: CumulativeHazard):
    grid = np.union1d(L1.times, L2.times)
    h1 = L1.on_grid(grid)
    h2 = L2.on_grid(grid)
    p00 = np.cumprod(np.clip(1.0 - h1 - h2, 0.0, None))
    p00_minus = np.concatenate([[1.0], p00[:-1]])
    return grid, h1, h2, p00, p00_minus


def _value_at(grid, values, t, before=0.0):
    """Right-continuous lookup of ``values`` (defined on ``grid``) at ``t``."""
    idx = np.searchsorted(grid, t, side="right")
    padded = np.concatenate([[before], values])
    return padded[idx]


@dataclass(eq=False)
class IncidenceResult:
    """Estimated ``F1, F2, F3, F`` for one component vector.

    Curves are stored on ``grid``; :meth:`at` evaluates them exactly at any
    time (between grid points a semi-Markov ``F3`` can move, so prefer
    :meth:`at` over the step functions for off-grid times).
    """

    a: tuple
    clock: str
    kappa: float
    L1: CumulativeHazard
    L2: CumulativeHazard
    H3: Hazard3
    grid: np.ndarray
    F1: StepFunction
    F2: StepFunction
    F3: StepFunction
    F: StepFunction
    truncation_time: float
    sigma2: StepFunction | None = None
    method: str = "gnaipw"
    _cache: dict = field(default_factory=dict, repr=False)

    def state0(self):
        if "state0" not in self._cache:
            self._cache["state0"] = _state0(self.L1, self.L2)
        return self._cache["state0"]

    def at(self, t):
        """Exact ``(F1, F2, F3, F)`` arrays at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        grid, h1, h2, p00, p00m = self.state0()
        dF1 = p00m * h1
        dF2 = p00m * h2
        F1 = _value_at(grid, np.cumsum(dF1), t)
        F2 = _value_at(grid, np.cumsum(dF2), t)
        F3 = _f3(grid, dF2, self.H3, t)
        return F1, F2, F3, F1 + F3

    def total(self, t):
        return self.at(t)[3]

    def truncated(self, t):
        return np.asarray(t, dtype=float) > self.truncation_time

    def variance(self, t):
        """Plug-in variance of ``F(t)`` (i.e. ``sigma^2(t) / n``) for the result's clock."""
        if self.clock == "markov":
            return variance_markov(t, self)
        if self.clock == "semimarkov":
            return variance_semimarkov(t, self)
        raise ConfigurationError("analytic variance is available for kappa = 0 or 1 only")

    def interval(self, t, level=0.95, scale="plain"):
        return confidence_interval(self, t, level, scale)


def _f3(grid, dF2, H3: Hazard3, t):
    t = np.atleast_1d(t)
    keep = dF2 > 0
    s = grid[keep]
    mass = dF2[keep]
    if s.size == 0:
        return np.zeros(t.shape)
    surv = H3.survival(s[None, :], t[:, None])
    return np.sum(np.where(s[None, :] <= t[:, None], mass[None, :] * (1.0 - surv), 0.0), axis=1)


def _truncation(L1, L2, H3: Hazard3, first_entry):
    last = min(L1.last_at_risk, L2.last_at_risk)
    if not np.isfinite(first_entry):
        return float(last)  # nobody enters state 2, so the 2->3 hazard never matters
    if H3.kappa < 1 and H3.markov.processes is not None:
        last = min(last, H3.markov.last_at_risk)
    if H3.kappa > 0 and H3.semimarkov.processes is not None:
        last = min(last, first_entry + H3.semimarkov.last_at_risk)
    return float(last)


def incidence_curves(L1: CumulativeHazard, L2: CumulativeHazard, H3: Hazard3, t_grid=None,
                     a=None) -> IncidenceResult:
    """Plug-in incidence curves from the three transition estimates.

    ``t_grid`` defaults to every jump time of ``L1``, ``L2`` and the Markov
    part of ``H3``.
    """
    grid0, h1, h2, p00, p00m = _state0(L1, L2)
    if t_grid is None:
        t_grid = np.union1d(grid0, H3.markov.times if H3.kappa < 1 else [])
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size and np.any(np.diff(t_grid) <= 0):
        t_grid = np.unique(t_grid)
    dF2 = p00m * h2
    F1v = _value_at(grid0, np.cumsum(p00m * h1), t_grid)
    F2v = _value_at(grid0, np.cumsum(dF2), t_grid)
    F3v = _f3(grid0, dF2, H3, t_grid)
    Fv = F1v + F3v
    first_entry = grid0[dF2 > 0][0] if np.any(dF2 > 0) else np.inf
    clock = H3.clock
    res = IncidenceResult(
        a=tuple(a) if a is not None else (L1.arm, L2.arm, None),
        clock=clock, kappa=H3.kappa, L1=L1, L2=L2, H3=H3, grid=t_grid,
        F1=StepFunction(t_grid, F1v), F2=StepFunction(t_grid, F2v), F3=StepFunction(t_grid, F3v),
        F=StepFunction(t_grid, Fv), truncation_time=_truncation(L1, L2, H3, first_entry),
    )
    res._cache["state0"] = (grid0, h1, h2, p00, p00m)
    return res


def fit_incidence(hazards: HazardSet, a, kappa=0.0, t_grid=None) -> IncidenceResult:
    a = tuple(int(v) for v in a)
    if len(a) != 3:
        raise ConfigurationError(f"component vector must have three entries, got {a}")
    for v in a:
        if v not in hazards.L1:
            raise ConfigurationError(f"no estimates for arm {v}")
    return incidence_curves(hazards.L1[a[0]], hazards.L2[a[1]], hazards.hazard3(a[2], kappa), t_grid, a=a)


def _clocks_for(kappa):
    if kappa == 0:
        return ("markov",)
    if kappa == 1:
        return ("semimarkov",)
    return CLOCKS


def estimate_incidences(dataset: Dataset, weights: dict, vectors, clock="markov", kappa=None,
                        t_grid=None) -> dict:
    """Fit hazards once and return ``{a: IncidenceResult}`` for each component vector."""
    clock, kappa = resolve_clock(clock, kappa)
    hz = fit_hazards(dataset, weights, clocks=_clocks_for(kappa))
    return {tuple(a): fit_incidence(hz, a, kappa, t_grid) for a in vectors}


# ---------------------------------------------------------------- variances

def _risk_ratio(L: CumulativeHazard):
    """``Yw / Y^2 * dL`` at the jump times of ``L`` (zero where ``Y = 0``)."""
    p = L.processes
    if p is None or L.times.size == 0:
        return np.zeros(L.times.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p.Y > 0, p.Yw / p.Y ** 2 * L.increments, 0.0)


def _suffix_sum_exclusive(m):
    """``out[:, k] = sum_{j > k} m[:, j]``."""
    c = np.cumsum(m[:, ::-1], axis=1)[:, ::-1]
    return np.concatenate([c[:, 1:], np.zeros((m.shape[0], 1))], axis=1)


def _common_terms(t, res: IncidenceResult):
    grid, h1, h2, p00, p00m = res.state0()
    dF2 = p00m * h2
    p00_t = _value_at(grid, p00, t, before=1.0)
    P22 = res.H3.survival(grid[None, :], t[:, None])
    inside = grid[None, :] <= t[:, None]
    mass = np.where(inside, dF2[None, :] * P22, 0.0)
    c1 = p00_t[:, None] + _suffix_sum_exclusive(mass)
    c2 = c1 - p00[None, :] * P22
    r1 = res.L1.on_grid(grid) * 0.0
    r2 = r1.copy()
    if res.L1.times.size:
        r1[np.searchsorted(grid, res.L1.times)] = _risk_ratio(res.L1)
    if res.L2.times.size:
        r2[np.searchsorted(grid, res.L2.times)] = _risk_ratio(res.L2)
    v = np.sum(np.where(inside, c1 ** 2 * r1[None, :] + c2 ** 2 * r2[None, :], 0.0), axis=1)
    return v, grid, dF2


def _check_time(t, res):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t > res.truncation_time):
        raise TruncationError(
            f"variance requested at t={t.max():g} beyond the last time with at-risk mass "
            f"({res.truncation_time:g})"
        )
    return t


def variance_markov(t, res: IncidenceResult) -> np.ndarray:
    """Plug-in variance of ``F(t)`` when the intermediate-to-terminal hazard is Markov.

    Sums, over the jumps of each transition, the squared sensitivity of
    ``F(t)`` to that jump times ``Yw(s) / Y(s)^2 dL(s)``. Returns the variance
    of the estimate, not ``sigma^2(t)``.
    """
    if res.kappa != 0:
        raise ConfigurationError("variance_markov needs a Markov (kappa = 0) fit")
    t = _check_time(t, res)
    v, grid, dF2 = _common_terms(t, res)
    L3 = res.H3.markov
    if L3.times.size:
        v3 = L3.times
        # coefficient at v: sum_{u < v} dF2(u) P22(u, t)
        P22 = res.H3.survival(grid[None, :], t[:, None])
        cum = np.concatenate([np.zeros((t.size, 1)), np.cumsum(dF2[None, :] * P22, axis=1)], axis=1)
        c3 = cum[:, np.searchsorted(grid, v3, side="left")]
        r3 = _risk_ratio(L3)
        v = v + np.sum(np.where(v3[None, :] <= t[:, None], c3 ** 2 * r3[None, :], 0.0), axis=1)
    return v


def variance_semimarkov(t, res: IncidenceResult) -> np.ndarray:
    """Plug-in variance of ``F(t)`` when the intermediate-to-terminal hazard is semi-Markov."""
    if res.kappa != 1:
        raise ConfigurationError("variance_semimarkov needs a semi-Markov (kappa = 1) fit")
    t = _check_time(t, res)
    v, grid, dF2 = _common_terms(t, res)
    L3 = res.H3.semimarkov
    if L3.times.size:
        sv = L3.times
        S = res.H3.sojourn_survival(t[:, None] - grid[None, :])
        A = np.where(grid[None, :] <= t[:, None], dF2[None, :] * S, 0.0)
        cum = np.concatenate([np.zeros((t.size, 1)), np.cumsum(A, axis=1)], axis=1)
        # coefficient at sojourn v: sum over entries u with u + v <= t
        idx = np.searchsorted(grid, t[:, None] - sv[None, :], side="right")
        c3 = np.take_along_axis(cum, idx, axis=1)
        r3 = _risk_ratio(L3)
        v = v + np.sum(c3 ** 2 * r3[None, :], axis=1)
    return v


def wald_interval(estimate, variance, level=0.95, scale="plain"):
    """Wald interval clipped to ``[0, 1]``; ``scale`` is ``plain`` or ``cloglog``."""
    estimate = np.asarray(estimate, dtype=float)
    se = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    z = norm.ppf(0.5 + level / 2)
    if scale == "plain":
        lo, hi = estimate - z * se, estimate + z * se
    elif scale == "cloglog":
        # log(-log(1 - F)) scale; delta method se / ((1 - F) |log(1 - F)|)
        with np.errstate(divide="ignore", invalid="ignore"):
            surv = 1.0 - estimate
            g = np.log(-np.log(surv))
            sg = se / (surv * np.abs(np.log(surv)))
            lo = 1.0 - np.exp(-np.exp(g - z * sg))
            hi = 1.0 - np.exp(-np.exp(g + z * sg))
        bad = ~np.isfinite(lo) | ~np.isfinite(hi)
        lo = np.where(bad, estimate - z * se, lo)
        hi = np.where(bad, estimate + z * se, hi)
    else:
        raise ConfigurationError(f"unknown interval scale {scale!r}")
    return np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)


def confidence_interval(res: IncidenceResult, t, level=0.95, scale="plain"):
    """``(lo, hi)`` for ``F(t)`` from the result's analytic variance."""
    return wald_interval(res.total(t), res.variance(t), level, scale)


# ---------------------------------------------------------- pathway effects

@dataclass(eq=False)
class SpeResult:
    """Difference of two incidence curves, ``F^{a}(t) - F^{a'}(t)``."""

    name: str
    a: tuple
    a_prime: tuple
    curve: StepFunction
    minuend: IncidenceResult
    subtrahend: IncidenceResult
    kappa: float

    def at(self, t):
        return self.minuend.total(t) - self.subtrahend.total(t)


def spe_contrast(name, incidences: dict, grid, kappa) -> SpeResult:
    a, ap = _SPE_PAIRS[name]
    fa, fb = incidences[a], incidences[ap]
    return SpeResult(name, a, ap, StepFunction(grid, fa.total(grid) - fb.total(grid)), fa, fb, kappa)


def spe_from_incidences(incidences: dict, kappa) -> list[SpeResult]:
    grid = np.unique(np.concatenate([incidences[a].grid for a in SPE_VECTORS]))
    return [spe_contrast(name, incidences, grid, kappa) for name in SPE_NAMES]


def spe_decomposition(dataset: Dataset, weights: dict, clock="markov", kappa=None,
                      t_grid=None) -> list[SpeResult]:
    """Separable pathway effects along ``(0,0,0) -> (1,0,0) -> (1,1,0) -> (1,1,1)``.

    Returns ``spe01, spe02, spe23, spe03, total`` in that order; by
    construction ``spe01 + spe02 + spe23 == total`` and ``spe03 == spe02 + spe23``.
    """
    clock, kappa = resolve_clock(clock, kappa)
    inc = estimate_incidences(dataset, weights, SPE_VECTORS, clock, kappa, t_grid)
    return spe_from_incidences(inc, kappa)
