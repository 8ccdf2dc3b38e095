"""Hypothesis tests and the kappa sensitivity sweep.

* :func:`logrank_transition_test` compares one transition's hazard between
  arms with IPW-weighted counting processes.
* :func:`spe_test_u` contrasts two component vectors by
  ``U = int_0^tau (F^a - F^a') d(F^a + F^a')`` with a bootstrap or
  influence-function variance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .eif import eif_estimate, event_grid, fit_nuisances
from .errors import ConfigurationError, DegenerateTestError, InfeasibleError
from .hazards import build_processes, fit_hazards
from .incidence import _SPE_PAIRS, SPE_VECTORS, fit_incidence, resolve_clock, spe_from_incidences
from .propensity import arm_weights, propensity_scores

REDRAW_WARNING = 0.10


@dataclass
class TestResult:
    """One hypothesis test: statistic, its variance, two-sided normal p-value."""

    name: str
    statistic: float
    variance: float
    p_value: float
    method: str
    settings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    __test__ = False  # not a pytest class

    @property
    def z(self):
        if not self.variance > 0:
            return float("nan")
        return self.statistic / np.sqrt(self.variance)

    def to_dict(self):
        return {"test": self.name, "statistic": self.statistic, "variance": self.variance,
                "z": self.z, "p_value": self.p_value, "method": self.method,
                **{f"setting_{k}": v for k, v in self.settings.items()},
                "warnings": "; ".join(self.warnings)}


def _two_sided(stat, var):
    if stat == 0.0:
        return 1.0
    if not var > 0:
        return float("nan")
    return float(min(1.0, 2.0 * norm.sf(abs(stat) / np.sqrt(var))))


# ------------------------------------------------------------------ logrank

def logrank_transition_test(dataset: Dataset, weights: dict, transition, clock="markov") -> TestResult:
    """IPW-weighted two-sample logrank test for one transition.

    Statistic ``sum_s {dN1(s) - Y1(s) dN(s) / Y(s)}`` over the pooled event
    times (arm 1 minus expected). Its variance combines the martingale
    variances ``Yw_k dL`` of the two arms,
    ``sum_s {(Y0/Y)^2 Yw1 + (Y1/Y)^2 Yw0} dN/Y``, times the hypergeometric tie
    factor ``(n - d) / (n - 1)`` computed from head counts. With unit weights
    this is the textbook logrank variance.
    """
    p1 = build_processes(dataset, weights[1], transition, clock)
    p0 = build_processes(dataset, weights[0], transition, clock)
    if p1.dN.sum() == 0 or p0.dN.sum() == 0:
        raise DegenerateTestError(f"transition {transition} has no events in one arm")
    times = np.union1d(p1.times, p0.times)
    dN1 = np.zeros(times.size)
    dN0 = np.zeros(times.size)
    d = np.zeros(times.size)
    dN1[np.searchsorted(times, p1.times)] = p1.dN
    dN0[np.searchsorted(times, p0.times)] = p0.dN
    d[np.searchsorted(times, p1.times)] += p1.d_count
    d[np.searchsorted(times, p0.times)] += p0.d_count
    Y1, Y0 = p1.at_risk(times), p0.at_risk(times)
    Yw1, Yw0 = p1.at_risk(times, "w2"), p0.at_risk(times, "w2")
    heads = p1.at_risk(times, "one") + p0.at_risk(times, "one")
    Y = Y1 + Y0
    dN = dN1 + dN0
    ok = Y > 0
    stat = float(np.sum(np.where(ok, dN1 - Y1 * dN / np.where(ok, Y, 1.0), 0.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        dL = np.where(ok, dN / Y, 0.0)
        tie = np.where(heads > 1, (heads - d) / (heads - 1), 1.0)
        v = np.where(ok, ((Y0 / Y) ** 2 * Yw1 + (Y1 / Y) ** 2 * Yw0) * dL * tie, 0.0)
    var = float(np.sum(v))
    if not var > 0:
        raise DegenerateTestError(f"transition {transition} logrank variance is zero")
    clock_used = clock if transition == 3 else "markov"
    return TestResult(f"transition {transition}", stat, var, _two_sided(stat, var), "logrank-ipw",
                      {"transition": transition, "clock": clock_used})


# ------------------------------------------------------------------ U test

def u_statistic(fa, fb):
    """``sum_k (fa - fb)(t_k) * d(fa + fb)(t_k)`` for curves sampled on a common grid."""
    fa = np.asarray(fa, dtype=float)
    fb = np.asarray(fb, dtype=float)
    s = fa + fb
    ds = np.diff(np.concatenate([[0.0], s]))
    return float(np.sum((fa - fb) * ds))


def default_tau(dataset: Dataset):
    """Smallest over arms of the last observed event time.

    The EIF method further caps ``tau`` at the last at-risk time of every
    needed stratum-by-arm cell.
    """
    ev = (dataset.delta_t == 1) | (dataset.delta_r == 1)
    last = []
    for a in (0, 1):
        m = ev & (dataset.arm == a)
        if not np.any(m):
            raise DegenerateTestError(f"arm {a} has no events")
        last.append(dataset.t_obs[m].max())
    return float(min(last))


def _curves(dataset, a, a_prime, grid, method, clock, kappa, ps_mode, strata, min_cell, need_phi=False):
    """Estimated ``F^a`` and ``F^a'`` on ``grid`` (plus influence values for the EIF method)."""
    if method == "gnaipw":
        scores = propensity_scores(dataset, ps_mode)
        hz = fit_hazards(dataset, arm_weights(dataset, scores),
                         clocks=("markov",) if kappa == 0 else ("semimarkov",) if kappa == 1 else
                         ("markov", "semimarkov"))
        fa = fit_incidence(hz, a, kappa).total(grid)
        fb = fit_incidence(hz, a_prime, kappa).total(grid) if a_prime != a else fa
        return fa, fb, None, None
    if method == "eif":
        if kappa != 0:
            raise ConfigurationError("the EIF estimator is implemented for the Markov clock only")
        nuis = fit_nuisances(dataset, strata, min_cell=min_cell)
        ea = eif_estimate(dataset, nuis, a, grid)
        eb = eif_estimate(dataset, nuis, a_prime, grid) if a_prime != a else ea
        return ea.clipped, eb.clipped, ea, eb
    raise ConfigurationError(f"method must be gnaipw or eif, got {method!r}")


def _u_influence(ea, eb):
    """Delta-method influence values of ``U`` from stored EIF values (one per subject)."""
    fa, fb = ea.clipped, eb.clipped
    ds = np.diff(np.concatenate([[0.0], fa + fb]))
    pa, pb = ea.phi, eb.phi
    dps = np.diff(np.concatenate([np.zeros((pa.shape[0], 1)), pa + pb], axis=1), axis=1)
    return (pa - pb) @ ds + dps @ (fa - fb)


def spe_test_u(dataset: Dataset, a, a_prime, method="gnaipw", B=500, seed=0, clock="markov", kappa=None,
               ps_mode="fit", variance="bootstrap", tau=None, strata=None, min_cell=10, name=None) -> TestResult:
    """U test of ``F^a = F^a'`` on ``[0, tau]``.

    ``variance`` is ``bootstrap`` (``B`` subject-level resamples; resamples
    with an empty arm, or on which estimation is infeasible, are redrawn and
    counted) or ``eif`` (delta method on the stored influence values; EIF
    method only). ``B = 0`` returns the statistic with an undefined p-value.
    """
    a = tuple(int(v) for v in a)
    a_prime = tuple(int(v) for v in a_prime)
    clock, kappa = resolve_clock(clock, kappa)
    if tau is None:
        tau = default_tau(dataset)
        if method == "eif":
            nuis = fit_nuisances(dataset, strata, min_cell=min_cell)
            tau = min(tau, nuis.truncation_time(a), nuis.truncation_time(a_prime))
    tau = float(tau)
    grid = event_grid(dataset, tau)
    if variance == "eif" and method != "eif":
        raise ConfigurationError("the influence-function variance for U needs method 'eif'")
    fa, fb, ea, eb = _curves(dataset, a, a_prime, grid, method, clock, kappa, ps_mode, strata, min_cell)
    stat = u_statistic(fa, fb)
    label = name or f"{a} vs {a_prime}"
    settings = {"clock": clock, "kappa": kappa, "tau": tau, "B": B, "seed": seed, "ps_mode": ps_mode}
    notes = []
    if a == a_prime:
        return TestResult(label, 0.0, 0.0, 1.0, f"u-{variance}", settings)
    if variance == "eif":
        phi_u = _u_influence(ea, eb)
        var = float(np.mean(phi_u ** 2) / dataset.n)
        return TestResult(label, stat, var, _two_sided(stat, var), "u-eif", settings)
    if variance != "bootstrap":
        raise ConfigurationError(f"variance must be bootstrap or eif, got {variance!r}")
    if B == 0:
        return TestResult(label, stat, float("nan"), float("nan"), "u-bootstrap", settings)
    rng = np.random.default_rng(seed)
    stats = np.empty(B)
    redraws = 0
    b = 0
    while b < B:
        idx = rng.integers(0, dataset.n, dataset.n)
        boot = dataset.subset(idx)
        if np.unique(boot.arm).size < 2:
            redraws += 1
            continue
        try:
            ba, bb, _, _ = _curves(boot, a, a_prime, grid, method, clock, kappa, ps_mode, strata, min_cell)
        except InfeasibleError:
            redraws += 1
            continue
        stats[b] = u_statistic(ba, bb)
        b += 1
        if redraws > 10 * B:
            raise DegenerateTestError("bootstrap resamples are almost always infeasible")
    var = float(np.var(stats, ddof=1)) if B > 1 else float("nan")
    settings["redraws"] = redraws
    if redraws > REDRAW_WARNING * B:
        msg = f"{redraws} of {B + redraws} bootstrap resamples were redrawn"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return TestResult(label, stat, var, _two_sided(stat, var), "u-bootstrap", settings, notes)


def contrast_vectors(contrast):
    """Component vectors ``(a, a')`` for a named contrast (``total``, ``spe01``, ...)."""
    try:
        return _SPE_PAIRS[contrast]
    except KeyError:
        raise ConfigurationError(
            f"contrast must be one of {', '.join(_SPE_PAIRS)}, got {contrast!r}"
        ) from None


# -------------------------------------------------------------- sensitivity

def sensitivity_sweep(dataset: Dataset, weights: dict, kappa_grid, t_grid=None) -> dict:
    """SPE curves for each kappa; returns ``{kappa: [spe01, spe02, spe23, spe03, total]}``.

    Hazards are fitted once on both clocks and mixed per kappa; every curve
    shares ``t_grid`` (default: all study-time jump times).
    """
    kappas = [float(k) for k in kappa_grid]
    for k in kappas:
        if not 0.0 <= k <= 1.0:
            raise ConfigurationError(f"kappa must lie in [0, 1], got {k}")
    hz = fit_hazards(dataset, weights)
    if t_grid is None:
        parts = [L.times for d in (hz.L1, hz.L2, hz.L3ma) for L in d.values()]
        t_grid = np.unique(np.concatenate(parts))
    out = {}
    for k in kappas:
        inc = {a: fit_incidence(hz, a, k, t_grid) for a in SPE_VECTORS}
        out[k] = spe_from_incidences(inc, k)
    return out
