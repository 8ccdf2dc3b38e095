"""Weighted counting processes and Nelson-Aalen cumulative hazards.

Transitions are numbered 1 (initial -> direct terminal), 2 (initial ->
intermediate) and 3 (intermediate -> terminal). Transition 3 runs either on
study time (``markov``: at risk on ``(R~, T~]``) or on the sojourn clock
``s = t - R~`` (``semimarkov``: at risk on ``(0, T~ - R~]``). The pseudo
transition ``"censoring"`` treats loss to follow-up as the event, with every
subject at risk on ``(0, T~]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, StepFunction
from .errors import ConfigurationError

CLOCKS = ("markov", "semimarkov")


def _risk_sum(entry_sorted, entry_cum, exit_sorted, exit_cum, t):
    """Sum of weights with ``entry < t <= exit`` (left-continuous at-risk mass)."""
    total = exit_cum[-1]
    n_exit_before = np.searchsorted(exit_sorted, t, side="left")
    n_entry_before = np.searchsorted(entry_sorted, t, side="left")
    still_in = total - exit_cum[n_exit_before]
    not_entered = total - entry_cum[n_entry_before]
    return still_in - not_entered


@dataclass(frozen=True, eq=False)
class TransitionProcesses:
    """Weighted counting and at-risk processes of one transition on one clock.

    Per-subject arrays (``entry``, ``exit``, ``event``, ``weight``, ``index``)
    cover the subjects with positive weight that can ever be at risk;
    ``times`` are the distinct event times with weighted event mass ``dN``,
    at-risk mass ``Y`` and squared-weight mass ``Yw`` (left limits).
    """

    transition: object
    clock: str
    entry: np.ndarray
    exit: np.ndarray
    event: np.ndarray
    weight: np.ndarray
    index: np.ndarray
    times: np.ndarray
    dN: np.ndarray
    Y: np.ndarray
    Yw: np.ndarray
    d_count: np.ndarray
    n_risk: np.ndarray

    def __post_init__(self):
        order_e = np.argsort(self.entry, kind="stable")
        order_x = np.argsort(self.exit, kind="stable")
        cache = {}
        for key, w in (("w", self.weight), ("w2", self.weight ** 2), ("one", np.ones_like(self.weight))):
            cache[key] = (
                self.entry[order_e], np.concatenate([[0.0], np.cumsum(w[order_e])]),
                self.exit[order_x], np.concatenate([[0.0], np.cumsum(w[order_x])]),
            )
        object.__setattr__(self, "_cache", cache)

    def at_risk(self, t, kind="w"):
        """At-risk mass at ``t``; ``kind`` is ``w`` (weights), ``w2`` (squared) or ``one`` (head count)."""
        t = np.asarray(t, dtype=float)
        if self.weight.size == 0:
            return np.zeros_like(t)
        return _risk_sum(*self._cache[kind], t)

    @property
    def N(self) -> StepFunction:
        return StepFunction(self.times, np.cumsum(self.dN))

    @property
    def last_at_risk(self) -> float:
        return float(self.exit.max()) if self.exit.size else 0.0

    @property
    def n_subjects(self):
        return int(self.weight.size)


def _subject_arrays(dataset: Dataset, transition, clock):
    r = dataset.r_eff
    t = dataset.t_obs
    dr = dataset.delta_r == 1
    dt = dataset.delta_t == 1
    all_idx = np.arange(dataset.n)
    if transition == 1:
        return np.zeros(dataset.n), dataset.exit0, dt & ~dr, all_idx
    if transition == 2:
        return np.zeros(dataset.n), dataset.exit0, dr, all_idx
    if transition == 3:
        idx = all_idx[dr]
        if clock == "markov":
            return r[idx], t[idx], dt[idx], idx
        return np.zeros(idx.size), t[idx] - r[idx], dt[idx], idx
    if transition == "censoring":
        return np.zeros(dataset.n), t, ~dt, all_idx
    raise ConfigurationError(f"unknown transition {transition!r}")


def build_processes(dataset: Dataset, weights, transition, clock="markov") -> TransitionProcesses:
    """Counting process ``N``, at-risk ``Y`` and squared-weight at-risk ``Yw`` for one transition.

    ``weights`` holds one value per subject (zero excludes a subject, e.g.
    ``w_i(a)`` for the other arm).
    """
    if clock not in CLOCKS:
        raise ConfigurationError(f"clock must be one of {CLOCKS}, got {clock!r}")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (dataset.n,):
        raise ConfigurationError("weights must have one entry per subject")
    entry, exit_, event, idx = _subject_arrays(dataset, transition, clock)
    w = weights[idx]
    keep = w > 0
    entry, exit_, event, idx, w = entry[keep], exit_[keep], event[keep], idx[keep], w[keep]
    ev_t = exit_[event]
    times, inv = np.unique(ev_t, return_inverse=True)
    dN = np.bincount(inv, weights=w[event], minlength=times.size)
    d_count = np.bincount(inv, minlength=times.size).astype(float)
    proc = TransitionProcesses(
        transition=transition, clock=clock if transition == 3 else "markov",
        entry=entry, exit=exit_, event=event, weight=w, index=idx,
        times=times, dN=dN, Y=np.zeros(0), Yw=np.zeros(0), d_count=d_count, n_risk=np.zeros(0),
    )
    object.__setattr__(proc, "Y", proc.at_risk(times, "w"))
    object.__setattr__(proc, "Yw", proc.at_risk(times, "w2"))
    object.__setattr__(proc, "n_risk", proc.at_risk(times, "one"))
    return proc


@dataclass(frozen=True, eq=False)
class CumulativeHazard:
    """Nelson-Aalen estimate ``sum_{s <= t} dN(s) / Y(s)`` with its processes."""

    transition: object
    clock: str
    arm: int | None
    times: np.ndarray
    increments: np.ndarray
    processes: TransitionProcesses | None = None

    @property
    def step(self) -> StepFunction:
        return StepFunction(self.times, np.cumsum(self.increments))

    def __call__(self, t):
        return self.step(t)

    def on_grid(self, grid) -> np.ndarray:
        """Increments placed on ``grid`` (which must contain every jump time)."""
        out = np.zeros(len(grid))
        if self.times.size:
            pos = np.searchsorted(grid, self.times)
            out[pos] = self.increments
        return out

    @property
    def last_at_risk(self) -> float:
        if self.processes is None:
            return float(self.times[-1]) if self.times.size else 0.0
        return self.processes.last_at_risk

    def scaled(self, factor) -> "CumulativeHazard":
        """Increments multiplied by ``factor`` and capped at 1."""
        return CumulativeHazard(self.transition, self.clock, self.arm, self.times,
                                np.minimum(self.increments * factor, 1.0), self.processes)

    @classmethod
    def zero(cls, transition=None, clock="markov", arm=None):
        return cls(transition, clock, arm, np.zeros(0), np.zeros(0), None)


def nelson_aalen(proc: TransitionProcesses, arm=None) -> CumulativeHazard:
    """Weighted Nelson-Aalen estimator; jumps ``dN / Y`` at the event times."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inc = np.where(proc.Y > 0, proc.dN / proc.Y, 0.0)
    return CumulativeHazard(proc.transition, proc.clock, arm, proc.times, inc, proc)


def fit_transition(dataset, weights, transition, clock="markov", arm=None) -> CumulativeHazard:
    return nelson_aalen(build_processes(dataset, weights, transition, clock), arm=arm)


def _log_products(factors):
    """Cumulative (log-product over nonzero factors, count of zero factors), with a leading 0 entry."""
    zero = factors <= 0.0
    logs = np.log(np.where(zero, 1.0, factors))
    return np.concatenate([[0.0], np.cumsum(logs)]), np.concatenate([[0], np.cumsum(zero)])


class Hazard3:
    """Mixed intermediate-to-terminal hazard.

    ``dL3(t; r) = (1 - kappa) dL_ma(t) + kappa dL_sm(t - r)``: ``kappa = 0``
    is Markov, ``kappa = 1`` semi-Markov.
    """

    def __init__(self, markov: CumulativeHazard | None, semimarkov: CumulativeHazard | None, kappa: float):
        if not 0.0 <= kappa <= 1.0:
            raise ConfigurationError(f"kappa must lie in [0, 1], got {kappa}")
        if kappa < 1 and markov is None:
            raise ConfigurationError("kappa < 1 needs the Markov estimate")
        if kappa > 0 and semimarkov is None:
            raise ConfigurationError("kappa > 0 needs the semi-Markov estimate")
        self.markov = markov if markov is not None else CumulativeHazard.zero(3, "markov")
        self.semimarkov = semimarkov if semimarkov is not None else CumulativeHazard.zero(3, "semimarkov")
        self.kappa = float(kappa)
        w_ma = 1.0 - self.kappa
        self._ma_times = self.markov.times
        self._ma_log, self._ma_zero = _log_products(1.0 - w_ma * self.markov.increments)
        self._sm_times = self.semimarkov.times
        self._sm_surv = np.concatenate([[1.0], np.cumprod(np.clip(1.0 - self.kappa * self.semimarkov.increments,
                                                                     0.0, 1.0))])

    @property
    def clock(self):
        if self.kappa == 0:
            return "markov"
        if self.kappa == 1:
            return "semimarkov"
        return "mixture"

    def cumulative(self, t, r):
        """``Lambda_3(t; r) = (1-kappa){L_ma(t) - L_ma(r)} + kappa L_sm(t - r)`` for ``t >= r``."""
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        out = np.zeros(np.broadcast(t, r).shape)
        if self.kappa < 1:
            out = out + (1 - self.kappa) * (self.markov(t) - self.markov(np.minimum(r, t)))
        if self.kappa > 0:
            out = out + self.kappa * self.semimarkov(np.maximum(t - r, 0.0))
        return out

    def survival(self, r, t):
        """Product-limit probability of staying in the intermediate state over ``(r, t]``.

        Broadcasts ``r`` against ``t``; returns 1 where ``t <= r``.
        """
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        r_b, t_b = np.broadcast_arrays(r, t)
        out = np.ones(r_b.shape)
        if self.kappa < 1 and self._ma_times.size:
            ir = np.searchsorted(self._ma_times, r_b, side="right")
            it = np.searchsorted(self._ma_times, np.maximum(t_b, r_b), side="right")
            dead = self._ma_zero[it] > self._ma_zero[ir]
            out = out * np.where(dead, 0.0, np.exp(self._ma_log[it] - self._ma_log[ir]))
        if self.kappa > 0 and self._sm_times.size:
            s = np.maximum(t_b - r_b, 0.0)
            out = out * self._sm_surv[np.searchsorted(self._sm_times, s, side="right")]
        return out

    def sojourn_survival(self, s):
        """Semi-Markov factor only: ``prod_{v <= s} (1 - kappa dL_sm(v))``."""
        s = np.asarray(s, dtype=float)
        return self._sm_surv[np.searchsorted(self._sm_times, np.maximum(s, 0.0), side="right")]


def hazard3_mixture(ma: CumulativeHazard | None, sm: CumulativeHazard | None, kappa: float) -> Hazard3:
    return Hazard3(ma, sm, kappa)


@dataclass(frozen=True, eq=False)
class HazardSet:
    """Nelson-Aalen estimates of every transition for both arms."""

    L1: dict
    L2: dict
    L3ma: dict
    L3sm: dict

    def hazard3(self, a3, kappa) -> Hazard3:
        return Hazard3(self.L3ma.get(a3) if kappa < 1 else None, self.L3sm.get(a3) if kappa > 0 else None, kappa)

    def arms(self):
        return tuple(sorted(self.L1))


def fit_hazards(dataset: Dataset, weights: dict, clocks=CLOCKS) -> HazardSet:
    """Weighted Nelson-Aalen estimates for every arm in ``weights`` (arm -> weight vector)."""
    L1, L2, L3ma, L3sm = {}, {}, {}, {}
    for a, w in weights.items():
        p0 = build_processes(dataset, w, 1)
        L1[a] = nelson_aalen(p0, arm=a)
        L2[a] = nelson_aalen(build_processes(dataset, w, 2), arm=a)
        if "markov" in clocks:
            L3ma[a] = nelson_aalen(build_processes(dataset, w, 3, "markov"), arm=a)
        if "semimarkov" in clocks:
            L3sm[a] = nelson_aalen(build_processes(dataset, w, 3, "semimarkov"), arm=a)
    return HazardSet(L1, L2, L3ma, L3sm)
