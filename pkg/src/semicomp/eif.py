"""Efficient-influence-function (one-step) estimator under a conditional Markov clock.

Nuisances are nonparametric: every stratum ``x`` of the (discrete) covariates
and arm ``a`` forms a cell with its own Nelson-Aalen estimates of the direct,
intermediate, intermediate-to-terminal (study-time clock) and censoring
hazards, and the empirical propensity ``n_{x,a} / n_x``.

For a component vector ``a`` the conditional incidence ``F^a(t; x)`` is the
product-limit plug-in built from cells ``(x, a1)``, ``(x, a2)`` and
``(x, a3)``. The estimator is::

    F~(t) = P_n [ F^a(t; X) + sum_j I(A = a_j) / P(A = a_j | X)
                  * sum_u D_j(u, t; X) dM_j(u) / y_j(u; A, X) ]

where ``D_j(u, t; x)`` is the derivative of ``F^a(t; x)`` with respect to the
hazard jump of transition ``j`` at ``u``, ``dM_j`` the subject's martingale
residual under the fitted cell hazard and ``y_j`` the model-based probability
of being at risk for transition ``j`` and uncensored just before ``u``
(``exp(-L1 - L2 - LC)`` for transitions 1-2; the intermediate-state occupancy
times the censoring survival for transition 3). This is the same set of terms
as the general efficient influence function specialised to a Markov clock;
the state-0 exit survival in every denominator uses both the direct and the
intermediate hazard.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .data import Dataset, StepFunction
from .errors import ConfigurationError, PositivityError, TruncationError
from .hazards import CumulativeHazard, fit_transition
from .incidence import wald_interval

DENOMINATOR_GUARD = 1e-6
MAX_LEVELS = 20
COMPONENTS = ("L1", "L2", "L3", "PS", "LC")


@dataclass(frozen=True, eq=False)
class CellNuisance:
    """Nuisance estimates for one stratum-by-arm cell."""

    key: tuple
    arm: int
    n: int
    propensity: float
    L1: CumulativeHazard
    L2: CumulativeHazard
    L3: CumulativeHazard
    LC: CumulativeHazard
    last_exit0: float
    last_exit2: float


@dataclass(frozen=True, eq=False)
class NuisanceSet:
    """Cell nuisances, the stratum of every subject and the stratification columns."""

    strata: tuple
    keys: tuple
    subject_stratum: np.ndarray
    cells: dict
    min_cell: int

    def cell(self, key, arm) -> CellNuisance:
        try:
            return self.cells[(key, arm)]
        except KeyError:
            raise PositivityError(f"cell {self.describe(key)}, arm {arm} is empty") from None

    def truncation_time(self, a) -> float:
        """Last time up to which every stratum can estimate ``F^a``.

        A needed cell running out of subjects at risk only matters while the
        target state still holds probability mass.
        """
        a = tuple(int(v) for v in a)
        out = np.inf
        for key in self.keys:
            grid, target = _target_world(self, key, a)
            out = min(out, *_stratum_limits(self, key, a, grid, target))
        return float(out)

    def describe(self, key):
        if not self.strata:
            return "(all subjects)"
        return "(" + ", ".join(f"{s}={v:g}" for s, v in zip(self.strata, key)) + ")"

    def corrupt(self, component, factor=1.5) -> "NuisanceSet":
        """Copy with one nuisance distorted.

        Hazard components have their increments multiplied by ``factor``
        (capped at 1); ``PS`` multiplies the odds of ``P(A=1 | x)`` by ``factor``.
        """
        if component not in COMPONENTS:
            raise ConfigurationError(f"corrupted component must be one of {COMPONENTS}, got {component!r}")
        cells = {}
        for k, c in self.cells.items():
            if component == "PS":
                p1 = c.propensity if c.arm == 1 else 1.0 - c.propensity
                p1 = float(expit(logit(p1) + np.log(factor)))
                cells[k] = dataclasses.replace(c, propensity=p1 if c.arm == 1 else 1.0 - p1)
            else:
                cells[k] = dataclasses.replace(c, **{component: getattr(c, component).scaled(factor)})
        return dataclasses.replace(self, cells=cells)


def _strata_keys(dataset: Dataset, strata):
    if strata is None:
        strata = dataset.covariate_names
    strata = tuple(strata)
    if not strata:
        return strata, [()], np.zeros(dataset.n, dtype=int)
    cols = np.column_stack([dataset.covariate(s) for s in strata])
    for s, col in zip(strata, cols.T):
        if np.unique(col).size > MAX_LEVELS:
            raise ConfigurationError(
                f"covariate {s!r} has more than {MAX_LEVELS} distinct values; discretize it before stratifying"
            )
    uniq, inv = np.unique(cols, axis=0, return_inverse=True)
    return strata, [tuple(float(v) for v in row) for row in uniq], inv.reshape(-1)


def fit_nuisances(dataset: Dataset, strata=None, min_cell=10, arms=None) -> NuisanceSet:
    """Stratified Nelson-Aalen nuisances for every stratum-by-arm cell.

    ``strata`` lists covariate names (default: all covariates; empty for a
    single stratum). Every cell of the requested ``arms`` (default: arms
    present) must hold at least ``min_cell`` subjects.
    """
    strata, keys, inv = _strata_keys(dataset, strata)
    arms = tuple(dataset.arms_present()) if arms is None else tuple(arms)
    cells = {}
    dr = dataset.delta_r == 1
    for k, key in enumerate(keys):
        in_stratum = inv == k
        n_x = int(in_stratum.sum())
        for a in arms:
            mask = in_stratum & (dataset.arm == a)
            n_c = int(mask.sum())
            if n_c < min_cell:
                desc = "(all subjects)" if not strata else "(" + ", ".join(
                    f"{s}={v:g}" for s, v in zip(strata, key)) + ")"
                raise PositivityError(f"cell {desc}, arm {a} has {n_c} subjects (< {min_cell})")
            w = mask.astype(float)
            cells[(key, a)] = CellNuisance(
                key=key, arm=a, n=n_c, propensity=n_c / n_x,
                L1=fit_transition(dataset, w, 1, arm=a),
                L2=fit_transition(dataset, w, 2, arm=a),
                L3=fit_transition(dataset, w, 3, "markov", arm=a),
                LC=fit_transition(dataset, w, "censoring", arm=a),
                last_exit0=float(dataset.exit0[mask].max()),
                last_exit2=float(dataset.t_obs[mask & dr].max()) if np.any(mask & dr) else 0.0,
            )
    return NuisanceSet(strata, tuple(keys), inv, cells, min_cell)


@dataclass(eq=False)
class EifEstimate:
    """One-step estimate with stored per-subject influence values.

    ``raw`` may leave ``[0, 1]``; ``clipped`` is the reported value.
    ``phi`` has one row per subject and one column per time.
    """

    a: tuple
    times: np.ndarray
    raw: np.ndarray
    plugin: np.ndarray
    phi: np.ndarray
    sigma2: np.ndarray

    @property
    def n(self):
        return self.phi.shape[0]

    @property
    def clipped(self):
        return np.clip(self.raw, 0.0, 1.0)

    @property
    def variance(self):
        """Variance of ``F~(t)``: ``sigma2 / n``."""
        return self.sigma2 / self.n

    @property
    def curve(self) -> StepFunction:
        return StepFunction(self.times, self.raw)

    def at(self, t, clipped=True):
        vals = self.clipped if clipped else self.raw
        return StepFunction(self.times, vals)(t)

    def interval(self, level=0.95, scale="plain"):
        return wald_interval(self.clipped, self.variance, level, scale)


def _grid_of(curves):
    times = [c.times for c in curves if c.times.size]
    return np.unique(np.concatenate(times)) if times else np.zeros(0)


def _products(f):
    """Zero-aware cumulative products of ``f`` for exclusive range products."""
    zero = f <= 0.0
    logs = np.concatenate([[0.0], np.cumsum(np.log(np.where(zero, 1.0, f)))])
    zeros = np.concatenate([[0], np.cumsum(zero)])
    return logs, zeros


def _range_product(logs, zeros, lo, hi):
    """Product of factors with grid index in ``[lo, hi)`` (broadcasting)."""
    hi = np.maximum(hi, lo)
    dead = zeros[hi] - zeros[lo] > 0
    return np.where(dead, 0.0, np.exp(logs[hi] - logs[lo]))


def _occupancy_before(h3, dF2):
    """Intermediate-state occupancy just before each grid point."""
    out = np.zeros(h3.size)
    occ = 0.0
    for k in range(h3.size):
        out[k] = occ
        occ = occ * (1.0 - h3[k]) + dF2[k]
    return out


class _World:
    """Product-limit quantities on a stratum grid for one triple of hazards."""

    def __init__(self, grid, L1, L2, L3):
        self.grid = grid
        self.h1 = L1.on_grid(grid)
        self.h2 = L2.on_grid(grid)
        self.h3 = L3.on_grid(grid)
        self.q = np.clip(1.0 - self.h1 - self.h2, 0.0, None)
        p00 = np.cumprod(self.q)
        self.p00m = np.concatenate([[1.0], p00[:-1]])
        self.dF2 = self.p00m * self.h2
        self.occ_before = _occupancy_before(self.h3, self.dF2)
        self.logs3, self.zeros3 = _products(1.0 - self.h3)

    def p22(self, k, it):
        """``P22(u_k, t)``: product over grid indices ``k+1 .. it-1``."""
        return _range_product(self.logs3, self.zeros3, k + 1, it)


def _stratum_terms(world: _World, t):
    """Conditional incidence and derivatives ``D1, D2, D3`` (shape ``(nt, m)``)."""
    grid = world.grid
    m = grid.size
    nt = t.size
    it = np.searchsorted(grid, t, side="right")
    ks = np.arange(m)
    inside = ks[None, :] < it[:, None]
    P22 = world.p22(ks[None, :], it[:, None])
    F1 = np.sum(np.where(inside, world.p00m * world.h1, 0.0), axis=1)
    F3 = np.sum(np.where(inside, world.dF2 * (1.0 - P22), 0.0), axis=1)
    g = np.where(inside, world.h1[None, :] + world.h2[None, :] * (1.0 - P22), 0.0)
    R = np.zeros((nt, m))
    for k in range(m - 2, -1, -1):
        R[:, k] = g[:, k + 1] + world.q[k + 1] * R[:, k + 1]
    D1 = np.where(inside, world.p00m * (1.0 - R), 0.0)
    D2 = np.where(inside, world.p00m * ((1.0 - P22) - R), 0.0)
    D3 = np.where(inside, world.occ_before * P22, 0.0)
    return F1 + F3, (D1, D2, D3)


def _risk_windows(dataset: Dataset, idx, grid, transition):
    """Grid index ranges ``[lo, hi)`` where each subject is at risk, event index and flag."""
    r = dataset.r_eff[idx]
    t = dataset.t_obs[idx]
    dr = dataset.delta_r[idx] == 1
    dt = dataset.delta_t[idx] == 1
    if transition in (1, 2):
        e = dataset.exit0[idx]
        lo = np.zeros(idx.size, dtype=int)
        hi = np.searchsorted(grid, e, side="right")
        event = (dt & ~dr) if transition == 1 else dr
    else:
        lo = np.searchsorted(grid, r, side="right")
        hi = np.searchsorted(grid, t, side="right")
        e = t
        event = dr & dt
        lo = np.where(dr, lo, 0)
        hi = np.where(dr, hi, 0)
    ev_idx = np.searchsorted(grid, e, side="left")
    return lo, hi, ev_idx, event


def _stratum_cells(nuis: NuisanceSet, key, a):
    arms = {a_ for (kk, a_) in nuis.cells if kk == key}
    return {arm: nuis.cell(key, arm) for arm in arms | set(a)}


def _target_world(nuis: NuisanceSet, key, a):
    cells = _stratum_cells(nuis, key, a)
    grid = _grid_of([getattr(c, nm) for c in cells.values() for nm in ("L1", "L2", "L3", "LC")])
    return grid, _World(grid, cells[a[0]].L1, cells[a[1]].L2, cells[a[2]].L3)


def _stratum_limits(nuis: NuisanceSet, key, a, grid, target):
    """``(limit0, limit3)``: ``F^a(t)`` in this stratum is estimable for ``t`` up to both.

    Beyond the last state-0 exit of the ``a1`` or ``a2`` cell the target
    initial-state probability must already be zero; beyond the last
    state-2 exit of the ``a3`` cell the target intermediate occupancy must
    be zero (it cannot fall once the estimated 2->3 hazard stops jumping).
    """
    trunc0 = min(nuis.cell(key, a[0]).last_exit0, nuis.cell(key, a[1]).last_exit0)
    trunc3 = nuis.cell(key, a[2]).last_exit2
    k0 = np.searchsorted(grid, trunc0, side="right")
    p00 = np.concatenate([[1.0], np.cumprod(target.q)])
    limit0 = trunc0 if p00[k0] > 0 else np.inf
    occ_after = target.occ_before * (1.0 - target.h3) + target.dF2
    k3 = np.searchsorted(grid, trunc3, side="right")
    later = np.flatnonzero(occ_after[max(k3 - 1, 0):] > 0)
    if k3 > 0 and occ_after[k3 - 1] > 0:
        limit3 = trunc3
    elif later.size:
        first = max(k3 - 1, 0) + later[0]
        limit3 = max(trunc3, grid[first - 1]) if first > 0 else trunc3
    else:
        limit3 = np.inf
    return float(limit0), float(limit3)


def event_grid(dataset: Dataset, upto=np.inf) -> np.ndarray:
    """Distinct observed event times (any transition) not exceeding ``upto``."""
    ev = np.concatenate([dataset.exit0[(dataset.delta_t == 1) | (dataset.delta_r == 1)],
                         dataset.t_obs[(dataset.delta_t == 1) & (dataset.delta_r == 1)]])
    g = np.unique(ev)
    return g[g <= upto]


def eif_estimate(dataset: Dataset, nuisances: NuisanceSet, a, t_grid=None) -> EifEstimate:
    """One-step estimate of ``F^a(t)`` on ``t_grid``.

    ``t_grid`` defaults to the observed event times up to the truncation time
    of the needed cells.
    """
    a = tuple(int(v) for v in a)
    if t_grid is None:
        t_grid = event_grid(dataset, nuisances.truncation_time(a))
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    n = dataset.n
    contrib = np.zeros((n, t.size))
    plug = np.zeros((n, t.size))
    for k, key in enumerate(nuisances.keys):
        members = np.flatnonzero(nuisances.subject_stratum == k)
        cells = _stratum_cells(nuisances, key, a)
        grid, target = _target_world(nuisances, key, a)
        Fx, D = _stratum_terms(target, t)
        limit0, limit3 = _stratum_limits(nuisances, key, a, grid, target)
        bad = (t > limit0) | (t > limit3)
        if np.any(bad):
            raise TruncationError(
                f"t={t[bad][0]:g} lies beyond the last at-risk time of a cell needed in stratum "
                f"{nuisances.describe(key)}"
            )
        plug[members] = Fx[None, :]
        contrib[members] += Fx[None, :]
        for arm in set(a):
            c = cells[arm]
            real = _World(grid, c.L1, c.L2, c.L3)
            hC = c.LC.on_grid(grid)
            gc_minus = np.concatenate([[1.0], np.cumprod(np.clip(1.0 - hC, 0.0, None))[:-1]])
            y12 = real.p00m * gc_minus
            y3 = real.occ_before * gc_minus
            sub = members[dataset.arm[members] == arm]
            if sub.size == 0:
                continue
            for j, (h, y) in enumerate(((target.h1, y12), (target.h2, y12), (target.h3, y3)), start=1):
                if a[j - 1] != arm:
                    continue
                p_a = c.propensity
                Dj = D[j - 1]
                needed = np.any(Dj != 0, axis=0)
                lo, hi, ev_idx, event = _risk_windows(dataset, sub, grid, j)
                active = needed & (h > 0)
                if np.any(active & (y < DENOMINATOR_GUARD)):
                    u = grid[np.flatnonzero(active & (y < DENOMINATOR_GUARD))[0]]
                    raise TruncationError(
                        f"at-risk denominator for transition {j} underflows at t={u:g} in stratum "
                        f"{nuisances.describe(key)}, arm {arm}"
                    )
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(y > 0, Dj / y, 0.0)
                K = np.concatenate([np.zeros((t.size, 1)), np.cumsum(ratio * h[None, :], axis=1)], axis=1)
                comp = (K[:, hi] - K[:, lo]).T
                ev_sub = np.flatnonzero(event)
                jump = np.zeros((sub.size, t.size))
                if ev_sub.size:
                    ei = ev_idx[ev_sub]
                    if np.any((y[ei] < DENOMINATOR_GUARD) & np.any(Dj[:, ei] != 0, axis=0)):
                        raise TruncationError(
                            f"at-risk denominator for transition {j} underflows at an observed event in "
                            f"stratum {nuisances.describe(key)}, arm {arm}"
                        )
                    jump[ev_sub] = ratio[:, ei].T
                contrib[sub] += (jump - comp) / p_a
    raw = contrib.mean(axis=0)
    phi = contrib - raw[None, :]
    return EifEstimate(a, t, raw, plug.mean(axis=0), phi, np.mean(phi ** 2, axis=0))


def eif_variance(estimate: EifEstimate, t) -> np.ndarray:
    """``sigma^2(t) = mean(phi^2)`` at ``t``; the variance of ``F~(t)`` is this over ``n``."""
    return StepFunction(estimate.times, estimate.sigma2)(t)


def robustness_probe(dataset: Dataset, nuisances: NuisanceSet, corrupted_component=None, a=(1, 1, 1),
                     t_grid=None, factor=1.5) -> EifEstimate:
    """Re-run :func:`eif_estimate` with one or more nuisances distorted by ``factor``.

    ``corrupted_component`` is ``None``, a name from ``L1, L2, L3, PS, LC`` or a
    sequence of names.
    """
    if corrupted_component is None:
        comps = ()
    elif isinstance(corrupted_component, str):
        comps = (corrupted_component,)
    else:
        comps = tuple(corrupted_component)
    nuis = nuisances
    for c in comps:
        nuis = nuis.corrupt(c, factor)
    return eif_estimate(dataset, nuis, a, t_grid)
