"""Synthetic illness-death data and oracle counterfactual incidences.

Three built-in settings share binary-valued covariates ``x = (x1, x2)`` with
entries in ``{0.5, 1}`` and treatment probability
``expit(0.4 x1 + 0.8 x2 - 0.6)``. Each transition hazard is additive in the
covariates and the treatment component::

    setting 1   0.15(x1+a)        0.10(x1+a)        0.20(x2+a)        constant
    setting 2   0.04(x1+a) t      0.02(x1+a) t      0.05(x2+a) t      Markov
    setting 3   0.04(x1+a) t      0.02(x1+a) t      0.10(x2+a)(t-r)   semi-Markov

Event times are drawn by inverting the cumulative hazard; every built-in form
has a closed-form inverse.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate
from scipy.special import expit

from .data import Dataset
from .errors import ConfigurationError

FORMS = ("constant", "linear-in-t", "linear-in-sojourn", "custom")
CLOCKS = ("study-time", "sojourn")
DEFAULT_PROPENSITY = (-0.6, 0.4, 0.8)
COVARIATE_SUPPORT = (0.5, 1.0)


@dataclass(frozen=True)
class HazardSpec:
    """Cause-specific hazard ``coef(x, a) * g(time)``.

    ``coef(x, a) = intercept + loadings . x + treatment * a`` and ``g`` is 1,
    ``t`` or ``t - r`` for the constant, linear-in-t and linear-in-sojourn
    forms. A ``custom`` form supplies vectorised ``rate(t, r, x, a)`` and
    ``cumulative(t, r, x, a)`` callables, where the cumulative hazard is
    accumulated from the entry time ``r``.
    """

    form: str
    intercept: float = 0.0
    loadings: tuple = ()
    treatment: float = 0.0
    clock: str = "study-time"
    rate_fn: Callable | None = field(default=None, compare=False)
    cumulative_fn: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.form not in FORMS:
            raise ConfigurationError(f"unknown hazard form {self.form!r}")
        if self.form == "linear-in-sojourn":
            object.__setattr__(self, "clock", "sojourn")
        if self.clock not in CLOCKS:
            raise ConfigurationError(f"unknown clock {self.clock!r}")
        if self.form == "custom" and (self.rate_fn is None or self.cumulative_fn is None):
            raise ConfigurationError("custom hazards need rate_fn and cumulative_fn")
        object.__setattr__(self, "loadings", tuple(float(v) for v in self.loadings))

    def coefficient(self, x, a):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        load = np.zeros(x.shape[1])
        load[: len(self.loadings)] = self.loadings[: x.shape[1]]
        return self.intercept + x @ load + self.treatment * np.asarray(a, dtype=float)

    def linear_terms(self, x, a, r=0.0):
        """``(alpha, beta)`` with cumulative hazard ``alpha s + beta s^2 / 2`` over sojourn ``s`` from ``r``."""
        c = self.coefficient(x, a)
        if self.form == "constant":
            return c, np.zeros_like(c)
        if self.form == "linear-in-t":
            return c * np.asarray(r, dtype=float), c
        if self.form == "linear-in-sojourn":
            return np.zeros_like(c), c
        raise ConfigurationError("custom hazards have no linear representation")

    def rate(self, t, r, x, a):
        if self.form == "custom":
            return self.rate_fn(t, r, x, a)
        c = self.coefficient(x, a)
        if self.form == "constant":
            return c * np.ones_like(np.asarray(t, dtype=float))
        if self.form == "linear-in-t":
            return c * np.asarray(t, dtype=float)
        return c * (np.asarray(t, dtype=float) - r)

    def cumulative(self, t, r, x, a):
        """Cumulative hazard accumulated over ``(r, t]``."""
        if self.form == "custom":
            return self.cumulative_fn(t, r, x, a)
        alpha, beta = self.linear_terms(x, a, r)
        s = np.maximum(np.asarray(t, dtype=float) - r, 0.0)
        return alpha * s + beta * s ** 2 / 2

    def scaled_treatment(self, factor):
        return dataclasses.replace(self, treatment=self.treatment * factor)


def _settings():
    c, lt, ls = "constant", "linear-in-t", "linear-in-sojourn"

    def spec(form, scale, which):
        load = (scale, 0.0) if which == 1 else (0.0, scale)
        return HazardSpec(form, loadings=load, treatment=scale)

    return {
        1: (spec(c, 0.15, 1), spec(c, 0.10, 1), spec(c, 0.20, 2)),
        2: (spec(lt, 0.04, 1), spec(lt, 0.02, 1), spec(lt, 0.05, 2)),
        3: (spec(lt, 0.04, 1), spec(lt, 0.02, 1), spec(ls, 0.10, 2)),
    }


SETTINGS = _settings()


def setting_hazards(setting_id, null=False):
    """Hazard triple of a built-in setting; ``null`` removes every treatment loading."""
    try:
        specs = SETTINGS[int(setting_id)]
    except (KeyError, ValueError, TypeError):
        raise ConfigurationError(f"unknown setting {setting_id!r}; choose 1, 2 or 3") from None
    if null:
        specs = tuple(s.scaled_treatment(0.0) for s in specs)
    return specs


@dataclass(frozen=True)
class SimulationConfig:
    setting_id: int | None = 1
    n: int = 500
    seed: int = 0
    tau: float = 10.0
    censoring_rate: float = 0.02
    propensity: tuple = DEFAULT_PROPENSITY
    null: bool = False
    hazards: tuple | None = None
    fixed_x: tuple | None = None
    force_arm: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("n must be at least 1")
        if self.hazards is None:
            setting_hazards(self.setting_id)  # validates the id
        elif len(self.hazards) != 3:
            raise ConfigurationError("hazards must be a triple (0->1, 0->2, 2->3)")
        if self.censoring_rate < 0 or self.tau <= 0:
            raise ConfigurationError("censoring_rate must be >= 0 and tau > 0")

    def specs(self):
        if self.hazards is not None:
            specs = tuple(self.hazards)
            return tuple(s.scaled_treatment(0.0) for s in specs) if self.null else specs
        return setting_hazards(self.setting_id, self.null)

    def to_dict(self):
        d = dataclasses.asdict(self)
        if self.hazards is not None:
            d["hazards"] = [
                {k: v for k, v in dataclasses.asdict(h).items() if not k.endswith("_fn")} for h in self.hazards
            ]
        return d


def draw_covariates(n, rng, k=2):
    """``n x k`` matrix with i.i.d. entries equal to 0.5 or 1 with probability 1/2."""
    return np.where(rng.random((n, k)) < 0.5, COVARIATE_SUPPORT[0], COVARIATE_SUPPORT[1])


def treatment_probability(x, coefs=DEFAULT_PROPENSITY):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    coefs = np.asarray(coefs, dtype=float)
    return expit(coefs[0] + x @ coefs[1:])


def assign_treatment(x, rng, coefs=DEFAULT_PROPENSITY):
    """Bernoulli arm(s) with success probability ``expit(0.4 x1 + 0.8 x2 - 0.6)``."""
    p = treatment_probability(x, coefs)
    arm = (rng.random(p.shape) < p).astype(int)
    return int(arm[0]) if np.ndim(x) == 1 else arm


def _solve_quadratic(alpha, beta, e):
    """Smallest s >= 0 with alpha s + beta s^2 / 2 = e (inf if never reached)."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    denom = alpha + np.sqrt(alpha ** 2 + 2.0 * beta * e)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0, 2.0 * e / denom, np.inf)
    return s


def _bisect(f, target, lo, hi, tol=1e-10, max_iter=200):
    """Vectorised bisection for nondecreasing ``f`` on ``[lo, hi]``; ``inf`` if ``f(hi) < target``."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    unreachable = f(hi) < target
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = f(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo < tol):
            break
    return np.where(unreachable, np.inf, 0.5 * (lo + hi))


def _check_nonnegative(specs, x, comps, horizon):
    for j, spec in enumerate(specs):
        if spec.form == "custom":
            grid = np.linspace(0.0, horizon, 5)
            vals = np.array([spec.rate(g, 0.0, x, comps[:, j]) for g in grid])
        else:
            vals = spec.coefficient(x, comps[:, j])
        if np.any(vals < 0):
            raise ConfigurationError(f"hazard of transition {j + 1} is negative on the simulated support")


def _draw_paths(specs, x, comps, rng, horizon=1e3):
    """Vectorised latent (T, R, direct) for covariate rows ``x`` and component matrix ``comps`` (n x 3)."""
    n = x.shape[0]
    s1, s2, s3 = specs
    _check_nonnegative(specs, x, comps, horizon)
    if s1.form == "linear-in-sojourn" or s2.form == "linear-in-sojourn" or s1.clock == "sojourn" \
            or s2.clock == "sojourn":
        raise ConfigurationError("only the 2->3 transition may use the sojourn clock")

    e0 = rng.exponential(size=n)
    custom0 = s1.form == "custom" or s2.form == "custom"
    if custom0:
        def total(t):
            return s1.cumulative(t, 0.0, x, comps[:, 0]) + s2.cumulative(t, 0.0, x, comps[:, 1])
        first = _bisect(total, e0, np.zeros(n), np.full(n, horizon))
    else:
        a1, b1 = s1.linear_terms(x, comps[:, 0])
        a2, b2 = s2.linear_terms(x, comps[:, 1])
        first = _solve_quadratic(a1 + a2, b1 + b2, e0)
    finite = np.isfinite(first)
    tt = np.where(finite, first, 0.0)
    h1 = s1.rate(tt, 0.0, x, comps[:, 0])
    h2 = s2.rate(tt, 0.0, x, comps[:, 1])
    h = h1 + h2
    with np.errstate(divide="ignore", invalid="ignore"):
        p_direct = np.where(h > 0, h1 / h, 1.0)
    direct = (rng.random(n) < p_direct) | ~finite

    e3 = rng.exponential(size=n)
    r = np.where(direct, np.inf, first)
    r_entry = np.where(direct, 0.0, first)
    if s3.form == "custom":
        f = lambda t: s3.cumulative(t, r_entry, x, comps[:, 2])  # noqa: E731
        t3 = _bisect(f, e3, r_entry, r_entry + horizon)
    else:
        alpha, beta = s3.linear_terms(x, comps[:, 2], r_entry)
        t3 = r_entry + _solve_quadratic(alpha, beta, e3)
    t = np.where(direct, first, t3)
    return t, r, direct


def draw_event_times(specs, x, a, rng):
    """Latent ``(T, R, path)`` for one subject with component vector ``a``.

    ``R`` is ``inf`` when the terminal event happens first; ``path`` is
    ``"direct"`` or ``"indirect"``.
    """
    x = np.asarray(x, dtype=float)[None, :]
    comps = np.asarray(a, dtype=float).reshape(1, 3)
    t, r, direct = _draw_paths(specs, x, comps, rng)
    return float(t[0]), float(r[0]), "direct" if direct[0] else "indirect"


def _censor(t_lat, r_lat, c):
    t_obs = np.minimum(t_lat, c)
    delta_t = (t_lat <= c).astype(int)
    delta_r = (r_lat <= c).astype(int)   # r_lat < t_lat whenever finite
    r_obs = np.where(delta_r == 1, r_lat, t_obs)
    return t_obs, r_obs, delta_t, delta_r


def simulate_setting(config: SimulationConfig) -> Dataset:
    """Draw one observed dataset; arm ``A`` drives all three components."""
    rng = np.random.default_rng(config.seed)
    n = config.n
    x = draw_covariates(n, rng)
    if config.fixed_x is not None:
        x = np.tile(np.asarray(config.fixed_x, dtype=float), (n, 1))
    p = treatment_probability(x, config.propensity)
    arm = (rng.random(n) < p).astype(int)
    if config.force_arm is not None:
        arm = np.full(n, int(config.force_arm))
    comps = np.repeat(arm[:, None], 3, axis=1)
    t_lat, r_lat, _ = _draw_paths(config.specs(), x, comps, rng, horizon=max(1e3, 10 * config.tau))
    c = np.full(n, config.tau)
    if config.censoring_rate > 0:
        c = np.minimum(c, rng.exponential(1.0 / config.censoring_rate, size=n))
    t_obs, r_obs, delta_t, delta_r = _censor(t_lat, r_lat, c)
    width = len(str(n))
    return Dataset(
        ids=[f"s{i:0{width}d}" for i in range(n)],
        arm=arm, t_obs=t_obs, r_obs=r_obs, delta_t=delta_t, delta_r=delta_r,
        covariates=x, covariate_names=("x1", "x2"), tau=config.tau,
        propensity=p, meta={"simulation": config.to_dict()},
    )


# ---------------------------------------------------------------------------
# oracle


class OracleValue(NamedTuple):
    value: np.ndarray | float
    se: np.ndarray | float


def _strata(x):
    if x is not None:
        return [np.asarray(x, dtype=float)], [1.0]
    pts = [np.array([a, b]) for a in COVARIATE_SUPPORT for b in COVARIATE_SUPPORT]
    return pts, [0.25] * 4


def _closed_form_constant(l1, l2, l3, t):
    """(F1, F2, F3) for constant hazards."""
    l12 = l1 + l2
    e = -np.expm1(-l12 * t)
    f1 = l1 / l12 * e if l12 > 0 else np.zeros_like(t)
    f2 = l2 / l12 * e if l12 > 0 else np.zeros_like(t)
    d = l12 - l3
    if abs(d) > 1e-12:
        stay = l2 * np.exp(-l3 * t) * (-np.expm1(-d * t)) / d
    else:
        stay = l2 * t * np.exp(-l3 * t)
    return f1, f2, f2 - stay


def _conditional_components(specs, a, t, x):
    """(F1, F2, F3) at times ``t`` for one covariate row, by quadrature."""
    s1, s2, s3 = specs
    xa = x[None, :]
    c1, c2, c3 = (np.array([v], dtype=float) for v in a)

    def first(v):
        return float(np.ravel(v)[0])

    def surv0(s):
        return np.exp(-(first(s1.cumulative(s, 0.0, xa, c1)) + first(s2.cumulative(s, 0.0, xa, c2))))

    def g1(s):
        return surv0(s) * first(s1.rate(s, 0.0, xa, c1))

    def g2(s):
        return surv0(s) * first(s2.rate(s, 0.0, xa, c2))

    out = np.zeros((3, len(t)))
    # F1 and F2 accumulate over consecutive pieces of the sorted grid
    order = np.argsort(t)
    f1 = f2 = prev = 0.0
    cum = np.zeros((2, len(t)))
    for k in order:
        tk = max(float(t[k]), 0.0)
        if tk > prev:
            f1 += integrate.quad(g1, prev, tk, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
            f2 += integrate.quad(g2, prev, tk, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
            prev = tk
        cum[:, k] = f1, f2
    for k, tk in enumerate(t):
        if tk <= 0:
            continue
        f1, f2 = cum[:, k]
        stay = integrate.quad(lambda r: g2(r) * np.exp(-first(s3.cumulative(tk, r, xa, c3))), 0.0, tk,
                              epsabs=1e-13, epsrel=1e-11, limit=200)[0]
        out[:, k] = f1, f2, f2 - stay
    return out


def _oracle_exact(specs, a, t, x):
    pts, probs = _strata(x)
    total = np.zeros((3, len(t)))
    constant = all(s.form == "constant" for s in specs)
    for pt, pr in zip(pts, probs):
        if constant:
            rates = [float(s.coefficient(pt, aj)[0]) for s, aj in zip(specs, a)]
            total += pr * np.array(_closed_form_constant(*rates, t))
        else:
            total += pr * _conditional_components(specs, a, t, pt)
    return total


def _oracle_mc(specs, a, t, x, n_mc, rng):
    pts, _ = _strata(x)
    if x is None:
        xs = draw_covariates(n_mc, rng)
    else:
        xs = np.tile(pts[0], (n_mc, 1))
    comps = np.tile(np.asarray(a, dtype=float), (n_mc, 1))
    t_lat, r_lat, direct = _draw_paths(specs, xs, comps, rng)
    t = np.asarray(t, dtype=float)
    ind1 = direct[:, None] & (t_lat[:, None] <= t[None, :])
    ind2 = (~direct)[:, None] & (r_lat[:, None] <= t[None, :])
    ind3 = (~direct)[:, None] & (t_lat[:, None] <= t[None, :])
    means = np.array([ind.mean(axis=0) for ind in (ind1, ind2, ind3)])
    ses = np.sqrt(means * (1 - means) / n_mc)
    return means, ses


_COMPONENT_INDEX = {"F1": 0, "F2": 1, "F3": 2}


def oracle_incidence(setting_id, a, t, x=None, *, component="F", method="exact", n_mc=1_000_000,
                     seed=12345, null=False, hazards=None) -> OracleValue:
    """True counterfactual incidence ``F^{(a1,a2,a3)}(t)``.

    The population-level target is the covariate average of the conditional
    incidence under component-specific hazards (``x`` absent), which for the
    additive built-in settings coincides with the incidence built from the
    population transition hazards. ``method="exact"`` uses closed forms for
    constant hazards and adaptive quadrature otherwise; ``method="mc"`` draws
    ``n_mc`` latent paths and reports binomial standard errors.
    """
    specs = tuple(hazards) if hazards is not None else setting_hazards(setting_id, null)
    if null and hazards is not None:
        specs = tuple(s.scaled_treatment(0.0) for s in specs)
    a = tuple(int(v) for v in a)
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(tt < 0):
        raise ConfigurationError("t must be nonnegative")
    if method == "exact":
        comp = _oracle_exact(specs, a, tt, x)
        se = np.zeros_like(comp)
    elif method == "mc":
        comp, se = _oracle_mc(specs, a, tt, x, int(n_mc), np.random.default_rng(seed))
    else:
        raise ConfigurationError(f"unknown oracle method {method!r}")
    if component == "F":
        value = comp[0] + comp[2]
        if method == "mc":
            # F = P(T <= t) is itself a proportion
            se = np.sqrt(value * (1 - value) / n_mc)
        else:
            se = se[0]
    else:
        value = comp[_COMPONENT_INDEX[component]]
        se = se[_COMPONENT_INDEX[component]]
    value = np.clip(value, 0.0, 1.0)
    if scalar:
        return OracleValue(float(value[0]), float(np.atleast_1d(se)[0]))
    return OracleValue(value, se)


def split_seeds(root_seed, count) -> list[int]:
    """Independent per-replication seeds: ``SeedSequence(root_seed).spawn(count)``, one 63-bit word each."""
    children = np.random.SeedSequence(root_seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


def oracle_spe_integral(setting_id, a, a_prime, tau, null=False, n_grid=2001) -> float:
    """``int_0^tau (F^a - F^a') d(F^a + F^a')`` by dense trapezoidal evaluation."""
    grid = np.linspace(0.0, tau, n_grid)
    fa = oracle_incidence(setting_id, a, grid, null=null).value
    fb = oracle_incidence(setting_id, a_prime, grid, null=null).value
    g = fa - fb
    h = fa + fb
    return float(np.sum(0.5 * (g[1:] + g[:-1]) * np.diff(h)))
