"""Monte Carlo replication studies: simulate, estimate, interval, summarise.

Replication ``r`` uses the ``r``-th seed spawned from the root seed (see
:func:`~semicomp.simulate.split_seeds`), so a study is reproducible and
independent of the number of worker processes.
"""

from __future__ import annotations

import dataclasses
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .eif import eif_estimate, fit_nuisances
from .errors import ConfigurationError, SemicompError
from .incidence import estimate_incidences, resolve_clock, wald_interval
from .propensity import arm_weights, propensity_scores
from .simulate import SimulationConfig, oracle_incidence, simulate_setting, split_seeds


@dataclass(frozen=True)
class StudyConfig:
    setting_id: int = 1
    n: int = 500
    replications: int = 100
    seed: int = 0
    method: str = "gnaipw"
    clock: str = "markov"
    kappa: float | None = None
    vectors: tuple = ((1, 0, 0), (1, 0, 1))
    times: tuple = (2.0, 4.0, 6.0)
    ps_mode: str = "true"
    level: float = 0.95
    strata: tuple | None = None
    null: bool = False
    censoring_rate: float = 0.02
    tau: float = 10.0

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        if self.method not in ("gnaipw", "eif"):
            raise ConfigurationError(f"method must be gnaipw or eif, got {self.method!r}")
        clock, kappa = resolve_clock(self.clock, self.kappa)
        if self.method == "eif" and kappa != 0:
            raise ConfigurationError("the EIF estimator is implemented for the Markov clock only")
        object.__setattr__(self, "vectors", tuple(tuple(int(v) for v in a) for a in self.vectors))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["vectors"] = [list(a) for a in self.vectors]
        d["times"] = list(self.times)
        return d


def replicate(config: StudyConfig, seed: int) -> dict:
    """One replication: ``{a: (estimates, variances)}`` at ``config.times``."""
    ds = simulate_setting(SimulationConfig(setting_id=config.setting_id, n=config.n, seed=seed, tau=config.tau,
                                           censoring_rate=config.censoring_rate, null=config.null))
    t = np.asarray(config.times)
    out = {}
    if config.method == "gnaipw":
        w = arm_weights(ds, propensity_scores(ds, config.ps_mode))
        inc = estimate_incidences(ds, w, config.vectors, config.clock, config.kappa)
        for a, res in inc.items():
            out[a] = (res.total(t), res.variance(t))
    else:
        nuis = fit_nuisances(ds, config.strata)
        for a in config.vectors:
            e = eif_estimate(ds, nuis, a, t)
            out[a] = (e.clipped, e.variance)
    return out


def _run_one(args):
    config, r, seed = args
    try:
        return r, replicate(config, seed), None
    except SemicompError as exc:
        return r, None, f"{type(exc).__name__}: {exc}"
    except Exception:  # keep the study going; the manifest records the traceback
        return r, None, traceback.format_exc(limit=3)


@dataclass
class StudyReport:
    """Per (component vector, time) summaries plus the failure manifest."""

    config: StudyConfig
    rows: list
    failures: list = field(default_factory=list)
    estimates: dict = field(default_factory=dict)
    variances: dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def row(self, a, t):
        for r in self.rows:
            if r["a"] == ",".join(map(str, a)) and r["t"] == float(t):
                return r
        raise KeyError((a, t))


def summarise(config: StudyConfig, results: dict, truth: dict) -> list:
    z_level = config.level
    rows = []
    for a in config.vectors:
        est = np.array([results[r][a][0] for r in sorted(results)]).reshape(-1, len(config.times))
        var = np.array([results[r][a][1] for r in sorted(results)]).reshape(-1, len(config.times))
        for k, t in enumerate(config.times):
            e, v = est[:, k], var[:, k]
            tr = truth[(a, t)]
            lo, hi = wald_interval(e, v, z_level)
            ok = e.size
            rows.append({
                "a": ",".join(map(str, a)), "t": t, "truth": tr, "replications": ok,
                "mean": float(np.mean(e)) if ok else np.nan,
                "bias": float(np.mean(e) - tr) if ok else np.nan,
                "mean_abs_error": float(np.mean(np.abs(e - tr))) if ok else np.nan,
                "emp_sd": float(np.std(e, ddof=1)) if ok > 1 else np.nan,
                "mean_se": float(np.mean(np.sqrt(v))) if ok else np.nan,
                "emp_var": float(np.var(e, ddof=1)) if ok > 1 else np.nan,
                "mean_var": float(np.mean(v)) if ok else np.nan,
                "coverage": float(np.mean((lo <= tr) & (tr <= hi))) if ok else np.nan,
                "sd_defined": ok > 1,
            })
    return rows


def run_study(config: StudyConfig, jobs=1, truth=None) -> StudyReport:
    """Run ``config.replications`` replications and summarise against the oracle."""
    seeds = split_seeds(config.seed, config.replications)
    tasks = [(config, r, s) for r, s in enumerate(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        outcomes = [_run_one(t) for t in tasks]
    results = {r: res for r, res, err in outcomes if err is None}
    failures = [{"replication": r, "seed": seeds[r], "error": err} for r, res, err in outcomes if err is not None]
    if truth is None:
        truth = {(a, t): oracle_incidence(config.setting_id, a, t, null=config.null).value
                 for a in config.vectors for t in config.times}
    rows = summarise(config, results, truth)
    est = {a: np.array([results[r][a][0] for r in sorted(results)]) for a in config.vectors}
    var = {a: np.array([results[r][a][1] for r in sorted(results)]) for a in config.vectors}
    return StudyReport(config, rows, failures, est, var)
