"""Command line front end: ``semicomp {simulate,estimate,test,sweep,study,validate}``.

Every CSV output gets a ``.json`` sidecar with the resolved run
configuration. Output files go to ``--outdir`` (default ``$SEMICOMP_OUTDIR``
or the working directory). Exit codes: 0 success, 2 usage or validation
error, 3 statistical infeasibility (positivity, truncation, degenerate test).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data import load_dataset, save_dataset, validate
from .eif import eif_estimate, fit_nuisances
from .errors import InfeasibleError, UsageError
from .incidence import estimate_incidences, resolve_clock, spe_from_incidences, SPE_VECTORS, wald_interval
from .inference import contrast_vectors, logrank_transition_test, sensitivity_sweep, spe_test_u
from .propensity import arm_weights, fit_logistic, propensity_scores, true_model
from .simulate import SETTINGS, SimulationConfig, simulate_setting
from .study import StudyConfig, run_study

OUTDIR_ENV = "SEMICOMP_OUTDIR"


def _vector(text):
    try:
        a = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"component vector must look like 1,0,0, got {text!r}") from None
    if len(a) != 3 or any(v not in (0, 1) for v in a):
        raise argparse.ArgumentTypeError(f"component vector must be three 0/1 entries, got {text!r}")
    return a


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _tag(a):
    return "a" + "".join(map(str, a))


def _write_json(path: Path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (tuple, np.ndarray)):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _write_csv(frame: pd.DataFrame, path: Path, run_config: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    _write_json(path.with_suffix(path.suffix + ".json"), {"run": run_config, "version": __version__})
    return path


def _run_config(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k != "func"}
    for k, v in list(d.items()):
        if isinstance(v, Path):
            d[k] = str(v)
        elif isinstance(v, (list, tuple)):
            d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
    return d


def _outdir(args) -> Path:
    out = Path(args.outdir or os.environ.get(OUTDIR_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sidecar(path: Path):
    side = path.with_suffix(path.suffix + ".json")
    if side.exists():
        try:
            return json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"sidecar {side} is not valid JSON: {exc}") from None
    return None


def _load(args):
    covs = _names(args.covariates) if getattr(args, "covariates", None) else None
    ps_col = args.ps_column if getattr(args, "ps_mode", None) == "supplied" else None
    return load_dataset(args.input, covariates=covs, propensity_column=ps_col,
                        tie_shift=getattr(args, "tie_shift", None) or 1e-9)


def _scores(args, ds):
    mode = args.ps_mode
    if mode == "fit":
        return fit_logistic(ds).scores(ds)
    if mode == "supplied":
        return propensity_scores(ds, "supplied")
    side = _sidecar(Path(args.input))
    if not side or "simulation" not in side:
        raise UsageError("--ps-mode true needs the simulation sidecar written by `semicomp simulate`")
    coefs = side["simulation"]["propensity"]
    return true_model(coefs).scores(ds)


# ---------------------------------------------------------------- commands

def cmd_simulate(args):
    cfg = SimulationConfig(setting_id=args.setting, n=args.n, seed=args.seed, tau=args.tau,
                           censoring_rate=args.censoring_rate, null=args.null)
    ds = simulate_setting(cfg)
    out = Path(args.output) if args.output else _outdir(args) / f"setting{args.setting}_n{args.n}_seed{args.seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    _write_json(out.with_suffix(out.suffix + ".json"),
                {"simulation": cfg.to_dict(), "run": _run_config(args), "version": __version__})
    print(f"wrote {out} ({ds.n} rows)")
    return 0


def cmd_estimate(args):
    ds = _load(args)
    clock, kappa = resolve_clock(args.clock, args.kappa)
    vectors = args.a or [(1, 0, 0)]
    out = _outdir(args)
    stem = args.prefix or Path(args.input).stem
    run = _run_config(args)
    times = np.asarray(args.times) if args.times else None
    if args.method == "gnaipw":
        scores = _scores(args, ds)
        w = arm_weights(ds, scores)
        inc = estimate_incidences(ds, w, set(vectors) | (set(SPE_VECTORS) if args.spe else set()), clock, kappa)
        for a in vectors:
            res = inc[a]
            t = times if times is not None else res.grid[res.grid <= res.truncation_time]
            F1, F2, F3, F = res.at(t)
            var = res.variance(t) if kappa in (0.0, 1.0) else np.full(t.size, np.nan)
            lo, hi = wald_interval(F, var, args.level, args.scale)
            frame = pd.DataFrame({"t": t, "F1": F1, "F2": F2, "F3": F3, "F": F, "var": var, "lo": lo, "hi": hi})
            path = _write_csv(frame, out / f"{stem}_{args.method}_{clock}_{_tag(a)}.csv", run)
            print(f"wrote {path}")
        if args.hazards:
            fitted = {}
            for res in inc.values():
                a1, a2, a3 = res.a
                fitted[("1", a1)] = res.L1
                fitted[("2", a2)] = res.L2
                if res.kappa < 1:
                    fitted[("3-markov", a3)] = res.H3.markov
                if res.kappa > 0:
                    fitted[("3-semimarkov", a3)] = res.H3.semimarkov
            rows = [pd.DataFrame({"transition": tr, "arm": a, "time": L.times,
                                  "value": np.cumsum(L.increments), "jump": L.increments})
                    for (tr, a), L in sorted(fitted.items())]
            path = _write_csv(pd.concat(rows, ignore_index=True), out / f"{stem}_hazards_{clock}.csv", run)
            print(f"wrote {path}")
        if args.spe:
            spes = spe_from_incidences(inc, kappa)
            grid = spes[0].curve.jump_times
            frame = pd.DataFrame({"t": grid, **{s.name: s.at(grid) for s in spes}})
            path = _write_csv(frame, out / f"{stem}_spe_{clock}.csv", run)
            print(f"wrote {path}")
        return 0
    if clock != "markov":
        raise UsageError("--method eif supports --clock markov only")
    strata = _names(args.strata) if args.strata is not None else None
    nuis = fit_nuisances(ds, strata, min_cell=args.min_cell)
    for a in vectors:
        e = eif_estimate(ds, nuis, a, times)
        lo, hi = wald_interval(e.clipped, e.variance, args.level, args.scale)
        nan = np.full(e.times.size, np.nan)
        frame = pd.DataFrame({"t": e.times, "F1": nan, "F2": nan, "F3": nan, "F": e.clipped, "var": e.variance,
                              "lo": lo, "hi": hi, "F_raw": e.raw, "F_clipped": e.clipped})
        path = _write_csv(frame, out / f"{stem}_eif_markov_{_tag(a)}.csv", run)
        print(f"wrote {path}")
    return 0


def cmd_test(args):
    ds = _load(args)
    clock, kappa = resolve_clock(args.clock, args.kappa)
    rows = []
    contrasts = args.contrast or ["total", "spe01", "spe02", "spe23"]
    ps_mode = args.ps_mode
    if ps_mode == "true":
        scores = _scores(args, ds)
        ds = ds.replace(propensity=scores)
    for c in contrasts:
        a, ap = contrast_vectors(c)
        r = spe_test_u(ds, a, ap, method=args.method, B=args.bootstrap, seed=args.seed, clock=clock, kappa=kappa,
                       ps_mode="supplied" if ps_mode == "true" else ps_mode, variance=args.variance,
                       strata=_names(args.strata) if args.strata is not None else None, name=c)
        rows.append(r.to_dict())
    if not args.no_logrank:
        scores = ds.propensity if ps_mode in ("true", "supplied") else fit_logistic(ds).scores(ds)
        w = arm_weights(ds, scores)
        for j in (1, 2, 3):
            rows.append(logrank_transition_test(ds, w, j, "semimarkov" if clock == "semimarkov" else "markov").to_dict())
    frame = pd.DataFrame(rows)
    table = frame[["test", "statistic", "p_value"]]
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4g}"))
    out = _outdir(args)
    stem = args.prefix or Path(args.input).stem
    path = _write_csv(frame, out / f"{stem}_tests_{args.method}_{clock}.csv", _run_config(args))
    print(f"wrote {path}")
    return 0


def cmd_sweep(args):
    ds = _load(args)
    w = arm_weights(ds, _scores(args, ds))
    grid = np.asarray(args.times) if args.times else None
    sweep = sensitivity_sweep(ds, w, args.kappa_grid, grid)
    frames = []
    for k, spes in sweep.items():
        g = spes[0].curve.jump_times
        for s in spes:
            frames.append(pd.DataFrame({"kappa": k, "contrast": s.name, "t": g, "value": s.at(g)}))
    out = _outdir(args)
    stem = args.prefix or Path(args.input).stem
    path = _write_csv(pd.concat(frames, ignore_index=True), out / f"{stem}_sweep.csv", _run_config(args))
    print(f"wrote {path}")
    return 0


def cmd_study(args):
    cfg = StudyConfig(setting_id=args.setting, n=args.n, replications=args.replications, seed=args.seed,
                      method=args.method, clock=args.clock, kappa=args.kappa,
                      vectors=tuple(args.a or [(1, 0, 0), (1, 0, 1)]), times=args.times or (2.0, 4.0, 6.0),
                      ps_mode=args.ps_mode, level=args.level, null=args.null,
                      strata=_names(args.strata) if args.strata is not None else None)
    report = run_study(cfg, jobs=args.jobs)
    out = _outdir(args)
    stem = args.prefix or f"study_setting{args.setting}_{args.method}_{args.clock}_n{args.n}_R{args.replications}"
    run = {**_run_config(args), "study": cfg.to_dict()}
    frame = report.to_frame()
    path = _write_csv(frame, out / f"{stem}.csv", run)
    _write_json(out / f"{stem}_failures.json", {"failures": report.failures, "run": run})
    cols = ["a", "t", "truth", "mean", "bias", "emp_sd", "mean_se", "coverage"]
    print(frame[cols].to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"wrote {path} ({len(report.failures)} failed replications)")
    return 0


def cmd_validate(args):
    ds = _load(args)
    ps = None
    if args.ps_mode is not None:
        ps = _scores(args, ds)
    report = validate(ds, ps)
    print(report.format())
    if args.json:
        _write_json(Path(args.json), report.to_dict())
    return 0


# ------------------------------------------------------------------ parser

def _add_input(p, ps_default="fit"):
    p.add_argument("input", type=Path, help="dataset CSV")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all extra columns)")
    p.add_argument("--ps-mode", choices=("fit", "true", "supplied"), default=ps_default)
    p.add_argument("--ps-column", default="propensity", help="column holding P(A=1|X) for --ps-mode supplied")
    p.add_argument("--tie-shift", type=float, default=None)


def _add_clock(p):
    p.add_argument("--clock", choices=("markov", "semimarkov", "mixture"), default="markov")
    p.add_argument("--kappa", type=float, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="semicomp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--outdir", default=None, help=f"output directory (default ${OUTDIR_ENV} or .)")
    common.add_argument("--prefix", default=None, help="output file stem")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a built-in setting")
    p.add_argument("--setting", type=int, choices=sorted(SETTINGS), required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float, default=10.0)
    p.add_argument("--censoring-rate", type=float, default=0.02)
    p.add_argument("--null", action="store_true", help="set every treatment loading to 0")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", parents=[common], help="counterfactual incidence curves")
    _add_input(p)
    _add_clock(p)
    p.add_argument("--method", choices=("gnaipw", "eif"), default="gnaipw")
    p.add_argument("--a", type=_vector, action="append", help="component vector, e.g. 1,0,0 (repeatable)")
    p.add_argument("--strata", default=None, help="covariates to stratify on for --method eif")
    p.add_argument("--min-cell", type=int, default=10)
    p.add_argument("--times", type=_floats, default=None, help="output times (default: event-time grid)")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--scale", choices=("plain", "cloglog"), default="plain")
    p.add_argument("--hazards", action="store_true", help="also write cumulative hazards")
    p.add_argument("--spe", action="store_true", help="also write separable pathway effect curves")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("test", parents=[common], help="U tests and transition logrank tests")
    _add_input(p)
    _add_clock(p)
    p.add_argument("--contrast", action="append", choices=("total", "spe01", "spe02", "spe23", "spe03"))
    p.add_argument("--method", choices=("gnaipw", "eif"), default="gnaipw")
    p.add_argument("--variance", choices=("bootstrap", "eif"), default="bootstrap")
    p.add_argument("--bootstrap", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strata", default=None)
    p.add_argument("--no-logrank", action="store_true")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("sweep", parents=[common], help="kappa sensitivity sweep of the pathway effects")
    _add_input(p)
    p.add_argument("--kappa-grid", type=_floats, default=(0.0, 0.25, 0.5, 0.75, 1.0))
    p.add_argument("--times", type=_floats, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("study", parents=[common], help="Monte Carlo replication study")
    p.add_argument("--setting", type=int, choices=sorted(SETTINGS), required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--replications", "-R", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=("gnaipw", "eif"), default="gnaipw")
    _add_clock(p)
    p.add_argument("--a", type=_vector, action="append")
    p.add_argument("--times", type=_floats, default=None)
    p.add_argument("--ps-mode", choices=("true", "fit"), default="true")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--strata", default=None)
    p.add_argument("--null", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("validate", parents=[common], help="path-type counts and covariate summary")
    _add_input(p, ps_default=None)
    p.add_argument("--json", default=None, help="also write the report as JSON")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
