"""Command-line entry point: ``crbart <command> [options]``.

Every command prints a one-line JSON summary on success. Exit codes are 0 on
success, 2 on invalid input and 3 on runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import io
from .crisk import credible_interval, curves, fit_m1, fit_m2, partial_dependence, varsel_probabilities
from .discrete import coarsen_grid, quantile_grid
from .evaluation import METHODS, QUANTILES, run_replicates
from .simgen import ScenarioConfig, TrueCif, generate, scenario_row

log = logging.getLogger("crbart")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3


def _env_int(name: str):
    v = os.environ.get(name)
    if v is None or v == "":
        return None
    try:
        return int(v)
    except ValueError:
        raise io.InputError(f"environment variable {name} must be an integer, got {v!r}") from None


def _seed_threads(args):
    seed = args.seed if args.seed is not None else _env_int("CRBART_SEED")
    threads = args.threads if args.threads is not None else _env_int("CRBART_THREADS")
    return seed, threads


def _run_config(args) -> io.RunConfig:
    seed, threads = _seed_threads(args)
    return io.load_run_config(
        getattr(args, "config", None), seed=seed, threads=threads, method=getattr(args, "method", None)
    )


def _fit(cohort, run: io.RunConfig):
    if run.coarsen_unit is not None:
        grid, cohort = coarsen_grid(cohort, run.coarsen_unit)
    elif run.grid_points is not None:
        grid, cohort = quantile_grid(cohort, run.grid_points)
    else:
        grid = None
    if run.method == "m1":
        fit = fit_m1(cohort, run.mcmc, grid=grid)
        return replace(fit, drop_event_factor=run.drop_event_factor)
    return fit_m2(cohort, run.mcmc, grid=grid)


def cmd_fit(args) -> dict:
    run = _run_config(args)
    cohort = io.read_cohort(args.data)
    fit = _fit(cohort, run)
    checksum = io.save_model(fit, args.out, cohort, run, names=io.covariate_names(args.data))
    return {
        "model": str(args.out),
        "method": run.method,
        "n_draws": fit.n_draws,
        "grid_points": fit.grid.J,
        "seed": run.mcmc.seed,
        "checksum": checksum,
    }


def _summary_columns(prefix: str, draws: np.ndarray, level: float) -> dict:
    lo, hi = credible_interval(draws, level)
    return {f"{prefix}_mean": draws.mean(axis=0), f"{prefix}_lower": lo, f"{prefix}_upper": hi}


def cmd_predict(args) -> dict:
    art = io.load_model(args.model)
    _, X = io.read_covariates_csv(args.covariates)
    S, F1, F2 = curves(art.fit, X)
    n, J = X.shape[0], art.fit.grid.J
    cols = {
        "subject": np.repeat(np.arange(n), J),
        "time": np.tile(art.fit.grid.times, n),
    }
    for name, draws in (("S", S), ("F1", F1), ("F2", F2)):
        for k, v in _summary_columns(name, draws, args.level).items():
            cols[k] = v.reshape(-1)
    io.write_columns(args.out, cols)
    return {"out": str(args.out), "subjects": n, "times": J}


def _resolve_var(spec: str, names: list[str]) -> int:
    if spec in names:
        return names.index(spec)
    try:
        k = int(spec)
    except ValueError:
        raise io.InputError(f"unknown covariate {spec!r}") from None
    if not 0 <= k < len(names):
        raise io.InputError(f"covariate index {k} out of range")
    return k


def cmd_pd(args) -> dict:
    art = io.load_model(args.model)
    names = art.names or [f"x{k + 1}" for k in range(art.fit.n_vars)]
    k = _resolve_var(args.var, names)
    X = io.read_cohort(args.data).X
    a = partial_dependence(art.fit, {k: args.a}, X, args.functional).values
    cols = {"time": art.fit.grid.times}
    cols.update(_summary_columns("pd_a", a, args.level))
    if args.b is not None:
        b = partial_dependence(art.fit, {k: args.b}, X, args.functional).values
        cols.update(_summary_columns("pd_b", b, args.level))
        cols.update(_summary_columns("diff", a - b, args.level))
    io.write_columns(args.out, cols)
    return {"out": str(args.out), "variable": names[k], "functional": args.functional}


def _scenario(args) -> ScenarioConfig:
    seed, _ = _seed_threads(args)
    if args.scenario.lower() == "friedman":
        sc = ScenarioConfig("Friedman", p0=0.2, gamma0=2.5, N=args.n or 500, P=args.p, censor_target=0.2)
    else:
        try:
            sc = scenario_row(args.scenario)
        except KeyError:
            raise io.InputError(f"unknown scenario {args.scenario!r}") from None
    updates = {}
    if args.n is not None:
        updates["N"] = args.n
    if args.censor is not None:
        updates["censor_target"] = args.censor if args.censor > 0 else None
    if seed is not None:
        updates["seed"] = seed
    return replace(sc, **updates)


def true_curves(truth: TrueCif, t, X) -> tuple[np.ndarray, np.ndarray]:
    x = X if truth.scenario.case == "Friedman" else X[:, 0]
    return truth(t, x)


def cmd_simulate(args) -> dict:
    sc = _scenario(args)
    sim = generate(sc)
    c = sim.cohort
    io.write_cohort_csv(c, args.out)
    result = {"out": str(args.out), "n": c.n, "censored": float(1.0 - c.delta.mean()), "seed": sc.seed}
    if args.truth:
        times = np.quantile(c.time, np.linspace(0.05, 1.0, args.truth_points))
        n, J = c.n, times.size
        t = np.tile(times, n)
        X = np.repeat(c.X, J, axis=0)
        f1, f2 = true_curves(sim.truth, t, X)
        io.write_columns(args.truth, {
            "subject": np.repeat(np.arange(n), J), "time": t, "F1": f1, "F2": f2, "S": 1.0 - f1 - f2,
        })
        result["truth"] = str(args.truth)
    return result


def cmd_bench(args) -> dict:
    sc = _scenario(args)
    run = _run_config(args)
    methods = tuple(args.methods.split(","))
    for m in methods:
        if m not in METHODS:
            raise io.InputError(f"unknown method {m!r}")
    table = run_replicates(
        sc, methods, args.replicates, run.mcmc,
        master_seed=run.mcmc.seed, quantiles=QUANTILES,
        grid_points=args.grid_points or None, threads=run.mcmc.threads, level=run.level,
    )
    table.to_csv(args.out)
    if args.long_out:
        table.to_long_csv(args.long_out)
    return {
        "out": str(args.out),
        "rows": len(table),
        "replicates": len(table.seeds),
        "master_seed": run.mcmc.seed,
        "seeds": table.seeds,
        "failures": sum(r["n_failed"] for r in table.rows),
    }


def cmd_varsel(args) -> dict:
    art = io.load_model(args.model)
    names = ["t"] + (art.names or [f"x{k + 1}" for k in range(art.fit.n_vars)])
    vs = varsel_probabilities(art.fit, names)
    cols = {"subfit": [], "variable": [], "prob": [], "used": []}
    for key, v in vs.items():
        for name, p, u in zip(v.names, v.prob, v.used):
            cols["subfit"].append(key)
            cols["variable"].append(name)
            cols["prob"].append(float(p))
            cols["used"].append(float(u))
    io.write_columns(args.out, cols)
    return {"out": str(args.out), "ranking": vs["pooled"].ranking()}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (env CRBART_SEED)")
    common.add_argument("--threads", type=int, default=None, help="parallel chains/replicates (env CRBART_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="crbart", description="Competing-risks BART toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", parents=[common], help="fit a model to a cohort CSV")
    f.add_argument("--data", required=True)
    f.add_argument("--config")
    f.add_argument("--method", choices=("m1", "m2"))
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", parents=[common], help="S/F1/F2 summaries for new covariates")
    pr.add_argument("--model", required=True)
    pr.add_argument("--covariates", required=True)
    pr.add_argument("--level", type=float, default=0.95)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    pd = sub.add_parser("pd", parents=[common], help="partial dependence curves and differences")
    pd.add_argument("--model", required=True)
    pd.add_argument("--data", required=True, help="cohort CSV whose covariates are averaged over")
    pd.add_argument("--var", required=True, help="covariate name or 0-based index")
    pd.add_argument("--a", type=float, required=True)
    pd.add_argument("--b", type=float)
    pd.add_argument("--functional", choices=("F1", "F2", "S"), default="F1")
    pd.add_argument("--level", type=float, default=0.95)
    pd.add_argument("--out", required=True)
    pd.set_defaults(func=cmd_pd)

    for name, helptext in (("simulate", "draw a cohort from a scenario"), ("bench", "replicate benchmark")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--scenario", required=True, help="scenario row such as 3.1, or 'friedman'")
        s.add_argument("--n", type=int)
        s.add_argument("--p", type=int, default=10, help="covariates for the friedman scenario")
        s.add_argument("--censor", type=float, help="target censoring fraction (0 disables)")
        s.add_argument("--out", required=True)
    sim, bench = sub.choices["simulate"], sub.choices["bench"]
    sim.add_argument("--truth", help="write true F1/F2/S per subject here")
    sim.add_argument("--truth-points", type=int, default=20)
    sim.set_defaults(func=cmd_simulate)
    bench.add_argument("--replicates", "-R", type=int, default=10)
    bench.add_argument("--methods", default="m1,m2,aj")
    bench.add_argument("--method", choices=("m1", "m2"), help=argparse.SUPPRESS)
    bench.add_argument("--config")
    bench.add_argument("--grid-points", type=int, default=100)
    bench.add_argument("--long-out")
    bench.set_defaults(func=cmd_bench)

    v = sub.add_parser("varsel", parents=[common], help="split-variable selection probabilities")
    v.add_argument("--model", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_varsel)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        result = args.func(args)
    except (ValueError, FileNotFoundError, IsADirectoryError, PermissionError) as err:
        print(f"crbart {args.command}: error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as err:
        print(f"crbart {args.command}: runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"command": args.command, "status": "ok", **result}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
