"""Replicate benchmark harness and metric suite."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .crisk import CifCurve, credible_interval, curves, fit_m1, fit_m2
from .discrete import as_cohort, quantile_grid
from .sampler import McmcConfig
from .simgen import ScenarioConfig, TrueCif, calibrate_censoring, generate

log = logging.getLogger(__name__)

QUANTILES = (0.1, 0.3, 0.5, 0.7, 0.9)
METHODS = ("m1", "m2", "aj")


def eval_times(survival_fn: Callable[[float], float], quantiles=QUANTILES, tol: float = 1e-8) -> np.ndarray:
    """Times t_q with 1 - S(t_q) = q for an event-free survival function."""
    out = []
    for q in quantiles:
        if not 0 < q < 1:
            raise ValueError(f"quantile {q} outside (0, 1)")
        hi = 1.0
        while 1.0 - survival_fn(hi) < q:
            hi *= 2.0
            if hi > 1e12:
                raise ValueError(f"event-free quantile {q} is not attained")
        out.append(optimize.brentq(lambda t: 1.0 - survival_fn(t) - q, 0.0, hi, xtol=tol))
    return np.array(out)


def bias_rmse(estimates, truth: float) -> tuple[float, float]:
    est = np.asarray(estimates, dtype=np.float64)
    if est.size == 0:
        raise ValueError("no estimates")
    err = est - truth
    return float(err.mean()), float(np.sqrt(np.mean(err**2)))


def coverage_width(intervals, truth: float) -> tuple[float, float]:
    iv = np.asarray(intervals, dtype=np.float64).reshape(-1, 2)
    if iv.shape[0] == 0:
        raise ValueError("no intervals")
    if np.any(iv[:, 0] > iv[:, 1]):
        raise ValueError("interval lower bound exceeds upper bound")
    inside = (iv[:, 0] <= truth) & (truth <= iv[:, 1])
    return float(inside.mean()), float(np.mean(iv[:, 1] - iv[:, 0]))


def lin_ccc(pred, truth) -> float:
    """Lin's concordance correlation coefficient (population moments)."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length vectors with at least 2 entries")
    mx, my = x.mean(), y.mean()
    sxy = np.mean((x - mx) * (y - my))
    denom = x.var() + y.var() + (mx - my) ** 2
    if denom == 0:
        raise ValueError("concordance undefined: both inputs constant and equal")
    return float(2.0 * sxy / denom)


@dataclass(frozen=True)
class AjEstimate:
    times: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    S: np.ndarray

    def at(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        j = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right") - 1
        pad = lambda a, v: np.concatenate([[v], a])[j + 1]  # noqa: E731
        return pad(self.F1, 0.0), pad(self.F2, 0.0), pad(self.S, 1.0)


def aalen_johansen(data, group=None) -> AjEstimate:
    """Nonparametric CIF estimates.

    ``group`` selects rows whose first covariate equals it (or is a boolean
    mask); None uses every row.
    """
    cohort = as_cohort(data)
    if group is not None:
        mask = np.asarray(group) if np.ndim(group) else cohort.X[:, 0] == group
        cohort = cohort.subset(mask)
    if cohort.n == 0:
        raise ValueError("empty group")
    times, idx, at_time = np.unique(cohort.time, return_inverse=True, return_counts=True)
    n_risk = cohort.n - np.concatenate([[0], np.cumsum(at_time)[:-1]])
    d1 = np.bincount(idx, weights=cohort.cause == 1, minlength=times.size)
    d2 = np.bincount(idx, weights=cohort.cause == 2, minlength=times.size)
    S = np.cumprod(1.0 - (d1 + d2) / n_risk)
    prev = np.concatenate([[1.0], S[:-1]])
    return AjEstimate(times, np.cumsum(prev * d1 / n_risk), np.cumsum(prev * d2 / n_risk), S)


# -- replicate study ---------------------------------------------------------


def replicate_seed(master: int, r: int) -> int:
    """Counter-based seed for replicate ``r``."""
    return int(np.random.SeedSequence([master, r]).generate_state(1)[0])


@dataclass
class MetricTable:
    rows: list[dict] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    COLUMNS = (
        "scenario", "censor", "group", "quantile", "eval_time", "method",
        "truth_F1", "bias_F1", "rmse_F1", "coverage_F1", "width_F1",
        "truth_S", "bias_S", "rmse_S", "coverage_S", "width_S",
        "n_ok", "n_failed",
    )

    def __len__(self):
        return len(self.rows)

    def select(self, **keys) -> list[dict]:
        return [r for r in self.rows if all(r[k] == v for k, v in keys.items())]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r[k]) for k in self.COLUMNS})

    @classmethod
    def from_csv(cls, path) -> "MetricTable":
        with open(path, newline="") as fh:
            rows = [
                {k: _parse(k, v) for k, v in r.items()} for r in csv.DictReader(fh)
            ]
        return cls(rows)

    def to_long_csv(self, path) -> None:
        """One line per (cell, metric): quantile on x, value on y, method as series."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "censor", "group", "quantile", "method", "target", "metric", "value"])
            for r in self.rows:
                for target in ("F1", "S"):
                    for metric in ("bias", "rmse", "coverage", "width"):
                        w.writerow([
                            r["scenario"], _fmt(r["censor"]), r["group"], _fmt(r["quantile"]),
                            r["method"], target, metric, _fmt(r[f"{metric}_{target}"]),
                        ])


_TEXT = {"scenario", "method"}
_INT = {"group", "n_ok", "n_failed"}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def _parse(key, v):
    if key in _TEXT:
        return v
    if key in _INT:
        return int(v)
    return float(v) if v != "" else None


@dataclass
class _ReplicateResult:
    seed: int
    estimates: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)


def _bart_point(fit, g: float, t_eval: np.ndarray, level: float):
    S, F1, _ = curves(fit, [g])
    F1 = CifCurve(fit.grid.times, F1[:, 0, :])
    S = CifCurve(fit.grid.times, S[:, 0, :])
    out = []
    for t in t_eval:
        f = F1.at(t, 0.0)
        s = S.at(t, 1.0)
        (f_lo, f_hi), (s_lo, s_hi) = credible_interval(f, level), credible_interval(s, level)
        out.append((f.mean(), f_lo, f_hi, s.mean(), s_lo, s_hi))
    return out


def run_one_replicate(
    scenario: ScenarioConfig,
    methods: Sequence[str],
    cfg: McmcConfig,
    seed: int,
    t_eval: dict,
    censor_rate: float | None,
    grid_points: int | None,
    level: float = 0.95,
) -> _ReplicateResult:
    res = _ReplicateResult(seed)
    sim = generate(scenario, np.random.default_rng(seed), censor_rate=censor_rate)
    cohort = sim.cohort
    if grid_points:
        grid, fit_cohort = quantile_grid(cohort, grid_points)
    else:
        grid, fit_cohort = None, cohort
    for method in methods:
        try:
            if method == "aj":
                for g, te in t_eval.items():
                    aj = aalen_johansen(cohort, g)
                    F1, _, S = aj.at(te)
                    res.estimates[(method, g)] = [
                        (f, None, None, s, None, None) for f, s in zip(F1, S)
                    ]
                continue
            fitter = {"m1": fit_m1, "m2": fit_m2}[method]
            fit = fitter(fit_cohort, replace(cfg, seed=seed), grid=grid)
            for g, te in t_eval.items():
                res.estimates[(method, g)] = _bart_point(fit, g, te, level)
        except Exception as err:  # recorded, counted and excluded
            log.warning("replicate %d: %s failed: %s", seed, method, err)
            res.failures[method] = f"{type(err).__name__}: {err}"
    return res


def _run_one_args(args):
    return run_one_replicate(*args)


def run_replicates(
    scenario: ScenarioConfig,
    methods: Sequence[str] = METHODS,
    R: int = 400,
    cfg: McmcConfig = McmcConfig(),
    seeds: Sequence[int] | None = None,
    *,
    master_seed: int = 0,
    quantiles=QUANTILES,
    grid_points: int | None = 100,
    threads: int = 1,
    level: float = 0.95,
) -> MetricTable:
    """Generate ``R`` cohorts, fit each method, and tabulate accuracy at eval times."""
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    if scenario.case == "Friedman":
        raise ValueError("the two-group harness needs a Cox, FineGray or WeibullNP scenario")
    seeds = list(seeds) if seeds is not None else [replicate_seed(master_seed, r) for r in range(R)]
    truth = TrueCif(scenario)
    groups = (0, 1)
    t_eval = {g: eval_times(lambda t, g=g: float(truth.survival(t, g)), quantiles) for g in groups}
    censor_rate = (
        calibrate_censoring(scenario, scenario.censor_target)
        if scenario.censor_target is not None
        else None
    )
    jobs = [
        (scenario, tuple(methods), cfg, s, t_eval, censor_rate, grid_points, level) for s in seeds
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_run_one_args, jobs))
    else:
        results = [run_one_replicate(*job) for job in jobs]

    table = MetricTable(seeds=seeds)
    for g in groups:
        f1_true = truth(t_eval[g], g)[0]
        s_true = truth.survival(t_eval[g], g)
        for qi, q in enumerate(quantiles):
            for method in methods:
                ok = [r.estimates[(method, g)][qi] for r in results if (method, g) in r.estimates]
                row = {
                    "scenario": scenario.label or scenario.case,
                    "censor": scenario.censor_target if scenario.censor_target is not None else 0.0,
                    "group": g,
                    "quantile": q,
                    "eval_time": float(t_eval[g][qi]),
                    "method": method,
                    "truth_F1": float(f1_true[qi]),
                    "truth_S": float(s_true[qi]),
                    "n_ok": len(ok),
                    "n_failed": sum(1 for r in results if method in r.failures),
                }
                for off, target, truth_v in ((0, "F1", f1_true[qi]), (3, "S", s_true[qi])):
                    if ok:
                        b, e = bias_rmse([o[off] for o in ok], truth_v)
                    else:
                        b = e = None
                    row[f"bias_{target}"], row[f"rmse_{target}"] = b, e
                    if ok and ok[0][off + 1] is not None:
                        c, w = coverage_width([(o[off + 1], o[off + 2]) for o in ok], truth_v)
                    else:
                        c = w = None
                    row[f"coverage_{target}"], row[f"width_{target}"] = c, w
                table.rows.append(row)
    return table
