"""Closed-form competing-risks scenarios with known cumulative incidence.

Cases 1-3 are two-group designs (x in {0, 1}, equiprobable); the Friedman
scenario plugs a nonlinear score into the subdistribution (Case 2) forms.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .discrete import Cohort

CASES = ("Cox", "FineGray", "WeibullNP", "Friedman")


@dataclass(frozen=True)
class ScenarioConfig:
    case: str
    lambda01: float | None = None
    lambda02: float | None = None
    beta1: float = 0.0
    beta2: float = 0.0
    p0: float | None = None
    gamma0: float | None = None
    N: int = 250
    P: int = 10
    censor_target: float | None = None
    seed: int = 0
    label: str = ""

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; expected one of {CASES}")
        if self.case == "Cox":
            if self.lambda01 is None or self.lambda02 is None:
                raise ValueError("Cox case needs lambda01 and lambda02")
            if self.lambda01 <= 0 or self.lambda02 <= 0:
                raise ValueError("baseline hazards must be positive")
        else:
            if self.p0 is None or self.gamma0 is None:
                raise ValueError(f"{self.case} case needs p0 and gamma0")
            if not 0 < self.p0 < 1 or self.gamma0 <= 0:
                raise ValueError("p0 must lie in (0, 1) and gamma0 must be positive")
        if self.case == "Friedman" and (self.P % 2 or self.P < 6):
            raise ValueError("Friedman scenario needs an even P >= 6")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.censor_target is not None and not 0 < self.censor_target < 1:
            raise ValueError("censor_target must lie in (0, 1)")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls(**json.loads(text))

    def params(self) -> dict:
        keys = {
            "Cox": ("lambda01", "lambda02", "beta1", "beta2"),
            "FineGray": ("beta1", "p0", "gamma0"),
            "WeibullNP": ("beta1", "beta2", "p0", "gamma0"),
            "Friedman": ("p0", "gamma0"),
        }[self.case]
        return {k: getattr(self, k) for k in keys}


LOG2, LOG3 = math.log(2.0), math.log(3.0)

SCENARIO_ROWS: tuple[ScenarioConfig, ...] = (
    ScenarioConfig("Cox", 1, 1, 0, 0, label="1.1"),
    ScenarioConfig("Cox", 1, 1, -LOG2, LOG2, label="1.2"),
    ScenarioConfig("Cox", 2, 0.5, 0, 0, label="1.3"),
    ScenarioConfig("Cox", 2, 0.5, -LOG2, LOG2, label="1.4"),
    ScenarioConfig("FineGray", beta1=0, p0=0.5, gamma0=2, label="2.1"),
    ScenarioConfig("FineGray", beta1=-LOG2, p0=0.5, gamma0=2, label="2.2"),
    ScenarioConfig("FineGray", beta1=0, p0=0.8, gamma0=2.5, label="2.3"),
    ScenarioConfig("FineGray", beta1=LOG2, p0=0.2, gamma0=2.5, label="2.4"),
    ScenarioConfig("WeibullNP", beta1=0, beta2=0, p0=0.5, gamma0=2, label="3.1"),
    ScenarioConfig("WeibullNP", beta1=-LOG3, beta2=LOG3, p0=0.5, gamma0=2, label="3.2"),
    ScenarioConfig("WeibullNP", beta1=0, beta2=0, p0=0.8, gamma0=2.5, label="3.3"),
    ScenarioConfig("WeibullNP", beta1=-LOG3, beta2=LOG3, p0=0.2, gamma0=2.5, label="3.4"),
)


def scenario_row(label: str) -> ScenarioConfig:
    for row in SCENARIO_ROWS:
        if row.label == label:
            return row
    raise KeyError(f"no scenario row labelled {label!r}")


# -- Case 1: proportional cause-specific hazards ------------------------------


def _case1_rates(x, p):
    x = np.asarray(x, dtype=np.float64)
    return p["lambda01"] * np.exp(x * p["beta1"]), p["lambda02"] * np.exp(x * p["beta2"])


def true_cif_case1(t, x, params):
    l1, l2 = _case1_rates(x, params)
    total = 1.0 - np.exp(-(l1 + l2) * np.asarray(t, dtype=np.float64))
    return l1 / (l1 + l2) * total, l2 / (l1 + l2) * total


def limiting_cif_case1(x, params) -> float:
    l1, l2 = _case1_rates(x, params)
    return l1 / (l1 + l2)


def _sample_case1(x, params, rng):
    l1, l2 = _case1_rates(x, params)
    t = rng.exponential(1.0 / (l1 + l2))
    cause = np.where(rng.random(x.size) < l1 / (l1 + l2), 1, 2)
    return t, cause


# -- Case 2: proportional subdistribution hazards -----------------------------


def _fg_cif(t, score, p0, gamma0):
    t = np.asarray(t, dtype=np.float64)
    e = np.exp(np.asarray(score, dtype=np.float64))
    base = 1.0 - np.exp(-gamma0 * t)
    return 1.0 - (1.0 - p0 * base) ** e, (1.0 - p0) ** e * base


def true_cif_case2(t, x, params):
    return _fg_cif(t, np.asarray(x, dtype=np.float64) * params["beta1"], params["p0"], params["gamma0"])


def fg_invert_cause1(u, score, p0, gamma0):
    """Time at which F1(t)/F1(inf) equals ``u`` under the subdistribution form."""
    e = np.exp(np.asarray(score, dtype=np.float64))
    f_inf = 1.0 - (1.0 - p0) ** e
    base = (1.0 - (1.0 - np.asarray(u) * f_inf) ** (1.0 / e)) / p0
    return -np.log1p(-base) / gamma0


def _sample_fg(score, p0, gamma0, rng):
    e = np.exp(score)
    f1_inf = 1.0 - (1.0 - p0) ** e
    cause = np.where(rng.random(score.size) < f1_inf, 1, 2)
    u = rng.random(score.size)
    t1 = fg_invert_cause1(u, score, p0, gamma0)
    t2 = -np.log1p(-u) / gamma0
    return np.where(cause == 1, t1, t2), cause


# -- Case 3: Weibull subdistributions with group-dependent shape -------------


def true_cif_case3(t, x, params):
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    p0, g = params["p0"], params["gamma0"]
    out = []
    for k, beta in ((1, params["beta1"]), (2, params["beta2"])):
        shape = np.exp(x * beta)
        out.append(p0 ** (2 - k) * (1 - p0) ** (k - 1) * (1.0 - np.exp(-g * t**shape)))
    return tuple(out)


def _sample_case3(x, params, rng):
    cause = np.where(rng.random(x.size) < params["p0"], 1, 2)
    beta = np.where(cause == 1, params["beta1"], params["beta2"])
    u = rng.random(x.size)
    t = (-np.log(u) / params["gamma0"]) ** np.exp(-x * beta)
    return t, cause


# -- Friedman-score subdistribution scenario ----------------------------------


def friedman_score(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    h = X.shape[1] // 2
    return (
        0.5 * np.sin(np.pi * X[:, 0] * X[:, h])
        + X[:, 1] ** 2
        + 0.5 * X[:, h + 1]
        + 0.25 * X[:, 2] ** 2
        - 1.25
    )


def friedman_relevant(P: int) -> tuple[int, ...]:
    h = P // 2
    return (0, 1, 2, h, h + 1)


def friedman_covariates(N: int, P: int, rng) -> np.ndarray:
    if P % 2 or P < 6:
        raise ValueError("Friedman scenario needs an even P >= 6")
    h = P // 2
    return np.column_stack(
        [rng.uniform(-1.0, 1.0, (N, h)), rng.choice([-1.0, 1.0], size=(N, h))]
    )


@dataclass(frozen=True)
class TrueCif:
    """Evaluator of the true (F1, F2) for a scenario."""

    scenario: ScenarioConfig

    def __call__(self, t, x):
        sc = self.scenario
        p = sc.params()
        if sc.case == "Cox":
            return true_cif_case1(t, x, p)
        if sc.case == "FineGray":
            return true_cif_case2(t, x, p)
        if sc.case == "WeibullNP":
            return true_cif_case3(t, x, p)
        return _fg_cif(t, friedman_score(x), sc.p0, sc.gamma0)

    def survival(self, t, x):
        f1, f2 = self(t, x)
        return 1.0 - f1 - f2


def sample_event_times(scenario: ScenarioConfig, X, rng):
    """Uncensored event times and causes for covariate rows ``X``."""
    p = scenario.params()
    if scenario.case == "Friedman":
        return _sample_fg(friedman_score(X), scenario.p0, scenario.gamma0, rng)
    x = np.asarray(X, dtype=np.float64)[:, 0]
    if scenario.case == "Cox":
        return _sample_case1(x, p, rng)
    if scenario.case == "FineGray":
        return _sample_fg(x * p["beta1"], p["p0"], p["gamma0"], rng)
    return _sample_case3(x, p, rng)


def sample_covariates(scenario: ScenarioConfig, n: int, rng) -> np.ndarray:
    if scenario.case == "Friedman":
        return friedman_covariates(n, scenario.P, rng)
    return rng.integers(0, 2, size=(n, 1)).astype(np.float64)


def censoring_rate_for_times(times, target: float, tol: float = 1e-12) -> float:
    """Rate c with mean(1 - exp(-c T)) = target, i.e. P(C < T) for C ~ Exp(c)."""
    if not 0 < target < 1:
        raise ValueError("censoring target must lie in (0, 1)")
    times = np.asarray(times, dtype=np.float64)

    def gap(log_c):
        return np.mean(-np.expm1(-np.exp(log_c) * times)) - target

    return float(np.exp(optimize.brentq(gap, -40.0, 40.0, xtol=tol)))


def calibrate_censoring(
    scenario: ScenarioConfig | Callable, target: float, n_mc: int = 10**5, seed: int = 12345
) -> float:
    """Exponential censoring rate giving censoring proportion ``target``.

    Case 1 is solved in closed form; other scenarios (or a sampler callable
    ``f(rng, n) -> times``) use a Monte Carlo sample of event times.
    """
    if not 0 < target < 1:
        raise ValueError("censoring target must lie in (0, 1)")
    if isinstance(scenario, ScenarioConfig) and scenario.case == "Cox":
        rates = np.array([sum(_case1_rates(x, scenario.params())) for x in (0.0, 1.0)])

        def gap(log_c):
            c = np.exp(log_c)
            return np.mean(c / (c + rates)) - target

        return float(np.exp(optimize.brentq(gap, -700.0, 700.0, xtol=1e-15)))
    rng = np.random.default_rng(seed)
    if isinstance(scenario, ScenarioConfig):
        X = sample_covariates(scenario, n_mc, rng)
        times, _ = sample_event_times(scenario, X, rng)
    else:
        times = scenario(rng, n_mc)
    return censoring_rate_for_times(times, target)


@dataclass
class SimulatedCohort:
    cohort: Cohort
    truth: TrueCif
    event_time: np.ndarray
    event_cause: np.ndarray
    censor_rate: float | None = None
    meta: dict = field(default_factory=dict)


def generate(scenario: ScenarioConfig, rng=None, censor_rate: float | None = None) -> SimulatedCohort:
    """Draw a cohort; censoring follows ``censor_rate`` or the scenario target."""
    rng = np.random.default_rng(scenario.seed) if rng is None else rng
    X = sample_covariates(scenario, scenario.N, rng)
    t, cause = sample_event_times(scenario, X, rng)
    if censor_rate is None and scenario.censor_target is not None:
        censor_rate = calibrate_censoring(scenario, scenario.censor_target)
    if censor_rate:
        c = rng.exponential(1.0 / censor_rate, size=scenario.N)
        observed = np.minimum(t, c)
        delta = (t <= c).astype(np.int8)
    else:
        observed, delta = t, np.ones(scenario.N, dtype=np.int8)
    cohort = Cohort(observed, delta, np.where(delta == 1, cause, 0), X)
    return SimulatedCohort(cohort, TrueCif(scenario), t, cause, censor_rate)


def gen_case1(params: ScenarioConfig, rng=None) -> SimulatedCohort:
    if params.case != "Cox":
        raise ValueError(f"gen_case1 needs a Cox scenario, got {params.case}")
    return generate(params, rng)


def gen_case2(params: ScenarioConfig, rng=None) -> SimulatedCohort:
    if params.case != "FineGray":
        raise ValueError(f"gen_case2 needs a FineGray scenario, got {params.case}")
    return generate(params, rng)


def gen_case3(params: ScenarioConfig, rng=None) -> SimulatedCohort:
    if params.case != "WeibullNP":
        raise ValueError(f"gen_case3 needs a WeibullNP scenario, got {params.case}")
    return generate(params, rng)


def gen_friedman(N: int, P: int, rng=None, *, p0: float = 0.2, gamma0: float = 2.5,
                 censor_target: float | None = 0.2, seed: int = 0) -> SimulatedCohort:
    scenario = ScenarioConfig(
        "Friedman", p0=p0, gamma0=gamma0, N=N, P=P, censor_target=censor_target, seed=seed
    )
    return generate(scenario, rng)
