"""Method 1 and Method 2 competing-risks BART and their posterior functionals.

Method 1 pairs an any-event hazard model with a model for the probability
that an event is of cause 1. Method 2 pairs a cause-1 hazard model with a
cause-2 hazard model fitted only on rows still at risk of cause 2.

Every functional is computed per posterior draw on the training grid and is
a right-continuous step function (no interpolation between grid points).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Mapping

import numpy as np

from .discrete import (
    Cohort,
    TimeGrid,
    as_cohort,
    build_time_grid,
    discretize,
    expand_crisk_m1,
    expand_crisk_m2,
)
from .probit import BinaryDataset, DegenerateOutcomeError, ProbitFit, fit_probit, predict_prob
from .sampler import McmcConfig
from .trees import DimensionError

Functional = Literal["S", "F1", "F2"]


class FactorFitError(ValueError):
    """One of the two binary sub-models could not be fitted."""


@dataclass
class CriskFitM1:
    fit_y: ProbitFit
    fit_u: ProbitFit
    grid: TimeGrid
    drop_event_factor: bool = False
    cfg: McmcConfig | None = None
    method = "m1"

    @property
    def n_draws(self) -> int:
        return self.fit_y.n_draws

    @property
    def n_vars(self) -> int:
        return self.fit_y.n_vars - 1

    @property
    def subfits(self) -> dict[str, ProbitFit]:
        return {"any_event": self.fit_y, "cause1_given_event": self.fit_u}


@dataclass
class CriskFitM2:
    fit_1: ProbitFit
    fit_2: ProbitFit
    grid: TimeGrid
    cfg: McmcConfig | None = None
    method = "m2"

    @property
    def n_draws(self) -> int:
        return self.fit_1.n_draws

    @property
    def n_vars(self) -> int:
        return self.fit_1.n_vars - 1

    @property
    def subfits(self) -> dict[str, ProbitFit]:
        return {"cause1": self.fit_1, "cause2_given_no_cause1": self.fit_2}


CriskFit = CriskFitM1 | CriskFitM2


@dataclass(frozen=True)
class PosteriorSummary:
    times: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


@dataclass(frozen=True)
class CifCurve:
    """Per-draw step-function values on the grid, shape (n_draws, J)."""

    times: np.ndarray
    values: np.ndarray

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def summary(self, level: float = 0.95) -> PosteriorSummary:
        lo, hi = credible_interval(self.values, level)
        return PosteriorSummary(self.times, self.mean(), lo, hi, level)

    def at(self, t: float, baseline: float = 0.0) -> np.ndarray:
        """Draws at time ``t`` (snapped down to the grid)."""
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        if j < 0:
            return np.full(self.values.shape[0], baseline)
        return self.values[:, j]


def credible_interval(draws, level: float = 0.95, axis: int = 0):
    a = (1.0 - level) / 2.0
    return (
        np.quantile(draws, a, axis=axis),
        np.quantile(draws, 1.0 - a, axis=axis),
    )


def _fit_factor(name: str, data, cfg: McmcConfig, *, allow_degenerate: bool = False) -> ProbitFit:
    if data.n_rows == 0:
        raise FactorFitError(f"{name} factor has no rows to fit")
    try:
        return fit_probit(BinaryDataset(data.X, data.y), cfg, allow_degenerate=allow_degenerate)
    except DegenerateOutcomeError as err:
        raise FactorFitError(f"{name} factor: {err}") from err


def _subseed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def _prepare(data, grid: TimeGrid | None) -> tuple[Cohort, TimeGrid]:
    cohort = as_cohort(data)
    grid = grid or build_time_grid(cohort)
    return discretize(cohort, grid), grid


def fit_m1(data, cfg: McmcConfig = McmcConfig(), grid: TimeGrid | None = None) -> CriskFitM1:
    """Any-event hazard BART plus cause-1-given-event BART."""
    cohort, grid = _prepare(data, grid)
    any_event, u = expand_crisk_m1(cohort, grid)
    if u.n_rows == 0:
        raise FactorFitError("cause-given-event factor has no rows: the cohort has no events")
    fit_y = _fit_factor("any-event", any_event, replace(cfg, seed=_subseed(cfg.seed, 0)))
    fit_u = _fit_factor(
        "cause-given-event", u, replace(cfg, seed=_subseed(cfg.seed, 1)), allow_degenerate=True
    )
    return CriskFitM1(fit_y, fit_u, grid, cfg=cfg)


def fit_m2(data, cfg: McmcConfig = McmcConfig(), grid: TimeGrid | None = None) -> CriskFitM2:
    """Cause-1 hazard BART plus conditional cause-2 hazard BART."""
    cohort, grid = _prepare(data, grid)
    c1, c2 = expand_crisk_m2(cohort, grid)
    fit_1 = _fit_factor("cause-1", c1, replace(cfg, seed=_subseed(cfg.seed, 0)))
    fit_2 = _fit_factor("cause-2", c2, replace(cfg, seed=_subseed(cfg.seed, 1)))
    return CriskFitM2(fit_1, fit_2, grid, cfg=cfg)


# -- step-function algebra on hazard draws (last axis is time) ---------------


def survival_from_hazard(p) -> np.ndarray:
    return np.cumprod(1.0 - np.asarray(p, dtype=np.float64), axis=-1)


def _lagged(S) -> np.ndarray:
    ones = np.ones(S.shape[:-1] + (1,))
    return np.concatenate([ones, S[..., :-1]], axis=-1)


def m1_curves(p_any, psi, drop_event_factor: bool = False):
    """(S, F1, F2) from any-event hazards and cause-1 shares.

    The default increment is ``S(t_(l-1)) * p_any * psi``; with
    ``drop_event_factor`` the ``p_any`` factor is dropped, which no longer
    keeps F1 + F2 + S = 1.
    """
    p_any = np.asarray(p_any, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    S = survival_from_hazard(p_any)
    prev = _lagged(S)
    h = np.ones_like(p_any) if drop_event_factor else p_any
    F1 = np.cumsum(prev * h * psi, axis=-1)
    F2 = np.cumsum(prev * h * (1.0 - psi), axis=-1)
    return S, F1, F2


def m2_curves(p1, p2):
    """(S, F1, F2) from cause-1 hazards and conditional cause-2 hazards."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    S = np.cumprod((1.0 - p1) * (1.0 - p2), axis=-1)
    prev = _lagged(S)
    F1 = np.cumsum(prev * p1, axis=-1)
    F2 = np.cumsum(prev * (1.0 - p1) * p2, axis=-1)
    return S, F1, F2


# -- evaluation on covariates -------------------------------------------------


def _design(grid: TimeGrid, X) -> np.ndarray:
    """Rows [t_(j), x_i] for every subject i and grid point j (subject-major)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, J = X.shape[0], grid.J
    return np.column_stack([np.tile(grid.times, n), np.repeat(X, J, axis=0)])


def curves(fit: CriskFit, X):
    """Draws of (S, F1, F2) for each covariate row, each shaped (D, n, J)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != fit.n_vars:
        raise DimensionError(f"expected {fit.n_vars} covariates, got {X.shape[1]}")
    n, J = X.shape[0], fit.grid.J
    Z = _design(fit.grid, X)
    if isinstance(fit, CriskFitM1):
        a = predict_prob(fit.fit_y, Z)
        b = predict_prob(fit.fit_u, Z)
        shape = (a.shape[0], n, J)
        return m1_curves(a.reshape(shape), b.reshape(shape), fit.drop_event_factor)
    a = predict_prob(fit.fit_1, Z)
    b = predict_prob(fit.fit_2, Z)
    shape = (a.shape[0], n, J)
    return m2_curves(a.reshape(shape), b.reshape(shape))


_INDEX = {"S": 0, "F1": 1, "F2": 2}


def _functional(fit: CriskFit, X, which: Functional) -> np.ndarray:
    if which not in _INDEX:
        raise ValueError(f"functional must be one of S, F1, F2; got {which!r}")
    return curves(fit, X)[_INDEX[which]]


def survival(fit: CriskFit, x) -> CifCurve:
    """Event-free survival draws at a single covariate vector."""
    return CifCurve(fit.grid.times, _functional(fit, x, "S")[:, 0, :])


def cif(fit: CriskFit, x, cause: int) -> CifCurve:
    if cause not in (1, 2):
        raise ValueError("cause must be 1 or 2")
    return CifCurve(fit.grid.times, _functional(fit, x, f"F{cause}")[:, 0, :])


survival_m1 = survival_m2 = survival
cif_m1 = cif_m2 = cif


def conditional_quantile(curve: CifCurve, tau_q: float) -> np.ndarray:
    """Per draw, the first grid time where the CIF reaches ``tau_q`` (inf if never)."""
    if not 0.0 < tau_q < 1.0:
        raise ValueError("tau_q must lie in (0, 1)")
    hit = curve.values >= tau_q
    first = np.argmax(hit, axis=1)
    return np.where(hit.any(axis=1), curve.times[first], np.inf)


def _override(X, xS: Mapping[int, float]) -> np.ndarray:
    Xc = np.array(X, dtype=np.float64, copy=True, ndmin=2)
    for k, v in xS.items():
        Xc[:, k] = v
    return Xc


def partial_dependence(
    fit: CriskFit,
    xS: Mapping[int, float],
    cohort_X,
    functional: Functional = "F1",
    chunk: int = 64,
) -> CifCurve:
    """Average of a functional over the cohort with covariates ``xS`` held fixed.

    ``xS`` maps 0-based covariate columns (time excluded) to values.
    """
    X = _override(cohort_X, xS)
    if X.shape[0] == 0:
        raise ValueError("partial dependence needs a nonempty cohort")
    total = np.zeros((fit.n_draws, fit.grid.J))
    for lo in range(0, X.shape[0], chunk):
        total += _functional(fit, X[lo : lo + chunk], functional).sum(axis=1)
    return CifCurve(fit.grid.times, total / X.shape[0])


def _at_time(values: np.ndarray, grid: TimeGrid, t_star: float, functional: Functional) -> np.ndarray:
    j = grid.snap_down(t_star)
    if j < 0:
        return np.full(values.shape[:-1], 1.0 if functional == "S" else 0.0)
    return values[..., j]


def pd_difference(
    fit: CriskFit,
    xS_a: Mapping[int, float],
    xS_b: Mapping[int, float],
    t_star: float,
    cohort_X,
    functional: Functional = "F1",
) -> np.ndarray:
    """Draws of PD(t*|a) - PD(t*|b); t* snaps down to the grid."""
    a = partial_dependence(fit, xS_a, cohort_X, functional).values
    b = partial_dependence(fit, xS_b, cohort_X, functional).values
    return _at_time(a - b, fit.grid, t_star, functional)


@dataclass(frozen=True)
class IndividualDifferences:
    draws: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


def individual_differences(
    fit: CriskFit,
    cohort_X,
    xS_a: Mapping[int, float],
    xS_b: Mapping[int, float],
    t_star: float,
    functional: Functional = "F1",
    level: float = 0.95,
) -> IndividualDifferences:
    Xa = _override(cohort_X, xS_a)
    Xb = _override(cohort_X, xS_b)
    diff = _at_time(
        _functional(fit, Xa, functional) - _functional(fit, Xb, functional),
        fit.grid, t_star, functional,
    )
    lo, hi = credible_interval(diff, level)
    return IndividualDifferences(diff, diff.mean(axis=0), lo, hi, level)


@dataclass(frozen=True)
class VarSel:
    names: tuple[str, ...]
    prob: np.ndarray
    used: np.ndarray

    def ranking(self, by: str = "used") -> list[str]:
        key = self.used if by == "used" else self.prob
        order = np.argsort(-key, kind="stable")
        return [self.names[k] for k in order]


def _varsel_counts(counts: np.ndarray, split_probs, names) -> VarSel:
    counts = np.asarray(counts, dtype=np.float64)
    if split_probs is not None:
        share = np.asarray(split_probs)
    else:
        tot = counts.sum(axis=1, keepdims=True)
        share = np.divide(counts, tot, out=np.zeros_like(counts), where=tot > 0)
    return VarSel(tuple(names), share.mean(axis=0), (counts >= 1).mean(axis=0))


def varsel_probabilities(fit: CriskFit, names=None) -> dict[str, VarSel]:
    """Selection probability and used-fraction per variable, per sub-fit and pooled.

    Column 0 is time. The pooled entry sums both sub-fits' split counts per draw
    (and averages their split probabilities under DART).
    """
    names = names or ["t"] + [f"x{k + 1}" for k in range(fit.n_vars)]
    out = {k: _varsel_counts(f.counts, f.split_probs, names) for k, f in fit.subfits.items()}
    a, b = fit.subfits.values()
    sp = None
    if a.split_probs is not None and b.split_probs is not None:
        sp = 0.5 * (a.split_probs + b.split_probs)
    out["pooled"] = _varsel_counts(a.counts + b.counts, sp, names)
    return out
