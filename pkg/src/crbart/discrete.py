"""Time grids and person-period expansions of competing-risks data.

Subjects are identified by their row position in the cohort. Grid indices
in the expanded data are 1-based, so subject ``i`` contributes rows
``j = 1..n_i`` where ``n_i = #{j : t_(j) <= t_i}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class CompetingRisksRecord:
    time: float
    delta: int
    cause: int
    x: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.time > 0:
            raise ValueError(f"time must be positive, got {self.time}")
        if self.delta not in (0, 1):
            raise ValueError(f"delta must be 0 or 1, got {self.delta}")
        if self.delta == 1 and self.cause not in (1, 2):
            raise ValueError(f"an event needs cause 1 or 2, got {self.cause}")
        if self.delta == 0 and self.cause != 0:
            raise ValueError("a censored record cannot carry a cause")


@dataclass(frozen=True)
class Cohort:
    """Column-oriented competing-risks data (cause is 0 for censored rows)."""

    time: np.ndarray
    delta: np.ndarray
    cause: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=np.float64)
        delta = np.asarray(self.delta, dtype=np.int8)
        cause = np.asarray(self.cause, dtype=np.int8)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size == time.size else X.reshape(time.size, -1)
        n = time.size
        if delta.shape != (n,) or cause.shape != (n,) or X.shape[0] != n:
            raise ValueError("time, delta, cause and X must have the same number of rows")
        if np.any(~(time > 0)):
            raise ValueError("observation times must be positive")
        if np.any((delta != 0) & (delta != 1)):
            raise ValueError("delta must be 0/1")
        if np.any((delta == 1) & ~np.isin(cause, (1, 2))) or np.any((delta == 0) & (cause != 0)):
            raise ValueError("cause must be 1/2 for events and 0 for censored rows")
        for name, val in (("time", time), ("delta", delta), ("cause", cause), ("X", X)):
            object.__setattr__(self, name, val)

    @classmethod
    def from_records(cls, records: Iterable[CompetingRisksRecord]) -> "Cohort":
        records = list(records)
        if not records:
            raise ValueError("no records")
        p = len(records[0].x)
        return cls(
            [r.time for r in records],
            [r.delta for r in records],
            [r.cause for r in records],
            np.array([r.x for r in records], dtype=np.float64).reshape(len(records), p),
        )

    def records(self) -> list[CompetingRisksRecord]:
        return [
            CompetingRisksRecord(float(t), int(d), int(c), tuple(map(float, x)))
            for t, d, c, x in zip(self.time, self.delta, self.cause, self.X)
        ]

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, mask) -> "Cohort":
        return Cohort(self.time[mask], self.delta[mask], self.cause[mask], self.X[mask])

    def with_times(self, time) -> "Cohort":
        return Cohort(time, self.delta, self.cause, self.X)


def as_cohort(data) -> Cohort:
    return data if isinstance(data, Cohort) else Cohort.from_records(data)


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64).ravel()
        if t.size < 1:
            raise ValueError("a time grid needs at least one point")
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be positive and strictly increasing")
        object.__setattr__(self, "times", t)

    @property
    def J(self) -> int:
        return self.times.size

    def at_risk_count(self, t) -> np.ndarray:
        """n_i: number of grid points at or before each time."""
        return np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right")

    def snap_down(self, t: float) -> int:
        """0-based index of the last grid point <= t, or -1 before the grid."""
        return int(self.at_risk_count(t)) - 1

    def __len__(self):
        return self.J


def build_time_grid(data) -> TimeGrid:
    cohort = as_cohort(data)
    return TimeGrid(np.unique(cohort.time))


def coarsen_times(time, unit: float) -> np.ndarray:
    if not unit > 0:
        raise ValueError("coarsening unit must be positive")
    return unit * np.ceil(np.asarray(time, dtype=np.float64) / unit)


def coarsen_grid(data, unit: float) -> tuple[TimeGrid, Cohort]:
    """Map times up to the next multiple of ``unit``; grid on the coarsened values."""
    cohort = as_cohort(data)
    coarse = cohort.with_times(coarsen_times(cohort.time, unit))
    return build_time_grid(coarse), coarse


def quantile_grid(data, k: int) -> tuple[TimeGrid, Cohort]:
    """Grid of at most ``k`` quantiles of the observed times.

    Every time is mapped up to the first grid point at or above it, so no
    event moves earlier.
    """
    cohort = as_cohort(data)
    if k < 1:
        raise ValueError("k must be >= 1")
    u = np.unique(cohort.time)
    if u.size <= k:
        return TimeGrid(u), cohort
    q = np.quantile(cohort.time, np.arange(1, k + 1) / k, method="inverted_cdf")
    grid = TimeGrid(np.unique(q))
    return grid, discretize(cohort, grid)


def discretize(data, grid: TimeGrid) -> Cohort:
    """Replace each time by the smallest grid point >= it."""
    cohort = as_cohort(data)
    idx = np.searchsorted(grid.times, cohort.time, side="left")
    if np.any(idx >= grid.J):
        raise ValueError("some times fall beyond the last grid point")
    return cohort.with_times(grid.times[idx])


@dataclass(frozen=True)
class LongBinaryData:
    """Person-period rows: covariates are ``[t_(j), x_i]``."""

    subject: np.ndarray
    grid_index: np.ndarray
    y: np.ndarray
    X: np.ndarray
    n_at_risk: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.y.size

    def rows_of(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.subject == i)


def _check_on_grid(cohort: Cohort, grid: TimeGrid) -> np.ndarray:
    n_i = grid.at_risk_count(cohort.time)
    if np.any(n_i < 1):
        raise ValueError("some observation times precede the first grid point")
    return n_i


def _person_period(cohort: Cohort, grid: TimeGrid, n_i: np.ndarray, final_y: np.ndarray) -> LongBinaryData:
    subject = np.repeat(np.arange(cohort.n), n_i)
    starts = np.cumsum(n_i) - n_i
    j = np.arange(subject.size) - np.repeat(starts, n_i) + 1
    y = np.zeros(subject.size, dtype=np.int8)
    last = np.cumsum(n_i) - 1
    y[last] = final_y
    X = np.column_stack([grid.times[j - 1], cohort.X[subject]])
    return LongBinaryData(subject, j, y, X, n_i)


def expand_survival(data, grid: TimeGrid) -> LongBinaryData:
    cohort = as_cohort(data)
    n_i = _check_on_grid(cohort, grid)
    return _person_period(cohort, grid, n_i, cohort.delta)


def expand_crisk_m1(data, grid: TimeGrid) -> tuple[LongBinaryData, LongBinaryData]:
    """Any-event person-period rows plus one cause-1 indicator row per event."""
    cohort = as_cohort(data)
    n_i = _check_on_grid(cohort, grid)
    any_event = _person_period(cohort, grid, n_i, cohort.delta)
    ev = np.flatnonzero(cohort.delta == 1)
    u = (cohort.cause[ev] == 1).astype(np.int8)
    X = np.column_stack([cohort.time[ev], cohort.X[ev]]).reshape(ev.size, 1 + cohort.p)
    cause_given_event = LongBinaryData(ev, n_i[ev], u, X, n_i)
    return any_event, cause_given_event


def expand_crisk_m2(data, grid: TimeGrid) -> tuple[LongBinaryData, LongBinaryData]:
    """Cause-1 rows, and cause-2 rows minus each cause-1 event row."""
    cohort = as_cohort(data)
    n_i = _check_on_grid(cohort, grid)
    cause1 = _person_period(cohort, grid, n_i, (cohort.cause == 1).astype(np.int8))
    full2 = _person_period(cohort, grid, n_i, (cohort.cause == 2).astype(np.int8))
    keep = cause1.y == 0
    cause2 = LongBinaryData(
        full2.subject[keep], full2.grid_index[keep], full2.y[keep], full2.X[keep], n_i
    )
    return cause1, cause2


def reconstruct_m1(any_event: LongBinaryData, cause_given_event: LongBinaryData, grid: TimeGrid) -> Cohort:
    """Recover (t, delta, cause, x) from the Method-1 expansions."""
    n = any_event.n_at_risk.size
    last = np.cumsum(any_event.n_at_risk) - 1
    time = grid.times[any_event.grid_index[last] - 1]
    delta = any_event.y[last].astype(np.int8)
    cause = np.zeros(n, dtype=np.int8)
    cause[cause_given_event.subject] = np.where(cause_given_event.y == 1, 1, 2)
    X = any_event.X[last, 1:]
    return Cohort(time, delta, cause, X)


def loglik_multinomial(data, grid: TimeGrid, p1, p2) -> float:
    """Discrete-time competing-risks log-likelihood.

    ``p1``/``p2`` are (N, J) arrays of cause-specific conditional event
    probabilities at each grid time.
    """
    cohort = as_cohort(data)
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    n_i = _check_on_grid(cohort, grid)
    total = 0.0
    for i in range(cohort.n):
        for j in range(n_i[i]):
            k = cohort.cause[i] if j == n_i[i] - 1 else 0
            if k == 1:
                total += np.log(p1[i, j])
            elif k == 2:
                total += np.log(p2[i, j])
            else:
                total += np.log1p(-p1[i, j] - p2[i, j])
    return float(total)


def _bernoulli_ll(y, p) -> float:
    return float(np.sum(np.where(y == 1, np.log(p), np.log1p(-p))))


def loglik_m1(data, grid: TimeGrid, p1, p2) -> float:
    """Same likelihood through the any-event and cause-given-event datasets."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    any_event, u = expand_crisk_m1(data, grid)
    pdot = p1 + p2
    ll = _bernoulli_ll(any_event.y, pdot[any_event.subject, any_event.grid_index - 1])
    psi = p1[u.subject, u.grid_index - 1] / pdot[u.subject, u.grid_index - 1]
    return ll + _bernoulli_ll(u.y, psi)


def loglik_m2(data, grid: TimeGrid, p1, p2) -> float:
    """Same likelihood through the cause-1 and conditional cause-2 datasets."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    c1, c2 = expand_crisk_m2(data, grid)
    ll = _bernoulli_ll(c1.y, p1[c1.subject, c1.grid_index - 1])
    ptilde = p2 / (1.0 - p1)
    return ll + _bernoulli_ll(c2.y, ptilde[c2.subject, c2.grid_index - 1])
