"""Binary-outcome BART through truncated-normal latent augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .sampler import ForestDraws, McmcConfig, run_chains
from .trees import CutGrid, DimensionError, Ensemble, leaf_scale, make_cutpoints

_TAIL_SWITCH = 5.0
_P_MIN = np.finfo(float).tiny
_P_MAX = 1.0 - np.finfo(float).epsneg


class DegenerateOutcomeError(ValueError):
    """All responses are 0 or all are 1."""


@dataclass(frozen=True)
class BinaryDataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        y = np.asarray(self.y)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DimensionError(f"X {X.shape} and y {y.shape} are not aligned")
        if y.size < 1:
            raise ValueError("a binary dataset needs at least one row")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains missing or non-finite values")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("y must contain only 0/1")
        object.__setattr__(self, "X", np.ascontiguousarray(X))
        object.__setattr__(self, "y", y.astype(np.int8))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def probit_offset(ybar: float) -> float:
    if not 0.0 < ybar < 1.0:
        raise DegenerateOutcomeError(f"mean response {ybar} leaves no contrast (all-0 or all-1)")
    return float(special.ndtri(ybar))


def truncnorm_above(a, rng: np.random.Generator) -> np.ndarray:
    """Draw X ~ N(0, 1) conditioned on X >= a, elementwise.

    Inverse CDF on the upper tail; exponential rejection once a exceeds 5.
    """
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    easy = a <= _TAIL_SWITCH
    if np.any(easy):
        u = rng.random(np.count_nonzero(easy))
        out[easy] = -special.ndtri(u * special.ndtr(-a[easy]))
    hard = np.flatnonzero(~easy)
    while hard.size:
        ah = a[hard]
        rate = 0.5 * (ah + np.sqrt(ah * ah + 4.0))
        x = ah + rng.exponential(size=hard.size) / rate
        ok = rng.random(hard.size) <= np.exp(-0.5 * (x - rate) ** 2)
        out[hard[ok]] = x[ok]
        hard = hard[~ok]
    return out


def latent_draw(y, fx, rng: np.random.Generator, mu0: float = 0.0) -> np.ndarray:
    """z ~ N(fx + mu0, 1) truncated to z >= 0 where y == 1, z < 0 where y == 0."""
    y = np.asarray(y)
    mean = np.asarray(fx, dtype=np.float64) + mu0
    mean, y = np.broadcast_arrays(mean, y)
    sign = np.where(y == 1, 1.0, -1.0)
    # y=1: z = mean + X, X >= -mean;  y=0: z = mean - X, X >= mean
    z = mean + sign * truncnorm_above(-sign * mean, rng)
    # guard the boundary against rounding
    return np.where(y == 1, np.maximum(z, 0.0), np.minimum(z, -np.finfo(float).tiny))


@dataclass
class ProbitFit:
    """Posterior draws of the probit BART function."""

    forest: ForestDraws
    mu0: float
    cfg: McmcConfig
    counts: np.ndarray
    split_probs: np.ndarray | None
    n_vars: int
    accept_rate: float = float("nan")

    @property
    def n_draws(self) -> int:
        return self.forest.n_draws

    def ensemble(self, d: int) -> Ensemble:
        return self.forest.ensemble(d, self.mu0, leaf_scale(self.cfg.kappa, True), 1.0)

    def latent_mean(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_vars:
            raise DimensionError(f"expected {self.n_vars} columns, got {X.shape[1]}")
        return self.mu0 + self.forest.predict(X)


def predict_prob(fit: ProbitFit, X) -> np.ndarray:
    """Posterior draws of P(y=1 | x), shape (n_draws, N)."""
    return np.clip(special.ndtr(fit.latent_mean(X)), _P_MIN, _P_MAX)


def clamp_mean(ybar: float, n: int) -> float:
    return min(max(ybar, 1.0 / (n + 1)), n / (n + 1))


def fit_probit(
    data: BinaryDataset,
    cfg: McmcConfig = McmcConfig(),
    grid: CutGrid | None = None,
    allow_degenerate: bool = False,
) -> ProbitFit:
    """Albert-Chib Gibbs sampler for probit BART.

    Each iteration updates every tree against the current latents, then
    (with DART) the split probabilities, then redraws the latents. The
    offset uses the response mean clamped to [1/(N+1), N/(N+1)];
    ``allow_degenerate`` lets a single-class response through on that clamp.
    """
    ybar = float(data.y.mean())
    if ybar in (0.0, 1.0) and not allow_degenerate:
        raise DegenerateOutcomeError(
            f"outcome is all {int(ybar)}; probit BART needs both classes"
        )
    mu0 = probit_offset(clamp_mean(ybar, data.n))
    grid = grid or make_cutpoints(data.X, cfg.max_cuts)
    chains = run_chains("probit", data.y, data.X, grid, cfg, mu0, leaf_scale(cfg.kappa, True))
    sp = [c.split_probs for c in chains]
    return ProbitFit(
        forest=ForestDraws.concat([c.forest for c in chains]),
        mu0=mu0,
        cfg=cfg,
        counts=np.concatenate([c.counts for c in chains]),
        split_probs=np.concatenate(sp) if sp[0] is not None else None,
        n_vars=data.p,
        accept_rate=float(np.mean([c.accept_rate for c in chains])),
    )
