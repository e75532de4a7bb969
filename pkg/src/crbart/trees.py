"""Sum-of-trees representation, BART/DART priors and the conjugate updates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

from . import _kernel

DEFAULT_MAX_DEPTH = 10


class DimensionError(ValueError):
    """Covariate vector does not match what a tree or fit expects."""


@dataclass(frozen=True)
class SplitRule:
    """Axis-aligned branch decision: go left when ``x[variable] < cutpoint``."""

    variable: int
    cutpoint: float

    def goes_left(self, x) -> bool:
        return x[self.variable] < self.cutpoint


class Tree:
    """Binary decision tree stored as flat node arrays (root at index 0).

    Branch nodes carry ``variable >= 0`` and child pointers; leaves carry
    ``variable == -1`` and a value.
    """

    __slots__ = ("variable", "cutpoint", "value", "left", "right")

    def __init__(self, variable, cutpoint, value, left, right):
        self.variable = np.asarray(variable, dtype=np.int32)
        self.cutpoint = np.asarray(cutpoint, dtype=np.float64)
        self.value = np.asarray(value, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)

    @classmethod
    def leaf(cls, value: float = 0.0) -> "Tree":
        return cls([-1], [0.0], [value], [-1], [-1])

    @classmethod
    def branch(cls, rule: SplitRule, left: "Tree", right: "Tree") -> "Tree":
        nl = left.n_nodes
        shift_l = np.where(left.left >= 0, 1, 0)
        shift_r = np.where(right.left >= 0, 1 + nl, 0)
        return cls(
            np.concatenate([[rule.variable], left.variable, right.variable]),
            np.concatenate([[rule.cutpoint], left.cutpoint, right.cutpoint]),
            np.concatenate([[0.0], left.value, right.value]),
            np.concatenate([[1], left.left + shift_l, right.left + shift_r]),
            np.concatenate([[1 + nl], left.right + shift_l, right.right + shift_r]),
        )

    @property
    def n_nodes(self) -> int:
        return int(self.variable.shape[0])

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.variable < 0))

    @property
    def n_branches(self) -> int:
        return int(np.count_nonzero(self.variable >= 0))

    @property
    def max_variable(self) -> int:
        return int(self.variable.max())

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for k in range(self.n_nodes):
            if self.variable[k] >= 0:
                depth[self.left[k]] = depth[k] + 1
                depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def rules(self) -> list[SplitRule]:
        return [
            SplitRule(int(v), float(c))
            for v, c in zip(self.variable, self.cutpoint)
            if v >= 0
        ]

    def leaf_index(self, x) -> int:
        x = np.asarray(x, dtype=np.float64)
        if self.n_branches and x.shape[-1] <= self.max_variable:
            raise DimensionError(
                f"tree splits on variable {self.max_variable} but x has {x.shape[-1]} entries"
            )
        k = 0
        while self.variable[k] >= 0:
            k = self.left[k] if x[self.variable[k]] < self.cutpoint[k] else self.right[k]
        return int(k)

    def traverse(self, x) -> float:
        return float(self.value[self.leaf_index(x)])

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.n_branches and X.shape[1] <= self.max_variable:
            raise DimensionError(
                f"tree splits on variable {self.max_variable} but X has {X.shape[1]} columns"
            )
        ptr = np.array([0, self.n_nodes], dtype=np.int64)
        return _kernel.predict_flat(
            self.variable, self.cutpoint, self.value, self.left, self.right, ptr, 1, X
        )[0]

    def to_dict(self, k: int = 0) -> dict:
        if self.variable[k] < 0:
            return {"mu": float(self.value[k])}
        return {
            "var": int(self.variable[k]),
            "cut": float(self.cutpoint[k]),
            "left": self.to_dict(int(self.left[k])),
            "right": self.to_dict(int(self.right[k])),
        }

    @classmethod
    def from_dict(cls, node: dict) -> "Tree":
        if "mu" in node:
            return cls.leaf(node["mu"])
        return cls.branch(
            SplitRule(node["var"], node["cut"]),
            cls.from_dict(node["left"]),
            cls.from_dict(node["right"]),
        )

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, a), getattr(other, a)) for a in self.__slots__
        )

    def __repr__(self):
        return f"Tree({self.to_dict()})"


def tree_traverse(tree: Tree, x) -> float:
    return tree.traverse(x)


@dataclass(frozen=True)
class Ensemble:
    """Additive collection of trees plus an offset."""

    trees: tuple[Tree, ...]
    mu0: float = 0.0
    tau: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("an ensemble needs at least one tree")
        if self.tau <= 0 or self.sigma <= 0:
            raise ValueError("tau and sigma must be positive")

    @property
    def m(self) -> int:
        return len(self.trees)

    def __call__(self, x) -> float:
        return ensemble_eval(self, x)

    def predict(self, X) -> np.ndarray:
        return self.mu0 + sum(t.predict(X) for t in self.trees)


def ensemble_eval(ens: Ensemble, x) -> float:
    return ens.mu0 + sum(tree_traverse(t, x) for t in ens.trees)


def leaf_scale(kappa: float, probit: bool) -> float:
    """tau: prior sd of the ensemble function at any x."""
    return (3.0 if probit else 0.5) / kappa


def grow_prob(depth: int, alpha: float, gamma: float) -> float:
    """Prior probability that a node at ``depth`` is a branch."""
    return alpha * (1.0 + depth) ** (-gamma)


@dataclass(frozen=True)
class DartPrior:
    """Sparse Dirichlet prior on split-variable probabilities.

    ``rho``, when left as None, defaults to the number of variables.
    """

    theta: float = 1.0
    rho: float | None = None
    a: float = 0.5
    b: float = 1.0
    theta_random: bool = True


@dataclass(frozen=True)
class TreePrior:
    alpha: float = 0.95
    gamma: float = 2.0
    nu: float = 3.0
    lam: float = 1.0
    split_probs: np.ndarray | None = None
    dart: DartPrior | None = None
    max_depth: int = DEFAULT_MAX_DEPTH

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.nu <= 0 or self.lam <= 0:
            raise ValueError("nu and lambda must be positive")
        if self.split_probs is not None:
            s = np.asarray(self.split_probs, dtype=np.float64)
            if np.any(s < 0) or abs(s.sum() - 1.0) > 1e-12:
                raise ValueError("split_probs must be nonnegative and sum to 1")
            object.__setattr__(self, "split_probs", s)

    def split_weights(self, nvars: int) -> np.ndarray:
        if self.split_probs is None:
            return np.full(nvars, 1.0 / nvars)
        if len(self.split_probs) != nvars:
            raise DimensionError("split_probs length differs from number of variables")
        return self.split_probs


def sample_split_variable(prior: TreePrior, nvars: int, rng: np.random.Generator) -> int:
    s = prior.split_weights(nvars)
    return int(rng.choice(nvars, p=s))


def calibrate_lambda(sd: float, nu: float = 3.0, q: float = 0.90) -> float:
    """Scale so the sigma prior puts mass ``q`` below ``sd``."""
    return sd**2 * stats.chi2.ppf(1.0 - q, nu) / nu


def leaf_posterior_params(n: int, resid_sum: float, sigma: float, tau: float, m: int):
    """Mean and variance of a leaf value given its residuals."""
    prec = n / sigma**2 + m / tau**2
    return (resid_sum / sigma**2) / prec, 1.0 / prec


def leaf_posterior_draw(leaf_resid, sigma: float, tau: float, m: int, rng: np.random.Generator) -> float:
    r = np.asarray(leaf_resid, dtype=np.float64)
    mean, var = leaf_posterior_params(r.size, float(r.sum()), sigma, tau, m)
    return float(mean + math.sqrt(var) * rng.standard_normal())


def leaf_log_marginal(leaf_resid, sigma: float, tau: float, m: int) -> float:
    """Log density of the leaf's residuals with the leaf value integrated out."""
    r = np.asarray(leaf_resid, dtype=np.float64)
    n = r.size
    smu2 = tau**2 / m
    s2 = sigma**2
    return (
        -0.5 * n * math.log(2 * math.pi * s2)
        - 0.5 * float(r @ r) / s2
        + _kernel.log_ml(n, float(r.sum()), s2, smu2)
    )


def tree_log_marginal(tree: Tree, resid, X, sigma: float, tau: float, m: int) -> float:
    """Integrated likelihood of ``resid`` under a fixed tree structure."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    resid = np.asarray(resid, dtype=np.float64)
    leaves = np.array([tree.leaf_index(x) for x in X])
    return sum(
        leaf_log_marginal(resid[leaves == k], sigma, tau, m) for k in np.unique(leaves)
    )


def sigma_posterior_params(resid, nu: float, lam: float) -> tuple[float, float]:
    """Degrees of freedom and scale of the scaled-inverse-chi-square posterior."""
    r = np.asarray(resid, dtype=np.float64)
    df = nu + r.size
    return df, (nu * lam + float(r @ r)) / df


def sigma_draw(resid, nu: float, lam: float, rng: np.random.Generator, *, probit: bool = False) -> float:
    if probit:
        raise RuntimeError("sigma is fixed at 1 in probit mode")
    df, scale = sigma_posterior_params(resid, nu, lam)
    return math.sqrt(df * scale / rng.chisquare(df))


def _log_gamma_draws(shape: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # log G for G ~ Gamma(shape) without underflow at tiny shapes
    boosted = rng.gamma(shape + 1.0)
    return np.log(boosted) + np.log(rng.random(shape.shape)) / shape


def dart_draw_log_s(counts, theta: float, rng: np.random.Generator) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    lg = _log_gamma_draws(theta / counts.size + counts, rng)
    return lg - special.logsumexp(lg)


def dart_update_s(counts, theta: float, rng: np.random.Generator) -> np.ndarray:
    """Draw split probabilities from Dirichlet(theta/P + counts)."""
    s = np.exp(dart_draw_log_s(counts, theta, rng))
    return s / s.sum()


THETA_GRID = np.linspace(0.001, 0.999, 1000)


def dart_theta_logpost(log_s, rho: float, a: float, b: float, grid=THETA_GRID) -> np.ndarray:
    """Unnormalized log posterior of theta over the ``theta/(theta+rho)`` grid."""
    lam = np.asarray(grid)
    logp = stats.beta.logpdf(lam, a, b)
    if log_s is not None:
        log_s = np.asarray(log_s, dtype=np.float64)
        P = log_s.size
        theta = rho * lam / (1.0 - lam)
        logp = logp + (
            special.gammaln(theta)
            - P * special.gammaln(theta / P)
            + (theta / P - 1.0) * log_s.sum()
        )
    return logp


def dart_update_theta(s, rho: float, a: float, b: float, rng: np.random.Generator, *, log_s=None) -> float:
    """One grid draw of the Dirichlet concentration.

    Pass ``s=None`` (and no ``log_s``) to sample from the prior alone.
    """
    if log_s is None and s is not None:
        with np.errstate(divide="ignore"):
            log_s = np.log(np.asarray(s, dtype=np.float64))
        log_s = np.maximum(log_s, np.finfo(float).min / 1e6)
    logp = dart_theta_logpost(log_s, rho, a, b)
    w = np.exp(logp - logp.max())
    lam = THETA_GRID[rng.choice(THETA_GRID.size, p=w / w.sum())]
    return float(rho * lam / (1.0 - lam))


def sample_prior_tree(prior: TreePrior, rng: np.random.Generator, nvars: int = 1) -> Tree:
    """Draw a tree structure from the branching process (leaves set to 0)."""

    def grow(depth, lo, hi):
        p = grow_prob(depth, prior.alpha, prior.gamma) if depth < prior.max_depth else 0.0
        if rng.random() >= p:
            return Tree.leaf(0.0)
        v = sample_split_variable(prior, nvars, rng)
        c = rng.uniform(lo[v], hi[v])
        hl, lr = hi.copy(), lo.copy()
        hl[v] = c
        lr[v] = c
        return Tree.branch(SplitRule(v, c), grow(depth + 1, lo, hl), grow(depth + 1, lr, hi))

    return grow(0, np.zeros(nvars), np.ones(nvars))


@dataclass
class CutGrid:
    """Per-variable candidate cutpoints, fixed once from training data."""

    cuts: list[np.ndarray] = field(default_factory=list)

    @property
    def nvars(self) -> int:
        return len(self.cuts)

    def flat(self):
        ptr = np.zeros(self.nvars + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(c) for c in self.cuts])
        flat = np.concatenate(self.cuts) if self.nvars else np.zeros(0)
        return flat.astype(np.float64), ptr

    def ncuts(self) -> np.ndarray:
        return np.array([len(c) for c in self.cuts], dtype=np.int32)

    def bin(self, X) -> np.ndarray:
        """Binned covariates, shape (P, N): number of cutpoints <= x."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty((self.nvars, X.shape[0]), dtype=np.int32)
        for v, c in enumerate(self.cuts):
            out[v] = np.searchsorted(c, X[:, v], side="right")
        return out


def make_cutpoints(X, max_cuts: int = 100) -> CutGrid:
    """Midpoints of distinct values when few; otherwise quantile cutpoints."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    cuts = []
    for col in X.T:
        u = np.unique(col)
        if u.size <= 1:
            c = np.zeros(0)
        elif u.size - 1 <= max_cuts:
            c = 0.5 * (u[:-1] + u[1:])
        else:
            probs = np.arange(1, max_cuts + 1) / (max_cuts + 1)
            idx = np.floor(probs * (u.size - 1)).astype(int)
            c = np.unique(0.5 * (u[idx] + u[idx + 1]))
        cuts.append(c)
    return CutGrid(cuts)
