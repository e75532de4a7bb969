"""MCMC driver shared by the probit and continuous BART models.

One chain owns a heap-layout forest and updates it strictly sequentially;
several chains with spawned seeds can run in separate processes and are
pooled in chain order afterwards.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from .trees import (
    CutGrid,
    DartPrior,
    Ensemble,
    Tree,
    TreePrior,
    calibrate_lambda,
    dart_draw_log_s,
    dart_update_theta,
    leaf_scale,
    make_cutpoints,
    sigma_draw,
)


@dataclass(frozen=True)
class McmcConfig:
    """Sampler settings. ``n_draws`` counts kept ensembles pooled over chains."""

    m: int = 200
    kappa: float = 2.0
    burn_in: int = 100
    thin: int = 10
    n_draws: int = 2000
    n_chains: int = 1
    seed: int = 0
    dart_enabled: bool = False
    alpha: float = 0.95
    gamma: float = 2.0
    nu: float = 3.0
    max_cuts: int = 100
    max_depth: int = 10
    threads: int = 1
    dart: DartPrior = field(default_factory=DartPrior)

    def __post_init__(self):
        for name in ("m", "thin", "n_draws", "n_chains", "max_cuts", "max_depth", "threads"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.n_draws < self.n_chains:
            raise ValueError("n_draws must be at least n_chains")
        TreePrior(alpha=self.alpha, gamma=self.gamma, nu=self.nu)

    def draws_per_chain(self) -> list[int]:
        base, extra = divmod(self.n_draws, self.n_chains)
        return [base + (1 if c < extra else 0) for c in range(self.n_chains)]


@dataclass
class ForestDraws:
    """Posterior ensembles packed into flat node arrays.

    Tree ``t`` of draw ``d`` occupies nodes ``tree_ptr[d*m+t]`` up to
    ``tree_ptr[d*m+t+1]``; child pointers are local to the tree.
    """

    m: int
    variable: np.ndarray
    cut_index: np.ndarray
    cutpoint: np.ndarray
    value: np.ndarray
    left: np.ndarray
    right: np.ndarray
    tree_ptr: np.ndarray

    @property
    def n_draws(self) -> int:
        return (len(self.tree_ptr) - 1) // self.m

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        return _kernel.predict_flat(
            self.variable, self.cutpoint, self.value, self.left, self.right,
            self.tree_ptr, self.m, X,
        )

    def tree(self, d: int, t: int) -> Tree:
        lo, hi = self.tree_ptr[d * self.m + t], self.tree_ptr[d * self.m + t + 1]
        return Tree(
            self.variable[lo:hi], self.cutpoint[lo:hi], self.value[lo:hi],
            self.left[lo:hi], self.right[lo:hi],
        )

    def ensemble(self, d: int, mu0: float = 0.0, tau: float = 1.0, sigma: float = 1.0) -> Ensemble:
        return Ensemble(tuple(self.tree(d, t) for t in range(self.m)), mu0, tau, sigma)

    @classmethod
    def concat(cls, parts: list["ForestDraws"]) -> "ForestDraws":
        m = parts[0].m
        ptrs = []
        offset = 0
        for p in parts:
            ptrs.append(p.tree_ptr[:-1] + offset)
            offset += int(p.tree_ptr[-1])
        ptrs.append(np.array([offset], dtype=np.int64))
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return cls(
            m, cat("variable"), cat("cut_index"), cat("cutpoint"), cat("value"),
            cat("left"), cat("right"), np.concatenate(ptrs),
        )

    @classmethod
    def from_trees(cls, draws: list[list[Tree]]) -> "ForestDraws":
        m = len(draws[0])
        trees = [t for d in draws for t in d]
        if any(len(d) != m for d in draws):
            raise ValueError("every draw must hold the same number of trees")
        ptr = np.zeros(len(trees) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([t.n_nodes for t in trees])
        cat = lambda name: np.concatenate([getattr(t, name) for t in trees])  # noqa: E731
        var = cat("variable")
        return cls(
            m, var, np.where(var >= 0, 0, -1).astype(np.int32), cat("cutpoint"),
            cat("value"), cat("left"), cat("right"), ptr,
        )


@dataclass
class ChainOutput:
    forest: ForestDraws
    counts: np.ndarray
    split_probs: np.ndarray | None
    sigma: np.ndarray
    accept_rate: float


class _Forest:
    """Mutable heap-layout state of one chain."""

    def __init__(self, m: int, nrow: int, max_depth: int):
        cap = 2 ** (max_depth + 1) - 1
        self.max_depth = max_depth
        self.status = np.zeros((m, cap), dtype=np.int8)
        self.status[:, 0] = _kernel.LEAF
        self.var = np.full((m, cap), -1, dtype=np.int32)
        self.cut = np.full((m, cap), -1, dtype=np.int32)
        self.leaf = np.zeros((m, cap))
        self.leaf_of = np.zeros((m, nrow), dtype=np.int32)
        self.fit = np.zeros(nrow)
        self.resid = np.zeros(nrow)
        self.nstat = np.zeros(cap, dtype=np.int64)
        self.sstat = np.zeros(cap)


def kernel_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def run_chain(
    kind: str,
    y: np.ndarray,
    X: np.ndarray,
    grid: CutGrid,
    cfg: McmcConfig,
    n_keep: int,
    seq: np.random.SeedSequence,
    mu0: float,
    tau: float,
    lam: float = 1.0,
) -> ChainOutput:
    """Run one chain of ``kind`` 'probit' or 'continuous'.

    For 'continuous', ``y`` must already be centered/scaled; ``mu0`` is then
    the offset in that scale (normally 0).
    """
    probit = kind == "probit"
    if not probit and kind != "continuous":
        raise ValueError(f"unknown model kind {kind!r}")
    child_np, child_nb = seq.spawn(2)
    rng = np.random.default_rng(child_np)
    _kernel.seed(kernel_seed(child_nb))

    nrow, P = X.shape
    Xb = np.ascontiguousarray(grid.bin(X))
    ncuts = grid.ncuts()
    thr, thr_ptr = grid.flat()
    state = _Forest(cfg.m, nrow, cfg.max_depth)
    smu = tau / math.sqrt(cfg.m)

    s = np.full(P, 1.0 / P)
    cum_s = np.cumsum(s)
    dart = cfg.dart if cfg.dart_enabled else None
    theta = dart.theta if dart else 0.0
    rho = (dart.rho or P) if dart else 0.0

    if probit:
        from .probit import latent_draw

        sigma = 1.0
        z = latent_draw(y, state.fit, rng, mu0)
    else:
        sigma = float(np.std(y)) if nrow > 1 and np.std(y) > 0 else 1.0
        target = np.ascontiguousarray(y - mu0, dtype=np.float64)

    parts, counts_kept, s_kept, sigma_kept = [], [], [], []
    accepted = 0
    total = cfg.burn_in + n_keep * cfg.thin
    for it in range(total):
        if probit:
            target = z - mu0
        accepted += _kernel.sweep(
            state.status, state.var, state.cut, state.leaf, state.leaf_of, state.fit,
            target, Xb, ncuts, cum_s, cfg.alpha, cfg.gamma, sigma, smu, cfg.max_depth,
            state.resid, state.nstat, state.sstat,
        )
        if not probit:
            sigma = sigma_draw(target - state.fit, cfg.nu, lam, rng)
        if dart is not None and it >= cfg.burn_in // 2:
            counts = _kernel.var_counts(state.status, state.var, P)
            log_s = dart_draw_log_s(counts, theta, rng)
            s = np.exp(log_s)
            s /= s.sum()
            cum_s = np.cumsum(s)
            if dart.theta_random:
                theta = dart_update_theta(None, rho, dart.a, dart.b, rng, log_s=log_s)
        if it >= cfg.burn_in and (it - cfg.burn_in + 1) % cfg.thin == 0:
            nv, nc, nt, nval, nl, nr, ptr = _kernel.compact(
                state.status, state.var, state.cut, state.leaf, thr, thr_ptr
            )
            parts.append(ForestDraws(cfg.m, nv, nc, nt, nval, nl, nr, ptr))
            counts_kept.append(_kernel.var_counts(state.status, state.var, P))
            s_kept.append(s.copy())
            sigma_kept.append(sigma)
        if probit:
            z = latent_draw(y, state.fit, rng, mu0)

    return ChainOutput(
        forest=ForestDraws.concat(parts),
        counts=np.array(counts_kept),
        split_probs=np.array(s_kept) if dart is not None else None,
        sigma=np.array(sigma_kept),
        accept_rate=accepted / max(1, total * cfg.m),
    )


def _run_chain_args(args):
    return run_chain(*args)


def run_chains(kind, y, X, grid, cfg, mu0, tau, lam=1.0) -> list[ChainOutput]:
    """Run ``cfg.n_chains`` independent chains; results are in chain order."""
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    jobs = [
        (kind, y, X, grid, cfg, n, seq, mu0, tau, lam)
        for n, seq in zip(cfg.draws_per_chain(), seqs)
    ]
    if cfg.threads > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.threads, cfg.n_chains)) as ex:
            return list(ex.map(_run_chain_args, jobs))
    return [run_chain(*job) for job in jobs]


@dataclass
class ContinuousFit:
    forest: ForestDraws
    center: float
    scale: float
    sigma: np.ndarray
    counts: np.ndarray
    cfg: McmcConfig

    def predict(self, X) -> np.ndarray:
        """Posterior draws of the regression function, shape (n_draws, N)."""
        return self.center + self.scale * self.forest.predict(X)


def fit_continuous(X, y, cfg: McmcConfig = McmcConfig()) -> ContinuousFit:
    """BART regression for a numeric outcome.

    ``y`` is centered at its mean and divided by its range before fitting.
    """
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have different numbers of rows")
    center = float(y.mean())
    spread = float(y.max() - y.min())
    scale = spread if spread > 0 else 1.0
    ys = (y - center) / scale
    sd = float(np.std(ys, ddof=1)) if ys.size > 1 else 1.0
    lam = calibrate_lambda(sd if sd > 0 else 1.0, cfg.nu)
    grid = make_cutpoints(X, cfg.max_cuts)
    chains = run_chains("continuous", ys, X, grid, cfg, 0.0, leaf_scale(cfg.kappa, False), lam)
    return ContinuousFit(
        forest=ForestDraws.concat([c.forest for c in chains]),
        center=center,
        scale=scale,
        sigma=scale * np.concatenate([c.sigma for c in chains]),
        counts=np.concatenate([c.counts for c in chains]),
        cfg=cfg,
    )


def _tree_to_heap(tree: Tree, grid: CutGrid, max_depth: int):
    cap = 2 ** (max_depth + 1) - 1
    status = np.zeros(cap, dtype=np.int8)
    var = np.full(cap, -1, dtype=np.int32)
    cut = np.full(cap, -1, dtype=np.int32)
    leaf = np.zeros(cap)
    stack = [(0, 0)]
    while stack:
        k, h = stack.pop()
        if h >= cap:
            raise ValueError(f"tree deeper than max_depth={max_depth}")
        if tree.variable[k] < 0:
            status[h] = _kernel.LEAF
            leaf[h] = tree.value[k]
        else:
            v = int(tree.variable[k])
            c = np.searchsorted(grid.cuts[v], tree.cutpoint[k])
            status[h] = _kernel.BRANCH
            var[h] = v
            cut[h] = c
            stack.append((int(tree.left[k]), 2 * h + 1))
            stack.append((int(tree.right[k]), 2 * h + 2))
    return status, var, cut, leaf


def propose_and_accept(
    tree: Tree,
    resid,
    X,
    prior: TreePrior,
    sigma: float,
    tau: float,
    m: int,
    rng: np.random.Generator,
    max_cuts: int = 100,
) -> Tree:
    """One GROW/PRUNE Metropolis-Hastings step with leaves integrated out.

    Cutpoints come from ``X`` (plus any already used by ``tree``). New leaves
    inherit their parent's value and a pruned node takes the mean of its
    children; refresh them with :func:`leaf_posterior_draw`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    resid = np.ascontiguousarray(resid, dtype=np.float64)
    P = X.shape[1]
    base = make_cutpoints(X, max_cuts)
    cuts = []
    for v in range(P):
        used = tree.cutpoint[tree.variable == v]
        cuts.append(np.unique(np.concatenate([base.cuts[v], used])))
    grid = CutGrid(cuts)
    status, var, cut, leaf = _tree_to_heap(tree, grid, prior.max_depth)
    Xb = np.ascontiguousarray(grid.bin(X))
    leaf_of = np.zeros(X.shape[0], dtype=np.int32)
    for i in range(X.shape[0]):
        h = 0
        while status[h] == _kernel.BRANCH:
            h = 2 * h + 1 if Xb[var[h], i] <= cut[h] else 2 * h + 2
        leaf_of[i] = h
    cap = status.shape[0]
    nstat = np.bincount(leaf_of, minlength=cap).astype(np.int64)
    sstat = np.bincount(leaf_of, weights=resid, minlength=cap)
    cum_s = np.cumsum(prior.split_weights(P))
    _kernel.seed(int(rng.integers(2**32, dtype=np.uint64)))
    before = status.copy()
    _kernel.mh_step(
        status, var, cut, leaf_of, resid, Xb, grid.ncuts(), cum_s,
        prior.alpha, prior.gamma, sigma**2, tau**2 / m, prior.max_depth, nstat, sstat,
    )
    if np.array_equal(before, status):
        return tree
    for h in range(cap):
        if status[h] == _kernel.LEAF and before[h] == 0:
            leaf[h] = leaf[(h - 1) // 2]
        elif status[h] == _kernel.LEAF and before[h] == _kernel.BRANCH:
            leaf[h] = 0.5 * (leaf[2 * h + 1] + leaf[2 * h + 2])
    thr, thr_ptr = grid.flat()
    nv, nc, nt, nval, nl, nr, ptr = _kernel.compact(
        status[None], var[None], cut[None], leaf[None], thr, thr_ptr
    )
    return Tree(nv, nt, nval, nl, nr)

