import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from crbart import _kernel
from crbart.trees import (
    THETA_GRID,
    DartPrior,
    DimensionError,
    Ensemble,
    SplitRule,
    Tree,
    TreePrior,
    calibrate_lambda,
    dart_update_s,
    dart_update_theta,
    ensemble_eval,
    grow_prob,
    leaf_log_marginal,
    leaf_posterior_draw,
    leaf_posterior_params,
    leaf_scale,
    make_cutpoints,
    sample_prior_tree,
    sample_split_variable,
    sigma_draw,
    sigma_posterior_params,
    tree_log_marginal,
    tree_traverse,
)


def left_tree():
    # x1 < 4 -> 10; else x2 < 4 -> 20, else 30
    return Tree.branch(
        SplitRule(0, 4.0),
        Tree.leaf(10.0),
        Tree.branch(SplitRule(1, 4.0), Tree.leaf(20.0), Tree.leaf(30.0)),
    )


def center_tree():
    # x2 < 2 -> (x1 < 1 -> 20, else 40); else 60
    return Tree.branch(
        SplitRule(1, 2.0),
        Tree.branch(SplitRule(0, 1.0), Tree.leaf(20.0), Tree.leaf(40.0)),
        Tree.leaf(60.0),
    )


# -- traversal and ensembles -----------------------------------------------------


def test_two_tree_example_values():
    assert tree_traverse(left_tree(), (5, 3)) == 20
    assert tree_traverse(center_tree(), (5, 3)) == 60
    assert tree_traverse(Tree.leaf(0.0), (1.0, 2.0)) == 0
    ens = Ensemble((left_tree(), center_tree()))
    assert ensemble_eval(ens, (5, 3)) == 80
    assert ensemble_eval(ens, (0.5, 0.3)) == 30


@pytest.mark.parametrize(
    "x, total",
    [((0.5, 0.3), 30), ((2, 1), 50), ((2, 3), 70), ((5, 1), 60), ((5, 3), 80), ((5, 5), 90)],
)
def test_sum_reproduces_refined_partition(x, total):
    ens = Ensemble((left_tree(), center_tree()))
    assert ens(x) == total


def test_root_only_ensemble_is_offset():
    ens = Ensemble((Tree.leaf(0.0), Tree.leaf(0.0)), mu0=1.5)
    assert ens((3.0, -1.0)) == 1.5


def test_traverse_dimension_error():
    with pytest.raises(DimensionError):
        left_tree().traverse((5.0,))


def test_tree_structure_counts():
    t = left_tree()
    assert t.n_leaves == t.n_branches + 1 == 3
    assert t.depth() == 2
    assert Tree.from_dict(t.to_dict()) == t


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_every_input_reaches_exactly_one_leaf(seed, nvars):
    rng = np.random.default_rng(seed)
    tree = sample_prior_tree(TreePrior(alpha=0.95, gamma=1.0), rng, nvars)
    X = rng.random((10_000, nvars))
    leaves = {k for k in range(tree.n_nodes) if tree.variable[k] < 0}
    idx = np.array([tree.leaf_index(x) for x in X[:500]])
    assert set(idx) <= leaves
    # vectorised routing agrees with the scalar walk
    np.testing.assert_array_equal(tree.predict(X[:500]), tree.value[idx])
    assert np.all(np.isfinite(tree.predict(X)))
    assert tree.n_leaves == tree.n_branches + 1


# -- priors -------------------------------------------------------------------------


def test_grow_prob_values():
    assert grow_prob(0, 0.95, 2) == 0.95
    assert grow_prob(1, 0.95, 2) == pytest.approx(0.2375, abs=1e-15)
    assert grow_prob(3, 0.95, 2) == pytest.approx(0.059375, abs=1e-15)


def test_leaf_scale():
    assert leaf_scale(2.0, probit=True) == 1.5
    assert leaf_scale(2.0, probit=False) == 0.25


def test_tree_prior_validation():
    with pytest.raises(ValueError):
        TreePrior(alpha=1.0)
    with pytest.raises(ValueError):
        TreePrior(split_probs=[0.5, 0.5 + 1e-9])
    TreePrior(split_probs=[0.25, 0.75])


def test_split_variable_sampling():
    rng = np.random.default_rng(0)
    assert {sample_split_variable(TreePrior(), 1, rng) for _ in range(50)} == {0}
    degenerate = TreePrior(split_probs=[1.0, 0.0, 0.0])
    assert {sample_split_variable(degenerate, 3, rng) for _ in range(200)} == {0}
    half = TreePrior(split_probs=[0.5, 0.5])
    draws = np.array([sample_split_variable(half, 2, rng) for _ in range(100_000)])
    assert abs(np.mean(draws == 0) - 0.5) < 0.01


def test_prior_tree_simulation():
    rng = np.random.default_rng(1)
    trees = [sample_prior_tree(TreePrior(), rng, 2) for _ in range(20_000)]
    root_only = np.mean([t.n_nodes == 1 for t in trees])
    se = math.sqrt(0.05 * 0.95 / len(trees))
    assert abs(root_only - 0.05) < 4 * se
    assert np.mean([t.depth() for t in trees]) < 3


def test_kernel_leaves_tree_prior_invariant():
    # flat likelihood (zero residuals, vanishing leaf variance): the GROW/PRUNE
    # chain must sample the branching-process prior, so P(root-only) = 1 - alpha
    rng = np.random.default_rng(0)
    X = rng.random((2000, 2))
    grid = make_cutpoints(X, 100)
    Xb = np.ascontiguousarray(grid.bin(X))
    cap = 2**11 - 1
    status = np.zeros(cap, np.int8)
    status[0] = 1
    var = np.full(cap, -1, np.int32)
    cut = np.full(cap, -1, np.int32)
    leaf_of = np.zeros(2000, np.int32)
    resid = np.zeros(2000)
    nstat = np.zeros(cap, np.int64)
    nstat[0] = 2000
    sstat = np.zeros(cap)
    cum_s = np.cumsum([0.5, 0.5])
    _kernel.seed(7)
    n_iter, root = 100_000, 0
    for _ in range(n_iter):
        _kernel.mh_step(status, var, cut, leaf_of, resid, Xb, grid.ncuts(), cum_s,
                        0.95, 2.0, 1.0, 1e-12, 10, nstat, sstat)
        root += status[1] == 0
    assert abs(root / n_iter - 0.05) < 0.006


# -- conjugate algebra -----------------------------------------------------------------


def test_leaf_posterior_hand_example():
    # n=4, sum=2, sigma=1, tau^2/m = 1
    mean, var = leaf_posterior_params(4, 2.0, 1.0, 1.0, 1)
    assert mean == pytest.approx(0.4, abs=1e-15)
    assert var == pytest.approx(0.2, abs=1e-15)


def test_leaf_posterior_limits():
    rng = np.random.default_rng(2)
    draws = np.array([leaf_posterior_draw([], 1.0, 2.0, 4, rng) for _ in range(20_000)])
    assert abs(draws.var() - 1.0) < 0.05  # prior N(0, tau^2/m) = N(0, 1)
    mean, _ = leaf_posterior_params(10**6, 0.3 * 10**6, 1.0, 1.0, 200)
    assert abs(mean - 0.3) < 1e-3


def _brute_leaf_marginal(r, sigma, smu):
    f = lambda mu: np.prod(stats.norm.pdf(r, mu, sigma)) * stats.norm.pdf(mu, 0, smu)  # noqa: E731
    return integrate.quad(f, -np.inf, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]


@pytest.mark.parametrize("seed", range(5))
def test_marginal_likelihood_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    X = rng.random((n, 2))
    r = rng.normal(0, 1.5, n)
    sigma, tau, m = rng.uniform(0.5, 2), rng.uniform(0.5, 3), int(rng.integers(1, 10))
    tree = Tree.branch(SplitRule(0, 0.5), Tree.leaf(), Tree.leaf())
    smu = tau / math.sqrt(m)
    left = X[:, 0] < 0.5
    brute = np.prod([_brute_leaf_marginal(r[mask], sigma, smu) for mask in (left, ~left) if mask.any()])
    got = math.exp(tree_log_marginal(tree, r, X, sigma, tau, m))
    assert got == pytest.approx(brute, rel=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_leaf_posterior_moments_match_quadrature(seed):
    rng = np.random.default_rng(100 + seed)
    r = rng.normal(0.5, 1, int(rng.integers(1, 6)))
    sigma, tau, m = rng.uniform(0.5, 2), rng.uniform(0.5, 3), int(rng.integers(1, 10))
    smu = tau / math.sqrt(m)
    post = lambda mu: np.prod(stats.norm.pdf(r, mu, sigma)) * stats.norm.pdf(mu, 0, smu)  # noqa: E731
    q = lambda g: integrate.quad(g, -np.inf, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]  # noqa: E731
    z = q(post)
    m1 = q(lambda mu: mu * post(mu)) / z
    m2 = q(lambda mu: mu * mu * post(mu)) / z
    mean, var = leaf_posterior_params(r.size, r.sum(), sigma, tau, m)
    assert mean == pytest.approx(m1, rel=1e-6)
    assert var == pytest.approx(m2 - m1**2, rel=1e-6)
    draws = np.array([leaf_posterior_draw(r, sigma, tau, m, rng) for _ in range(20_000)])
    assert abs(draws.mean() - m1) < 5 * math.sqrt(var / draws.size)


def test_leaf_log_marginal_is_gaussian_density():
    # independent route: the leaf vector is N(0, sigma^2 I + smu^2 11')
    r = np.array([0.3, -1.2, 2.0])
    sigma, tau, m = 1.3, 2.0, 3
    cov = sigma**2 * np.eye(3) + tau**2 / m
    expected = stats.multivariate_normal(np.zeros(3), cov).logpdf(r)
    assert leaf_log_marginal(r, sigma, tau, m) == pytest.approx(expected, abs=1e-12)


# -- sigma --------------------------------------------------------------------------------


def test_sigma_posterior_scale_and_prior_mean():
    assert sigma_posterior_params([0.0, 0.0, 0.0], 3, 1) == (6, 0.5)
    rng = np.random.default_rng(3)
    s2 = np.array([sigma_draw([], 3, 1, rng) ** 2 for _ in range(100_000)])
    # inverse-chi-square with nu=3 has infinite variance, so the median is the stable check
    assert np.median(s2) == pytest.approx(3 / stats.chi2.ppf(0.5, 3), rel=0.02)
    s2_5 = np.array([sigma_draw([], 5, 1, rng) ** 2 for _ in range(100_000)])
    assert s2_5.mean() == pytest.approx(5 / 3, rel=0.02)


def test_sigma_concentrates():
    rng = np.random.default_rng(4)
    resid = rng.normal(0, 2, 200_000)
    assert sigma_draw(resid, 3, 1, rng) ** 2 == pytest.approx(4.0, rel=0.02)


def test_sigma_refused_in_probit_mode():
    with pytest.raises(RuntimeError):
        sigma_draw([0.0], 3, 1, np.random.default_rng(0), probit=True)


def test_calibrate_lambda_quantile():
    lam = calibrate_lambda(2.0, nu=3, q=0.9)
    # P(sigma < 2) under sigma^2 ~ nu*lam / chi2_nu
    assert stats.chi2.sf(3 * lam / 4.0, 3) == pytest.approx(0.9, abs=1e-12)


# -- DART -----------------------------------------------------------------------------------


def test_dart_symmetric_mean():
    rng = np.random.default_rng(5)
    s = np.array([dart_update_s(np.zeros(10), 10.0, rng) for _ in range(10_000)])
    assert np.all(np.abs(s.mean(axis=0) - 0.1) < 0.005)


def test_dart_count_dominance_and_beta_marginal():
    rng = np.random.default_rng(6)
    counts = np.zeros(10)
    counts[0] = 100
    assert dart_update_s(counts, 0.01, rng)[0] > 0.95
    s1 = np.array([dart_update_s([1, 1], 2.0, rng)[0] for _ in range(10_000)])
    assert abs(s1.mean() - 0.5) < 0.01


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.integers(0, 50), min_size=1, max_size=30),
    st.floats(1e-3, 100),
    st.integers(0, 2**31),
)
def test_dart_draw_is_a_probability_vector(counts, theta, seed):
    s = dart_update_s(counts, theta, np.random.default_rng(seed))
    assert np.all(s >= 0)
    assert abs(s.sum() - 1.0) <= 1e-12


def test_dart_theta_prior_median():
    rng = np.random.default_rng(7)
    rho = 10.0
    th = np.array([dart_update_theta(None, rho, 0.5, 1.0, rng) for _ in range(10_000)])
    lam = th / (th + rho)
    assert abs(np.median(lam) - stats.beta.ppf(0.5, 0.5, 1.0)) < 0.02
    assert abs(np.median(lam) - 0.25) < 0.02
    assert np.all(np.isfinite(th)) and np.all(th > 0)
    assert lam.min() >= THETA_GRID[0] - 1e-12 and lam.max() <= THETA_GRID[-1] + 1e-12


def test_dart_theta_uniform_s_shifts_up():
    rng = np.random.default_rng(8)
    P = 200
    s = np.full(P, 1.0 / P)
    prior = np.array([dart_update_theta(None, P, 0.5, 1.0, rng) for _ in range(2000)])
    post = np.array([dart_update_theta(s, P, 0.5, 1.0, rng) for _ in range(2000)])
    res = stats.mannwhitneyu(post, prior, alternative="greater")
    assert res.pvalue < 1e-6


def test_dart_prior_defaults():
    d = DartPrior()
    assert (d.a, d.b, d.rho, d.theta_random) == (0.5, 1.0, None, True)


# -- cutpoints ---------------------------------------------------------------------------------


def test_binary_covariate_single_cut():
    grid = make_cutpoints(np.array([[0.0], [1.0], [1.0], [0.0]]))
    np.testing.assert_array_equal(grid.cuts[0], [0.5])


def test_cutpoints_capped():
    X = np.random.default_rng(9).random((5000, 1))
    grid = make_cutpoints(X, 100)
    assert len(grid.cuts[0]) <= 100
    assert np.all(np.diff(grid.cuts[0]) > 0)
