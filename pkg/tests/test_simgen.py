import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from crbart.evaluation import aalen_johansen
from crbart.simgen import (
    SCENARIO_ROWS,
    ScenarioConfig,
    TrueCif,
    calibrate_censoring,
    censoring_rate_for_times,
    fg_invert_cause1,
    friedman_relevant,
    friedman_score,
    gen_case1,
    gen_case2,
    gen_friedman,
    generate,
    limiting_cif_case1,
    scenario_row,
    true_cif_case1,
    true_cif_case2,
    true_cif_case3,
)


def sup_cif_error(sim, group):
    """Sup over t of |empirical - true| for both causes; checked on both sides of each jump."""
    aj = aalen_johansen(sim.cohort, group)
    f1, f2 = sim.truth(aj.times, np.full(aj.times.size, float(group)))
    left1 = np.concatenate([[0.0], aj.F1[:-1]])
    left2 = np.concatenate([[0.0], aj.F2[:-1]])
    return max(np.abs(aj.F1 - f1).max(), np.abs(left1 - f1).max(),
               np.abs(aj.F2 - f2).max(), np.abs(left2 - f2).max())


def test_closed_form_values():
    p1 = dict(lambda01=1, lambda02=1, beta1=0, beta2=0)
    assert true_cif_case1(1.0, 0, p1)[0] == pytest.approx(0.5 * (1 - math.exp(-2)), abs=1e-12)
    assert true_cif_case1(1.0, 0, p1)[0] == pytest.approx(0.432332, abs=1e-6)
    assert true_cif_case1(0.0, 1, p1) == (0.0, 0.0)
    assert limiting_cif_case1(0, dict(lambda01=2, lambda02=0.5, beta1=0, beta2=0)) == pytest.approx(0.8)
    p2 = dict(beta1=-math.log(2), p0=0.5, gamma0=2)
    expected = 1 - (1 - 0.5 * (1 - math.exp(-2))) ** 0.5
    assert true_cif_case2(1.0, 1, p2)[0] == pytest.approx(expected, abs=1e-15)
    assert true_cif_case2(1.0, 1, p2)[0] == pytest.approx(0.246563, abs=1e-6)
    assert true_cif_case2(1e3, 0, p2)[0] == pytest.approx(0.5)
    p3 = dict(beta1=-math.log(3), beta2=math.log(3), p0=0.5, gamma0=2)
    assert true_cif_case3(1.0, 1, p3)[0] == pytest.approx(0.432332, abs=1e-6)
    t = np.linspace(0, 3, 7)
    np.testing.assert_allclose(true_cif_case3(t, 0, p3)[0], 0.5 * (1 - np.exp(-2 * t)), atol=1e-15)


def test_group1_limit_of_row_1_2_is_table_value():
    row = scenario_row("1.2")
    assert limiting_cif_case1(1, row.params()) == pytest.approx(0.2)
    assert limiting_cif_case1(0, row.params()) == pytest.approx(0.5)


def test_case3_limits_equal_p0_in_both_groups():
    row = scenario_row("3.4")
    for x in (0, 1):
        f1, f2 = TrueCif(row)(1e6, x)
        assert f1 == pytest.approx(row.p0) and f2 == pytest.approx(1 - row.p0)


def test_case2_total_incidence_is_one():
    for row in SCENARIO_ROWS[4:8]:
        for x in (0, 1):
            f1, f2 = TrueCif(row)(1e3, x)
            assert f1 + f2 == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_subdistribution_sum_bounded(seed):
    rng = np.random.default_rng(seed)
    n = 50
    t = rng.exponential(2, n)
    x = rng.normal(0, 2, n)
    p = dict(beta1=rng.normal(), p0=rng.uniform(0.01, 0.99), gamma0=rng.uniform(0.1, 5))
    f1, f2 = true_cif_case2(t, x, p)
    assert np.all(f1 + f2 <= 1 + 1e-12) and np.all(f1 >= 0) and np.all(f2 >= 0)


def test_true_cifs_monotone_and_start_at_zero():
    t = np.linspace(0, 5, 200)
    for row in SCENARIO_ROWS:
        for x in (0, 1):
            f1, f2 = TrueCif(row)(t, np.full(t.size, x))
            assert f1[0] == 0 and f2[0] == 0
            assert np.all(np.diff(f1) >= 0) and np.all(np.diff(f2) >= 0)


def test_fg_inversion_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p0, g, score = rng.uniform(0.05, 0.95), rng.uniform(0.2, 4), rng.normal()
        t = rng.exponential()
        f1, _ = true_cif_case2(t, 1.0, dict(beta1=score, p0=p0, gamma0=g))
        u = f1 / (1 - (1 - p0) ** math.exp(score))
        assert fg_invert_cause1(u, score, p0, g) == pytest.approx(t, abs=1e-9)


def test_friedman_score():
    x = np.zeros(10)
    x[5] = x[6] = 1.0
    assert friedman_score(x)[0] == pytest.approx(-0.75, abs=1e-15)
    assert friedman_relevant(10) == (0, 1, 2, 5, 6)
    rng = np.random.default_rng(1)
    X = gen_friedman(200, 10, rng, censor_target=None).cohort.X
    irrelevant = [j for j in range(10) if j not in friedman_relevant(10)]
    Xp = X.copy()
    Xp[:, irrelevant] = X[rng.permutation(200)][:, irrelevant]
    np.testing.assert_array_equal(friedman_score(Xp), friedman_score(X))
    assert np.all(np.abs(X[:, :5]) <= 1) and set(np.unique(X[:, 5:])) == {-1.0, 1.0}
    for bad in (7, 4):
        with pytest.raises(ValueError):
            gen_friedman(10, bad)


def test_friedman_uses_subdistribution_form():
    sim = gen_friedman(5, 10, np.random.default_rng(2))
    assert sim.truth.scenario.p0 == 0.2
    X = sim.cohort.X
    f1, _ = sim.truth(0.7, X)
    np.testing.assert_allclose(f1, 1 - (1 - 0.2 * (1 - np.exp(-2.5 * 0.7))) ** np.exp(friedman_score(X)))


def test_config_validation_and_rows_round_trip():
    assert len(SCENARIO_ROWS) == 12
    for row in SCENARIO_ROWS:
        assert ScenarioConfig.from_json(row.to_json()) == row
    with pytest.raises(ValueError):
        ScenarioConfig("Cox", lambda01=1.0)
    with pytest.raises(ValueError):
        ScenarioConfig("FineGray", p0=1.5, gamma0=1)
    with pytest.raises(ValueError):
        ScenarioConfig("Weird")
    with pytest.raises(KeyError):
        scenario_row("9.9")
    with pytest.raises(ValueError):
        gen_case2(scenario_row("1.1"))


def test_censoring_calibration():
    exp1 = lambda rng, n: rng.exponential(size=n)  # noqa: E731
    assert censoring_rate_for_times(np.ones(1), 0.5) == pytest.approx(math.log(2))
    cox = ScenarioConfig("Cox", 0.5, 0.5)  # T ~ Exp(1) in both groups
    assert calibrate_censoring(cox, 0.2) == pytest.approx(0.25, rel=1e-12)
    assert calibrate_censoring(cox, 0.5) == pytest.approx(1.0, rel=1e-12)
    assert calibrate_censoring(exp1, 0.2) == pytest.approx(0.25, abs=0.01)
    assert calibrate_censoring(cox, 1e-6) < 1e-5
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            calibrate_censoring(cox, bad)


def test_generated_censoring_proportion():
    for label in ("1.4", "2.3", "3.2"):
        row = scenario_row(label)
        sim = generate(ScenarioConfig(**{**row.__dict__, "N": 20000, "censor_target": 0.5, "seed": 4}))
        assert abs(1 - sim.cohort.delta.mean() - 0.5) < 0.02
        assert np.all(sim.cohort.cause[sim.cohort.delta == 0] == 0)


def test_censoring_independent_of_cause():
    # constant equal hazards: event time carries no information about cause, so neither can censoring
    sim = generate(ScenarioConfig("Cox", 1.0, 1.0, N=10**5, censor_target=0.2, seed=6))
    censored = sim.cohort.delta == 0
    table = [[np.sum(censored & (sim.event_cause == k)), np.sum(~censored & (sim.event_cause == k))] for k in (1, 2)]
    assert stats.chi2_contingency(table).pvalue > 0.001


def test_seed_determinism():
    row = scenario_row("1.3")
    a = gen_case1(row)
    b = gen_case1(row)
    np.testing.assert_array_equal(a.cohort.time, b.cohort.time)
    np.testing.assert_array_equal(a.cohort.X, b.cohort.X)


def test_group_allocation_is_balanced():
    sim = generate(ScenarioConfig(**{**scenario_row("1.1").__dict__, "N": 10**5, "seed": 8}))
    assert abs(sim.cohort.X[:, 0].mean() - 0.5) < 0.01


@pytest.mark.parametrize("label", ["1.3", "2.2", "3.2"])
def test_generator_matches_closed_form(label):
    row = scenario_row(label)
    sim = generate(ScenarioConfig(**{**row.__dict__, "N": 10**5, "seed": 7}))
    for g in (0, 1):
        assert sup_cif_error(sim, g) < 0.01


def test_case1_empirical_limit():
    row = scenario_row("1.3")
    sim = generate(ScenarioConfig(**{**row.__dict__, "N": 10**5, "seed": 9}))
    g0 = sim.cohort.X[:, 0] == 0
    assert abs(np.mean(sim.cohort.cause[g0] == 1) - 0.8) < 0.01
