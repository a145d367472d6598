import numpy as np
import pytest

from fairilp.colgen import ConvexObjective, kkt_residuals, leximin, maximin, minimize_convex
from fairilp.enumeration import brute_force_rule, enumerate_optimal, greedy_cover, maximin_value
from fairilp.errors import CoverageError, GradientUndefined
from fairilp.instances import build_tardiness_ilp, gen_tardiness, tardiness_brute_force
from fairilp.model import IlpInstance, NearOptConfig, Row, SolutionPool, realizes, solve_optimal
from fairilp.partition import Bounds, compute_bounds, partition_agents

from conftest import example1, random_instances, twins_knapsack


def _setup(inst, near=NearOptConfig()):
    sol, z = solve_optimal(inst)
    part = partition_agents(inst, z, incumbent=sol, near=near)
    return z, part.m_sorted, part.witness_pool


def test_leximin_example1():
    inst = example1()
    z, M, pool = _setup(inst)
    rep = leximin(inst, z, M, pool)
    np.testing.assert_allclose(rep.distribution, [1 / 3, 2 / 3, 1 / 3, 1 / 3], atol=1e-6)
    assert rep.check() and len(rep.lottery.support(1e-12)) <= inst.n_agents + 1


def test_leximin_twins():
    inst = twins_knapsack()
    z, M, pool = _setup(inst)
    rep = leximin(inst, z, M, pool)
    np.testing.assert_allclose(rep.distribution, [0.6] * 4, atol=1e-6)


def test_nash_example1_and_kkt():
    inst = example1()
    z, M, pool = _setup(inst)
    rep = minimize_convex(inst, z, M, ConvexObjective("nash"), pool)
    np.testing.assert_allclose(rep.distribution, [1 / 4, 3 / 4, 3 / 8, 3 / 8], atol=1e-7)
    assert rep.kkt_residual <= 1e-8
    assert rep.extras["condition_slack"] >= -1e-6
    assert realizes(rep.pool, rep.lottery, rep.distribution)


def test_knorm_example1():
    inst = example1()
    z, M, pool = _setup(inst)
    rep = minimize_convex(inst, z, M, ConvexObjective("knorm", k=2.0), pool)
    # lambda = (a, b, b): minimize a^2 + 1.5 (1 - a)^2 -> a = 0.6
    np.testing.assert_allclose(rep.distribution, [0.6, 0.4, 0.2, 0.2], atol=1e-7)


def test_maximin_value_only():
    inst = example1()
    z, M, pool = _setup(inst)
    rep = maximin(inst, z, M, pool)
    assert rep.extras["gamma_first"] == pytest.approx(1 / 3, abs=1e-6)
    assert min(rep.distribution[M]) == pytest.approx(1 / 3, abs=1e-6)


def test_coverage_error():
    inst = example1()
    z, M, _ = _setup(inst)
    bad = SolutionPool.from_vectors([[1, 0, 0, 0]], z_star=z)
    with pytest.raises(CoverageError):
        leximin(inst, z, M, bad)
    with pytest.raises(CoverageError):
        minimize_convex(inst, z, M, ConvexObjective("nash"), bad)


def test_greedy_cover_as_initial_pool():
    inst = twins_knapsack()
    z, M, _ = _setup(inst)
    rep = leximin(inst, z, M, greedy_cover(inst, z, M))
    np.testing.assert_allclose(rep.distribution, [0.6] * 4, atol=1e-6)


def test_empty_M_returns_the_single_outcome():
    inst = IlpInstance.binary([2, 1], [Row.of({0: 1, 1: 1}, "<=", 1)])
    z, M, pool = _setup(inst)
    assert M == []
    rep = leximin(inst, z, M, pool)
    assert rep.distribution.tolist() == [1, 0]


@pytest.mark.parametrize("kind,k", [("nash", 0.0), ("knorm", 2.0), ("knorm", 3.5)])
def test_gradient_matches_finite_differences(kind, k):
    rng = np.random.default_rng(1)
    b = Bounds(np.ones(5), np.zeros(5), frozenset(range(5)))
    M = list(range(5))
    for obj in (ConvexObjective(kind, k=k), ConvexObjective(kind, k=k, normalization=b, divide_by_span=True)):
        d = rng.uniform(0.2, 0.9, size=5)
        g = obj.gradient(d, M)
        h = 1e-6
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            fd = (obj.value(d + e, M) - obj.value(d - e, M)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-7)
        H = obj.hessian(d, M)
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            fd = (obj.gradient(d + e, M) - obj.gradient(d - e, M)) / (2 * h)
            np.testing.assert_allclose(H[:, i], fd, rtol=1e-4, atol=1e-6)


def test_nash_gradient_undefined_at_zero():
    with pytest.raises(GradientUndefined):
        ConvexObjective("nash").gradient(np.array([0.5, 0.0]), [0, 1])


def test_custom_objective_matches_knorm():
    inst = example1()
    z, M, pool = _setup(inst)
    custom = ConvexObjective("custom", func=lambda d: float(d @ d), grad=lambda d: 2 * d)
    rep = minimize_convex(inst, z, M, custom, pool)
    # sum of squares has the same minimizer as the 2-norm
    np.testing.assert_allclose(rep.distribution, [0.6, 0.4, 0.2, 0.2], atol=1e-6)


def test_kkt_residuals_detect_non_optimal_lambda():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    lam = np.array([0.9, 0.1])
    mu = ConvexObjective("nash").gradient(lam @ X, [0, 1])
    res = kkt_residuals(X, lam, mu)
    assert res["complementarity"] > 0.1


def test_random_instances_match_oracles():
    for inst in random_instances(20, seed=17, n_max=8):
        z, M, pool = _setup(inst)
        full = enumerate_optimal(inst, z)
        lex = leximin(inst, z, M, pool).distribution
        np.testing.assert_allclose(lex, brute_force_rule(full, "leximin"), atol=1e-5)
        if M:
            nash = minimize_convex(inst, z, M, ConvexObjective("nash"), pool)
            np.testing.assert_allclose(nash.distribution, brute_force_rule(full, "nash"), atol=1e-5)
            assert nash.kkt_residual <= 1e-5


def test_near_optimal_leximin():
    inst = example1()
    near = NearOptConfig(0.25)
    z, M, pool = _setup(inst, near)
    rep = leximin(inst, z, M, pool, near=near)
    X = enumerate_optimal(inst, z, near=near)
    assert X.complete
    np.testing.assert_allclose(rep.distribution, brute_force_rule(X, "leximin"), atol=1e-5)


def test_kalai_smorodinsky_tardiness():
    checked = 0
    for seed in range(6):
        tt = gen_tardiness(5, 0.5, seed)
        inst = build_tardiness_ilp(tt)
        _, z = solve_optimal(inst)
        b = compute_bounds(inst, z)
        best, U = tardiness_brute_force(tt)
        assert best == pytest.approx(z)
        if not b.M:
            continue
        checked += 1
        rep = leximin(inst, z, b.m_sorted, b.witness_pool, b)
        oracle = Bounds(U.max(0), U.min(0), frozenset(b.M))
        expected = maximin_value(SolutionPool.from_vectors(U), oracle)
        assert rep.extras["gamma_first"] == pytest.approx(expected, abs=1e-5)
        nash = minimize_convex(inst, z, b.m_sorted, ConvexObjective("nash", normalization=b), b.witness_pool)
        assert nash.kkt_residual <= 1e-5
    assert checked >= 2
