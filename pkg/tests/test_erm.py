import numpy as np
import pytest

from tsybnet import nn_core as nc
from tsybnet.boundaries import Constant, Sine
from tsybnet.distributions import ConstantDistribution, Dataset, TsybakovDistribution
from tsybnet.erm import (
    Hypothesis, SearchConfig, TemplateSet, empirical_risk, erm_boundary_template, erm_exact,
    erm_heuristic, excess_risk, template_grid, template_knots,
)
from tsybnet.set_calculus import BoundaryFragmentSet, Fragment, OffsetSet
from tsybnet.sets import Complement, EmptySet, FullSet, membership


def brute_force(budget, data):
    """Loop over every enumerated net; first strict minimum wins."""
    best = None
    for idx, net in enumerate(nc.enumerate_class(budget)):
        pred = membership(net, data.points)
        err = sum(int(p != (y == 1)) for p, y in zip(pred, data.labels))
        if best is None or err < best[0]:
            best = (err, idx, net)
    return best


def micro_data(seed, n=12, d=1):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 5, size=(n, d)) / 4
    y = (rng.random(n) < 0.5).astype(int)
    return Dataset(X, y, seed)


def test_empirical_risk_trivial():
    data = Dataset(np.random.default_rng(0).random((10, 2)), np.ones(10, dtype=int), 0)
    assert empirical_risk(FullSet(2), data) == 0
    assert empirical_risk(EmptySet(2), data) == 1


def test_empirical_risk_recount():
    rng = np.random.default_rng(1)
    data = Dataset(rng.random((37, 2)), rng.integers(0, 2, 37), 1)
    G = OffsetSet(BoundaryFragmentSet(2, (Fragment(0, 1, (0, 0), (1, 1), Constant(0.4, 1)),)), 0.0)
    count = 0
    for x, y in zip(data.points, data.labels):
        count += int((x[0] <= 0.4) != (y == 1))
    assert empirical_risk(G, data) == count / 37


def test_empirical_risk_rejects_empty():
    with pytest.raises(ValueError):
        empirical_risk(FullSet(1), Dataset(np.zeros((0, 1)), np.zeros(0, dtype=int), 0))


def test_exact_separable_threshold():
    # labels 1 exactly where x = 1, which the single-weight net x -> x realizes
    X = np.array([[0.0], [0.25], [0.5], [1.0], [1.0]])
    data = Dataset(X, np.array([0, 0, 0, 1, 1]), 0)
    rep = erm_exact(nc.ClassBudget(1, 2, 0, 1), data)
    assert rep.risk == 0


@pytest.mark.parametrize("seed", range(5))
def test_exact_matches_brute_force(seed):
    budget = nc.ClassBudget(1, 2, 1, 1)
    data = micro_data(seed, n=8)
    rep = erm_exact(budget, data)
    err, idx, net = brute_force(budget, data)
    assert rep.risk == err / data.n
    assert rep.index == idx
    assert rep.examined == nc.enumeration_size(budget)


def test_exact_tie_break_is_first_in_order():
    # every point unlabeled: the zero net (index 0) and many others have risk 0
    data = Dataset(np.array([[0.5], [0.25]]), np.array([0, 0]), 0)
    rep = erm_exact(nc.ClassBudget(1, 2, 0, 1), data)
    assert rep.index == 0 and rep.risk == 0
    assert erm_exact(nc.ClassBudget(1, 2, 0, 1), data).index == 0


def test_exact_refuses_large_budget():
    data = micro_data(0)
    with pytest.raises(nc.BudgetTooLarge):
        erm_exact(nc.ClassBudget(4, 6, 4, 2), data)


def test_generic_heuristic_close_to_exact():
    budget = nc.ClassBudget(1, 2, 1, 1)
    hits = 0
    for seed in range(10):
        data = micro_data(100 + seed, n=10)
        exact = erm_exact(budget, data).risk
        rep = erm_heuristic(budget, data, SearchConfig(iterations=400, restarts=4, seed=seed))
        hits += rep.risk <= exact
    assert hits >= 9


def test_generic_heuristic_trace_and_zero_iterations():
    budget = nc.ClassBudget(2, 3, 2, 2)
    rng = np.random.default_rng(4)
    data = Dataset(rng.random((30, 2)), rng.integers(0, 2, 30), 4)
    rep = erm_heuristic(budget, data, SearchConfig(iterations=200, restarts=2, seed=1))
    assert all(b <= a for a, b in zip(rep.trace, rep.trace[1:]))
    assert rep.risk == rep.trace[-1] == empirical_risk(rep.hypothesis, data)
    zero = erm_heuristic(budget, data, SearchConfig(iterations=0, restarts=1, seed=1))
    assert len(zero.trace) == 1 and zero.risk == zero.trace[0]


def test_heuristic_is_seeded():
    budget = nc.ClassBudget(2, 3, 2, 2)
    data = TsybakovDistribution(BoundaryFragmentSet(2, (Fragment(
        0, 1, (0, 0), (1, 1), Constant(0.5, 1)),))).sample(50, 3)
    a = erm_heuristic(budget, data, SearchConfig(iterations=100, seed=9))
    b = erm_heuristic(budget, data, SearchConfig(iterations=100, seed=9))
    assert a.risk == b.risk and a.trace == b.trace


# -- boundary template ----------------------------------------------------------


@pytest.mark.parametrize("K", [2, 3, 5, 9, 12])
def test_template_knots_dyadic(K):
    knots = template_knots(K)
    assert len(knots) == K and knots[0] == 0 and knots[-1] == 1
    for w in np.diff(knots):
        assert w > 0 and nc.dyadic_exponent(w) == -np.log2(w)


def test_template_network_realizes_set():
    region = TemplateSet(tuple(template_knots(5)), (0.5, 0.75, 0.25, 0.5, 0.625))
    net = region.network()
    X = np.random.default_rng(5).random((5000, 2))
    np.testing.assert_array_equal(membership(net, X), region.contains(X))


def test_boundary_template_recovers_sine():
    g = Sine(0.5, 0.15, 1.0)
    dist = TsybakovDistribution(BoundaryFragmentSet(2, (Fragment(
        0, 1, (0, 0), (1, 1), g),)), k2=1.0, k3=1.0)
    data = dist.sample(2000, 11)
    budget = nc.ClassBudget(4, 64, 14, 2)
    rep = erm_boundary_template(budget, data, SearchConfig(template="boundary", knots=9, restarts=3))
    # reference: the true boundary interpolated at the knots, rounded to the height grid
    knots = np.asarray(template_knots(9))
    h = 2.0 ** -template_grid(budget.c, 9)
    ref = TemplateSet(tuple(knots), tuple(np.round(g(knots[:, None]).ravel() / h) * h))
    assert rep.risk <= empirical_risk(ref, data)
    assert rep.risk <= 0.002
    assert all(b <= a for a, b in zip(rep.trace, rep.trace[1:]))
    dfq, dd = excess_risk(dist, rep.hypothesis)
    assert dd.value < 0.01


def test_excess_risk_trivial():
    bset = BoundaryFragmentSet(2, (Fragment(0, 1, (0, 0), (1, 1), Constant(0.5, 1)),))
    dist = TsybakovDistribution(bset, beta1=1.0)
    dfq, dd = excess_risk(dist, Hypothesis(bset, "bayes"))
    assert dfq.value == 0 and dd.value == 0
    one = ConstantDistribution(2, 1.0)
    dfq, dd = excess_risk(one, Complement(one.bayes))
    assert dfq.value == pytest.approx(1) and dd.value == pytest.approx(1)


def test_excess_risk_slab_relation():
    bset = BoundaryFragmentSet(2, (Fragment(0, 1, (0, 0), (1, 1), Constant(0.5, 1)),))
    dist = TsybakovDistribution(bset, beta1=1.0, k2=0.5, k3=0.5)
    for delta in (0.05, 0.1):
        dfq, dd = excess_risk(dist, OffsetSet(bset, -delta))
        assert dfq.value == pytest.approx(0.25 * dd.value ** 2, rel=1e-9)
