"""Acceptance suite: one verdict line per criterion, at the stated tolerances."""
import json
import math
import time

import numpy as np
import pytest

from tsybnet import cli
from tsybnet import nn_core as nc
from tsybnet.boundaries import PiecewiseLinear, PowerAbs, Sine
from tsybnet.distributions import (
    Dataset, TsybakovDistribution, assouad_quantities, d_fq, fit_loglog_slope, noise_exponent_probe,
)
from tsybnet.erm import erm_exact
from tsybnet.harness import lower_bound_experiment, rows_to_csv, run_rate_experiment, standard_rate_suite
from tsybnet.set_calculus import (
    BoundaryFragmentSet, ExactPiecewiseLinear, Fragment, GridInterpolation, approximation_bound,
    bayes_approx_net,
)
from tsybnet.sets import membership

SEEDS = (1, 2, 3, 4, 5)
N_GRID = tuple(2 ** k for k in range(7, 14))


# -- 1. composition calculus -----------------------------------------------------


def random_net(rng, d_in, d_out, L):
    dims = [d_in] + [int(rng.integers(1, 5)) for _ in range(L)] + [d_out]
    grid = nc.WeightGrid(3).values()

    def draw(shape):
        return rng.choice(grid, size=shape) * (rng.random(shape) < 0.6)

    return nc.Network(tuple(draw((dims[k + 1], dims[k])) for k in range(L + 1)),
                      tuple(draw((dims[k + 1],)) for k in range(L)), 3)


def direct(net, X):
    """Forward pass written out independently of the library."""
    h = np.asarray(X, dtype=float).T
    for W, b in zip(net.weights[:-1], net.shifts):
        h = np.maximum(W @ h - b[:, None], 0.0)
    return (net.weights[-1] @ h).T


def test_criterion_1_composition(record):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, budgets_ok = 0.0, True
    for _ in range(200):
        d, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        inner = random_net(rng, d, m, int(rng.integers(0, 4)))
        outer = random_net(rng, m, int(rng.integers(1, 5)), int(rng.integers(0, 4)))
        other = random_net(rng, d, int(rng.integers(1, 5)), int(rng.integers(0, 4)))
        X = rng.random((1000, d))
        cat = nc.concatenate(outer, inner)
        par = nc.parallelize(inner, other)
        worst = max(worst,
                    float(np.max(np.abs(nc.realize(cat, X) - direct(outer, direct(inner, X))))),
                    float(np.max(np.abs(nc.realize(par, X)
                                        - np.hstack([direct(inner, X), direct(other, X)])))))
        budgets_ok &= cat.L == inner.L + outer.L + 1
        budgets_ok &= nc.sparsity(cat) <= 2 * nc.sparsity(inner) + 2 * nc.sparsity(outer)
        budgets_ok &= par.L == max(inner.L, other.L)
        budgets_ok &= nc.sparsity(par) <= nc.sparsity(inner) + nc.sparsity(other) + 2 * d * par.L
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and budgets_ok and elapsed < 10
    assert record(1, ok, f"max_err={worst:.2e} budgets={budgets_ok} time={elapsed:.1f}s")


# -- 2. counting -----------------------------------------------------------------


def bound_bigint(d, s0, L0, c):
    terms = d * s0 + min(s0, L0) * (s0 + 1) * (s0 + 1)
    return pow(terms * pow(2, c + 2), s0)


def test_criterion_2_counting(record):
    start = time.perf_counter()
    checked, ok = 0, True
    for d in (1, 2, 3):
        for s0 in (2, 3):
            for L0 in (0, 1, 2, 3):
                for c in (0, 1, 2):
                    budget = nc.ClassBudget(L0, s0, c, d)
                    bound = nc.count_bound(budget)
                    ok &= bound == bound_bigint(d, s0, L0, c)
                    if bound > 10 ** 6:
                        continue
                    total = sum(P.shape[0] for _, P in nc.parameter_blocks(budget))
                    ok &= total <= bound and total == nc.enumeration_size(budget)
                    checked += 1
    elapsed = time.perf_counter() - start
    ok = ok and checked > 0 and elapsed < 120
    assert record(2, ok, f"budgets={checked} time={elapsed:.1f}s")


# -- 3. power-of-two nets ----------------------------------------------------------


def test_criterion_3_power_nets(record):
    X = (np.arange(0, 1025) / 1024)[:, None]
    ok = True
    for M in range(1, 11):
        phi1, phi2 = nc.power_of_two_nets(M)
        ok &= np.array_equal(nc.realize(phi1, X)[:, 0], 2.0 ** M * X[:, 0])
        ok &= np.array_equal(nc.realize(phi2, X)[:, 0], np.full(len(X), 2.0 ** M))
        ok &= max(phi1.L, phi2.L) <= M + 1
        ok &= max(nc.sparsity(phi1), nc.sparsity(phi2)) <= 4 * M + 1
    assert record(3, ok, "M=1..10")


# -- 4. approximation ----------------------------------------------------------------


def approx_instance(i):
    """Instance ``i``: kappa cycles 1, 2, 3; boundary kind cycles pw-linear, sine, kink."""
    rng = np.random.default_rng(1000 + i)
    kappa = 1 + i % 3
    kind = (i // 3) % 3
    if kind == 0:
        knots = np.linspace(0, 1, int(rng.integers(2, 6)))
        gamma = PiecewiseLinear(tuple(knots), tuple(rng.uniform(0.3, 0.7, len(knots))))
        approx = ExactPiecewiseLinear()
    elif kind == 1:
        gamma = Sine(rng.uniform(0.4, 0.6), rng.uniform(0.03, 0.15), float(rng.integers(1, 3)),
                     rng.uniform(0, 2 * np.pi))
        approx = GridInterpolation(1.0, gamma.lipschitz)
    else:
        scale = rng.uniform(0.1, 0.5)
        gamma = PowerAbs(rng.uniform(0.2, 0.8), 1.0, scale, rng.uniform(0.3, 0.45))
        approx = GridInterpolation(1.0, scale)
    bset = BoundaryFragmentSet(2, (Fragment(0, 1, (0, 0), (1, 1), gamma),))
    return TsybakovDistribution(bset, beta1=kappa - 1), approx, kappa


def test_criterion_4_approximation(record):
    start = time.perf_counter()
    eps_grid = [2.0 ** -k for k in range(3, 8)]
    probes = np.random.default_rng(7).random((20_000, 2))
    cert_ok = bound_ok = slope_ok = True
    worst_slope = math.inf
    for i in range(50):
        dist, approx, kappa = approx_instance(i)
        beta, B = dist.envelope
        vals = []
        for eps in eps_grid:
            res = bayes_approx_net(dist.bset, eps, approx, kappa)
            cert = res.certified.contains(probes)
            cert_ok &= bool(np.all(membership(res.net, probes[cert])))
            measured = d_fq(dist, res.certified, dist.bayes).value
            bound_ok &= measured <= approximation_bound(
                dist.bset.r, 2, beta, B, eps, kappa, dist.marginal.bound)
            vals.append(measured)
        slope = fit_loglog_slope(eps_grid, vals)[0]
        worst_slope = min(worst_slope, slope - kappa)
        slope_ok &= slope >= kappa - 0.1
    elapsed = time.perf_counter() - start
    ok = cert_ok and bound_ok and slope_ok and elapsed < 300
    assert record(4, ok, f"certified={cert_ok} bound={bound_ok} "
                         f"min(slope-kappa)={worst_slope:.3f} time={elapsed:.1f}s")


# -- 5. noise exponent -----------------------------------------------------------------


def test_criterion_5_noise(record):
    ts = [2.0 ** -k for k in range(3, 9)]
    details, ok = [], True
    for kappa in (2, 3):
        bset = BoundaryFragmentSet(2, (Fragment(0, 1, (0, 0), (1, 1), Sine(0.5, 0.1, 1.0)),))
        probe = noise_exponent_probe(TsybakovDistribution(bset, beta1=kappa - 1), ts, res=2048)
        ok &= abs(probe.slope - 1 / (kappa - 1)) <= 0.1
        details.append(f"kappa={kappa} slope={probe.slope:.3f}")
    assert record(5, ok, " ".join(details))


# -- 6. ERM oracle -------------------------------------------------------------------------


def micro_dataset(k):
    rng = np.random.default_rng(500 + k)
    d = 1 + k % 2
    n = int(rng.integers(8, 33))
    X = rng.integers(0, 9, size=(n, d)) / 8
    return Dataset(X, rng.integers(0, 2, n), k)


def micro_budget(k):
    return nc.ClassBudget(1, 2, 1, 1) if k % 2 == 0 else nc.ClassBudget(1, 2, 0, 2)


def brute_force(budget, data):
    best = None
    for idx, net in enumerate(nc.enumerate_class(budget)):
        err = int(np.sum(membership(net, data.points) != (data.labels == 1)))
        if best is None or err < best[0]:
            best = (err, idx, net)
    return best


def erm_rows():
    rows = []
    for k in range(20):
        data, budget = micro_dataset(k), micro_budget(k)
        rep = erm_exact(budget, data)
        rows.append({"dataset": k, "n": data.n, "risk": rep.risk, "index": rep.index})
    return rows


def test_criterion_6_erm_oracle(record):
    ok = True
    for k in range(20):
        data, budget = micro_dataset(k), micro_budget(k)
        rep = erm_exact(budget, data)
        err, idx, net = brute_force(budget, data)
        grid = np.random.default_rng(k).random((500, data.d))
        ok &= rep.risk == err / data.n and rep.index == idx
        ok &= np.array_equal(membership(rep.hypothesis.net, grid), membership(net, grid))
    assert record(6, ok, "20 datasets")


# -- 7. rates -------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def rate_results():
    out = {}
    start = time.perf_counter()
    for kappa in (1.0, 2.0):
        for seed in SEEDS:
            out[kappa, seed] = run_rate_experiment(standard_rate_suite(kappa, seed))
    return out, time.perf_counter() - start


def test_criterion_7_rates(record, rate_results):
    results, elapsed = rate_results
    passes = {1.0: 0, 2.0: 0}
    lines = []
    for (kappa, seed), res in sorted(results.items()):
        cfg = res.config
        assert cfg.n_grid == N_GRID and cfg.replications == 20 and cfg.rho == 1
        good = abs(res.slope_delta - cfg.target_delta) <= 0.15
        if kappa == 2.0:
            good &= abs(res.slope_fq - cfg.target_fq) <= 0.15
        passes[kappa] += good
        lines.append(f"k{kappa:g}s{seed}:{res.slope_delta:.3f}/{res.slope_fq:.3f}")
    ok = min(passes.values()) >= 4 and elapsed < 1800
    assert record(7, ok, f"passes={passes[1.0]}/5,{passes[2.0]}/5 time={elapsed:.0f}s "
                         + " ".join(lines))


# -- 8. lower bound ------------------------------------------------------------------------


def test_criterion_8_lower_bound(record):
    bounds_ok = True
    for kappa in (1.0, 2.0):
        for K in (2, 4, 8):
            rep = assouad_quantities(K, 1024, kappa - 1, 1.0, 2)
            bounds_ok &= rep.I1 <= rep.I_bound and rep.I2 <= rep.I_bound
    lines, ok = [], bounds_ok
    for kappa in (1.0, 2.0):
        rep = lower_bound_experiment(kappa, 1.0, 2, N_GRID)
        ok &= rep.passed
        lines.append(f"kappa={kappa:g} slope={rep.slope:.3f} target={rep.target:.3f} "
                     f"min_affinity={rep.min_affinity:.4f} stable={rep.stable}")
    assert record(8, ok, f"I_bounds={bounds_ok} " + " ".join(lines))


# -- 9. determinism ------------------------------------------------------------------------


def run_cli(argv, tmp_path, name):
    out = tmp_path / name
    assert cli.main(argv + ["--out", str(out)]) == 0
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.json"}


def test_criterion_9_determinism(record, rate_results, tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    ok = True
    erm_csv = rows_to_csv(erm_rows(), ["dataset", "n", "risk", "index"])
    ok &= erm_csv == rows_to_csv(erm_rows(), ["dataset", "n", "risk", "index"])
    data = micro_dataset(3)
    path = tmp_path / "micro.csv"
    data.to_csv(path)
    erm_argv = ["erm", "--d", "2", "--s0", "2", "--L0", "1", "--c", "0", "--data", str(path),
                "--mode", "exact", "--seed", "3"]
    ok &= run_cli(erm_argv + ["--workers", "1"], tmp_path, "e1") == \
        run_cli(erm_argv + ["--workers", "3"], tmp_path, "e3")
    for kappa in (1.0, 2.0):
        again = run_rate_experiment(standard_rate_suite(kappa, 1), workers=3)
        first = rate_results[0][kappa, 1]
        ok &= again.to_csv() == first.to_csv()
        ok &= again.replications_csv() == first.replications_csv()
    cfg = tmp_path / "lb.json"
    cfg.write_text(json.dumps({"kappa": 1.0, "n_grid": list(N_GRID)}))
    ok &= run_cli(["lower-bound", "--config", str(cfg), "--workers", "1"], tmp_path, "l1") == \
        run_cli(["lower-bound", "--config", str(cfg), "--workers", "3"], tmp_path, "l3")
    assert record(9, ok, "erm, rates (workers 1 vs 3), lower-bound")
