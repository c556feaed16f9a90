import math

import numpy as np
import pytest

from tsybnet.distributions import ConstantDistribution, distribution_from_dict
from tsybnet.harness import (
    BudgetRule, RateExperimentConfig, class_growth_audit, condition_audit,
    lower_bound_experiment, rows_to_csv, run_rate_experiment, standard_rate_suite,
)
from tsybnet.set_calculus import GridInterpolation


def small_config(seed=1, **kw):
    doc = {"n_grid": (64, 128, 256, 512), "replications": 3, **kw}
    return standard_rate_suite(1.0, seed, **doc)


def test_rate_targets():
    one = standard_rate_suite(1.0)
    two = standard_rate_suite(2.0)
    assert one.target_delta == -0.5
    assert two.target_delta == -0.25 and two.target_fq == -0.5


def test_config_validation_and_round_trip():
    cfg = small_config()
    assert RateExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        small_config(n_grid=(128, 64, 256, 512))
    with pytest.raises(ValueError):
        small_config(replications=0)
    with pytest.raises(ValueError):
        small_config(erm_mode="magic")


def test_budget_rule_monotone():
    rule = BudgetRule()
    a, b = rule.budget(256, 1, 1, 2), rule.budget(8192, 1, 1, 2)
    assert b.s0 > a.s0 and b.L0 >= a.L0 and b.c >= a.c
    assert rule.knots(8192, 1, 1) > rule.knots(256, 1, 1) >= rule.min_knots


def test_rows_to_csv_full_precision():
    text = rows_to_csv([{"a": 1, "b": 0.1 + 0.2}], ["a", "b"])
    assert text.splitlines() == ["a,b", "1,0.30000000000000004"]


def test_rate_experiment_invariants():
    res = run_rate_experiment(small_config())
    for r in res.replications:
        assert 0 <= r["d_fq"] <= 1 and 0 <= r["d_delta"] <= 1
        assert r["erm_mode"] == "heuristic" and r["fits_budget"]
    for row in res.rows:
        vals = [r[row["metric"][:-2]] for r in res.replications if r["n"] == row["n"]]
        assert min(vals) - 1e-15 <= row["mean"] <= max(vals) + 1e-15
    head = res.to_csv().splitlines()[0]
    assert head == "n,metric,mean,stderr,slope_target,erm_mode"
    summary = res.summary()
    assert summary["alt_targets_fq"] == [-1 / 3, -1 / 3]
    assert len(summary["residuals_delta"]) == 4
    # hard margin with k2 = k3 = 1: d_fq equals d_delta
    assert abs(res.slope_fq - res.slope_delta) <= math.hypot(res.stderr_fq, res.stderr_delta) + 1e-12


def test_rate_experiment_worker_independent():
    cfg = small_config(seed=4)
    a = run_rate_experiment(cfg, workers=1)
    b = run_rate_experiment(cfg, workers=3)
    assert a.to_csv() == b.to_csv()
    assert a.replications_csv() == b.replications_csv()


def test_class_growth_log_squared_rule_bounded():
    rule = BudgetRule(tau_log_power=2.0)
    rep = class_growth_audit(rule, [2 ** k for k in range(7, 31, 2)], 1, 1)
    assert rep.bounded
    assert rep.sup_c3 == max(rep.c3[:len(rep.c3) // 2])


def test_class_growth_constant_budget():
    rule = BudgetRule(a=0, b=0, c1=0)
    rep = class_growth_audit(rule, [2 ** k for k in range(7, 14)], 1, 1)
    assert len(set(rep.log_counts)) == 1 and rep.bounded


def test_condition_audit_kappa_two_passes():
    dist = distribution_from_dict(standard_rate_suite(2.0).dist)
    rep = condition_audit(dist, approximator=GridInterpolation(1.0, 1.0))
    assert rep.margin_pass and rep.noise_pass and rep.approx_pass and rep.passed
    assert len(rep.approx_rows) == 3


def test_condition_audit_misdeclared_kappa_fails_margin():
    dist = distribution_from_dict(standard_rate_suite(2.0).dist)
    rep = condition_audit(dist, kappa=1)
    assert not rep.margin_pass


def test_condition_audit_degenerate_noise_skipped():
    rep = condition_audit(ConstantDistribution(2, 1.0), kappa=2)
    assert rep.noise_pass is None and "skipped" in rep.noise_note and rep.passed


def test_lower_bound_experiment_kappa_one():
    rep = lower_bound_experiment(1.0, 1.0, 2, [2 ** k for k in range(7, 14)])
    assert rep.passed
    assert abs(rep.slope + 0.5) <= 0.05
    assert rep.min_affinity > 0.9
    assert rep.to_csv() == lower_bound_experiment(1.0, 1.0, 2, [2 ** k for k in range(7, 14)]).to_csv()
