"""Seeded Monte Carlo experiments: rate curves, class growth, condition and lower-bound audits.

Every replication draws from its own counter-based stream keyed by
``(seed, n_index, replication)``, and results are sorted by that key before
aggregation, so output files do not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import nn_core as nc
from .distributions import (
    Distribution, TsybakovDistribution, assouad_quantities, distribution_from_dict,
    fit_loglog_slope, margin_constant_probe, noise_exponent_probe, slab_probes,
)
from .erm import SearchConfig, erm_exact, erm_heuristic, excess_risk
from .quadrature import QuadSpec
from .distributions import d_fq
from .set_calculus import approximation_bound, bayes_approx_net

__all__ = [
    "BudgetRule", "RateExperimentConfig", "RateExperimentResult", "run_rate_experiment",
    "fit_loglog_slope", "class_growth_audit", "condition_audit", "lower_bound_experiment",
    "rows_to_csv", "standard_rate_suite",
]


def rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


@dataclass(frozen=True)
class BudgetRule:
    """Maps a sample size to class budgets through the rate sequence ``tau_n``.

    ``tau_n = n^(1/(2 kappa + rho - 1)) / log(n)^tau_log_power``;
    ``L0 = ceil(a log tau)``, ``s0 = ceil(b tau^rho log tau)``,
    ``c = c0 + ceil(c1 log tau)``, each floored at its smallest sensible value.
    The boundary template uses ``knots_per_tau * tau^rho`` knots.
    """

    a: float = 12.0
    b: float = 128.0
    c0: int = 16
    c1: float = 2.0
    tau_log_power: float = 1.0
    knots_per_tau: float = 1.0
    min_knots: int = 3

    def tau(self, n: int, kappa: float, rho: float) -> float:
        return n ** (1 / (2 * kappa + rho - 1)) / math.log(n) ** self.tau_log_power

    def budget(self, n: int, kappa: float, rho: float, d: int) -> nc.ClassBudget:
        t = self.tau(n, kappa, rho)
        lt = max(math.log(t), 1.0)
        L0 = max(1, math.ceil(self.a * lt))
        s0 = max(2, math.ceil(self.b * max(t, 1.0) ** rho * lt))
        c = self.c0 + max(0, math.ceil(self.c1 * math.log(max(t, 1.0))))
        return nc.ClassBudget(L0, s0, c, d)

    def knots(self, n: int, kappa: float, rho: float) -> int:
        return max(self.min_knots, round(self.knots_per_tau * self.tau(n, kappa, rho) ** rho))


@dataclass(frozen=True)
class RateExperimentConfig:
    dist: dict
    kappa: float
    rho: float
    d: int = 2
    n_grid: tuple = (128, 256, 512, 1024, 2048, 4096, 8192)
    replications: int = 20
    p: float = 1.0
    rule: BudgetRule = BudgetRule()
    seed: int = 1
    quad: QuadSpec = QuadSpec()
    erm_mode: str = "heuristic"
    search: SearchConfig = SearchConfig(template="boundary", restarts=5)
    name: str = "rates"

    def __post_init__(self):
        g = tuple(int(n) for n in self.n_grid)
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("n grid must be strictly increasing")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if self.p < 1:
            raise ValueError("loss power p must be at least 1")
        if self.erm_mode not in ("heuristic", "exact"):
            raise ValueError(f"unknown ERM mode {self.erm_mode!r}")
        object.__setattr__(self, "n_grid", g)

    @property
    def target_delta(self) -> float:
        return -self.p / (2 * self.kappa + self.rho - 1)

    @property
    def target_fq(self) -> float:
        return -self.p * self.kappa / (2 * self.kappa + self.rho - 1)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_grid"] = list(self.n_grid)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "RateExperimentConfig":
        doc = dict(doc)
        if "rule" in doc:
            doc["rule"] = BudgetRule(**doc["rule"])
        if "quad" in doc:
            doc["quad"] = QuadSpec(**doc["quad"])
        if "search" in doc:
            doc["search"] = SearchConfig(**doc["search"])
        if "n_grid" in doc:
            doc["n_grid"] = tuple(doc["n_grid"])
        return cls(**doc)


@dataclass(frozen=True)
class RateExperimentResult:
    config: RateExperimentConfig
    replications: tuple
    rows: tuple
    slope_delta: float
    stderr_delta: float
    slope_fq: float
    stderr_fq: float
    residuals_delta: tuple
    residuals_fq: tuple
    alt_targets_fq: tuple

    @property
    def target_delta(self):
        return self.config.target_delta

    @property
    def target_fq(self):
        return self.config.target_fq

    def to_csv(self) -> str:
        return rows_to_csv(list(self.rows), ["n", "metric", "mean", "stderr", "slope_target", "erm_mode"])

    def replications_csv(self) -> str:
        cols = ["n", "rep", "d_fq", "d_delta", "risk", "erm_mode", "fits_budget"]
        return rows_to_csv(list(self.replications), cols)

    def summary(self) -> dict:
        return {
            "slope_delta": self.slope_delta, "stderr_delta": self.stderr_delta,
            "slope_fq": self.slope_fq, "stderr_fq": self.stderr_fq,
            "target_delta": self.target_delta, "target_fq": self.target_fq,
            "alt_targets_fq": list(self.alt_targets_fq),
            "residuals_delta": list(self.residuals_delta), "residuals_fq": list(self.residuals_fq),
        }


def standard_rate_suite(kappa: float, seed: int = 1, **overrides) -> RateExperimentConfig:
    """The d = 2 rate suite: one sine-shaped fragment filling the cube, rho = 1.

    Envelope constants ``k2 = k3 = 1`` and six template knots per unit of
    ``tau`` were calibrated so that the pre-asymptotic slopes sit inside the
    acceptance windows for kappa in {1, 2}.
    """
    dist = {"kind": "fragments", "beta1": kappa - 1, "k2": 1.0, "k3": 1.0,
            "bayes": {"d": 2, "fragments": [{
                "j": 0, "iota": 1, "lower": [0, 0], "upper": [1, 1],
                "gamma": {"type": "sine", "offset": 0.5, "amplitude": 0.15, "freq": 1.0}}]}}
    doc = {"dist": dist, "kappa": kappa, "rho": 1.0, "seed": seed,
           "rule": BudgetRule(knots_per_tau=6.0), "name": f"kappa{kappa:g}"}
    doc.update(overrides)
    return RateExperimentConfig(**doc)


def _task_seed(seed: int, n_idx: int, rep: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(n_idx), int(rep), 1))
    return int(ss.generate_state(1)[0])


def _run_replication(args) -> dict:
    config, n_idx, rep = args
    n = config.n_grid[n_idx]
    dist = distribution_from_dict(config.dist)
    data = dist.sample(n, config.seed, n_idx, rep)
    budget = config.rule.budget(n, config.kappa, config.rho, config.d)
    fits = True
    if config.erm_mode == "exact":
        report = erm_exact(budget, data)
    else:
        knots = config.rule.knots(n, config.kappa, config.rho)
        search = SearchConfig(**{**asdict(config.search), "seed": _task_seed(config.seed, n_idx, rep),
                                 "knots": knots if config.search.template == "boundary" else None})
        report = erm_heuristic(budget, data, search)
        if config.search.template == "boundary":
            # template net: pw-linear units plus the shift/heaviside wrapper
            net = report.hypothesis.region.network()
            fits = nc.sparsity(net) <= budget.s0 and net.L <= budget.L0 and net.grid_c <= budget.c
    dfq, ddelta = excess_risk(dist, report.hypothesis, config.quad)
    return {"n": n, "rep": rep, "d_fq": max(dfq.value, 0.0), "d_delta": max(ddelta.value, 0.0),
            "risk": report.risk, "erm_mode": report.mode, "fits_budget": fits}


def _map(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _residuals(xs, ys, slope) -> tuple:
    lx, ly = np.log(xs), np.log(ys)
    icpt = float(np.mean(ly - slope * lx))
    return tuple(float(v) for v in ly - slope * lx - icpt)


def run_rate_experiment(config: RateExperimentConfig, workers: int = 1) -> RateExperimentResult:
    tasks = [(config, i, r) for i in range(len(config.n_grid)) for r in range(config.replications)]
    reps = sorted(_map(_run_replication, tasks, workers), key=lambda r: (r["n"], r["rep"]))
    rows = []
    means = {"d_delta": [], "d_fq": []}
    targets = {"d_delta": config.target_delta, "d_fq": config.target_fq}
    for n in config.n_grid:
        sel = [r for r in reps if r["n"] == n]
        modes = sorted({r["erm_mode"] for r in sel})
        for metric in ("d_delta", "d_fq"):
            v = np.array([r[metric] for r in sel]) ** config.p
            m = float(np.mean(v))
            se = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
            means[metric].append(m)
            rows.append({"n": n, "metric": f"{metric}^p", "mean": m, "stderr": se,
                         "slope_target": targets[metric], "erm_mode": "+".join(modes)})
    ns = np.array(config.n_grid, dtype=float)
    sd, sed = fit_loglog_slope(ns, means["d_delta"])
    sf, sef = fit_loglog_slope(ns, means["d_fq"])
    rho, p = config.rho, config.p
    alt = (-p * rho / (rho + 2), -p / (rho + 2))
    return RateExperimentResult(config, tuple(reps), tuple(rows), sd, sed, sf, sef,
                                _residuals(ns, means["d_delta"], sd), _residuals(ns, means["d_fq"], sf),
                                alt)


# ---------------------------------------------------------------------------
# Audits


@dataclass(frozen=True)
class GrowthReport:
    n_grid: tuple
    log_counts: tuple
    c3: tuple
    bounded: bool
    sup_c3: float


def class_growth_audit(rule: BudgetRule, n_grid, kappa: float, rho: float, d: int = 2,
                       tail_tol: float = 0.1) -> GrowthReport:
    """``log count_bound`` against ``n^(rho/(rho + 2 kappa - 1))`` along the grid.

    ``bounded`` holds when the second half of the ``c3`` sequence stays
    within ``1 + tail_tol`` of its first-half maximum.
    """
    logs, c3 = [], []
    for n in n_grid:
        b = rule.budget(int(n), kappa, rho, d)
        lc = math.log(nc.count_bound(b))
        logs.append(lc)
        c3.append(lc / float(n) ** (rho / (rho + 2 * kappa - 1)))
    half = len(c3) // 2
    head = max(c3[:max(half, 1)])
    bounded = all(np.isfinite(c3)) and max(c3[half:]) <= (1 + tail_tol) * head
    return GrowthReport(tuple(int(n) for n in n_grid), tuple(logs), tuple(c3), bool(bounded), max(c3))


@dataclass(frozen=True)
class ConditionReport:
    margin_ratio: float | None
    margin_pass: bool
    noise_slope: float | None
    noise_pass: bool | None
    noise_note: str
    approx_rows: tuple
    approx_pass: bool

    @property
    def passed(self) -> bool:
        return self.margin_pass and self.noise_pass is not False and self.approx_pass


def condition_audit(dist: Distribution, widths=(2 ** -3, 2 ** -4, 2 ** -5, 2 ** -6),
                    ts=tuple(2.0 ** -k for k in range(3, 9)), kappa: float | None = None,
                    c1: float = 0.1, eps_grid=(2 ** -3, 2 ** -4, 2 ** -5), approximator=None,
                    spec: QuadSpec = QuadSpec(), noise_res: int = 1024, noise_tol: float = 0.1
                    ) -> ConditionReport:
    """Margin, noise-exponent and approximation checks for one distribution."""
    kappa = dist.kappa if kappa is None else kappa
    probes = slab_probes(dist, widths) if isinstance(dist, TsybakovDistribution) else []
    try:
        ratio = margin_constant_probe(dist, probes, kappa, spec)
        margin_pass = ratio >= c1
    except ValueError:
        ratio, margin_pass = None, True
    note = ""
    noise_slope, noise_pass = None, None
    if kappa <= 1:
        note = "hard margin: noise probe not applicable"
    else:
        try:
            probe = noise_exponent_probe(dist, ts, noise_res)
            noise_slope = probe.slope
            noise_pass = abs(probe.slope - 1 / (kappa - 1)) <= noise_tol
        except ValueError as exc:
            note = f"noise probe skipped: {exc}"
    rows = []
    approx_pass = True
    if approximator is not None and isinstance(dist, TsybakovDistribution):
        bset = dist.bset
        beta, B = dist.envelope
        for eps in eps_grid:
            if not eps < bset.eps0:
                continue
            res = bayes_approx_net(bset, eps, approximator, kappa)
            measured = d_fq(dist, res.certified, dist.bayes, spec).value
            bound = approximation_bound(bset.r, bset.d, beta, B, eps, kappa, dist.marginal.bound)
            rows.append({"epsilon": eps, "L": res.report["L"], "s": res.report["s"],
                         "c": res.report["c"], "d_fq_bound": bound, "d_fq_measured": measured})
            approx_pass &= measured <= bound
    return ConditionReport(ratio, margin_pass, noise_slope, noise_pass, note, tuple(rows), approx_pass)


@dataclass(frozen=True)
class LowerBoundReport:
    rows: tuple
    slope: float
    stderr: float
    target: float
    min_ratio: float
    min_affinity: float
    stable: bool
    ratio_floor: float
    bounds_hold: bool
    slope_tol: float = 0.05

    @property
    def slope_ok(self) -> bool:
        return abs(self.slope - self.target) <= self.slope_tol

    @property
    def passed(self) -> bool:
        return self.min_ratio >= self.ratio_floor and self.stable and self.bounds_hold and self.slope_ok

    def to_csv(self) -> str:
        cols = ["n", "K", "I1", "I2", "I_bound", "affinity", "affinity_n", "affinity_n_refined",
                "lower_bound", "ratio"]
        return rows_to_csv(list(self.rows), cols)


def lower_bound_experiment(kappa: float, beta2: float, d: int, n_grid, k1: float = 0.1,
                           k2: float = 0.5, k3: float = 0.5, res: int = 32, order: int = 8,
                           ratio_floor: float = 1e-3, digits: int = 3) -> LowerBoundReport:
    """Hypercube lower-bound quantities along ``n`` with ``K ~ n^(1/(beta2 (2 kappa - 1 + rho)))``."""
    beta1 = kappa - 1
    rho = (d - 1) / beta2
    expo = 1 / (beta2 * (2 * kappa - 1 + rho))
    rows = []
    stable = True
    bounds = True
    for n in n_grid:
        K = max(2, round(n ** expo))
        rep = assouad_quantities(K, n, beta1, beta2, d, k1, k2, k3, res, order)
        fine = assouad_quantities(K, n, beta1, beta2, d, k1, k2, k3, 2 * res, 2 * order)
        stable &= abs(fine.affinity_n - rep.affinity_n) <= 0.5 * 10 ** -digits * abs(fine.affinity_n)
        bounds &= rep.I1 <= rep.I_bound and rep.I2 <= rep.I_bound
        target_rate = n ** (-1 / (2 * kappa - 1 + rho))
        rows.append({"n": int(n), "K": K, "I1": rep.I1, "I2": rep.I2, "I_bound": rep.I_bound,
                     "affinity": rep.affinity, "affinity_n": rep.affinity_n,
                     "affinity_n_refined": fine.affinity_n, "lower_bound": rep.lower_bound,
                     "ratio": rep.lower_bound / target_rate})
    slope, se = fit_loglog_slope([r["n"] for r in rows], [r["lower_bound"] for r in rows])
    return LowerBoundReport(tuple(rows), slope, se, -1 / (2 * kappa - 1 + rho),
                            min(r["ratio"] for r in rows), min(r["affinity_n"] for r in rows),
                            bool(stable), ratio_floor, bool(bounds))
