"""Command line entry point.

Exit codes: 0 success, 1 validation failure, 2 refused infeasible budget,
64 usage error.  Every run writes one manifest JSON next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import nn_core as nc
from .distributions import Dataset, TsybakovDistribution, d_fq, distribution_from_dict
from .erm import SearchConfig, erm_exact, erm_heuristic
from .harness import (
    BudgetRule, RateExperimentConfig, class_growth_audit, condition_audit,
    lower_bound_experiment, rows_to_csv, run_rate_experiment,
)
from .quadrature import QuadSpec
from .set_calculus import ExactPiecewiseLinear, GridInterpolation, approximation_bound, bayes_approx_net

log = logging.getLogger("tsybnet")

EXIT_OK, EXIT_INVALID, EXIT_REFUSED, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


@dataclass
class RunManifest:
    subcommand: str
    config_digest: str
    seed: int | None
    timestamp: int
    tool_version: str
    outputs: list


def _timestamp() -> int:
    env = os.environ.get("SOURCE_DATE_EPOCH")
    return int(env) if env else int(time.time())


def _args_doc(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid JSON in {path}: {exc}")


class Outputs:
    def __init__(self, out_dir: str | None):
        self.dir = Path(out_dir) if out_dir else None
        self.paths: list[str] = []
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        if self.dir is None:
            sys.stdout.write(text if text.endswith("\n") else text + "\n")
            return
        path = self.dir / name
        path.write_text(text)
        self.paths.append(name)

    def manifest(self, sub: str, config, seed) -> None:
        man = RunManifest(sub, _digest(config), seed, _timestamp(), __version__, list(self.paths))
        text = json.dumps(asdict(man), indent=2, sort_keys=True) + "\n"
        if self.dir is None:
            sys.stderr.write(text)
        else:
            (self.dir / "manifest.json").write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_count(args, out: Outputs):
    budget = nc.ClassBudget(args.L0, args.s0, args.c, args.d)
    out.write("count.txt", str(nc.count_bound(budget)))
    return _args_doc(args)


def cmd_compose_check(args, out: Outputs):
    rng = np.random.default_rng(args.seed or 0)
    rows = []
    for k in range(args.pairs):
        d = int(rng.integers(1, 5))
        m = int(rng.integers(1, 5))
        inner = _random_net(rng, d, m, int(rng.integers(0, 4)))
        outer = _random_net(rng, m, 1, int(rng.integers(0, 4)))
        X = rng.random((args.probes, d))
        cat = nc.concatenate(outer, inner)
        err_c = float(np.max(np.abs(nc.realize(cat, X) - nc.realize(outer, nc.realize(inner, X)))))
        other = _random_net(rng, d, 2, int(rng.integers(0, 4)))
        par = nc.parallelize(inner, other)
        both = np.hstack([nc.realize(inner, X), nc.realize(other, X)])
        err_p = float(np.max(np.abs(nc.realize(par, X) - both)))
        ok = (err_c <= 1e-9 and err_p <= 1e-9 and cat.L == inner.L + outer.L + 1
              and nc.sparsity(cat) <= 2 * nc.sparsity(inner) + 2 * nc.sparsity(outer)
              and par.L == max(inner.L, other.L)
              and nc.sparsity(par) <= nc.sparsity(inner) + nc.sparsity(other) + 2 * d * par.L)
        rows.append({"pair": k, "concat_err": err_c, "parallel_err": err_p, "ok": ok})
    out.write("compose_check.csv", rows_to_csv(rows, ["pair", "concat_err", "parallel_err", "ok"]))
    if not all(r["ok"] for r in rows):
        raise ValueError("composition check failed")
    return _args_doc(args)


def _random_net(rng, d_in, d_out, L, c=3, width=3):
    dims = [d_in] + [int(rng.integers(1, width + 1)) for _ in range(L)] + [d_out]
    grid = nc.WeightGrid(c).values()

    def draw(shape):
        a = rng.choice(grid, size=shape)
        return a * (rng.random(shape) < 0.6)

    weights = tuple(draw((dims[s + 1], dims[s])) for s in range(L + 1))
    shifts = tuple(draw((dims[s + 1],)) for s in range(L))
    return nc.Network(weights, shifts, c)


def _approximator(doc):
    kind = doc.get("type", "exact")
    if kind == "exact":
        return ExactPiecewiseLinear(doc.get("snap_c", 24))
    if kind == "grid":
        return GridInterpolation(doc.get("beta2", 1.0), doc.get("B2", 1.0))
    raise ValueError(f"unknown approximator {kind!r}")


def cmd_approx(args, out: Outputs):
    cfg = _load_json(args.config)
    dist = distribution_from_dict(cfg["dist"])
    if not isinstance(dist, TsybakovDistribution):
        raise ValueError("approx needs a fragment distribution")
    approx = _approximator(cfg.get("approximator", {}))
    spec = QuadSpec(res=args.quad_res or cfg.get("quad_res", 256))
    beta, B = dist.envelope
    rows = []
    for eps in cfg.get("epsilons", [2 ** -3, 2 ** -4, 2 ** -5]):
        res = bayes_approx_net(dist.bset, eps, approx, dist.kappa)
        measured = d_fq(dist, res.certified, dist.bset, spec).value
        bound = approximation_bound(dist.bset.r, dist.d, beta, B, eps, dist.kappa, dist.marginal.bound)
        rows.append({"epsilon": eps, "L": res.report["L"], "s": res.report["s"], "c": res.report["c"],
                     "d_fq_bound": bound, "d_fq_measured": measured})
    out.write("approx.csv", rows_to_csv(rows, ["epsilon", "L", "s", "c", "d_fq_bound", "d_fq_measured"]))
    if any(r["d_fq_measured"] > r["d_fq_bound"] for r in rows):
        raise ValueError("measured d_fq exceeds the approximation bound")
    return cfg


def cmd_gen_dist(args, out: Outputs):
    cfg = _load_json(args.config)
    dist = distribution_from_dict(cfg)
    if hasattr(dist, "validate"):
        dist.validate()
    out.write("distribution.json", _dumps(dist.to_dict()))
    return cfg


def cmd_sample(args, out: Outputs):
    cfg = _load_json(args.config)
    dist = distribution_from_dict(cfg.get("dist", cfg))
    n = args.n or cfg.get("n", 100)
    data = dist.sample(n, args.seed or 0)
    header = ",".join([f"x_{i + 1}" for i in range(data.d)] + ["y"])
    lines = [header] + [",".join([repr(float(v)) for v in x] + [str(int(y))])
                        for x, y in zip(data.points, data.labels)]
    out.write("sample.csv", "\n".join(lines) + "\n")
    return {"config": cfg, "n": n}


def cmd_erm(args, out: Outputs):
    budget = nc.ClassBudget(args.L0, args.s0, args.c, args.d)
    seed = args.seed or 0
    data = Dataset.from_csv(args.data, seed)
    if args.mode == "exact":
        report = erm_exact(budget, data, args.limit)
    else:
        cfg = SearchConfig(iterations=args.iterations, seed=seed)
        report = erm_heuristic(budget, data, cfg)
    doc = {"risk": report.risk, "mode": report.mode, "examined": report.examined,
           "seed": seed, "index": report.index, "provenance": report.hypothesis.provenance}
    if report.hypothesis.net is not None:
        doc["network"] = nc.network_to_dict(report.hypothesis.net)
    out.write("erm.json", _dumps(doc))
    return _args_doc(args)


def cmd_rates(args, out: Outputs):
    cfg = _load_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.quad_res:
        cfg.setdefault("quad", {})["res"] = args.quad_res
    config = RateExperimentConfig.from_dict(cfg)
    result = run_rate_experiment(config, args.workers)
    out.write("rates.csv", result.to_csv())
    out.write("replications.csv", result.replications_csv())
    out.write("slopes.json", _dumps(result.summary()))
    return config.to_dict()


def cmd_lower_bound(args, out: Outputs):
    cfg = _load_json(args.config) if args.config else {}
    kappa = cfg.get("kappa", 1.0)
    rep = lower_bound_experiment(kappa, cfg.get("beta2", 1.0), cfg.get("d", 2),
                                 cfg.get("n_grid", [2 ** k for k in range(7, 14)]),
                                 cfg.get("k1", 0.1), cfg.get("k2", 0.5), cfg.get("k3", 0.5),
                                 args.quad_res or cfg.get("res", 32), cfg.get("order", 8))
    out.write("lower_bound.csv", rep.to_csv())
    out.write("lower_bound.json", _dumps({"slope": rep.slope, "stderr": rep.stderr,
                                          "target": rep.target, "min_ratio": rep.min_ratio,
                                          "min_affinity": rep.min_affinity, "stable": rep.stable,
                                          "passed": rep.passed}))
    if not rep.passed:
        raise ValueError("lower-bound diagnostics failed")
    return cfg


def cmd_audit(args, out: Outputs):
    cfg = _load_json(args.config)
    result = {}
    if "dist" in cfg:
        dist = distribution_from_dict(cfg["dist"])
        approx = _approximator(cfg["approximator"]) if "approximator" in cfg else None
        rep = condition_audit(dist, kappa=cfg.get("kappa"), c1=cfg.get("c1", 0.1),
                              approximator=approx)
        result["condition"] = {"margin_ratio": rep.margin_ratio, "margin_pass": rep.margin_pass,
                               "noise_slope": rep.noise_slope, "noise_pass": rep.noise_pass,
                               "noise_note": rep.noise_note, "approx": list(rep.approx_rows),
                               "approx_pass": rep.approx_pass, "passed": rep.passed}
    if "growth" in cfg:
        g = cfg["growth"]
        rep = class_growth_audit(BudgetRule(**g.get("rule", {})), g["n_grid"], g["kappa"], g["rho"],
                                 g.get("d", 2))
        result["growth"] = {"c3": list(rep.c3), "bounded": rep.bounded, "sup_c3": rep.sup_c3}
    out.write("audit.json", _dumps(result))
    failed = [k for k, v in result.items() if not v.get("passed", v.get("bounded", True))]
    if failed:
        raise ValueError(f"audit failed: {', '.join(failed)}")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--quad-res", type=int, default=None)

    parser = _Parser(prog="tsybnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("count", parents=[common], help="closed-form class size bound")
    for name in ("d", "s0", "L0", "c"):
        p.add_argument(f"--{name}", type=int, required=True)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("compose-check", parents=[common], help="random composition audit")
    p.add_argument("--pairs", type=int, default=200)
    p.add_argument("--probes", type=int, default=1000)
    p.set_defaults(func=cmd_compose_check)

    p = sub.add_parser("approx", parents=[common], help="Bayes-set approximation budgets")
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("gen-dist", parents=[common], help="validate and normalize a distribution")
    p.set_defaults(func=cmd_gen_dist)

    p = sub.add_parser("sample", parents=[common], help="draw a labelled sample as CSV")
    p.add_argument("--n", type=int)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("erm", parents=[common], help="empirical risk minimization")
    for name in ("d", "s0", "L0", "c"):
        p.add_argument(f"--{name}", type=int, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("exact", "heuristic"), default="heuristic")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--limit", type=int, default=10 ** 6)
    p.set_defaults(func=cmd_erm)

    p = sub.add_parser("rates", parents=[common], help="Monte Carlo rate experiment")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("lower-bound", parents=[common], help="hypercube lower-bound diagnostics")
    p.set_defaults(func=cmd_lower_bound)

    p = sub.add_parser("audit", parents=[common], help="noise-condition and class-growth audits")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("TSYB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    out = Outputs(args.out)
    try:
        config = args.func(args, out)
    except nc.BudgetTooLarge as exc:
        sys.stderr.write(f"refused: {exc}\n")
        out.manifest(args.command, _args_doc(args), args.seed)
        return EXIT_REFUSED
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        out.manifest(args.command, _args_doc(args), args.seed)
        return EXIT_INVALID
    out.manifest(args.command, config, args.seed)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
