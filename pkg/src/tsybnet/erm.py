"""Empirical risk minimization over network-defined set classes.

``erm_exact`` scans the whole (tiny) class in canonical order.  The heuristic
search works either on raw grid weights ("generic") or on the knot heights of
a piecewise-linear boundary template ("boundary"), whose sets
``{x_0 <= g(x_1)}`` are realized by networks of the same calculus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn_core as nc
from .boundaries import PiecewiseLinear
from .distributions import Dataset, Distribution, Measurement, d_delta, d_fq, make_rng
from .nn_core import ClassBudget, Network, WeightGrid
from .quadrature import QuadSpec
from .set_calculus import boundary_shift_net, heaviside_net, pw_linear_boundary_net
from .sets import MEMBERSHIP_TOL, NetSet, Region, as_points


@dataclass(frozen=True, eq=False)
class Hypothesis:
    region: Region
    provenance: str
    net: Network | None = None

    def contains(self, X):
        return self.region.contains(X)


@dataclass(frozen=True, eq=False)
class ErmReport:
    hypothesis: Hypothesis
    risk: float
    mode: str
    examined: int
    seed: object = None
    index: int | None = None
    trace: tuple = ()
    info: dict = field(default_factory=dict)


def empirical_risk(G, data: Dataset) -> float:
    """Fraction of sample points misclassified by membership in ``G``."""
    if data.n == 0:
        raise ValueError("empty dataset")
    pred = G.contains(data.points)
    return int(np.count_nonzero(pred != (data.labels == 1))) / data.n


# ---------------------------------------------------------------------------
# Exact search


def erm_exact(budget: ClassBudget, data: Dataset, limit: int = 10 ** 6) -> ErmReport:
    """First minimizer of the empirical risk in canonical enumeration order."""
    if data.n == 0:
        raise ValueError("empty dataset")
    X = data.points
    y = data.labels == 1
    best_err, best_index, best = None, None, None
    offset = 0
    for L, P in nc.parameter_blocks(budget, limit):
        out = nc.realize_block(budget, L, P, X)
        pred = np.abs(out - 1.0) <= MEMBERSHIP_TOL
        errs = np.count_nonzero(pred != y[None, :], axis=1)
        k = int(np.argmin(errs))
        if best_err is None or errs[k] < best_err:
            best_err, best_index, best = int(errs[k]), offset + k, (L, P[k].copy())
        offset += P.shape[0]
    net = nc.unflatten(budget, best[0], best[1])
    hyp = Hypothesis(NetSet(net), f"exact:{best_index}", net)
    return ErmReport(hyp, best_err / data.n, "exact", offset, None, best_index)


# ---------------------------------------------------------------------------
# Generic heuristic over grid weights


@dataclass(frozen=True)
class SearchConfig:
    iterations: int = 2000
    restarts: int = 4
    temperature: float = 0.5
    cooling: float = 0.995
    seed: int = 0
    template: str = "generic"
    knots: int | None = None
    sweeps: int = 30


def _risk_of(budget, L, p, X, y) -> int:
    out = nc.realize_block(budget, L, p[None, :], X)[0]
    return int(np.count_nonzero((np.abs(out - 1.0) <= MEMBERSHIP_TOL) != y))


def erm_heuristic(budget: ClassBudget, data: Dataset, config: SearchConfig = SearchConfig()
                  ) -> ErmReport:
    if config.template == "boundary":
        return erm_boundary_template(budget, data, config)
    if data.n == 0:
        raise ValueError("empty dataset")
    X, y = data.points, data.labels == 1
    rng = make_rng(config.seed)
    vals = WeightGrid(budget.c).values()
    nonzero = WeightGrid(budget.c).values(nonzero=True)
    layer_choices = list(range(nc.max_layers(budget) + 1))
    best = None
    trace = []
    examined = 0
    for r in range(max(1, config.restarts)):
        L = layer_choices[r % len(layer_choices)]
        V = nc.parameter_count(budget, L)
        p = np.zeros(V)
        k = int(rng.integers(0, min(budget.s0, V) + 1))
        if k:
            pos = rng.choice(V, size=k, replace=False)
            p[pos] = rng.choice(nonzero, size=k)
        err = _risk_of(budget, L, p, X, y)
        examined += 1
        if best is None or err < best[0]:
            best = (err, L, p.copy())
        trace.append(best[0] / data.n)
        temp = config.temperature
        for _ in range(config.iterations):
            q = p.copy()
            i = int(rng.integers(V))
            q[i] = rng.choice(vals[vals != q[i]])
            if np.count_nonzero(q) > budget.s0:
                continue
            e = _risk_of(budget, L, q, X, y)
            examined += 1
            delta = e - err
            if delta < 0 or (temp > 0 and rng.random() < math.exp(-delta / temp)):
                p, err = q, e
            if err < best[0]:
                best = (err, L, p.copy())
            trace.append(best[0] / data.n)
            temp *= config.cooling
    net = nc.unflatten(budget, best[1], best[2])
    hyp = Hypothesis(NetSet(net), "heuristic:generic", net)
    return ErmReport(hyp, best[0] / data.n, "heuristic", examined, config.seed, None, tuple(trace))


# ---------------------------------------------------------------------------
# Boundary template


def template_knots(K: int) -> np.ndarray:
    """``K`` knots on [0, 1] whose spacings are powers of two.

    ``2^m`` segments of width ``2^-m`` are laid down and ``K - 1 - 2^m`` of
    them, spread evenly, are halved; dyadic heights then give dyadic slopes.
    """
    if K < 2:
        raise ValueError("need at least two knots")
    m = int(math.floor(math.log2(K - 1)))
    split = np.zeros(2 ** m, dtype=bool)
    extra = K - 1 - 2 ** m
    if extra:
        split[np.round(np.linspace(0, 2 ** m - 1, extra)).astype(int)] = True
    widths = []
    for s in split:
        widths += [2.0 ** -(m + 1)] * 2 if s else [2.0 ** -m]
    return np.concatenate([[0.0], np.cumsum(widths)])


@dataclass(frozen=True, eq=False)
class TemplateSet(Region):
    """``{x : x_axis <= g(x_other)}`` for a piecewise-linear ``g`` (d = 2)."""

    knots: tuple
    heights: tuple
    axis: int = 0

    @property
    def d(self):
        return 2

    def g(self, y) -> np.ndarray:
        return np.interp(np.asarray(y, float), self.knots, self.heights)

    def contains(self, X):
        X = as_points(X, 2)
        return X[:, self.axis] <= self.g(X[:, 1 - self.axis])

    def line_breaks(self, Y, axis):
        if axis != self.axis:
            return None
        return self.g(Y[:, 0])[:, None]

    def outer_breaks(self, axis):
        return np.array(self.knots) if axis != self.axis else np.array([])

    def network(self) -> Network:
        gamma = PiecewiseLinear(tuple(self.knots), tuple(self.heights))
        approx = pw_linear_boundary_net(gamma)
        if approx.error != 0:
            raise ValueError("template knots and slopes must be dyadic")
        shifted = boundary_shift_net(approx.net, self.axis, 1, 2)
        return nc.concatenate(heaviside_net(2, self.axis, sign=-1), shifted)


def template_grid(c: int, K: int) -> int:
    """Height grid exponent for ``K`` template knots under a class grid ``2^-c``.

    Realizing the interpolant divides its output layer by up to ``2^(m+2)``
    (m = floor(log2(K - 1))), so heights keep ``m + 2`` fewer bits.
    """
    m = int(math.floor(math.log2(K - 1)))
    return max(0, c - m - 2)


def _hat_weights(y: np.ndarray, knots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left knot index and right interpolation weight for points ``y``."""
    left = np.clip(np.searchsorted(knots, y, side="right") - 1, 0, len(knots) - 2)
    return left, (y - knots[left]) / (knots[left + 1] - knots[left])


def _best_value(theta1, theta0, n1, V) -> tuple[np.ndarray, np.ndarray]:
    """Errors at each candidate value when label-1 points need ``v >= theta1``."""
    s1, s0 = np.sort(theta1), np.sort(theta0)
    errs = (n1 - np.searchsorted(s1, V, side="right")) + np.searchsorted(s0, V, side="right")
    return errs


def erm_boundary_template(budget: ClassBudget, data: Dataset, config: SearchConfig) -> ErmReport:
    """Coordinate descent on knot heights with exact line search over grid values."""
    if data.d != 2:
        raise ValueError("boundary template implemented for d = 2")
    x1, x2 = data.points[:, 0], data.points[:, 1]
    y = data.labels == 1
    n = data.n
    knots = template_knots(config.knots or max(2, budget.s0 // 4))
    K = len(knots)
    vals = WeightGrid(template_grid(budget.c, K)).values()
    vals = vals[vals >= 0]
    left, wr = _hat_weights(x2, knots)
    wl = 1 - wr
    rng = make_rng(config.seed)

    def heights_g(h):
        return h[left] * wl + h[left + 1] * wr

    def errors(h):
        return int(np.count_nonzero((x1 <= heights_g(h)) != y))

    # best constant height
    n1 = int(y.sum())
    errs = _best_value(x1[y], x1[~y], n1, vals)
    h = np.full(K, vals[int(np.argmin(errs))])
    err = errors(h)
    best_err, best_h = err, h.copy()
    trace = [best_err / n]
    examined = len(vals)
    members = [np.nonzero((left == k) | (left + 1 == k))[0] for k in range(K)]

    def descend(h, err):
        nonlocal examined
        for _ in range(config.sweeps):
            improved = False
            for k in range(K):
                idx = members[k]
                if idx.size == 0:
                    continue
                phi = np.where(left[idx] == k, wl[idx], 0.0) + np.where(left[idx] + 1 == k, wr[idx], 0.0)
                rest = heights_g(h)[idx] - h[k] * phi
                ok = phi > 0
                theta = np.full(idx.size, np.inf)
                theta[ok] = (x1[idx][ok] - rest[ok]) / phi[ok]
                # points with phi == 0 are unaffected; count them as constant
                theta[~ok] = np.where(x1[idx][~ok] <= rest[~ok], -np.inf, np.inf)
                yi = y[idx]
                e = _best_value(theta[yi], theta[~yi], int(yi.sum()), vals)
                examined += len(vals)
                j = int(np.argmin(e))
                if vals[j] == h[k]:
                    continue
                old = h[k]
                h[k] = vals[j]
                new_err = errors(h)
                if new_err < err:
                    err = new_err
                    improved = True
                else:
                    h[k] = old
            if not improved:
                break
        return h, err

    h, err = descend(h, err)
    if err < best_err:
        best_err, best_h = err, h.copy()
    trace.append(best_err / n)
    cur_h, cur_err = best_h.copy(), best_err
    temp = config.temperature
    for _ in range(max(0, config.restarts - 1)):
        trial = cur_h.copy()
        width = int(rng.integers(1, max(2, K // 4) + 1))
        start = int(rng.integers(0, K - width + 1))
        trial[start:start + width] = rng.choice(vals)
        trial, t_err = descend(trial, errors(trial))
        if t_err < cur_err or (temp > 0 and rng.random() < math.exp(-(t_err - cur_err) / temp)):
            cur_h, cur_err = trial, t_err
        if t_err < best_err:
            best_err, best_h = t_err, trial.copy()
        trace.append(best_err / n)
        temp *= config.cooling
    region = TemplateSet(tuple(knots), tuple(float(v) for v in best_h))
    hyp = Hypothesis(region, f"heuristic:boundary:{K}")
    info = {"knots": K, "grid_c": template_grid(budget.c, K)}
    return ErmReport(hyp, empirical_risk(region, data), "heuristic", examined, config.seed,
                     None, tuple(trace), info)


# ---------------------------------------------------------------------------
# Excess risk


def excess_risk(dist: Distribution, G, spec: QuadSpec = QuadSpec()) -> tuple[Measurement, Measurement]:
    """``(d_fq, d_delta)`` between ``G`` and the Bayes set of ``dist``."""
    region = G.region if isinstance(G, Hypothesis) else G
    return d_fq(dist, region, dist.bayes, spec), d_delta(dist, region, dist.bayes, spec)
