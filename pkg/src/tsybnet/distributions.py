"""Classification distributions with controlled noise near the Bayes boundary.

``f(x) = P(Y = 1 | X = x)`` is built from the signed offset ``t`` to a
boundary fragment: ``f = (1 + k2 t^beta1)/2`` on the Bayes side and
``f = (1 - k3 |t|^beta1)/2`` beyond it, so ``kappa = 1 + beta1`` controls how
much mass sits near ``f = 1/2``.  The hypercube family used for lower bounds
follows the bump construction with three branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .boundaries import BumpSum, falling_factorial
from .quadrature import QuadSpec, line_integral, tensor_midpoint
from .set_calculus import BoundaryFragmentSet, Fragment, OffsetSet
from .sets import Region, as_points


# ---------------------------------------------------------------------------
# Marginals


@dataclass(frozen=True)
class ProductMarginal:
    """Density ``prod_i (1 + a_i (x_i - 1/2))`` on [0,1]^d, ``|a_i| <= 2``."""

    slopes: tuple

    def __post_init__(self):
        a = tuple(float(v) for v in self.slopes)
        if any(abs(v) > 2 for v in a):
            raise ValueError("tilt slopes must satisfy |a| <= 2")
        object.__setattr__(self, "slopes", a)

    @classmethod
    def uniform(cls, d: int) -> "ProductMarginal":
        return cls((0.0,) * d)

    @property
    def d(self) -> int:
        return len(self.slopes)

    @property
    def bound(self) -> float:
        return math.prod(1 + abs(a) / 2 for a in self.slopes)

    @property
    def is_uniform(self) -> bool:
        return not any(self.slopes)

    def density(self, X) -> np.ndarray:
        X = as_points(X, self.d)
        return np.prod(1 + np.array(self.slopes) * (X - 0.5), axis=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        U = rng.random((n, self.d))
        X = np.empty_like(U)
        for i, a in enumerate(self.slopes):
            X[:, i] = _linear_inverse_cdf(U[:, i], a)
        return X

    def to_dict(self):
        return {"slopes": list(self.slopes)}


def _linear_inverse_cdf(u: np.ndarray, a: float) -> np.ndarray:
    """Inverse CDF of the density ``1 + a (x - 1/2)`` on [0,1]."""
    if abs(a) < 1e-12:
        return u
    # F(x) = (1 - a/2) x + a x^2 / 2
    p = 1 - a / 2
    return (-p + np.sqrt(p * p + 2 * a * u)) / a


def rejection_sample(density, bound: float, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points from a density on [0,1]^d bounded by ``bound``."""
    out = []
    have = 0
    while have < n:
        m = max(16, int(1.2 * (n - have) * bound))
        X = rng.random((m, d))
        keep = rng.random(m) * bound <= density(X)
        out.append(X[keep])
        have += int(keep.sum())
    return np.concatenate(out)[:n]


# ---------------------------------------------------------------------------
# Datasets and random streams


@dataclass(frozen=True, eq=False)
class Dataset:
    points: np.ndarray
    labels: np.ndarray
    seed: object = None

    def __post_init__(self):
        if self.points.shape[0] != self.labels.shape[0]:
            raise ValueError("points and labels differ in length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be binary")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def to_csv(self, path) -> None:
        header = ",".join([f"x_{i + 1}" for i in range(self.d)] + ["y"])
        rows = [",".join([repr(float(v)) for v in x] + [str(int(y))])
                for x, y in zip(self.points, self.labels)]
        with open(path, "w", newline="") as fh:
            fh.write(header + "\n" + "\n".join(rows) + "\n")

    @classmethod
    def from_csv(cls, path, seed=None) -> "Dataset":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :-1], data[:, -1].astype(int), seed)


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based stream for ``(seed, key...)``, independent of scheduling."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# Distributions


def power_envelope_norm(k: float, beta: float) -> float:
    """Hoelder norm of ``t -> k t^beta`` on [0, 1]: derivatives up to m plus the top seminorm."""
    if beta == 0:
        return k
    m = math.ceil(beta) - 1
    return k * (sum(abs(falling_factorial(beta, i)) for i in range(m + 1))
                + abs(falling_factorial(beta, m)))


class Distribution:
    """Common interface: marginal density, regression function, Bayes set."""

    d: int
    marginal: ProductMarginal
    beta1: float

    @property
    def kappa(self) -> float:
        return 1.0 + self.beta1

    def regression(self, X) -> np.ndarray:
        raise NotImplementedError

    @property
    def bayes(self) -> Region:
        raise NotImplementedError

    def density(self, X) -> np.ndarray:
        return self.marginal.density(X)

    def bayes_membership(self, X) -> np.ndarray:
        return self.regression(X) >= 0.5

    def line_breaks(self, Y: np.ndarray, axis: int) -> np.ndarray | None:
        return None

    def outer_breaks(self, axis: int) -> np.ndarray:
        return np.array([])

    @property
    def line_axis(self) -> int | None:
        return None

    def sample(self, n: int, seed: int, *key: int) -> Dataset:
        if n < 1:
            raise ValueError("need at least one sample")
        rng = make_rng(seed, *key)
        X = self.marginal.sample(rng, n)
        y = (rng.random(n) < self.regression(X)).astype(int)
        return Dataset(X, y, (seed,) + key if key else seed)


@dataclass(frozen=True, eq=False)
class TsybakovDistribution(Distribution):
    """Noise model around a fragment set; ``f = (1 - k3)/2`` outside all boxes."""

    bset: BoundaryFragmentSet
    beta1: float = 0.0
    k2: float = 0.5
    k3: float = 0.5
    marginal: ProductMarginal | None = None

    def __post_init__(self):
        if self.marginal is None:
            object.__setattr__(self, "marginal", ProductMarginal.uniform(self.bset.d))
        if self.marginal.d != self.bset.d:
            raise ValueError("marginal dimension differs from the fragment set")
        if self.beta1 < 0 or self.k2 <= 0 or self.k3 <= 0:
            raise ValueError("need beta1 >= 0 and k2, k3 > 0")

    @property
    def d(self):
        return self.bset.d

    @property
    def bayes(self):
        return self.bset

    @property
    def envelope(self) -> tuple[float, float]:
        """``(beta, B)`` of the envelope ``g(t) = max(k2, k3) t^beta1``."""
        return self.beta1, power_envelope_norm(max(self.k2, self.k3), self.beta1)

    def regression(self, X):
        X = as_points(X, self.d)
        t = self.bset.offset(X)
        f = np.full(X.shape[0], 0.5 * (1 - self.k3))
        inside = ~np.isnan(t)
        ti = t[inside]
        mag = np.abs(ti) ** self.beta1
        f[inside] = np.where(ti >= 0, 0.5 * (1 + self.k2 * mag), 0.5 * (1 - self.k3 * mag))
        return np.clip(f, 0.0, 1.0)

    def bayes_membership(self, X):
        return self.bset.contains(X)

    @property
    def line_axis(self):
        axes = {f.j for f in self.bset.fragments}
        return axes.pop() if len(axes) == 1 else None

    def line_breaks(self, Y, axis):
        return self.bset.line_breaks(Y, axis)

    def outer_breaks(self, axis):
        return self.bset.outer_breaks(axis)

    def to_dict(self):
        return {"kind": "fragments", "beta1": self.beta1, "k2": self.k2, "k3": self.k3,
                "marginal": self.marginal.to_dict(), "bayes": self.bset.to_dict()}


@dataclass(frozen=True, eq=False)
class ConstantDistribution(Distribution):
    """``f`` constant everywhere; its Bayes set is the cube or empty."""

    d: int
    value: float
    marginal: ProductMarginal | None = None
    beta1: float = 0.0

    def __post_init__(self):
        if self.marginal is None:
            object.__setattr__(self, "marginal", ProductMarginal.uniform(self.d))

    def regression(self, X):
        return np.full(as_points(X, self.d).shape[0], float(self.value))

    @property
    def bayes(self):
        from .sets import EmptySet, FullSet
        return FullSet(self.d) if self.value >= 0.5 else EmptySet(self.d)

    @property
    def line_axis(self):
        return 0

    def line_breaks(self, Y, axis):
        return np.zeros((Y.shape[0], 0))

    def to_dict(self):
        return {"kind": "constant", "d": self.d, "value": self.value,
                "marginal": self.marginal.to_dict()}


@dataclass(frozen=True)
class BumpHypercube:
    K: int
    k1: float
    beta2: float
    d: int
    w: tuple

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(int(v) for v in np.asarray(self.w).ravel()))

    @cached_property
    def gamma(self) -> BumpSum:
        return BumpSum(self.K, self.k1, self.beta2, self.w, self.d - 1)

    @cached_property
    def gamma_all(self) -> BumpSum:
        return BumpSum(self.K, self.k1, self.beta2, (1,) * len(self.w), self.d - 1)

    @cached_property
    def gamma_flip(self) -> BumpSum:
        return BumpSum(self.K, self.k1, self.beta2, tuple(1 - v for v in self.w), self.d - 1)


def bump_hypercube(K: int, k1: float, beta2: float, d: int, w=None) -> BumpHypercube:
    """Hypercube member with weights ``w`` (default: all zero)."""
    i = np.arange(1, K + 1)
    n = int(np.sum((2 * i - 1) / K < 1)) ** (d - 1)
    if w is None:
        w = (0,) * n
    return BumpHypercube(K, k1, beta2, d, tuple(w))


@dataclass(frozen=True, eq=False)
class HypercubeDistribution(Distribution):
    """Three-branch regression function over a bump boundary along ``x_1``."""

    cube: BumpHypercube
    beta1: float = 0.0
    k2: float = 0.5
    k3: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "marginal", ProductMarginal.uniform(self.cube.d))

    @property
    def d(self):
        return self.cube.d

    def regression(self, X):
        X = as_points(X, self.d)
        x1, rest = X[:, 0], X[:, 1:]
        gw = self.cube.gamma(rest)
        gf = self.cube.gamma_flip(rest)
        g1 = self.cube.gamma_all(rest)
        b = self.beta1
        f = np.empty(X.shape[0])
        first = x1 <= gw
        second = ~first & (x1 > 0) & (x1 <= gf)
        third = ~first & ~second & (x1 > g1)
        f[first] = 0.5 * (1 + self.k2 * (gw[first] - x1[first]) ** b)
        f[second] = 0.5 * (1 - self.k2 * x1[second] ** b)
        f[third] = 0.5 * (1 - self.k3 * (x1[third] - g1[third]) ** b)
        rest_mask = ~(first | second | third)
        f[rest_mask] = 0.5
        return f

    @property
    def bayes(self):
        frag = Fragment(0, 1, (0.0,) * self.d, (1.0,) * self.d, self.cube.gamma)
        return BoundaryFragmentSet(self.d, (frag,))

    @property
    def line_axis(self):
        return 0

    def line_breaks(self, Y, axis):
        if axis != 0:
            return None
        return np.stack([self.cube.gamma(Y), self.cube.gamma_flip(Y), self.cube.gamma_all(Y)], axis=1)

    def outer_breaks(self, axis):
        return self.cube.gamma_all.breaks()

    def validate(self, probes: int = 100_000, seed: int = 0) -> None:
        """Raise unless ``f`` stays within [1/4, 1] on a dense random probe."""
        X = make_rng(seed).random((probes, self.d))
        f = self.regression(X)
        if f.min() < 0.25 or f.max() > 1:
            raise ValueError(f"regression leaves [1/4, 1]: [{f.min()}, {f.max()}]")

    def to_dict(self):
        c = self.cube
        return {"kind": "hypercube", "K": c.K, "k1": c.k1, "beta2": c.beta2, "d": c.d,
                "w": list(c.w), "beta1": self.beta1, "k2": self.k2, "k3": self.k3}


def distribution_from_dict(doc: dict) -> Distribution:
    kind = doc.get("kind", "fragments")
    if kind == "fragments":
        bset = BoundaryFragmentSet.from_dict(doc["bayes"])
        marg = doc.get("marginal")
        marginal = ProductMarginal(tuple(marg["slopes"])) if marg else None
        return TsybakovDistribution(bset, doc.get("beta1", 0.0), doc.get("k2", 0.5),
                                    doc.get("k3", 0.5), marginal)
    if kind == "hypercube":
        cube = bump_hypercube(doc["K"], doc.get("k1", 0.1), doc.get("beta2", 1.0), doc["d"],
                              doc.get("w"))
        return HypercubeDistribution(cube, doc.get("beta1", 0.0), doc.get("k2", 0.5),
                                     doc.get("k3", 0.5))
    if kind == "constant":
        marg = doc.get("marginal")
        return ConstantDistribution(doc["d"], doc["value"],
                                    ProductMarginal(tuple(marg["slopes"])) if marg else None)
    raise ValueError(f"unknown distribution kind {kind!r}")


def regression_function(dist: Distribution, X) -> np.ndarray:
    return dist.regression(X)


def sample(dist: Distribution, n: int, seed: int) -> Dataset:
    return dist.sample(n, seed)


def bayes_membership(dist: Distribution, X) -> np.ndarray:
    return dist.bayes_membership(X)


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class Measurement:
    value: float
    res: int
    method: str
    coarse: bool = False

    def __float__(self):
        return self.value


def _line_setup(dist: Distribution, regions: Sequence[Region], spec: QuadSpec):
    """Axis and break callbacks for the line rule, or None when unavailable."""
    if spec.method != "line":
        return None
    axis = spec.axis if spec.axis is not None else dist.line_axis
    if axis is None:
        axis = 0
    probe = np.full((1, dist.d - 1), 0.5)
    parts = [dist.line_breaks(probe, axis)] + [g.line_breaks(probe, axis) for g in regions]
    if any(p is None for p in parts):
        return None

    def breaks(Y):
        cols = [dist.line_breaks(Y, axis)] + [g.line_breaks(Y, axis) for g in regions]
        return np.concatenate(cols, axis=1)

    others = [k for k in range(dist.d) if k != axis]
    outer = []
    for k in others:
        pts = [dist.outer_breaks(k)] + [g.outer_breaks(k) for g in regions]
        outer.append(np.concatenate([np.asarray(p, float).ravel() for p in pts]))
    return axis, breaks, outer


def integrate(dist: Distribution, fn, regions: Sequence[Region], spec: QuadSpec) -> Measurement:
    """Integrate ``fn(X)`` over the cube with the rule chosen by ``spec``."""
    setup = _line_setup(dist, regions, spec)
    extents = [e for g in list(regions) + [dist.bayes] for e in g.extents()]
    coarse = bool(extents) and min(extents) * spec.res < 2
    if setup is None:
        res = spec.res
        return Measurement(tensor_midpoint(fn, dist.d, res), res, "midpoint", coarse)
    axis, breaks, outer = setup
    value = line_integral(fn, dist.d, axis, breaks, outer, spec.res, spec.order)
    return Measurement(value, spec.res, "line", coarse)


def d_delta(dist: Distribution, G1: Region, G2: Region, spec: QuadSpec = QuadSpec()) -> Measurement:
    """Marginal mass of the symmetric difference."""
    def fn(X):
        return dist.density(X) * (G1.contains(X) != G2.contains(X))
    return integrate(dist, fn, [G1, G2], spec)


def d_fq(dist: Distribution, G1: Region, G2: Region, spec: QuadSpec = QuadSpec()) -> Measurement:
    """Integral of ``|2f - 1|`` over the symmetric difference."""
    def fn(X):
        diff = G1.contains(X) != G2.contains(X)
        out = np.zeros(X.shape[0])
        if np.any(diff):
            Xd = X[diff]
            out[diff] = dist.density(Xd) * np.abs(2 * dist.regression(Xd) - 1)
        return out
    return integrate(dist, fn, [G1, G2], spec)


def fit_loglog_slope(xs, ys) -> tuple[float, float]:
    """OLS slope of ``log y`` against ``log x`` and its standard error."""
    x = np.log(np.asarray(xs, dtype=float))
    y = np.asarray(ys, dtype=float)
    if len(x) < 4:
        raise ValueError("slope fit needs at least 4 points")
    if np.any(y <= 0):
        raise ValueError("slope fit needs positive values")
    y = np.log(y)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    return float(coef[0]), se


@dataclass(frozen=True)
class NoiseProbe:
    ts: tuple
    values: tuple
    slope: float
    stderr: float


def noise_exponent_probe(dist: Distribution, ts: Sequence[float], res: int = 2048) -> NoiseProbe:
    """Band probabilities ``P(|2f(X) - 1| <= t)`` and their log-log slope."""
    if dist.kappa <= 1:
        raise ValueError("noise exponent probe needs kappa > 1")
    ts = np.asarray(ts, dtype=float)
    vals = []
    for t in ts:
        def fn(X, t=t):
            return dist.density(X) * (np.abs(2 * dist.regression(X) - 1) <= t)
        vals.append(tensor_midpoint(fn, dist.d, res))
    vals = np.array(vals)
    if not np.any(vals > 0):
        raise ValueError("band probabilities are all zero")
    pos = vals > 0
    slope, se = fit_loglog_slope(ts[pos], vals[pos])
    return NoiseProbe(tuple(ts), tuple(vals), slope, se)


def slab_probes(dist: TsybakovDistribution, widths: Sequence[float]) -> list[Region]:
    """Bayes set moved outwards and inwards by each width."""
    return [OffsetSet(dist.bset, s * w) for w in widths for s in (1, -1)]


def margin_constant_probe(dist: Distribution, probes: Sequence[Region], kappa: float | None = None,
                          spec: QuadSpec = QuadSpec(), tol: float = 1e-12) -> float:
    """Smallest ``d_fq / d_delta^kappa`` over probes with non-negligible ``d_delta``."""
    kappa = dist.kappa if kappa is None else kappa
    ratios = []
    for G in probes:
        dd = d_delta(dist, G, dist.bayes, spec).value
        if dd <= tol:
            continue
        ratios.append(d_fq(dist, G, dist.bayes, spec).value / dd ** kappa)
    if not ratios:
        raise ValueError("no probe set differs from the Bayes set")
    best = min(ratios)
    if not best > 0:
        raise ValueError("margin ratio is not positive")
    return best


def hellinger_affinity(A: Distribution, B: Distribution, spec: QuadSpec = QuadSpec(), n: int = 1,
                       return_single: bool = False):
    """``(int sqrt(fA fB) + sqrt((1-fA)(1-fB)) dQ_X)^n`` for a shared marginal.

    The integral is formed as one minus the integrated deficit, which keeps
    full relative precision when the two distributions are close.
    """
    if A.d != B.d or A.marginal != B.marginal:
        raise ValueError("affinity needs a shared marginal")

    def deficit(X):
        fa, fb = A.regression(X), B.regression(X)
        return A.density(X) * (1 - np.sqrt(fa * fb) - np.sqrt((1 - fa) * (1 - fb)))

    setup = None
    if spec.method == "line" and A.line_axis is not None and A.line_axis == B.line_axis:
        axis = A.line_axis
        others = [k for k in range(A.d) if k != axis]

        def breaks(Y):
            return np.concatenate([A.line_breaks(Y, axis), B.line_breaks(Y, axis)], axis=1)

        outer = [np.concatenate([A.outer_breaks(k), B.outer_breaks(k)]) for k in others]
        setup = (axis, breaks, outer)
    if setup is None:
        loss = tensor_midpoint(deficit, A.d, spec.res)
    else:
        loss = line_integral(deficit, A.d, setup[0], setup[1], setup[2], spec.res, spec.order)
    single = 1.0 - loss
    value = single ** n
    return (value, single) if return_single else value


# ---------------------------------------------------------------------------
# Lower-bound quantities


def _bump_region_rule(cube: BumpHypercube, res: int, order: int):
    """Outer nodes covering the support of the first bump."""
    from .quadrature import outer_nodes
    m = cube.d - 1
    side = 2.0 / cube.K
    Y, W = outer_nodes(m, [[]] * m, res, order)
    return Y * side, W * side ** m


def bump_integrals(cube: BumpHypercube, beta1: float, res: int = 64, order: int = 12):
    """``I1 = int int_0^phi (phi - x)^(2 beta1)`` and ``I2 = int int_0^phi x^(2 beta1)`` over the first bump."""
    from scipy.special import roots_legendre
    first = BumpSum(cube.K, cube.k1, cube.beta2, (1,) + (0,) * (len(cube.w) - 1), cube.d - 1)
    Y, W = _bump_region_rule(cube, res, order)
    phi = first(Y)
    xi, wi = roots_legendre(4 * order)
    xi, wi = (xi + 1) / 2, wi / 2
    X1 = phi[:, None] * xi[None, :]
    p = 2 * beta1
    I1 = float(np.sum(W * phi * np.sum(wi * (phi[:, None] - X1) ** p, axis=1)))
    I2 = float(np.sum(W * phi * np.sum(wi * X1 ** p, axis=1)))
    return I1, I2


@dataclass(frozen=True)
class AssouadReport:
    K: int
    n: int
    I1: float
    I2: float
    I_bound: float
    affinity: float
    affinity_n: float
    min_mass: float
    c_star: float
    affinity_formula: float
    bump_volume: float
    bumps: int
    lower_bound: float


def assouad_quantities(K: int, n: int, beta1: float, beta2: float, d: int, k1: float = 0.1,
                       k2: float = 0.5, k3: float = 0.5, res: int = 64, order: int = 12
                       ) -> AssouadReport:
    """Numerical ingredients of the hypercube lower bound at resolution ``K``."""
    kappa = 1 + beta1
    rho = (d - 1) / beta2
    expo = beta2 * (2 * kappa - 1 + rho)
    w0 = bump_hypercube(K, k1, beta2, d)
    w1 = bump_hypercube(K, k1, beta2, d, (1,) + (0,) * (len(w0.w) - 1))
    P0 = HypercubeDistribution(w0, beta1, k2, k3)
    P1 = HypercubeDistribution(w1, beta1, k2, k3)
    I1, I2 = bump_integrals(w1, beta1, res, order)
    I_bound = 2 ** (d - 1) * k1 ** (1 + 2 * beta1) / (1 + 2 * beta1) * K ** -expo

    # Both regression functions agree outside {x_1 <= phi_1(x_-1)}: integrate there only.
    from scipy.special import roots_legendre
    first = w1.gamma
    Y, W = _bump_region_rule(w1, res, order)
    phi = first(Y)
    xi, wi = roots_legendre(4 * order)
    xi, wi = (xi + 1) / 2, wi / 2
    X = np.empty((Y.shape[0], len(xi), d))
    X[..., 0] = phi[:, None] * xi[None, :]
    X[..., 1:] = Y[:, None, :]
    flat = X.reshape(-1, d)
    f0 = P0.regression(flat).reshape(X.shape[:2])
    f1 = P1.regression(flat).reshape(X.shape[:2])
    deficit = 1 - np.sqrt(f0 * f1) - np.sqrt((1 - f0) * (1 - f1))
    loss = float(np.sum(W * phi * np.sum(wi * deficit, axis=1)))
    sq = float(np.sum(W * phi * np.sum(wi * (f0 - f1) ** 2, axis=1)))
    affinity = 1.0 - loss
    affinity_n = affinity ** n
    c_star = 2 * sq * K ** expo
    formula = 0.5 * (1 - c_star * K ** -expo) ** (2 * n)
    bump_volume = float(np.sum(W * phi))
    bumps = len(w0.w)
    min_mass = 0.5 * affinity_n ** 2
    lower = 0.5 * bumps * bump_volume * min_mass
    return AssouadReport(K, n, I1, I2, I_bound, affinity, affinity_n, min_mass, c_star,
                         formula, bump_volume, bumps, lower)
