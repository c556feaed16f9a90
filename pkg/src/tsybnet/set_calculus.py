"""Boundary-fragment sets and the networks whose preimage of 1 approximates them.

A fragment is the part of an axis-aligned box lying below (or above) the graph
of a boundary function along one coordinate.  :func:`bayes_approx_net`
snaps each box to a dyadic grid, approximates and clips the boundary, gates
the box with ramp nets and sums the fragment indicators into one network
``Phi`` with ``R(Phi)^-1(1)`` close to the union of fragments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import nn_core as nc
from .boundaries import Additive, Boundary, Constant, PiecewiseLinear, boundary_from_dict
from .nn_core import Network, concatenate, parallelize, realize, sparsity
from .sets import Region, as_points, membership

__all__ = [
    "Fragment", "BoundaryFragmentSet", "OffsetSet", "CertifiedSet", "ApproxBudget",
    "ApproxResult", "dyadic_floor", "heaviside_net", "box_gate_net", "clip_net",
    "boundary_shift_net", "fragment_indicator_net", "pw_linear_boundary_net",
    "grid_interp_boundary_net", "compose_boundary_net", "bayes_approx_net",
    "membership", "ExactPiecewiseLinear", "GridInterpolation", "AdditiveComposition",
    "approximation_bound", "Stage", "stage_budgets", "beta_star", "DEFAULT_BUDGET_RATIOS",
]


# ---------------------------------------------------------------------------
# Fragment sets


@dataclass(frozen=True)
class Fragment:
    j: int
    iota: int
    lower: tuple
    upper: tuple
    gamma: Boundary

    def __post_init__(self):
        if self.iota not in (-1, 1):
            raise ValueError("iota must be +1 or -1")
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("box needs lower < upper in every coordinate")
        if min(lo) < 0 or max(hi) > 1:
            raise ValueError("box must lie in the unit cube")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def d(self) -> int:
        return len(self.lower)

    def in_box(self, X: np.ndarray) -> np.ndarray:
        return np.all((X >= np.array(self.lower)) & (X <= np.array(self.upper)), axis=1)

    def offset(self, X: np.ndarray) -> np.ndarray:
        """``gamma(x_-j) - iota x_j``; non-negative on the fragment's side."""
        rest = np.delete(X, self.j, axis=1)
        return self.gamma(rest) - self.iota * X[:, self.j]

    def to_dict(self) -> dict:
        return {"j": self.j, "iota": self.iota, "lower": list(self.lower),
                "upper": list(self.upper), "gamma": self.gamma.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Fragment":
        return cls(doc["j"], doc["iota"], tuple(doc["lower"]), tuple(doc["upper"]),
                   boundary_from_dict(doc["gamma"]))


def _pairwise_overlap(a: Fragment, b: Fragment) -> float:
    vol = 1.0
    for la, ua, lb, ub in zip(a.lower, a.upper, b.lower, b.upper):
        vol *= max(0.0, min(ua, ub) - max(la, lb))
    return vol


@dataclass(frozen=True)
class BoundaryFragmentSet(Region):
    """Union of fragments ``D_nu ∩ {iota x_j <= gamma(x_-j)}``.

    ``eps1`` bounds admissible approximation targets from above together with
    ``eps2 / 4``, where ``eps2`` is the minimal box extent along ``j``.
    """

    d: int
    fragments: tuple
    r: int | None = None
    eps2: float | None = None
    eps1: float = 1.0

    def __post_init__(self):
        frags = tuple(self.fragments)
        object.__setattr__(self, "fragments", frags)
        if self.d < 2:
            raise ValueError("ambient dimension must be at least 2")
        r = len(frags) if self.r is None else self.r
        object.__setattr__(self, "r", max(r, 1))
        if len(frags) > self.r:
            raise ValueError(f"{len(frags)} fragments exceed r={self.r}")
        for f in frags:
            if f.d != self.d or not 0 <= f.j < self.d:
                raise ValueError("fragment dimension or coordinate out of range")
            if f.gamma.dim != self.d - 1:
                raise ValueError("boundary function must take d-1 coordinates")
        extents = [f.upper[f.j] - f.lower[f.j] for f in frags]
        eps2 = min(extents, default=1.0) if self.eps2 is None else self.eps2
        object.__setattr__(self, "eps2", float(eps2))
        if any(e < self.eps2 - 1e-15 for e in extents):
            raise ValueError(f"fragment extent below eps2={self.eps2}")
        for a in range(len(frags)):
            for b in range(a + 1, len(frags)):
                if _pairwise_overlap(frags[a], frags[b]) > 0:
                    raise ValueError(f"boxes {a} and {b} overlap with positive volume")

    @property
    def eps0(self) -> float:
        return min(self.eps1, self.eps2 / 4)

    def fragment_index(self, X) -> np.ndarray:
        """Index of the first box containing each point, -1 outside all boxes."""
        X = as_points(X, self.d)
        idx = np.full(X.shape[0], -1)
        for k, f in enumerate(self.fragments):
            idx[(idx < 0) & f.in_box(X)] = k
        return idx

    def offset(self, X) -> np.ndarray:
        """Signed offset to the boundary inside the owning box, NaN elsewhere."""
        X = as_points(X, self.d)
        idx = self.fragment_index(X)
        out = np.full(X.shape[0], np.nan)
        for k, f in enumerate(self.fragments):
            sel = idx == k
            if np.any(sel):
                out[sel] = f.offset(X[sel])
        return out

    def contains(self, X):
        X = as_points(X, self.d)
        inside = np.zeros(X.shape[0], dtype=bool)
        for f in self.fragments:
            box = f.in_box(X)
            if np.any(box):
                inside[box] |= f.offset(X[box]) >= 0
        return inside

    def line_breaks(self, Y, axis):
        if any(f.j != axis for f in self.fragments):
            return None
        cols = []
        for f in self.fragments:
            cols += [np.full(Y.shape[0], f.lower[axis]), np.full(Y.shape[0], f.upper[axis]),
                     f.iota * f.gamma(Y)]
        return np.stack(cols, axis=1) if cols else np.zeros((Y.shape[0], 0))

    def outer_breaks(self, axis):
        pts = []
        for f in self.fragments:
            pts += [f.lower[axis], f.upper[axis]]
            if axis != f.j:
                pts += list(f.gamma.breaks(axis if axis < f.j else axis - 1))
        return np.array(pts)

    def extents(self):
        return [u - l for f in self.fragments for l, u in zip(f.lower, f.upper)]

    def to_dict(self) -> dict:
        return {"d": self.d, "r": self.r, "eps2": self.eps2, "eps1": self.eps1,
                "fragments": [f.to_dict() for f in self.fragments]}

    @classmethod
    def from_dict(cls, doc: dict) -> "BoundaryFragmentSet":
        return cls(doc["d"], tuple(Fragment.from_dict(f) for f in doc["fragments"]),
                   doc.get("r"), doc.get("eps2"), doc.get("eps1", 1.0))


@dataclass(frozen=True)
class OffsetSet(Region):
    """Fragment set with every boundary moved by ``delta`` (outwards if positive)."""

    base: BoundaryFragmentSet
    delta: float

    @property
    def d(self):
        return self.base.d

    def contains(self, X):
        off = self.base.offset(X)
        return np.nan_to_num(off, nan=-np.inf) + self.delta >= 0

    def line_breaks(self, Y, axis):
        if any(f.j != axis for f in self.base.fragments):
            return None
        cols = []
        for f in self.base.fragments:
            cols += [np.full(Y.shape[0], f.lower[axis]), np.full(Y.shape[0], f.upper[axis]),
                     f.iota * (f.gamma(Y) + self.delta)]
        return np.stack(cols, axis=1)

    def outer_breaks(self, axis):
        return self.base.outer_breaks(axis)

    def extents(self):
        return self.base.extents()


@dataclass(frozen=True, eq=False)
class CertifiedSet(Region):
    """Union of snapped boxes intersected with ``{iota x_j <= gamma_hat(x_-j)}``.

    ``pieces`` holds ``(lower, upper, j, iota, gamma_hat)`` with ``gamma_hat``
    evaluating the clipped boundary network on ``(N, d-1)`` points.
    """

    d: int
    pieces: tuple

    def contains(self, X):
        X = as_points(X, self.d)
        out = np.zeros(X.shape[0], dtype=bool)
        for lo, hi, j, iota, ghat in self.pieces:
            box = np.all((X >= lo) & (X <= hi), axis=1)
            if np.any(box):
                Xb = X[box]
                out[box] |= iota * Xb[:, j] <= ghat(np.delete(Xb, j, axis=1))
        return out

    def line_breaks(self, Y, axis):
        if any(p[2] != axis for p in self.pieces):
            return None
        cols = []
        for lo, hi, j, iota, ghat in self.pieces:
            cols += [np.full(Y.shape[0], lo[axis]), np.full(Y.shape[0], hi[axis]), iota * ghat(Y)]
        return np.stack(cols, axis=1) if cols else np.zeros((Y.shape[0], 0))

    def outer_breaks(self, axis):
        return np.array([v for lo, hi, *_ in self.pieces for v in (lo[axis], hi[axis])])

    def extents(self):
        return [u - l for lo, hi, *_ in self.pieces for l, u in zip(lo, hi)]


# ---------------------------------------------------------------------------
# Building blocks


def dyadic_floor(delta: float) -> float:
    """Largest ``2^-c`` (c >= 0) not exceeding ``delta``."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if delta > 1:
        raise ValueError(f"delta must not exceed 1, got {delta}")
    c = math.ceil(-math.log2(delta))
    while 2.0 ** -c > delta:
        c += 1
    while c > 0 and 2.0 ** -(c - 1) <= delta:
        c -= 1
    return 2.0 ** -c


def _check_dyadic(*values: float) -> None:
    for v in values:
        nc.dyadic_exponent(v)


def heaviside_net(d: int = 1, j: int = 0, sign: int = 1) -> Network:
    """``sigma(t + 1) - sigma(t)`` applied to ``t = sign * x_j``."""
    W = np.zeros((2, d))
    W[:, j] = sign
    return Network((W, np.array([[1.0, -1.0]])), (np.array([-1.0, 0.0]),))


def _scaled_output(units_W: np.ndarray, units_b: np.ndarray, out: np.ndarray) -> Network:
    """One-hidden-layer net whose output weights may exceed 1 in magnitude."""
    peak = float(np.max(np.abs(out), initial=0.0))
    e = max(0, math.ceil(math.log2(peak))) if peak > 1 else 0
    net = Network((units_W, np.atleast_2d(out) / 2.0 ** e), (units_b,))
    return nc.scale_net(net, e)


def box_gate_net(a: float, b: float, h: float, i: int = 0, d: int = 1) -> Network:
    """Trapezoid in ``x_i``: 1 on [a, b], 0 outside [a - h/2, b + h/2]."""
    _check_dyadic(a, b, h)
    if not a < b:
        raise ValueError("gate needs a < b")
    M = -int(math.log2(h)) + 1
    if 2.0 ** (1 - M) != h:
        raise ValueError("gate width must be a power of two")
    if (a / h) % 1 or (b / h) % 1:
        raise ValueError("gate corners must lie on the grid of step h")
    W = np.zeros((4, d))
    W[:, i] = 1.0
    shifts = np.array([a - h / 2, a, b, b + h / 2])
    inner = Network((W, np.array([[1.0, -1.0, -1.0, 1.0]])), (shifts,))
    phi1, _ = nc.power_of_two_nets(M)
    return concatenate(phi1, inner)


def clip_net(base: Network, midpoint: float, h: float) -> Network:
    """``mid + sigma(R + h - mid) - sigma(mid - R + h)`` for the scalar output R of ``base``."""
    _check_dyadic(midpoint, h)
    W = np.array([[1.0], [-1.0], [0.0]])
    shifts = np.array([midpoint - h, -midpoint - h, -abs(midpoint)])
    out = np.array([[1.0, -1.0, math.copysign(1.0, midpoint)]])
    layer = Network((W, out), (shifts,))
    return concatenate(layer, base)


def boundary_shift_net(approx: Network, j: int, iota: int, d: int | None = None) -> Network:
    """Map ``x`` to ``x`` with coordinate j replaced by ``iota x_j - approx(x_-j)``."""
    d = approx.d_in + 1 if d is None else d
    if approx.d_in != d - 1 or approx.d_out != 1:
        raise ValueError("approximator must map d-1 coordinates to a scalar")
    others = [k for k in range(d) if k != j]
    lifted = nc.select_inputs(approx, others, d)
    both = parallelize(nc.identity_net(d), lifted)
    A = np.zeros((d, d + 1))
    A[:, :d] = np.eye(d)
    A[j, j] = iota
    A[j, d] = -1.0
    return nc.linear_output(both, A)


def fragment_indicator_net(gates: Sequence[Network], boundary_net: Network) -> Network:
    """``sigma(sum_i gate_i + boundary - d)`` built from parallel copies.

    The shift ``d`` is off the weight grid, so the sum is formed at scale
    ``2^-k`` and multiplied back with a power-of-two net.
    """
    d = len(gates)
    nets = list(gates) + [boundary_net]
    if any(n.d_out != 1 or n.d_in != d for n in nets):
        raise ValueError("need d scalar gates and one scalar boundary net on d inputs")
    both = parallelize(*nets)
    k = max(1, math.ceil(math.log2(d)))
    s = 2.0 ** -k
    threshold = Network((np.full((1, d + 1), s), np.array([[1.0]])), (np.array([d * s]),))
    phi1, _ = nc.power_of_two_nets(k)
    return concatenate(concatenate(phi1, threshold), both)


# ---------------------------------------------------------------------------
# Boundary approximators


def _snap(v, c: int):
    return np.round(np.asarray(v, dtype=float) * 2.0 ** c) / 2.0 ** c


def _pw_linear_net(knots: np.ndarray, values: np.ndarray) -> Network:
    """Exact ReLU realization of the interpolant through dyadic knots with dyadic slopes."""
    slopes = np.diff(values) / np.diff(knots)
    dm = np.diff(np.concatenate([[0.0], slopes, [0.0]]))
    keep = knots < 1.0
    units = len(knots[keep])
    W = np.concatenate([[0.0], np.ones(units)]).reshape(-1, 1)
    b = np.concatenate([[-1.0], knots[keep]])
    out = np.concatenate([[values[0]], dm[keep]])
    return _scaled_output(W, b, out)


def _sequential_fit(target: Callable, knots: np.ndarray, c: int) -> np.ndarray:
    """Dyadic values at ``knots`` whose slopes lie on the ``2^-c`` grid."""
    vals = np.empty_like(knots)
    vals[0] = _snap(target(knots[:1])[0], c)
    t = target(knots)
    for k in range(1, len(knots)):
        h = knots[k] - knots[k - 1]
        slope = _snap((t[k] - vals[k - 1]) / h, c)
        vals[k] = vals[k - 1] + slope * h
    return vals


@dataclass(frozen=True, eq=False)
class BoundaryApprox:
    net: Network
    error: float
    info: dict = field(default_factory=dict)


def pw_linear_boundary_net(gamma: Boundary, snap_c: int = 24) -> BoundaryApprox:
    """Exact net for piecewise-linear ``gamma`` with dyadic knots and slopes.

    Otherwise knots and slopes are snapped to ``2^-snap_c`` and the exact sup
    error of the snapped interpolant is reported.
    """
    if isinstance(gamma, Constant):
        W = np.zeros((1, gamma.dim))
        v = float(gamma.value)
        vs = float(_snap(v, snap_c))
        net = _scaled_output(W, np.array([-1.0]), np.array([vs]))
        return BoundaryApprox(net, abs(v - vs), {"snap_c": snap_c})
    if not isinstance(gamma, PiecewiseLinear) or gamma.dim != 1:
        raise ValueError("exact realization needs a one-dimensional piecewise-linear boundary")
    k = np.asarray(gamma.knots)
    if k[0] < 0 or k[-1] > 1:
        raise ValueError("knots must lie in [0, 1]")
    knots = np.unique(_snap(k, snap_c))
    vals = _sequential_fit(gamma, knots, snap_c)
    net = _pw_linear_net(knots, vals)
    probe = np.union1d(np.union1d(k, knots), [0.0, 1.0])
    err = float(np.max(np.abs(gamma(probe) - np.interp(probe, knots, vals))))
    return BoundaryApprox(net, err, {"snap_c": snap_c, "knots": len(knots)})


def grid_interp_boundary_net(gamma: Boundary, beta2: float, B2: float, eps: float) -> BoundaryApprox:
    """Interpolant of a Hoelder boundary on a dyadic grid with ``B2 h^beta2 <= eps/2``."""
    if gamma.dim != 1:
        raise ValueError("grid interpolation covers one-dimensional boundaries")
    if not 0 < beta2 <= 1:
        raise ValueError("grid interpolation needs 0 < beta2 <= 1")
    if eps <= 0:
        raise ValueError("eps must be positive")
    h = dyadic_floor(min(1.0, (eps / (2 * B2)) ** (1 / beta2)))
    knots = np.arange(round(1 / h) + 1) * h
    c = max(0, math.ceil(math.log2(1 / eps))) + 2
    vals = _sequential_fit(gamma, knots, c)
    net = _pw_linear_net(knots, vals)
    bound = B2 * h ** beta2 + 2.0 ** -(c + 1)
    return BoundaryApprox(net, bound, {"h": h, "knots": len(knots), "value_c": c})


class BoundaryApproximator(Protocol):
    def __call__(self, gamma: Boundary, eps: float) -> BoundaryApprox: ...


@dataclass(frozen=True)
class ExactPiecewiseLinear:
    snap_c: int = 24

    def __call__(self, gamma, eps):
        res = pw_linear_boundary_net(gamma, self.snap_c)
        if res.error > eps:
            raise ValueError(f"snap error {res.error} exceeds target {eps}")
        return res


@dataclass(frozen=True)
class GridInterpolation:
    beta2: float = 1.0
    B2: float = 1.0

    def __call__(self, gamma, eps):
        return grid_interp_boundary_net(gamma, self.beta2, self.B2, eps)


@dataclass(frozen=True)
class Stage:
    """One level of a composed boundary.

    ``components`` lists ``(function, inputs, beta, B)``: each output of the
    stage applies a one-dimensional Hoelder function to one input coordinate,
    or, when ``function`` is None, the fixed linear form with coefficients
    ``inputs`` (grid values) over all stage inputs.
    """

    components: tuple
    d_in: int

    @property
    def beta(self) -> float:
        betas = [c[2] for c in self.components if c[0] is not None]
        return min(betas) if betas else 1.0

    @property
    def B(self) -> float:
        Bs = [c[3] for c in self.components if c[0] is not None]
        return max(Bs) if Bs else float(max(np.sum(np.abs(c[1])) for c in self.components))


@dataclass(frozen=True, eq=False)
class ComposeReport:
    net: Network
    stage_eps: tuple
    beta_star: tuple
    probe_error: float
    violations: tuple


def stage_budgets(eps: float, betas: Sequence[float], C: float) -> list[float]:
    """``eps_i = (eps/(C r))^(1/prod_{k>i} min(beta_k, 1))``."""
    r = len(betas)
    out = []
    for i in range(r):
        p = math.prod(min(b, 1.0) for b in betas[i + 1:])
        out.append((eps / (C * r)) ** (1 / p))
    return out


def beta_star(betas: Sequence[float]) -> list[float]:
    return [b * math.prod(min(x, 1.0) for x in betas[i + 1:]) for i, b in enumerate(betas)]


def _stage_net(stage: Stage, eps_i: float) -> tuple[Network, Callable]:
    nets, fns = [], []
    for fn, inputs, beta, B in stage.components:
        if fn is None:
            coef = np.asarray(inputs, dtype=float)
            nets.append(Network((coef.reshape(1, -1),), ()))
            fns.append(lambda Y, coef=coef: Y @ coef)
        else:
            approx = grid_interp_boundary_net(fn, min(beta, 1.0), B, eps_i)
            nets.append(nc.select_inputs(approx.net, [inputs], stage.d_in))
            fns.append(lambda Y, fn=fn, col=inputs: fn(Y[:, col]))
    return parallelize(*nets), lambda Y: np.stack([f(Y) for f in fns], axis=1)


def compose_boundary_net(stages: Sequence[Stage], eps: float, C: float | None = None,
                         probes: int = 4096, seed: int = 0) -> ComposeReport:
    """Stage-wise approximation of ``gamma_r o ... o gamma_1``.

    Each stage is approximated at its own budget from :func:`stage_budgets`
    and the stage nets are concatenated.  The sup error is checked on random
    probes; stages whose own error exceeds their budget are listed.
    """
    betas = [s.beta for s in stages]
    if C is None:
        C = max(1.0, max(s.B for s in stages)) ** len(stages)
    budgets = stage_budgets(eps, betas, C)
    net = None
    violations = []
    rng = np.random.default_rng(seed)
    Y = rng.random((probes, stages[0].d_in))
    Yexact = Y
    Ynet = Y
    for i, (stage, e_i) in enumerate(zip(stages, budgets)):
        snet, sfn = _stage_net(stage, e_i)
        stage_err = float(np.max(np.abs(realize(snet, Yexact) - sfn(Yexact))))
        if stage_err > e_i:
            violations.append((i, stage_err, e_i))
        Yexact = sfn(Yexact)
        net = snet if net is None else concatenate(snet, net)
        Ynet = realize(snet, Ynet)
    err = float(np.max(np.abs(Ynet - Yexact)))
    if err > eps:
        violations.append(("total", err, eps))
    return ComposeReport(net, tuple(budgets), tuple(beta_star(betas)), err, tuple(violations))


@dataclass(frozen=True)
class AdditiveComposition:
    """Two-stage approximator for :class:`Additive` boundaries."""

    beta2: float = 1.0
    B2: float = 1.0

    def __call__(self, gamma, eps):
        if not isinstance(gamma, Additive):
            raise ValueError("additive composition needs an Additive boundary")
        m = gamma.dim
        first = Stage(tuple((g, k, self.beta2, self.B2) for k, g in enumerate(gamma.components)), m)
        second = Stage(((None, tuple(gamma.coefs), 1.0, 1.0),), m)
        if gamma.offset:
            raise ValueError("additive offset must be zero for composition")
        rep = compose_boundary_net([first, second], eps)
        if rep.violations:
            raise ValueError(f"stage contract violated: {rep.violations}")
        return BoundaryApprox(rep.net, rep.probe_error, {"stage_eps": rep.stage_eps})


# ---------------------------------------------------------------------------
# The full construction


@dataclass(frozen=True)
class ApproxBudget:
    """Budget functions ``L0, s0, c0`` of the target accuracy ``eps``."""

    rho: float = 1.0
    C1: float = 1.0
    C2: float = 1.0
    C3: int = 1
    C4: int = 1

    @staticmethod
    def _log(eps):
        return max(1, math.ceil(math.log(1 / eps)))

    def L0(self, eps):
        return self.C1 * self._log(eps)

    def s0(self, eps):
        return self.C2 * eps ** -self.rho * max(math.log(1 / eps), 1.0)

    def c0(self, eps):
        return self.C3 + self.C4 * self._log(eps)


# Ratios observed on the calibration suite (see tests), doubled.
DEFAULT_BUDGET_RATIOS = {"L": 16.0, "s": 128.0, "c": 16.0}


@dataclass(frozen=True, eq=False)
class ApproxResult:
    net: Network
    certified: CertifiedSet
    kept: tuple
    dropped: tuple
    h: float
    h_clip: float
    report: dict


def _snap_box(f: Fragment, h: float) -> tuple[np.ndarray, np.ndarray] | None:
    top = 1.0 - h
    lo = np.array([(math.floor(a / h) + 1) * h for a in f.lower])
    hi = np.array([min((math.ceil(b / h) - 1) * h, top) for b in f.upper])
    if np.any(lo >= hi):
        return None
    return lo, hi


def bayes_approx_net(bset: BoundaryFragmentSet, eps: float,
                     approximator: BoundaryApproximator, kappa: float = 1.0,
                     budget: ApproxBudget | None = None, strict: bool = True) -> ApproxResult:
    """Network whose preimage of 1 approximates ``bset`` to order ``eps^kappa``.

    With ``strict`` the target must satisfy ``eps < min(eps1, eps2/4)``.
    """
    if not eps > 0 or (strict and not eps < bset.eps0):
        raise ValueError(f"eps={eps} outside (0, {bset.eps0})")
    d = bset.d
    h = dyadic_floor(min(1.0, eps ** kappa))
    h_clip = dyadic_floor(min(1.0, eps / 2))
    frag_nets, pieces, kept, dropped = [], [], [], []
    errors = []
    for idx, f in enumerate(bset.fragments):
        box = _snap_box(f, h)
        if box is None:
            dropped.append(idx)
            continue
        lo, hi = box
        approx = approximator(f.gamma, eps / 4)
        errors.append(approx.error)
        mid = f.iota * (lo[f.j] + hi[f.j]) / 2
        clipped = clip_net(approx.net, mid, h_clip)
        shifted = boundary_shift_net(clipped, f.j, f.iota, d)
        step = concatenate(heaviside_net(d, f.j, sign=-1), shifted)
        gates = [box_gate_net(lo[i], hi[i], h, i, d) for i in range(d)]
        frag_nets.append(fragment_indicator_net(gates, step))
        ghat = (lambda Y, net=clipped: realize(net, Y)[:, 0])
        pieces.append((lo, hi, f.j, f.iota, ghat))
        kept.append(idx)
    if frag_nets:
        total = nc.linear_output(parallelize(*frag_nets), np.ones((1, len(frag_nets))))
    else:
        total = nc.zero_net(d)
    budget = budget or ApproxBudget()
    L, s, c = total.L, sparsity(total), total.grid_c
    report = {
        "epsilon": eps, "kappa": kappa, "h": h, "h_clip": h_clip,
        "L": L, "s": s, "c": c,
        "L0": budget.L0(eps), "s0": budget.s0(eps), "c0": budget.c0(eps),
        "L_ratio": L / budget.L0(eps), "s_ratio": s / budget.s0(eps),
        "c_ratio": c / budget.c0(eps),
        "approx_error": max(errors, default=0.0),
        "kept": len(kept), "dropped": len(dropped),
    }
    return ApproxResult(total, CertifiedSet(d, tuple(pieces)), tuple(kept), tuple(dropped),
                        h, h_clip, report)


def approximation_bound(r: int, d: int, beta: float, B: float, eps: float, kappa: float,
                        M: float = 1.0) -> float:
    """``(2 r d + max(B/(m! (beta+1)), 1)) eps^kappa M`` with m the largest integer below beta."""
    if beta > 0:
        m = math.ceil(beta) - 1
        term = max(B / (math.factorial(m) * (beta + 1)), 1.0)
    else:
        term = 1.0
    return (2 * r * d + term) * eps ** kappa * M
