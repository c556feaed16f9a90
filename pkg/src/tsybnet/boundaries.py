"""Boundary functions gamma: [0,1]^(d-1) -> R used by fragment sets.

Each class evaluates on a batch ``(N, d-1)`` (or ``(N,)`` when d-1 = 1) and
round-trips through a plain dict with a ``type`` key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np


def _as_matrix(y, dim: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        y = y.reshape(1, 1)
    elif y.ndim == 1:
        y = y.reshape(-1, 1) if dim == 1 else y.reshape(1, -1)
    if y.shape[1] != dim:
        raise ValueError(f"boundary expects {dim} coordinates, got {y.shape[1]}")
    return y


class Boundary:
    dim: int = 1

    def __call__(self, y) -> np.ndarray:
        return self.evaluate(_as_matrix(y, self.dim))

    def evaluate(self, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def breaks(self, axis: int = 0) -> np.ndarray:
        """Coordinates along ``axis`` where the function may be non-smooth."""
        return np.array([])

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Boundary):
    value: float
    dim: int = 1

    def evaluate(self, Y):
        return np.full(Y.shape[0], float(self.value))

    def to_dict(self):
        return {"type": "constant", "value": self.value, "dim": self.dim}


@dataclass(frozen=True)
class PiecewiseLinear(Boundary):
    """Linear interpolation through ``(knots[i], values[i])``, constant outside."""

    knots: tuple
    values: tuple
    dim: int = 1

    def __post_init__(self):
        k = tuple(float(v) for v in self.knots)
        v = tuple(float(v) for v in self.values)
        if len(k) != len(v) or len(k) < 1:
            raise ValueError("knots and values must have equal non-zero length")
        if any(b <= a for a, b in zip(k, k[1:])):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    def evaluate(self, Y):
        return np.interp(Y[:, 0], self.knots, self.values)

    def breaks(self, axis=0):
        return np.array(self.knots)

    def to_dict(self):
        return {"type": "piecewise_linear", "knots": list(self.knots),
                "values": list(self.values)}


@dataclass(frozen=True)
class PowerAbs(Boundary):
    """``offset + scale * |y - center|^beta``."""

    center: float
    beta: float
    scale: float = 1.0
    offset: float = 0.0
    dim: int = 1

    def evaluate(self, Y):
        return self.offset + self.scale * np.abs(Y[:, 0] - self.center) ** self.beta

    def breaks(self, axis=0):
        return np.array([self.center])

    def to_dict(self):
        return {"type": "power_abs", "center": self.center, "beta": self.beta,
                "scale": self.scale, "offset": self.offset}


@dataclass(frozen=True)
class Sine(Boundary):
    """``offset + amplitude * sin(2 pi freq y + phase)``; Lipschitz with constant 2 pi freq amplitude."""

    offset: float
    amplitude: float
    freq: float = 1.0
    phase: float = 0.0
    dim: int = 1

    def evaluate(self, Y):
        return self.offset + self.amplitude * np.sin(2 * np.pi * self.freq * Y[:, 0] + self.phase)

    @property
    def lipschitz(self) -> float:
        return 2 * np.pi * self.freq * abs(self.amplitude)

    def to_dict(self):
        return {"type": "sine", "offset": self.offset, "amplitude": self.amplitude,
                "freq": self.freq, "phase": self.phase}


def mollifier(t) -> np.ndarray:
    """``exp(1 - 1/(1 - t^2))`` on (-1, 1), zero outside; equals 1 at 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


@dataclass(frozen=True)
class BumpSum(Boundary):
    """Sum of disjoint product bumps ``k1 K^-beta2 prod phi(K(y_j - (2 i_j - 1)/K))``.

    Bump centres sit on the odd multiples of 1/K below 1, so a resolution of
    ``K`` places ``floor(K/2)`` bumps per axis; ``weights`` is indexed in C
    order over that grid.
    """

    K: int
    k1: float
    beta2: float
    weights: tuple
    dim: int = 1

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("resolution K must be at least 2")
        w = tuple(int(v) for v in np.asarray(self.weights).ravel())
        if len(w) != self.per_axis ** self.dim or any(v not in (0, 1) for v in w):
            raise ValueError(f"need {self.per_axis ** self.dim} binary weights")
        object.__setattr__(self, "weights", w)

    @property
    def per_axis(self) -> int:
        return len(self.centres_1d())

    def centres_1d(self) -> np.ndarray:
        i = np.arange(1, self.K + 1)
        c = (2 * i - 1) / self.K
        return c[c < 1]

    @property
    def amplitude(self) -> float:
        return self.k1 * self.K ** (-self.beta2)

    def evaluate(self, Y):
        c = self.centres_1d()
        # per-axis bump values, shape (N, dim, n_centres)
        phi = mollifier(self.K * (Y[:, :, None] - c[None, None, :]))
        out = np.zeros(Y.shape[0])
        w = np.array(self.weights).reshape((len(c),) * self.dim)
        for idx in zip(*np.nonzero(w)):
            term = np.ones(Y.shape[0])
            for axis, i in enumerate(idx):
                term = term * phi[:, axis, i]
            out += term
        return self.amplitude * out

    def breaks(self, axis=0):
        c = self.centres_1d()
        return np.clip(np.concatenate([c - 1 / self.K, c + 1 / self.K]), 0, 1)

    def to_dict(self):
        return {"type": "bump_sum", "K": self.K, "k1": self.k1, "beta2": self.beta2,
                "weights": list(self.weights), "dim": self.dim}


@dataclass(frozen=True)
class Additive(Boundary):
    """``offset + sum_i coef_i * g_i(y_i)`` with one-dimensional components."""

    components: tuple
    coefs: tuple
    offset: float = 0.0
    dim: int = field(init=False)

    def __post_init__(self):
        if len(self.components) != len(self.coefs):
            raise ValueError("one coefficient per component")
        if any(g.dim != 1 for g in self.components):
            raise ValueError("additive components must be one-dimensional")
        object.__setattr__(self, "dim", len(self.components))

    def evaluate(self, Y):
        out = np.full(Y.shape[0], float(self.offset))
        for i, (g, a) in enumerate(zip(self.components, self.coefs)):
            out += a * g.evaluate(Y[:, i:i + 1])
        return out

    def breaks(self, axis=0):
        return self.components[axis].breaks()

    def to_dict(self):
        return {"type": "additive", "components": [g.to_dict() for g in self.components],
                "coefs": list(self.coefs), "offset": self.offset}


def boundary_from_dict(doc: dict) -> Boundary:
    kind = doc["type"]
    if kind == "constant":
        return Constant(doc["value"], doc.get("dim", 1))
    if kind == "piecewise_linear":
        return PiecewiseLinear(tuple(doc["knots"]), tuple(doc["values"]))
    if kind == "power_abs":
        return PowerAbs(doc["center"], doc["beta"], doc.get("scale", 1.0), doc.get("offset", 0.0))
    if kind == "sine":
        return Sine(doc["offset"], doc["amplitude"], doc.get("freq", 1.0), doc.get("phase", 0.0))
    if kind == "bump_sum":
        return BumpSum(doc["K"], doc["k1"], doc["beta2"], tuple(doc["weights"]), doc.get("dim", 1))
    if kind == "additive":
        comps = tuple(boundary_from_dict(c) for c in doc["components"])
        return Additive(comps, tuple(doc["coefs"]), doc.get("offset", 0.0))
    raise ValueError(f"unknown boundary type {kind!r}")


def holder_seminorm_estimate(g: Boundary, beta: float, n: int = 1025) -> float:
    """Sup of ``|g(y) - g(y')| / |y - y'|^beta`` over a uniform 1-D grid."""
    if g.dim != 1:
        raise ValueError("estimate implemented for one-dimensional boundaries")
    y = np.linspace(0, 1, n)
    v = g(y)
    iu = np.triu_indices(n, 1)
    diff = np.abs(v[:, None] - v[None, :])[iu]
    dist = np.abs(y[:, None] - y[None, :])[iu] ** beta
    return float(np.max(diff / dist))


def holder_norm_estimate(g: Boundary, beta: float, n: int = 1025) -> float:
    """Numerical Hoelder norm for ``beta <= 1``: sup norm plus seminorm."""
    if beta > 1:
        raise ValueError("numerical estimate covers beta <= 1")
    y = np.linspace(0, 1, n)
    return float(np.max(np.abs(g(y)))) + holder_seminorm_estimate(g, beta, n)


def falling_factorial(beta: float, i: int) -> float:
    return math.prod(beta - k for k in range(i))
