"""Quadrature over the unit cube for piecewise-smooth integrands.

Two rules are provided.  ``midpoint`` is the plain tensor midpoint rule and
works for any integrand.  ``line`` integrates exactly piecewise along one
axis: the caller supplies, for every outer node, the coordinates along that
axis where the integrand may jump or kink, and each resulting cell gets its
own Gauss-Legendre rule.  The outer coordinates use composite Gauss-Legendre
with caller-supplied breakpoints.  Thin strips along the decision boundary are
resolved by ``line`` without refining the whole grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_legendre

CHUNK = 1 << 20


@dataclass(frozen=True)
class QuadSpec:
    method: str = "line"
    res: int = 256
    order: int = 6
    axis: int | None = None

    def __post_init__(self):
        if self.method not in ("line", "midpoint"):
            raise ValueError(f"unknown quadrature method {self.method!r}")
        if self.res < 1 or self.order < 1:
            raise ValueError("resolution and order must be positive")

    def refined(self) -> "QuadSpec":
        return QuadSpec(self.method, 2 * self.res, self.order, self.axis)

    def to_dict(self) -> dict:
        return {"method": self.method, "res": self.res, "order": self.order, "axis": self.axis}


def _gl(order: int):
    x, w = roots_legendre(order)
    return (x + 1) / 2, w / 2


def midpoint_grid(d: int, res: int) -> tuple[np.ndarray, float]:
    """Cell centres of the ``res^d`` tensor grid and the common cell volume."""
    c = (np.arange(res) + 0.5) / res
    mesh = np.meshgrid(*([c] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), res ** -float(d)


def tensor_midpoint(fn: Callable[[np.ndarray], np.ndarray], d: int, res: int) -> float:
    """Midpoint rule of ``fn`` over [0,1]^d, evaluated in chunks."""
    c = (np.arange(res) + 0.5) / res
    total = 0.0
    n = res ** d
    for start in range(0, n, CHUNK):
        idx = np.arange(start, min(n, start + CHUNK))
        X = np.stack([c[(idx // res ** (d - 1 - k)) % res] for k in range(d)], axis=1)
        total += float(np.sum(fn(X)))
    return total / n


def composite_nodes(breaks: Sequence[float], res: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes on [0,1] over ``res`` cells plus extra breaks."""
    edges = np.union1d(np.linspace(0, 1, res + 1), np.clip(np.asarray(breaks, float), 0, 1))
    x, w = _gl(order)
    lo, width = edges[:-1], np.diff(edges)
    keep = width > 0
    lo, width = lo[keep], width[keep]
    nodes = (lo[:, None] + width[:, None] * x[None, :]).ravel()
    weights = (width[:, None] * w[None, :]).ravel()
    return nodes, weights


def outer_nodes(d: int, breaks: Sequence[Sequence[float]], res: int, order: int):
    """Tensor product of composite rules over ``d`` axes."""
    rules = [composite_nodes(breaks[k] if k < len(breaks) else (), res, order) for k in range(d)]
    if d == 0:
        return np.zeros((1, 0)), np.ones(1)
    mesh = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wmesh = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    Y = np.stack([m.ravel() for m in mesh], axis=1)
    W = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    return Y, W


def line_integral(fn: Callable[[np.ndarray], np.ndarray], d: int, axis: int,
                  line_breaks: Callable[[np.ndarray], np.ndarray],
                  outer_breaks: Sequence[Sequence[float]], res: int, order: int,
                  inner_order: int | None = None) -> float:
    """Integrate ``fn`` over [0,1]^d, piecewise-exactly along ``axis``.

    ``line_breaks(Y)`` maps outer nodes ``(N, d-1)`` to an array ``(N, P)``
    of coordinates along ``axis`` where ``fn`` may be non-smooth; NaN entries
    are ignored.
    """
    Y, Wy = outer_nodes(d - 1, outer_breaks, res, order)
    xi, wi = _gl(inner_order or order)
    total = 0.0
    rows = max(1, CHUNK // (16 * len(xi)))
    for start in range(0, Y.shape[0], rows):
        Yc, Wc = Y[start:start + rows], Wy[start:start + rows]
        N = Yc.shape[0]
        br = np.asarray(line_breaks(Yc), dtype=float).reshape(N, -1)
        br = np.where(np.isnan(br), 0.0, np.clip(br, 0.0, 1.0))
        edges = np.sort(np.concatenate([np.zeros((N, 1)), br, np.ones((N, 1))], axis=1), axis=1)
        lo, width = edges[:, :-1], np.diff(edges, axis=1)
        t = lo[:, :, None] + width[:, :, None] * xi[None, None, :]
        P, Q = t.shape[1], t.shape[2]
        X = np.empty((N, P, Q, d))
        X[..., axis] = t
        others = [k for k in range(d) if k != axis]
        for col, k in enumerate(others):
            X[..., k] = Yc[:, col][:, None, None]
        vals = fn(X.reshape(-1, d)).reshape(N, P, Q)
        inner = np.sum(vals * wi[None, None, :], axis=2)
        total += float(np.sum(Wc * np.sum(inner * width, axis=1)))
    return total
