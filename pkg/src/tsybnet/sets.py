"""Measurable subsets of [0,1]^d used as hypotheses and probes.

Every region answers membership queries.  Regions with explicit structure
along one axis also report, per line, where membership can change, which the
line quadrature uses to integrate symmetric differences exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn_core import Network, realize

MEMBERSHIP_TOL = 1e-9


def as_points(X, d: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got {X.shape[1]}")
    return X


def membership(net: Network, X) -> np.ndarray:
    """True where the realization equals 1 within the membership tolerance."""
    out = realize(net, np.atleast_2d(np.asarray(X, dtype=float)))
    if out.shape[-1] != 1:
        raise ValueError("membership needs a scalar-output network")
    res = np.abs(out[:, 0] - 1.0) <= MEMBERSHIP_TOL
    return res[0] if np.ndim(X) == 1 else res


def lift(Y: np.ndarray, axis: int, t) -> np.ndarray:
    """Insert coordinate ``t`` at position ``axis`` into points ``Y``."""
    t = np.broadcast_to(np.asarray(t, dtype=float), (Y.shape[0],))
    return np.insert(Y, axis, t, axis=1)


class Region:
    d: int

    def contains(self, X) -> np.ndarray:
        raise NotImplementedError

    def line_breaks(self, Y: np.ndarray, axis: int) -> np.ndarray | None:
        """Per-line change points along ``axis``; None when not available."""
        return None

    def outer_breaks(self, axis: int) -> np.ndarray:
        return np.array([])

    def extents(self) -> list[float]:
        """Box widths used to judge quadrature resolution."""
        return []


@dataclass(frozen=True)
class FullSet(Region):
    d: int

    def contains(self, X):
        return np.ones(as_points(X, self.d).shape[0], dtype=bool)

    def line_breaks(self, Y, axis):
        return np.zeros((Y.shape[0], 0))


@dataclass(frozen=True)
class EmptySet(Region):
    d: int

    def contains(self, X):
        return np.zeros(as_points(X, self.d).shape[0], dtype=bool)

    def line_breaks(self, Y, axis):
        return np.zeros((Y.shape[0], 0))


@dataclass(frozen=True)
class BoxSet(Region):
    lower: tuple
    upper: tuple

    @property
    def d(self):
        return len(self.lower)

    def contains(self, X):
        X = as_points(X, self.d)
        return np.all((X >= np.array(self.lower)) & (X <= np.array(self.upper)), axis=1)

    def line_breaks(self, Y, axis):
        return np.tile([self.lower[axis], self.upper[axis]], (Y.shape[0], 1))

    def outer_breaks(self, axis):
        return np.array([self.lower[axis], self.upper[axis]])

    def extents(self):
        return [u - l for l, u in zip(self.lower, self.upper)]


@dataclass(frozen=True)
class Complement(Region):
    base: Region

    @property
    def d(self):
        return self.base.d

    def contains(self, X):
        return ~self.base.contains(X)

    def line_breaks(self, Y, axis):
        return self.base.line_breaks(Y, axis)

    def outer_breaks(self, axis):
        return self.base.outer_breaks(axis)

    def extents(self):
        return self.base.extents()


@dataclass(frozen=True, eq=False)
class NetSet(Region):
    """The preimage of 1 under a scalar network."""

    net: Network

    @property
    def d(self):
        return self.net.d_in

    def contains(self, X):
        return membership(self.net, as_points(X, self.d))
