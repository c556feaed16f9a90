"""Quantized ReLU networks: representation, evaluation, composition, enumeration.

A network with ``L`` hidden layers is stored as ``L + 1`` weight matrices and
``L`` shift vectors.  Hidden layer ``s`` computes ``relu(W_s h - b_s)``; the
final matrix is applied without activation.  All entries live on the dyadic
grid ``{k 2^-c : |k| <= 2^c}``, so evaluation of the constructions in this
package is exact in float64 on dyadic inputs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

FORMAT_VERSION = 1


class BudgetTooLarge(ValueError):
    """Raised when a class is too large to enumerate exhaustively."""

    def __init__(self, bound: int, limit: int):
        super().__init__(
            f"count bound {bound} exceeds enumeration limit {limit}; "
            "use the heuristic search instead")
        self.bound = bound
        self.limit = limit


@dataclass(frozen=True)
class WeightGrid:
    c: int

    def __post_init__(self):
        if int(self.c) != self.c or self.c < 0:
            raise ValueError(f"grid exponent must be a non-negative integer, got {self.c}")

    @property
    def step(self) -> float:
        return 2.0 ** -self.c

    def values(self, nonzero: bool = False) -> np.ndarray:
        """All grid values in ascending order."""
        k = np.arange(-2 ** self.c, 2 ** self.c + 1)
        if nonzero:
            k = k[k != 0]
        return k * self.step

    def contains(self, values) -> bool:
        v = np.asarray(values, dtype=float)
        scaled = v * 2.0 ** self.c
        return bool(np.all(np.abs(v) <= 1.0) and np.all(scaled == np.round(scaled)))


def dyadic_exponent(value: float) -> int:
    """Smallest c >= 0 with value * 2^c an integer (value must be dyadic)."""
    den = Fraction(float(value)).denominator
    if den & (den - 1):
        raise ValueError(f"{value!r} is not a dyadic rational")
    return den.bit_length() - 1


def required_grid(arrays: Sequence[np.ndarray]) -> int:
    """Smallest grid exponent on which every entry of ``arrays`` lies."""
    c = 0
    for a in arrays:
        for v in np.unique(np.asarray(a, dtype=float)):
            if abs(v) > 1.0:
                raise ValueError(f"entry {v} exceeds 1 in magnitude")
            c = max(c, dyadic_exponent(v))
    return c


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Network:
    """Feedforward ReLU net with weights on a dyadic grid.

    ``weights`` has ``L + 1`` matrices, ``shifts`` has ``L`` vectors.  If
    ``grid_c`` is None the smallest admissible exponent is used.
    """

    weights: tuple
    shifts: tuple
    grid_c: int | None = None

    def __post_init__(self):
        ws = tuple(_frozen(np.atleast_2d(w)) for w in self.weights)
        bs = tuple(_frozen(np.atleast_1d(b)) for b in self.shifts)
        if len(ws) != len(bs) + 1:
            raise ValueError("need exactly one more weight matrix than shift vectors")
        for s, b in enumerate(bs):
            if ws[s].shape[0] != b.shape[0]:
                raise ValueError(f"layer {s + 1}: shift length {b.shape[0]} != width {ws[s].shape[0]}")
        for s in range(1, len(ws)):
            if ws[s].shape[1] != ws[s - 1].shape[0]:
                raise ValueError(f"layer {s + 1}: input width mismatch")
        c = required_grid(ws + bs) if self.grid_c is None else int(self.grid_c)
        grid = WeightGrid(c)
        for a in ws + bs:
            if not grid.contains(a):
                raise ValueError(f"entries not on grid W_{c}")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "shifts", bs)
        object.__setattr__(self, "grid_c", c)

    @property
    def L(self) -> int:
        return len(self.shifts)

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def grid(self) -> WeightGrid:
        return WeightGrid(self.grid_c)

    def __repr__(self):
        return f"Network(L={self.L}, dims={self.dims}, s={sparsity(self)}, c={self.grid_c})"


def realize(net: Network, x) -> np.ndarray:
    """Evaluate ``net`` at a point ``(m0,)`` or a batch ``(N, m0)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != net.d_in:
        raise ValueError(f"input dimension {h.shape[1]} != network input {net.d_in}")
    for W, b in zip(net.weights[:-1], net.shifts):
        h = np.maximum(h @ W.T - b, 0.0)
    out = h @ net.weights[-1].T
    return out[0] if single else out


def sparsity(net: Network) -> int:
    return int(sum(np.count_nonzero(a) for a in net.weights + net.shifts))


def identity_net(d: int) -> Network:
    return Network((np.eye(d),), ())


def zero_net(d_in: int, d_out: int = 1) -> Network:
    return Network((np.zeros((d_out, d_in)),), ())


def _grid_max(*nets: Network) -> int:
    return max(n.grid_c for n in nets)


def concatenate(outer: Network, inner: Network) -> Network:
    """Network realizing ``outer o inner``.

    The output of ``inner`` is routed through one extra hidden layer holding
    its positive and negative parts, so exactly ``L1 + L2 + 1`` layers and at
    most ``2 s1 + 2 s2`` nonzero entries are used.
    """
    if inner.d_out != outer.d_in:
        raise ValueError(f"inner output {inner.d_out} != outer input {outer.d_in}")
    Wl = inner.weights[-1]
    Wo = outer.weights[0]
    weights = (inner.weights[:-1] + (np.vstack([Wl, -Wl]), np.hstack([Wo, -Wo]))
               + outer.weights[1:])
    shifts = inner.shifts + (np.zeros(2 * Wl.shape[0]),) + outer.shifts
    return Network(weights, shifts, _grid_max(outer, inner))


def pad_input(net: Network, k: int) -> Network:
    """Prepend ``k`` identity ReLU layers.

    The identity passes through relu unchanged only for non-negative inputs,
    which covers the unit cube the networks here are evaluated on.
    """
    if k == 0:
        return net
    d = net.d_in
    weights = tuple(np.eye(d) for _ in range(k)) + net.weights
    shifts = tuple(np.zeros(d) for _ in range(k)) + net.shifts
    return Network(weights, shifts, net.grid_c)


def _block_diag(*mats: np.ndarray) -> np.ndarray:
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def parallelize(*nets: Network) -> Network:
    """Network realizing ``x -> (R(a)(x), R(b)(x), ...)`` on the unit cube.

    Shallower nets are padded with identity layers at the input, which costs
    at most ``d`` nonzero entries per added layer.
    """
    if not nets:
        raise ValueError("need at least one network")
    d = nets[0].d_in
    if any(n.d_in != d for n in nets):
        raise ValueError("parallelized networks must share the input dimension")
    L = max(n.L for n in nets)
    padded = [pad_input(n, L - n.L) for n in nets]
    weights = [np.vstack([p.weights[0] for p in padded])]
    for s in range(1, L + 1):
        weights.append(_block_diag(*[p.weights[s] for p in padded]))
    shifts = [np.concatenate([p.shifts[s] for p in padded]) for s in range(L)]
    return Network(tuple(weights), tuple(shifts), _grid_max(*nets))


def linear_output(net: Network, A) -> Network:
    """Compose ``net`` with the linear map ``A`` by merging it into the last layer."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != net.d_out:
        raise ValueError(f"map expects {A.shape[1]} inputs, network gives {net.d_out}")
    W = A @ net.weights[-1]
    return Network(net.weights[:-1] + (W,), net.shifts, max(net.grid_c, required_grid([W])))


def select_inputs(net: Network, columns: Sequence[int], d: int) -> Network:
    """Lift ``net`` to ``d`` inputs, feeding input ``i`` of ``net`` from ``x[columns[i]]``."""
    if len(columns) != net.d_in:
        raise ValueError("one column per network input required")
    W = np.zeros((net.weights[0].shape[0], d))
    for i, col in enumerate(columns):
        W[:, col] += net.weights[0][:, i]
    return Network((W,) + net.weights[1:], net.shifts, net.grid_c)


def power_of_two_nets(M: int, c: int = 0) -> tuple[Network, Network]:
    """Nets realizing ``x -> 2^M x`` (x >= 0) and the constant ``2^M``.

    Every layer doubles by summing two copies; the constant net prepends a
    layer that outputs 1 through its shift.
    """
    if M < 1:
        raise ValueError("M must be a positive integer")
    two = np.ones((2, 2))
    weights = (np.ones((2, 1)),) + tuple(two for _ in range(M - 1)) + (np.ones((1, 2)),)
    shifts = tuple(np.zeros(2) for _ in range(M))
    phi1 = Network(weights, shifts, c)
    const_weights = (np.zeros((1, 1)),) + weights
    const_shifts = (np.array([-1.0]),) + shifts
    phi2 = Network(const_weights, const_shifts, c)
    return phi1, phi2


def scale_net(net: Network, e: int) -> Network:
    """Multiply the (real-valued) output of ``net`` by ``2^e`` exactly.

    Positive and negative parts are doubled separately so the result holds
    for outputs of either sign.
    """
    if e < 0:
        raise ValueError("scale exponent must be non-negative")
    if e == 0:
        return net
    m = net.d_out
    Wf = net.weights[-1]
    eye = np.eye(m)
    first = np.vstack([Wf, Wf, -Wf, -Wf])
    pair = np.block([[eye, eye], [eye, eye]])
    double = _block_diag(pair, pair)
    last = np.hstack([eye, eye, -eye, -eye])
    weights = net.weights[:-1] + (first,) + tuple(double for _ in range(e - 1)) + (last,)
    shifts = net.shifts + tuple(np.zeros(4 * m) for _ in range(e))
    return Network(weights, shifts, net.grid_c)


# ---------------------------------------------------------------------------
# Counting and enumeration


@dataclass(frozen=True)
class ClassBudget:
    L0: int
    s0: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.L0, self.c, self.d) < 0 or self.d < 1:
            raise ValueError("budget entries must be non-negative with d >= 1")
        if self.s0 <= 1:
            raise ValueError(f"sparsity budget must exceed 1, got s0={self.s0}")


def count_bound(budget: ClassBudget) -> int:
    """Closed-form upper bound on the number of networks in the class."""
    d, s0, L0, c = budget.d, budget.s0, budget.L0, budget.c
    return ((d * s0 + min(s0, L0) * (s0 + 1) ** 2) * 2 ** (c + 2)) ** s0


def max_layers(budget: ClassBudget) -> int:
    return min(budget.L0, budget.s0)


def parameter_count(budget: ClassBudget, L: int) -> int:
    """Number of entries of the width-s0 architecture with L hidden layers."""
    d, s = budget.d, budget.s0
    if L == 0:
        return d
    return (L - 1) * s * s + (L + 1) * s + d * s


def _layout(budget: ClassBudget, L: int) -> list[tuple[str, int, tuple]]:
    """(kind, layer, shape) blocks in layer-major order."""
    d, s = budget.d, budget.s0
    if L == 0:
        return [("W", 0, (1, d))]
    blocks = [("W", 0, (s, d)), ("b", 0, (s,))]
    for k in range(1, L):
        blocks += [("W", k, (s, s)), ("b", k, (s,))]
    blocks.append(("W", L, (1, s)))
    return blocks


def unflatten(budget: ClassBudget, L: int, params) -> Network:
    params = np.asarray(params, dtype=float)
    weights, shifts, pos = [], [], 0
    for kind, _, shape in _layout(budget, L):
        size = int(np.prod(shape))
        block = params[pos:pos + size].reshape(shape)
        (weights if kind == "W" else shifts).append(block)
        pos += size
    return Network(tuple(weights), tuple(shifts), budget.c)


def enumeration_size(budget: ClassBudget) -> int:
    """Exact number of configurations produced by :func:`enumerate_class`."""
    nv = 2 ** (budget.c + 1)
    total = 0
    for L in range(max_layers(budget) + 1):
        V = parameter_count(budget, L)
        total += sum(math.comb(V, k) * nv ** k for k in range(min(budget.s0, V) + 1))
    return total


def _check_limit(budget: ClassBudget, limit: int) -> None:
    bound = count_bound(budget)
    if bound > limit:
        raise BudgetTooLarge(bound, limit)


def parameter_blocks(budget: ClassBudget, limit: int = 10 ** 6
                     ) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(L, P)`` blocks of flattened parameters in canonical order.

    Order: L ascending, number of nonzeros ascending, positions in
    lexicographic order, then values ascending (lexicographic over the
    chosen positions).
    """
    _check_limit(budget, limit)
    vals = WeightGrid(budget.c).values(nonzero=True)
    for L in range(max_layers(budget) + 1):
        V = parameter_count(budget, L)
        for k in range(min(budget.s0, V) + 1):
            if k == 0:
                yield L, np.zeros((1, V))
                continue
            grid = np.array(list(itertools.product(vals, repeat=k)))
            for combo in itertools.combinations(range(V), k):
                P = np.zeros((grid.shape[0], V))
                P[:, combo] = grid
                yield L, P


def enumerate_class(budget: ClassBudget, limit: int = 10 ** 6) -> Iterator[Network]:
    """Every width-bounded configuration of the class, in canonical order."""
    for L, P in parameter_blocks(budget, limit):
        for row in P:
            yield unflatten(budget, L, row)


def realize_block(budget: ClassBudget, L: int, P: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Outputs of every parameter row of ``P`` on every point of ``X``, shape (B, N)."""
    B = P.shape[0]
    X = np.asarray(X, dtype=float)
    pos = 0
    mats = []
    for kind, _, shape in _layout(budget, L):
        size = int(np.prod(shape))
        mats.append((kind, P[:, pos:pos + size].reshape((B,) + shape)))
        pos += size
    h = np.broadcast_to(X, (B,) + X.shape)
    i = 0
    while i < len(mats) - 1:
        W, b = mats[i][1], mats[i + 1][1]
        h = np.maximum(np.einsum("bij,bnj->bni", W, h) - b[:, None, :], 0.0)
        i += 2
    return np.einsum("bij,bnj->bni", mats[-1][1], h)[:, :, 0]


def fingerprint(net: Network, probes: np.ndarray, decimals: int = 9) -> bytes:
    """Hashable summary of a realization on a probe grid."""
    return np.round(realize(net, probes), decimals).tobytes()


# ---------------------------------------------------------------------------
# Serialization


def _encode(a: np.ndarray, c: int):
    k = np.rint(np.asarray(a) * 2.0 ** c).astype(np.int64)
    return [[int(v), c] for v in k.ravel()] if k.ndim == 1 else [
        [[int(v), c] for v in row] for row in k]


def _decode(entries) -> np.ndarray:
    def val(pair):
        k, c = pair
        return k * 2.0 ** -c

    if entries and isinstance(entries[0][0], list):
        return np.array([[val(p) for p in row] for row in entries], dtype=float)
    return np.array([val(p) for p in entries], dtype=float)


def network_to_dict(net: Network) -> dict:
    c = net.grid_c
    return {
        "version": FORMAT_VERSION,
        "L": net.L,
        "dims": list(net.dims),
        "grid_c": c,
        "layers": [{"W": _encode(W, c), "b": _encode(b, c)}
                   for W, b in zip(net.weights[:-1], net.shifts)],
        "final_W": _encode(net.weights[-1], c),
    }


def network_from_dict(doc: dict) -> Network:
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported network format version {doc.get('version')}")
    dims = doc["dims"]
    weights, shifts = [], []
    for s, layer in enumerate(doc["layers"]):
        W = _decode(layer["W"]).reshape(dims[s + 1], dims[s])
        weights.append(W)
        shifts.append(_decode(layer["b"]).reshape(dims[s + 1]))
    weights.append(_decode(doc["final_W"]).reshape(dims[-1], dims[-2]))
    net = Network(tuple(weights), tuple(shifts), doc["grid_c"])
    if net.L != doc["L"]:
        raise ValueError("layer count does not match the layer list")
    return net
