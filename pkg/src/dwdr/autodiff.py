"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2-D ``numpy.ndarray`` of dtype float64 (a row-major dense
matrix). Operations build a tape of :class:`Node` objects; :func:`backward`
walks it once in reverse topological order. A tape is single use: running
backward a second time through the same interior nodes raises
:class:`~dwdr.errors.ContractError`.

Broadcasting is limited to what the losses and layers need: equal shapes,
a 1x1 scalar against anything, a 1xd row against bxd, and a bx1 column
against bxd.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from dwdr.errors import ConfigError, ContractError, DegenerateBatchError, DimensionError, NumericError

BackwardRule = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Rng:
    """Seedable PCG64 stream (permuted congruential generator, numpy's default bit generator).

    ``(seed, stream)`` fully determines the draw sequence. Sub-streams from
    :meth:`fork` extend the spawn key, so sibling streams never overlap.
    """

    def __init__(self, seed: int, stream: int | tuple[int, ...] = 0):
        if isinstance(stream, int):
            stream = (stream,)
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def fork(self, sub: int) -> "Rng":
        return Rng(self.seed, self.stream + (int(sub),))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"


def as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Node:
    """One value on the tape plus its gradient accumulator."""

    __slots__ = ("value", "_grad", "parents", "backward_rule", "requires_grad", "op", "_spent")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward_rule: BackwardRule | None = None,
        requires_grad: bool = False,
        op: str = "leaf",
    ):
        self.value = as_matrix(value)
        self._grad = None
        self.parents = tuple(parents)
        self.backward_rule = backward_rule
        self.requires_grad = requires_grad
        self.op = op
        self._spent = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        # allocated on first use; most nodes on a finite-difference tape never need one
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g: np.ndarray) -> None:
        self._grad = g

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        if self.value.size != 1:
            raise DimensionError(f"item() needs a 1x1 node, got {self.shape}")
        return float(self.value[0, 0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all of these go through the functions below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Node":
        return transpose(self)


def param(value) -> Node:
    """Leaf that receives gradients."""
    return Node(value, requires_grad=True)


def const(value) -> Node:
    return Node(value, requires_grad=False)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _make(value: np.ndarray, parents: Sequence[Node], rule: BackwardRule, op: str) -> Node:
    needs = any(p.requires_grad for p in parents)
    if isinstance(value, np.ndarray) and value.ndim == 2 and value.dtype == np.float64:
        # op outputs are fresh arrays (or views nobody mutates); skip the defensive copy leaves get
        node = Node.__new__(Node)
        node.value, node._grad, node.parents = value, None, tuple(parents)
        node.backward_rule, node.requires_grad, node.op, node._spent = (rule if needs else None), needs, op, False
        return node
    return Node(value, parents, rule if needs else None, needs, op)


def _broadcast_shape(a: tuple[int, int], b: tuple[int, int]) -> tuple[int, int]:
    if a == b:
        return a
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise DimensionError(f"cannot broadcast shapes {a} and {b}")
    return tuple(out)


def unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` along axes that were broadcast."""
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape)
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def div(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape)
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise NumericError("division by a zero entry")
    out = av / bv
    return _make(out, (a, b), lambda g: (g / bv, -g * out / bv), "div")


def scale(x, c: float) -> Node:
    x = _lift(x)
    c = float(c)
    return _make(x.value * c, (x,), lambda g: (g * c,), "scale")


def pow_const(x, exponent: float) -> Node:
    """``x ** exponent`` for a constant non-negative exponent.

    Exponent 0 yields exact ones with zero gradient (so 0**0 == 1). Where the
    derivative is unbounded (x == 0 with 0 < exponent < 1) the gradient is 0.
    """
    x = _lift(x)
    e = float(exponent)
    if e < 0:
        raise ConfigError(f"pow_const needs a non-negative exponent, got {e}")
    xv = x.value
    if e == 0.0:
        return _make(np.ones_like(xv), (x,), lambda g: (np.zeros_like(g),), "pow")
    if e == 1.0:
        return _make(xv.copy(), (x,), lambda g: (g,), "pow")
    out = np.power(xv, e)

    def rule(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = e * np.power(xv, e - 1.0)
        d = np.where(np.isfinite(d), d, 0.0)
        return (g * d,)

    return _make(out, (x,), rule, "pow")


def abs_(x) -> Node:
    x = _lift(x)
    s = np.sign(x.value)
    return _make(np.abs(x.value), (x,), lambda g: (g * s,), "abs")


def relu(x) -> Node:
    x = _lift(x)
    mask = (x.value > 0).astype(np.float64)
    return _make(np.maximum(x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def clip(x, lo: float, hi: float) -> Node:
    """Clamp to ``[lo, hi]``; the gradient passes only where no clamping happened."""
    x = _lift(x)
    inside = ((x.value >= lo) & (x.value <= hi)).astype(np.float64)
    return _make(np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,), "clip")


def softplus(x) -> Node:
    """``ln(1 + exp(x))`` evaluated without overflow."""
    x = _lift(x)
    xv = x.value
    out = np.logaddexp(0.0, xv)
    sig = np.exp(xv - out)
    return _make(out, (x,), lambda g: (g * sig,), "softplus")


_EW_KINDS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "pow_const": pow_const,
    "abs": abs_,
    "scale_const": scale,
}


def ew(op_kind: str, *args) -> Node:
    """Dispatch an elementwise op by name."""
    try:
        fn = _EW_KINDS[op_kind]
    except KeyError:
        raise ConfigError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def transpose(x) -> Node:
    x = _lift(x)
    return _make(x.value.T.copy(), (x,), lambda g: (g.T,), "transpose")


def sum_rows(x) -> Node:
    """Column sums: b x d -> 1 x d."""
    x = _lift(x)
    shape = x.shape
    return _make(x.value.sum(axis=0, keepdims=True), (x,), lambda g: (np.broadcast_to(g, shape),), "sum_rows")


def sum_cols(x) -> Node:
    """Row sums: b x d -> b x 1."""
    x = _lift(x)
    shape = x.shape
    return _make(x.value.sum(axis=1, keepdims=True), (x,), lambda g: (np.broadcast_to(g, shape),), "sum_cols")


def mean_rows(x) -> Node:
    x = _lift(x)
    return scale(sum_rows(x), 1.0 / x.shape[0])


def diag(x) -> Node:
    """Main diagonal of a square matrix as a 1 x d row."""
    x = _lift(x)
    n, m = x.shape
    if n != m:
        raise DimensionError(f"diag needs a square matrix, got {x.shape}")

    def rule(g):
        out = np.zeros((n, n))
        out[np.diag_indices(n)] = g[0]
        return (out,)

    return _make(np.diag(x.value).reshape(1, n).copy(), (x,), rule, "diag")


def _reduce_mask(kind: str, shape: tuple[int, int]) -> np.ndarray:
    if kind == "sum_all":
        return np.ones(shape)
    n, m = shape
    if n != m:
        raise DimensionError(f"{kind} needs a square matrix, got {shape}")
    if kind == "sum_diag":
        return np.eye(n)
    if kind == "sum_offdiag":
        return 1.0 - np.eye(n)
    raise ConfigError(f"unknown reduction {kind!r}")


def reduce(kind: str, x) -> Node:
    """Scalar reduction: ``sum_all``, ``sum_diag`` or ``sum_offdiag``."""
    x = _lift(x)
    mask = _reduce_mask(kind, x.shape)
    if kind == "sum_all":
        total = x.value.sum()
    else:
        total = (x.value * mask).sum()
    return _make(np.array([[total]]), (x,), lambda g: (g[0, 0] * mask,), kind)


def sum_all(x) -> Node:
    return reduce("sum_all", x)


def mean_all(x) -> Node:
    x = _lift(x)
    return scale(sum_all(x), 1.0 / x.value.size)


# ---------------------------------------------------------------------------
# composite layers


def log_softmax_rows(z) -> Node:
    z = _lift(z)
    if z.shape[1] < 2:
        raise DimensionError(f"log_softmax needs at least 2 columns, got {z.shape}")
    zv = z.value
    shifted = zv - zv.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)
    return _make(out, (z,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),), "log_softmax")


def standardize_columns(x, eps: float = 1e-8) -> tuple[Node, Node, Node]:
    """Center and scale each column with population statistics.

    Returns ``(z, mu, sigma)`` with ``z = (x - mu) / (sigma + eps)``.
    """
    x = _lift(x)
    b = x.shape[0]
    if b < 2:
        raise DegenerateBatchError(f"standardize_columns needs at least 2 rows, got {b}")
    if eps <= 0:
        raise ConfigError("eps must be positive")
    mu = mean_rows(x)
    centered = sub(x, mu)
    var = mean_rows(mul(centered, centered))
    sigma = pow_const(var, 0.5)
    z = div(centered, add(sigma, eps))
    return z, mu, sigma


class BatchNormState:
    """Learnable scale/shift plus running statistics for :func:`batch_norm_1d`."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.scale = param(np.ones((1, dim)))
        self.shift = param(np.zeros((1, dim)))
        self.running_mean = np.zeros((1, dim))
        self.running_var = np.ones((1, dim))
        self.momentum = momentum
        self.eps = eps


def batch_norm_1d(x, state: BatchNormState, mode: str = "train") -> Node:
    x = _lift(x)
    if mode == "train":
        b = x.shape[0]
        if b < 2:
            raise DegenerateBatchError(f"batch norm in train mode needs at least 2 rows, got {b}")
        mu = mean_rows(x)
        centered = sub(x, mu)
        var = mean_rows(mul(centered, centered))
        normed = div(centered, pow_const(add(var, state.eps), 0.5))
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu.value
        state.running_var = (1 - m) * state.running_var + m * var.value
    elif mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        normed = _make((x.value - state.running_mean) * inv, (x,), lambda g: (g * inv,), "bn_eval")
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    return add(mul(normed, state.scale), state.shift)


def dropout(x, p: float, mode: str, rng: Rng | None = None, mask: np.ndarray | None = None) -> Node:
    """Inverted dropout. ``mask`` may be passed to replay a recorded draw."""
    x = _lift(x)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return x
    if mode != "train":
        raise ConfigError(f"unknown mode {mode!r}")
    if mask is None:
        if rng is None:
            raise ConfigError("train-mode dropout needs an rng or a mask")
        keep = rng.gen.random(x.shape) >= p
        mask = keep / (1.0 - p)
    node = mul(x, const(mask))
    node.op = "dropout"
    return node


# ---------------------------------------------------------------------------
# engine


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Returns a map from ``id(leaf)`` to its gradient array. Interior nodes are
    marked spent, so a second call on the same graph raises ContractError.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")
    if loss._spent:
        raise ContractError("backward already ran on this tape")
    order = _topo_order(loss)
    for node in order:
        if node._spent:
            raise ContractError("graph shares nodes with a tape that was already differentiated")
    interior = [n for n in order if not n.is_leaf]
    for node in interior:
        node.grad = np.zeros_like(node.value)
    loss.grad = loss.grad + 1.0
    leaves: dict[int, np.ndarray] = {}
    for node in reversed(order):
        if node.is_leaf:
            leaves[id(node)] = node.grad
            continue
        if node.backward_rule is None:
            continue
        grads = node.backward_rule(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = parent.grad + unbroadcast(np.asarray(g), parent.shape)
    for node in interior:
        node._spent = True
    return leaves


def zero_grad(nodes: Iterable[Node]) -> None:
    for n in nodes:
        n.zero_grad()


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix."""
    if h <= 0:
        raise ConfigError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f(x))
        x[idx] = orig - h
        fm = float(f(x))
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad
