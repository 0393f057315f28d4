"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op that touches a tensor with ``requires_grad=True`` records a node.
Nodes carry a global sequence number, so sorting the nodes reachable from a
root by that number recovers the order they were recorded in; ``backward``
walks that order in reverse.

Only scalar-vs-tensor broadcasting is supported, plus the explicit
``add_bias`` op for adding a row vector to every row of a matrix.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericError

_node_ids = itertools.count()


class Node:
    __slots__ = ("id", "op", "inputs", "output", "backward_fn", "consumed")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.id = next(_node_ids)
        self.op = op
        self.inputs = tuple(inputs)
        self.output: "Tensor | None" = None
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    """A row-major float64 array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

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
        if isinstance(other, Tensor):
            raise NotImplementedError("division is only defined by a python scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.node = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    if out.requires_grad:
        node = Node(op, inputs, backward_fn)
        node.output = out
        out.node = node
    return out


def _check_finite(x: Tensor, op: str) -> None:
    if not np.all(np.isfinite(x.data)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(x.data))[0])
        raise NumericError(f"{op}: non-finite input at index {bad}")


# --- elementwise -----------------------------------------------------------


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _reduce_to(grad: np.ndarray, like: Tensor) -> np.ndarray:
    # undo scalar broadcasting
    if grad.shape == like.shape:
        return grad
    return np.full(like.shape, grad.sum())


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")

    def bw(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _record("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")

    def bw(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _record("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")

    def bw(g):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return _record("mul", a.data * b.data, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0  # relu'(0) = 0
    return _record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tensor_abs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _record("abs", np.abs(x.data), (x,), lambda g: (g * sign,))


def log(x: Tensor) -> Tensor:
    bad = np.argwhere(~(x.data > 0.0))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise DomainError(f"log of non-positive value {x.data[idx]!r} at index {idx}", index=idx)
    return _record("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record("exp", out, (x,), lambda g: (g * out,))


# --- linear algebra / reductions ------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", a.data @ b.data, (a, b), bw)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-E vector to every row of a B x E matrix."""
    if x.data.ndim != 2 or bias.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: bias shape {bias.shape} does not fit rows of {x.shape}")

    def bw(g):
        return g, g.sum(axis=0)

    return _record("add_bias", x.data + bias.data, (x, bias), bw)


def tensor_sum(x: Tensor) -> Tensor:
    return _record("sum", np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def tensor_mean(x: Tensor) -> Tensor:
    n = x.size
    if n == 0:
        raise ContractError("mean of an empty tensor")
    return _record("mean", np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def sum_rows(x: Tensor) -> Tensor:
    """Sum over the last axis of a B x C matrix, giving a length-B vector."""
    if x.data.ndim != 2:
        raise DimensionError(f"sum_rows expects a matrix, got shape {x.shape}")
    cols = x.shape[1]
    return _record("sum_rows", x.data.sum(axis=1), (x,), lambda g: (np.repeat(g[:, None], cols, axis=1),))


def take_rows(x: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _record("take_rows", x.data[index], (x,), bw)


def log_softmax_rows(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"log_softmax_rows needs B x C with C >= 2, got {logits.shape}")
    _check_finite(logits, "log_softmax_rows")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return _record("log_softmax_rows", out, (logits,), bw)


def softmax_rows(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"softmax_rows needs B x C with C >= 2, got {logits.shape}")
    _check_finite(logits, "softmax_rows")
    e = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _record("softmax_rows", p, (logits,), bw)


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "abs": tensor_abs,
    "log": log,
    "exp": exp,
}


def elementwise(op: str, *operands) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# --- tape ------------------------------------------------------------------


class Tape:
    """The recorded nodes reachable from a root, in recording order."""

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        seen: dict[int, Node] = {}
        stack = [root.node] if root.node is not None else []
        while stack:
            node = stack.pop()
            if node.id in seen:
                continue
            seen[node.id] = node
            stack.extend(t.node for t in node.inputs if t.node is not None)
        return cls(sorted(seen.values(), key=lambda n: n.id))

    def __len__(self):
        return len(self.nodes)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf."""
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if root.node is None:
        if root.requires_grad:
            root.grad = np.ones_like(root.data) if root.grad is None else root.grad + 1.0
            return
        raise ContractError("backward called on a tensor with an empty tape")
    if root.node.consumed:
        raise ContractError("backward called twice on the same graph; run a fresh forward pass")

    tape = Tape.from_root(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        node.consumed = True
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        for inp, g in zip(node.inputs, node.backward_fn(g_out)):
            if not inp.requires_grad:
                continue
            if inp.node is None:
                inp.grad = g.copy() if inp.grad is None else inp.grad + g
            else:
                key = id(inp)
                grads[key] = g if key not in grads else grads[key] + g

