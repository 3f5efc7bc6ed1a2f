"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation returns a new :class:`Tensor` holding 64-bit float data.
When gradients are enabled and an input requires them, the result records
a backward closure plus links to its parents; :meth:`Tensor.backward`
topologically sorts that graph and runs each closure exactly once.

Tensors are immutable after creation except for gradient population, so
independent graphs can be evaluated concurrently on separate threads (the
gradient-enable switch is thread-local).  The operation set is
deliberately small: dense layers, ReLU, symmetric max-pooling, row
gather / slice / concat plumbing, and scalar reductions — just what a
point-cloud registration network needs.  There is no broadcasting beyond
row vectors, no dtype zoo, and no in-place mutation.
"""

from __future__ import annotations

import threading
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "relu",
    "max_pool_points",
    "sum_all",
    "gather_rows",
    "slice_rows",
    "reshape",
    "concat",
    "pointwise_linear",
    "computation_order",
    "reset_grads",
]


_state = threading.local()


def grad_enabled() -> bool:
    """True when operations on this thread should record backward closures."""
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables gradient recording on this thread."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A numpy-backed value node in a computation graph.

    Attributes:
        data: float64 ndarray (row-major), never mutated after creation.
        grad: gradient buffer matching ``data``'s shape, or None.
        requires_grad: whether backward should produce a gradient here.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(
                f"item() requires a single-element tensor, got shape {self.data.shape}"
            )
        return float(self.data.reshape(()))

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self) -> "Tensor":
        return relu(self)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    # -- reverse-mode pass --------------------------------------------------

    def backward(self) -> None:
        """Run reverse-mode differentiation from this scalar root.

        Raises:
            DimensionError: if this tensor is not a scalar.
            RuntimeError: if no graph was recorded, or a previous backward
                left gradients in place (no silent accumulation).
        """
        if self.data.size != 1:
            raise DimensionError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise RuntimeError(
                "backward called on a tensor that does not require gradients"
            )
        order = computation_order(self)
        for node in order:
            if node._backward is None and node.grad is not None:
                raise RuntimeError(
                    "gradient buffers are already populated from a previous "
                    "backward pass; reset them before calling backward again"
                )
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()


def computation_order(root: Tensor) -> list[Tensor]:
    """Topological order of the graph below ``root`` (parents first).

    Iterative post-order traversal, so deep graphs do not hit the
    interpreter recursion limit.  Each node appears exactly once.
    """
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def reset_grads(tensors: Iterable[Tensor]) -> None:
    """Clear gradient buffers on the given tensors."""
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# op plumbing


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap ``data``; record the closure only if someone needs gradients."""
    tracked = tuple(p for p in parents if p.requires_grad)
    if not grad_enabled() or not tracked:
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    out._parents = tracked
    out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# operations


def matmul(a, b) -> Tensor:
    """Matrix product ``a @ b`` for 2-D x 2-D or 1-D x 2-D operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim not in (1, 2):
        raise DimensionError(
            f"matmul supports (N,K)@(K,M) or (K,)@(K,M), got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    out = _make(a.data @ b.data, (a, b), None)

    if out._parents:
        def _backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g @ b.data.T)
            if b.requires_grad:
                if a.data.ndim == 1:
                    _accumulate(b, np.outer(a.data, g))
                else:
                    _accumulate(b, a.data.T @ g)

        out._backward = _backward
    return out


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> str:
    """Classify an elementwise combination: 'same' or 'row' broadcast."""
    if a.data.shape == b.data.shape:
        return "same"
    if (
        a.data.ndim == 2
        and b.data.ndim == 1
        and a.data.shape[1] == b.data.shape[0]
    ):
        return "row"
    raise DimensionError(
        f"{op} requires equal shapes or (N,C) with (C,), got {a.data.shape} and {b.data.shape}"
    )


def add(a, b) -> Tensor:
    """Elementwise sum; a 1-D right operand broadcasts across rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _binary_shapes(a, b, "add")
    out = _make(a.data + b.data, (a, b), None)

    if out._parents:
        def _backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g)
            if b.requires_grad:
                _accumulate(b, g.sum(axis=0) if kind == "row" else g)

        out._backward = _backward
    return out


def sub(a, b) -> Tensor:
    """Elementwise difference; a 1-D right operand broadcasts across rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _binary_shapes(a, b, "sub")
    out = _make(a.data - b.data, (a, b), None)

    if out._parents:
        def _backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g)
            if b.requires_grad:
                _accumulate(b, -(g.sum(axis=0)) if kind == "row" else -g)

        out._backward = _backward
    return out


def mul(a, b) -> Tensor:
    """Elementwise product of equal shapes, or scaling by a python number."""
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)
        out = _make(a.data * c, (a,), None)
        if out._parents:
            def _backward():
                _accumulate(a, out.grad * c)

            out._backward = _backward
        return out

    b = _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"mul requires equal shapes, got {a.data.shape} and {b.data.shape}"
        )
    out = _make(a.data * b.data, (a, b), None)
    if out._parents:
        def _backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g * b.data)
            if b.requires_grad:
                _accumulate(b, g * a.data)

        out._backward = _backward
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = _make(-a.data, (a,), None)
    if out._parents:
        def _backward():
            _accumulate(a, -out.grad)

        out._backward = _backward
    return out


def relu(a) -> Tensor:
    """Rectifier max(x, 0); the subgradient at exactly zero is zero."""
    a = _as_tensor(a)
    out = _make(np.maximum(a.data, 0.0), (a,), None)
    if out._parents:
        mask = a.data > 0.0

        def _backward():
            _accumulate(a, out.grad * mask)

        out._backward = _backward
    return out


def max_pool_points(a) -> Tensor:
    """Column-wise maximum of an (N, C) tensor, yielding shape (C,).

    The gradient routes to each column's first (lowest-index) argmax row,
    matching numpy's argmax tie-breaking.
    """
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(
            f"max_pool_points expects an (N, C) tensor, got shape {a.data.shape}"
        )
    if a.data.shape[0] == 0:
        raise EmptyInputError("max_pool_points received an empty point dimension")
    out = _make(a.data.max(axis=0), (a,), None)
    if out._parents:
        winners = a.data.argmax(axis=0)

        def _backward():
            buf = np.zeros_like(a.data)
            buf[winners, np.arange(a.data.shape[1])] = out.grad
            _accumulate(a, buf)

        out._backward = _backward
    return out


def sum_all(a) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    a = _as_tensor(a)
    out = _make(np.asarray(a.data.sum()), (a,), None)
    if out._parents:
        def _backward():
            _accumulate(a, np.full(a.data.shape, float(out.grad)))

        out._backward = _backward
    return out


def gather_rows(a, indices) -> Tensor:
    """Select rows of an (N, C) tensor; repeated indices are allowed.

    The backward pass scatter-adds, so a row selected k times receives the
    sum of its k downstream gradients.
    """
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(
            f"gather_rows expects an (N, C) tensor, got shape {a.data.shape}"
        )
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError(f"gather_rows indices must be 1-D, got shape {idx.shape}")
    n = a.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DimensionError(
            f"gather_rows index out of range for {n} rows: "
            f"[{int(idx.min())}, {int(idx.max())}]"
        )
    out = _make(a.data[idx], (a,), None)
    if out._parents:
        def _backward():
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, out.grad)
            _accumulate(a, buf)

        out._backward = _backward
    return out


def slice_rows(a, start: int, stop: int) -> Tensor:
    """Contiguous row slice ``a[start:stop]`` of a 2-D tensor."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(
            f"slice_rows expects a 2-D tensor, got shape {a.data.shape}"
        )
    n = a.data.shape[0]
    if not (0 <= start < stop <= n):
        raise DimensionError(
            f"slice_rows bounds [{start}, {stop}) invalid for {n} rows"
        )
    out = _make(a.data[start:stop], (a,), None)
    if out._parents:
        def _backward():
            buf = np.zeros_like(a.data)
            buf[start:stop] = out.grad
            _accumulate(a, buf)

        out._backward = _backward
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    new_shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    try:
        data = a.data.reshape(new_shape)
    except ValueError as exc:
        raise DimensionError(
            f"cannot reshape {a.data.shape} into {new_shape}"
        ) from exc
    out = _make(data, (a,), None)
    if out._parents:
        def _backward():
            _accumulate(a, out.grad.reshape(a.data.shape))

        out._backward = _backward
    return out


def concat(a, b) -> Tensor:
    """Concatenate two 1-D tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise DimensionError(
            f"concat expects 1-D tensors, got {a.data.shape} and {b.data.shape}"
        )
    out = _make(np.concatenate([a.data, b.data]), (a, b), None)
    if out._parents:
        split = a.data.shape[0]

        def _backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g[:split])
            if b.requires_grad:
                _accumulate(b, g[split:])

        out._backward = _backward
    return out


def pointwise_linear(x, w, b, activation: str | None = None) -> Tensor:
    """Dense layer ``x @ w + b`` applied to each point (row) independently,
    optionally followed by a fused rectifier.

    A single graph node: the bias add (and rectifier, when requested) run
    in place on the matrix-product buffer, avoiding the intermediate
    arrays that separate add/relu nodes would allocate.  The rectifier's
    subgradient at exactly zero is zero, matching :func:`relu`.

    Args:
        x: (N, C_in) points-by-channels tensor, or a single (C_in,) vector.
        w: (C_in, C_out) weights.
        b: (C_out,) bias, broadcast across rows.
        activation: None for linear output, or "relu".
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if activation not in (None, "relu"):
        raise ValueError(f"unknown activation {activation!r}; expected None or 'relu'")
    if w.data.ndim != 2 or x.data.ndim not in (1, 2):
        raise DimensionError(
            f"pointwise_linear supports (N,K)@(K,M) or (K,)@(K,M), "
            f"got {x.data.shape} @ {w.data.shape}"
        )
    if x.data.shape[-1] != w.data.shape[0]:
        raise DimensionError(
            f"pointwise_linear inner dimensions differ: {x.data.shape} @ {w.data.shape}"
        )
    if b.data.shape != (w.data.shape[1],):
        raise DimensionError(
            f"bias shape {b.data.shape} does not match output width {w.data.shape[1]}"
        )

    data = x.data @ w.data
    data += b.data
    if activation == "relu":
        np.maximum(data, 0.0, out=data)
    out = _make(data, (x, w, b), None)

    if out._parents:
        def _backward():
            g = out.grad
            if activation == "relu":
                g = g * (out.data > 0.0)
            if x.requires_grad:
                _accumulate(x, g @ w.data.T)
            if w.requires_grad:
                if x.data.ndim == 1:
                    _accumulate(w, np.outer(x.data, g))
                else:
                    _accumulate(w, x.data.T @ g)
            if b.requires_grad:
                _accumulate(b, g.sum(axis=0) if x.data.ndim == 2 else g)

        out._backward = _backward
    return out
