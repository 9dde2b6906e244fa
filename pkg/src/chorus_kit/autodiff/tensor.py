"""Tensor values, the recorded graph, and the reverse pass.

Every differentiable op returns a :class:`Tensor` whose ``_node`` remembers
its inputs and a closure computing the vector-Jacobian product. Calling
:func:`backward` on a scalar walks those nodes in reverse topological order
exactly once; afterwards the saved state is released and the graph cannot be
replayed.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import NumericError, UsageError

_local = threading.local()


def default_dtype() -> np.dtype:
    return getattr(_local, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for newly created tensors.

    >>> with precision(np.float64):
    ...     Tensor([1.0]).data.dtype
    dtype('float64')
    """
    previous = default_dtype()
    _local.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _local.dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording a graph, e.g. for inference."""
    previous = getattr(_local, "no_grad", False)
    _local.no_grad = True
    try:
        yield
    finally:
        _local.no_grad = previous


class Node:
    """One recorded operation: inputs, output handle, and its VJP closure."""

    __slots__ = ("op", "parents", "vjp", "consumed")

    def __init__(self, op: str, parents: Sequence["Tensor"], vjp: Callable):
        self.op = op
        self.parents = tuple(parents)
        self.vjp = vjp
        self.consumed = False

    def release(self) -> None:
        self.vjp = None
        self.consumed = True


class Tensor:
    """An n-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self.name = name

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(dims={self.dims}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; the functions live in ops.py.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops

        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def check_finite(op: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericError(f"{op}: non-finite input")


def record(op: str, data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap an op result, attaching a graph node when any input needs grads."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._node = None
    out.requires_grad = not getattr(_local, "no_grad", False) and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._node = Node(op, parents, vjp)
    return out


class Graph:
    """Operations reachable from one output, in topological order."""

    def __init__(self, order: list[Tensor]):
        self.order = order

    @property
    def ops(self) -> list[str]:
        return [t._node.op for t in self.order]

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t._node is None:
                continue
            seen.add(id(t))
            if t._node.consumed:
                raise UsageError(f"graph through op {t._node.op!r} was already used by a backward pass")
            stack.append((t, True))
            for p in t._node.parents:
                if p._node is not None and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def _accumulate(slot: dict, t: Tensor, g: np.ndarray) -> None:
    key = id(t)
    if key in slot:
        slot[key][1] += g
    else:
        slot[key] = [t, np.array(g, dtype=t.data.dtype, copy=True)]


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate into any existing ``.grad``; call ``zero_grad``
    between steps.
    """
    if loss._node is None:
        raise UsageError("backward called on a tensor that was not produced by a recorded graph")
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got dims {loss.dims}")
    graph = Graph.from_output(loss)
    pending: dict[int, list] = {}
    _accumulate(pending, loss, np.ones_like(loss.data))
    for t in reversed(graph.order):
        node = t._node
        _, g = pending.pop(id(t), (t, None))
        if g is None:
            node.release()
            continue
        grads = node.vjp(g)
        for p, pg in zip(node.parents, grads):
            if pg is None or not p.requires_grad:
                continue
            if p._node is None:
                if p.grad is None:
                    p.grad = np.array(pg, dtype=p.data.dtype, copy=True)
                else:
                    p.grad += pg
            else:
                _accumulate(pending, p, pg)
        node.release()
