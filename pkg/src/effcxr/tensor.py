"""Minimal reverse-mode autodiff over numpy arrays.

A :class:`Tensor` wraps an ndarray together with an optional gradient and a
record of the operation that produced it.  Kernels in :mod:`effcxr.ops` build
the graph by attaching backward closures; calling :meth:`Tensor.backward` on a
scalar result replays those closures in reverse topological order.

Arrays are float32 by default.  float64 is preserved when passed in explicitly
so that gradient checks can re-run at higher precision.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """An ndarray node in a dynamically built computation graph.

    Attributes:
        data: the underlying ndarray (float32 or float64).
        grad: accumulated gradient of the same shape, or None before backward.
        requires_grad: whether this leaf wants its gradient accumulated.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _prev: Iterable["Tensor"] = (),
        _op: str = "",
    ):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.size == 0:
            raise ValueError("Tensor does not support empty arrays (zero-length dimension)")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward: Callable[[], None] | None = None
        self._prev: tuple[Tensor, ...] = tuple(_prev)
        self._op = _op

    # -- shape conveniences -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        op = f", op={self._op!r}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag}{op})"

    # -- gradient machinery -------------------------------------------------

    def needs_grad(self) -> bool:
        """True if a backward pass must deliver a gradient to this node."""
        return self.requires_grad or bool(self._prev)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this node to every reachable leaf.

        Raises if this tensor has no recorded forward graph (a bare leaf), or
        if ``grad`` is omitted on a non-scalar output.
        """
        if not self._prev:
            raise RuntimeError(
                "backward() called on a tensor with no recorded forward operation"
            )
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    "backward() without an explicit gradient requires a scalar output; "
                    f"got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ValueError(
                    f"gradient shape {grad.shape} does not match output shape {self.shape}"
                )

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.accumulate_grad(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    """Wrap ``x`` in a Tensor unless it already is one (no copy if possible)."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)
