"""Dense float32 tensor with reverse-mode autodiff.

A Tensor wraps a numpy array (float32 for data, float64 allowed for
zero-dim reduction outputs) plus an optional gradient buffer of the same
shape. Operations in :mod:`latentreplay.nn.ops` build a backward tape by
recording parent tensors and a closure that routes the incoming gradient
to them; ``Tensor.backward()`` walks the tape in reverse topological
order. Forward passes are pure: the same inputs always produce
bit-identical outputs.

Passing ``dtype=np.float64`` keeps the buffer in double precision and
every op preserves it; only the finite-difference checker uses this, so
its central differences are not swamped by float32 rounding. Production
code never constructs float64 tensors.

NaN/Inf detection is a debug-mode assertion only, enabled with
:func:`set_debug_checks` or the ``LATENTREPLAY_DEBUG`` environment
variable.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from ..errors import ShapeError

_grad_enabled = True
_debug_checks = bool(os.environ.get("LATENTREPLAY_DEBUG"))


def set_debug_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf assertion applied to every op output."""
    global _debug_checks
    _debug_checks = enabled


@contextmanager
def no_grad():
    """Disable tape construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """n-dimensional float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype != np.float32 and not (arr.ndim == 0 and arr.dtype == np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward_fn = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, backward_fn) -> "Tensor":
        """Wrap an op output, attaching the tape node when grads are live."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward_fn = None
        if _debug_checks and not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite value in op output")
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g.astype(self.data.dtype, copy=False)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor through the recorded tape."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.accumulate_grad(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def __add__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            raise TypeError("can only add Tensor to Tensor")
        if self.data.shape != other.data.shape:
            raise ShapeError(f"add shape mismatch: {self.shape} vs {other.shape}")
        a, b = self, other
        out_data = a.data + b.data

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(g)

        return Tensor._from_op(out_data, (a, b), backward)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
