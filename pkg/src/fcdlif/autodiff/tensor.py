"""Reverse-mode automatic differentiation over 32-bit numpy arrays.

Values are stored as float32; reductions accumulate in float64 before the
result is rounded back to storage precision.  The graph is a classic tape:
every operation records its parents and a closure that routes the upstream
gradient to them.  Gradients accumulate additively when a tensor feeds
several consumers.
"""

from __future__ import annotations

import logging

import numpy as np

from ..errors import GraphError, ShapeError

log = logging.getLogger(__name__)

DTYPE = np.float32


def _as_storage(data) -> np.ndarray:
    arr = np.asarray(data, dtype=DTYPE)
    return np.ascontiguousarray(arr)


class Tensor:
    """An n-dimensional float32 array participating in autodiff.

    Parameters
    ----------
    data : array_like
        Initial values, converted to contiguous float32.
    requires_grad : bool
        Whether ``backward`` should populate ``grad`` for this tensor.
    name : str, optional
        Label used in optimizer diagnostics.
    """

    __slots__ = ("data", "requires_grad", "grad", "name",
                 "_parents", "_backward_rule", "_backward_done")

    def __init__(self, data, requires_grad=False, name=None,
                 _parents=(), _backward_rule=None):
        self.data = _as_storage(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = tuple(_parents)
        self._backward_rule = _backward_rule
        self._backward_done = False

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    # -- arithmetic sugar (delegates to ops; late import breaks the cycle) --

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def sum(self):
        from . import ops
        return ops.tensor_sum(self)

    # -- graph plumbing -------------------------------------------------

    def _ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self):
        """Reset the gradient buffer (keeps allocation if present)."""
        if self.grad is not None:
            self.grad.fill(0.0)
        self._backward_done = False

    def backward(self, params=None):
        """Populate gradients of every reachable ``requires_grad`` tensor.

        Must be called on a scalar (single-element) tensor.  Calling it twice
        on the same graph root without resetting gradients raises, because the
        second pass would silently double-accumulate.

        Parameters
        ----------
        params : iterable of Tensor, optional
            Parameters expected to receive gradients.  Any that are not
            reachable from this scalar keep a zero gradient and a warning is
            logged.
        """
        if self.size != 1:
            raise GraphError(f"backward() requires a scalar loss, got shape {self.shape}")
        if self._backward_done:
            raise GraphError("backward() already ran for this graph root; "
                             "zero gradients before calling again")

        order = _toposort(self)
        self._ensure_grad()
        self.grad.fill(1.0)
        for node in reversed(order):
            if node._backward_rule is not None:
                node._backward_rule(node.grad)

        self._backward_done = True
        if params is not None:
            reached = set(id(t) for t in order)
            for p in params:
                if id(p) not in reached:
                    p._ensure_grad()
                    log.warning("parameter %s is not connected to the loss; gradient stays zero",
                                p.name or "<unnamed>")


def _toposort(root: Tensor):
    """Iterative DFS topological order over the tape (parents first)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _needs_grad(*tensors) -> bool:
    return any(t.requires_grad for t in tensors)


_GRAD_ENABLED = True


class no_grad:
    """Context manager that suppresses tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _result(data, parents, backward_rule):
    """Build an op result, pruning the tape when no parent needs gradients."""
    if _GRAD_ENABLED and _needs_grad(*parents):
        return Tensor(data, requires_grad=True, _parents=parents,
                      _backward_rule=backward_rule)
    return Tensor(data)


def parameter(data, name=None) -> Tensor:
    """Create a trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)
