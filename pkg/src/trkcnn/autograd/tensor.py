"""Reverse-mode differentiable array container."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class GraphError(RuntimeError):
    """Raised when the recorded computation cannot be differentiated."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An n-dimensional array that records how it was produced.

    Parameters
    ----------
    data : array_like
        Values. Integer input is promoted to float64.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad`` on backward.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: Sequence["Tensor"] = (), _backward: Optional[Callable] = None,
                 name: str = ""):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents = tuple(_parents)
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        needs = any(p.requires_grad for p in parents)
        if not needs:
            return Tensor(data)
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)

    def backward(self, grad: Optional[np.ndarray] = None):
        """Propagate gradients to every leaf that influenced this tensor.

        Leaf gradients are accumulated into ``.grad``; callers reset them
        between optimisation steps.
        """
        if grad is None:
            if self.data.size != 1:
                raise GraphError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if not np.all(np.isfinite(g)):
                        raise FloatingPointError(f"non-finite gradient reached {node.name or 'leaf'}")
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- elementwise arithmetic (broadcasting) -----------------------------

    def __add__(self, other):
        other = _lift(other, self.dtype)
        return Tensor._from_op(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_lift(other, self.dtype))

    def __rsub__(self, other):
        return _lift(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = _lift(other, self.dtype)
        a, b = self.data, other.data
        return Tensor._from_op(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def sum(self) -> "Tensor":
        shape = self.shape
        return Tensor._from_op(np.asarray(self.data.sum()), (self,),
                               lambda g: (np.broadcast_to(g, shape).copy(),))

    def mean(self) -> "Tensor":
        n = self.data.size
        shape = self.shape
        return Tensor._from_op(np.asarray(self.data.mean()), (self,),
                               lambda g: (np.broadcast_to(g / n, shape).copy(),))


def _lift(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _topological_order(root: Tensor) -> list:
    # iterative DFS; GREY marks nodes on the current path so a cycle is detectable
    WHITE, GREY, BLACK = 0, 1, 2
    state = {}
    post = []
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = BLACK
            post.append(node)
            continue
        mark = state.get(key, WHITE)
        if mark == BLACK:
            continue
        if mark == GREY:
            raise GraphError("cycle in recorded computation graph")
        state[key] = GREY
        stack.append((node, True))
        for parent in node._parents:
            pmark = state.get(id(parent), WHITE)
            if pmark == GREY:
                raise GraphError("cycle in recorded computation graph")
            if pmark == WHITE and parent.requires_grad:
                stack.append((parent, False))
    post.reverse()
    return post
