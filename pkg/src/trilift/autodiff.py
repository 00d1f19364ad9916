"""Minimal reverse-mode tape and second-order forward jets on numpy.

Two pieces, both float64 and deterministic:

  - ``Tensor``: a reverse-mode autodiff node wrapping an ndarray. Supports
    the handful of primitives the policy networks need (affine maps,
    tanh, elementwise arithmetic, concat/slice/pad, reductions). Gradients
    are exact; there is no graph caching or in-place mutation.

  - ``Jet2``: a (value, d/dt, d2/dt2) triple propagated through network
    primitives, giving exact first and second time-derivatives of the
    network output. Its fields may be ndarrays (inference) or Tensors
    (training), so reverse-mode gradients flow through the jet
    propagation itself ("reverse over forward").

The jet rules are the standard truncated Taylor recurrences: affine maps
act linearly on each order; for y = tanh(z),

    y' = (1 - y^2) z'
    y'' = (1 - y^2) z'' - 2 y (1 - y^2) z' z'
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach grad.shape."""
    if grad.shape == shape:
        return grad
    # sum away prepended axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Reverse-mode autodiff node over a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    # keep numpy from hijacking ndarray <op> Tensor expressions
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), vjp: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def _track(self, *parents: "Tensor") -> bool:
        return any(p.requires_grad or p._parents for p in parents)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, contrib in zip(node._parents, node._vjp(node.grad)):
                if contrib is None:
                    continue
                # bind on first touch; no op mutates gradients in place, so
                # sharing an upstream array between parents stays safe
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, parents=(self, other))
        out._vjp = lambda g: (_unbroadcast(g, self.data.shape),
                              _unbroadcast(g, other.data.shape))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))
        out._vjp = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, parents=(self, other))
        out._vjp = lambda g: (_unbroadcast(g * other.data, self.data.shape),
                              _unbroadcast(g * self.data, other.data.shape))
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data / other.data, parents=(self, other))
        out._vjp = lambda g: (
            _unbroadcast(g / other.data, self.data.shape),
            _unbroadcast(-g * self.data / (other.data ** 2), other.data.shape),
        )
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        a, w = self.data, other.data
        if w.ndim != 2:
            raise ValueError("matmul right operand must be 2-D")
        out = Tensor(a @ w, parents=(self, other))

        def vjp(g):
            ga = g @ w.T
            gw = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gw

        out._vjp = vjp
        return out

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], parents=(self,))

        def vjp(g):
            full = np.zeros_like(self.data)
            full[idx] = g
            return (full,)

        out._vjp = vjp
        return out

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), parents=(self,))
        out._vjp = lambda g: (g.reshape(self.data.shape),)
        return out

    def broadcast_to(self, shape):
        out = Tensor(np.broadcast_to(self.data, shape).copy(), parents=(self,))
        out._vjp = lambda g: (_unbroadcast(g, self.data.shape),)
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self):
        out = Tensor(self.data.sum(), parents=(self,))
        out._vjp = lambda g: (np.full_like(self.data, float(g)),)
        return out

    def mean(self):
        n = self.data.size
        out = Tensor(self.data.mean(), parents=(self,))
        out._vjp = lambda g: (np.full_like(self.data, float(g) / n),)
        return out

    def item(self) -> float:
        return float(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tanh(x):
    """tanh for ndarrays or Tensors."""
    if isinstance(x, Tensor):
        y = np.tanh(x.data)
        out = Tensor(y, parents=(x,))
        out._vjp = lambda g: (g * (1.0 - y * y),)
        return out
    return np.tanh(x)


def concat(parts: Sequence, axis: int = -1):
    """Concatenate ndarrays or Tensors along an axis."""
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate(parts, axis=axis)
    tparts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in tparts], axis=axis),
                 parents=tuple(tparts))
    sizes = [p.data.shape[axis] for p in tparts]

    def vjp(g):
        splits = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(splits)

    out._vjp = vjp
    return out


def pad_front(x, axis: int, n: int):
    """Zero-pad n entries at the front of one axis."""
    if n == 0:
        return x
    if isinstance(x, Tensor):
        width = [(0, 0)] * x.data.ndim
        width[axis] = (n, 0)
        out = Tensor(np.pad(x.data, width), parents=(x,))
        sl = [slice(None)] * x.data.ndim
        sl[axis] = slice(n, None)
        out._vjp = lambda g: (g[tuple(sl)],)
        return out
    width = [(0, 0)] * x.ndim
    width[axis] = (n, 0)
    return np.pad(x, width)


@dataclass
class Jet2:
    """Value with exact first and second derivatives w.r.t. a scalar input.

    Fields are either ndarrays (plain forward pass) or Tensors (when the
    surrounding training graph needs gradients through the jets).
    """

    val: Any
    d1: Any
    d2: Any

    def affine(self, W, b) -> "Jet2":
        return Jet2(self.val @ W + b, self.d1 @ W, self.d2 @ W)

    def tanh(self) -> "Jet2":
        y = tanh(self.val)
        s = 1.0 - y * y
        d1 = s * self.d1
        d2 = s * self.d2 - 2.0 * (y * (s * (self.d1 * self.d1)))
        return Jet2(y, d1, d2)

    def scale(self, c: float) -> "Jet2":
        return Jet2(self.val * c, self.d1 * c, self.d2 * c)

    def last_columns(self, n: int) -> "Jet2":
        return Jet2(self.val[..., -n:], self.d1[..., -n:], self.d2[..., -n:])

    def first_columns(self, n: int) -> "Jet2":
        return Jet2(self.val[..., :n], self.d1[..., :n], self.d2[..., :n])
