"""Dense-tensor reverse-mode autodiff on float64 numpy arrays.

Define-by-run: every operation returns a fresh Tensor holding its parents
and a backward closure, so the graph is rebuilt each forward pass. All
values are float64; gradient checking is the primary verification tool
and single precision would force loose tolerances.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_GELU_C = np.sqrt(2.0 / np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the compute graph: float64 values plus optional grad."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _prev: tuple = (), op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _prev)
        self._prev = _prev
        self._backward: Callable[[], None] | None = None
        self.op = op

    # -- basics ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic -----------------------------------------------------

    def _lift(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=np.float64))

    def __add__(self, other) -> "Tensor":
        other = self._lift(other)
        out = Tensor(self.data + other.data, _prev=(self, other), op="add")

        def backward() -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad, other.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Tensor":
        return self._lift(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._lift(other)
        out = Tensor(self.data * other.data, _prev=(self, other), op="mul")

        def backward() -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._lift(other)
        return self * other ** -1.0

    def __pow__(self, p: float) -> "Tensor":
        out = Tensor(self.data ** p, _prev=(self,), op="pow")

        def backward() -> None:
            if self.requires_grad:
                self._accumulate(out.grad * p * self.data ** (p - 1.0))

        out._backward = backward
        return out

    def matmul(self, other: "Tensor") -> "Tensor":
        other = self._lift(other)
        if self.shape[-1] != other.shape[-2 if other.data.ndim > 1 else 0]:
            raise DimensionError(
                f"matmul inner dimensions differ: {self.shape} x {other.shape}"
            )
        out = Tensor(np.matmul(self.data, other.data), _prev=(self, other), op="matmul")

        def backward() -> None:
            g = out.grad
            if self.requires_grad:
                self._accumulate(
                    _unbroadcast(np.matmul(g, np.swapaxes(other.data, -1, -2)), self.shape)
                )
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(np.matmul(np.swapaxes(self.data, -1, -2), g), other.shape)
                )

        out._backward = backward
        return out

    __matmul__ = matmul

    # -- shape ops ------------------------------------------------------

    def reshape(self, *shape: int) -> "Tensor":
        out = Tensor(self.data.reshape(*shape), _prev=(self,), op="reshape")

        def backward() -> None:
            if self.requires_grad:
                self._accumulate(out.grad.reshape(self.shape))

        out._backward = backward
        return out

    def transpose(self, *axes: int) -> "Tensor":
        out = Tensor(self.data.transpose(*axes), _prev=(self,), op="transpose")
        inverse = np.argsort(axes)

        def backward() -> None:
            if self.requires_grad:
                self._accumulate(out.grad.transpose(*inverse))

        out._backward = backward
        return out

    def sum(self, axis=None) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis), _prev=(self,), op="sum")

        def backward() -> None:
            if not self.requires_grad:
                return
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis=None) -> "Tensor":
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    # -- elementwise nonlinearities --------------------------------------

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.data), _prev=(self,), op="exp")

        def backward() -> None:
            if self.requires_grad:
                self._accumulate(out.grad * out.data)

        out._backward = backward
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), _prev=(self,), op="log")

        def backward() -> None:
            if self.requires_grad:
                self._accumulate(out.grad / self.data)

        out._backward = backward
        return out

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        out = Tensor(t, _prev=(self,), op="tanh")

        def backward() -> None:
            if self.requires_grad:
                self._accumulate(out.grad * (1.0 - t * t))

        out._backward = backward
        return out

    def gelu(self) -> "Tensor":
        x = self.data
        inner = _GELU_C * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        out = Tensor(0.5 * x * (1.0 + t), _prev=(self,), op="gelu")

        def backward() -> None:
            if self.requires_grad:
                d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
                local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
                self._accumulate(out.grad * local)

        out._backward = backward
        return out

    def dropout(self, prob: float, rng: np.random.Generator) -> "Tensor":
        if prob <= 0.0:
            return self
        keep = (rng.random(self.shape) >= prob) / (1.0 - prob)
        out = Tensor(self.data * keep, _prev=(self,), op="dropout")

        def backward() -> None:
            if self.requires_grad:
                self._accumulate(out.grad * keep)

        out._backward = backward
        return out

    # -- backward pass ----------------------------------------------------

    def backward(self) -> None:
        """Populate grads of all requires_grad ancestors of a scalar loss."""
        if self.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.requires_grad and node.grad is not None:
                node._backward()


def parameter(data, rng: np.random.Generator | None = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# -- fused structured operations -----------------------------------------


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax on raw arrays (max-subtraction)."""
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean of -log softmax(logits)[target] over rows."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got shape {logits.shape}")
    n, v = logits.shape
    if n == 0 or targets.size == 0:
        raise ContractError("softmax_cross_entropy on an empty batch")
    if targets.shape != (n,):
        raise DimensionError(f"expected {n} targets, got {targets.shape}")
    if targets.min() < 0 or targets.max() >= v:
        raise IndexError(f"target index out of range for vocabulary size {v}")
    probs = softmax(logits.data)
    nll = -np.log(np.maximum(probs[np.arange(n), targets], 1e-300))
    out = Tensor(nll.mean(), _prev=(logits,), op="softmax_cross_entropy")

    def backward() -> None:
        if logits.requires_grad:
            g = probs.copy()
            g[np.arange(n), targets] -= 1.0
            logits._accumulate(out.grad * g / n)

    out._backward = backward
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / var 1, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data, _prev=(x, gain, bias), op="layer_norm")

    def backward() -> None:
        g = out.grad
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            term = gx - gx.mean(axis=-1, keepdims=True) \
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(term * inv)

    out._backward = backward
    return out


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row gather from an embedding table; backward scatter-adds."""
    ids = np.asarray(ids, dtype=np.int64)
    v = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise IndexError(f"embedding id out of range for table of {v} rows")
    out = Tensor(table.data[ids], _prev=(table,), op="embedding_lookup")

    def backward() -> None:
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, table.shape[1]))
            table._accumulate(g)

    out._backward = backward
    return out


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis with invalid positions (mask False) zeroed."""
    neg = np.where(mask, 0.0, -1e30)
    probs = softmax(scores.data + neg)
    probs = np.where(mask, probs, 0.0)
    out = Tensor(probs, _prev=(scores,), op="masked_softmax")

    def backward() -> None:
        if scores.requires_grad:
            g = out.grad
            dot = (g * probs).sum(axis=-1, keepdims=True)
            scores._accumulate(probs * (g - dot))

    out._backward = backward
    return out


def gather_positions(hidden: Tensor, positions: Sequence[Sequence[int]]) -> Tensor:
    """Collect hidden vectors at per-sequence positions into [M_total x d].

    Row order: batch order, then position order within each sequence.
    """
    b_idx = np.concatenate(
        [np.full(len(p), b, dtype=np.int64) for b, p in enumerate(positions)]
    ) if positions else np.zeros(0, dtype=np.int64)
    p_idx = np.concatenate(
        [np.asarray(p, dtype=np.int64) for p in positions]
    ) if positions else np.zeros(0, dtype=np.int64)
    out = Tensor(hidden.data[b_idx, p_idx], _prev=(hidden,), op="gather_positions")

    def backward() -> None:
        if hidden.requires_grad:
            g = np.zeros_like(hidden.data)
            np.add.at(g, (b_idx, p_idx), out.grad)
            hidden._accumulate(g)

    out._backward = backward
    return out


def masked_mean_pool(hidden: Tensor, positions: Sequence[Sequence[int]]) -> Tensor:
    """Per-sequence mean of hidden vectors at the given positions -> [B x d]."""
    if any(len(p) == 0 for p in positions):
        raise ContractError("masked_mean_pool requires >= 1 position per sequence")
    pooled = np.stack(
        [hidden.data[b, np.asarray(p, dtype=np.int64)].mean(axis=0)
         for b, p in enumerate(positions)]
    )
    out = Tensor(pooled, _prev=(hidden,), op="masked_mean_pool")

    def backward() -> None:
        if hidden.requires_grad:
            g = np.zeros_like(hidden.data)
            for b, p in enumerate(positions):
                g[b, np.asarray(p, dtype=np.int64)] += out.grad[b] / len(p)
            hidden._accumulate(g)

    out._backward = backward
    return out


def take_position(hidden: Tensor, pos: int) -> Tensor:
    """Slice position `pos` of every sequence -> [B x d]."""
    out = Tensor(hidden.data[:, pos, :], _prev=(hidden,), op="take_position")

    def backward() -> None:
        if hidden.requires_grad:
            g = np.zeros_like(hidden.data)
            g[:, pos, :] = out.grad
            hidden._accumulate(g)

    out._backward = backward
    return out


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
               coords: Sequence[int] | None = None) -> float:
    """Max relative error between backward grads and central differences.

    `coords` restricts the check to a subset of flat indices of x (all by
    default); error is |a - n| / max(1, |a|, |n|) per coordinate.
    """
    x.zero_grad()
    loss = f(x)
    loss.backward()
    analytic = x.grad.copy().reshape(-1)
    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).item()
        flat[i] = orig - h
        fm = f(x).item()
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        a = analytic[i]
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst
