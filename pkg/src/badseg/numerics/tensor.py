"""Dense float tensors with reverse-mode gradients.

A minimal tape-free autodiff in the micrograd style: each op returns a new
Tensor holding its inputs and a closure that scatters the output gradient
back into them.  Arrays are float32 by default; reductions accumulate in
float64 so long sums stay stable.  Every op verifies its output is finite
and raises NonFiniteError otherwise -- NaN/Inf never propagates silently.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "NonFiniteError",
    "Tensor",
    "tensor",
    "concat",
    "relu",
    "sigmoid",
    "softmax",
    "layer_norm",
    "matmul",
]

DEFAULT_DTYPE = np.float32


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def _check_finite(arr: np.ndarray, what: str) -> None:
    # One float64 reduction is far cheaper than isfinite over the array and
    # still catches any NaN/Inf (they poison the sum).
    if not np.isfinite(arr.sum(dtype=np.float64)):
        raise NonFiniteError(f"non-finite values in {what}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
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
    """N-d float array plus an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph plumbing ------------------------------------------------
    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))

    def _accum(self, grad: np.ndarray) -> None:
        grad = grad.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = grad.copy() if grad.base is not None or grad is self.data else grad
        else:
            self.grad = self.grad + grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse sweep from this tensor; seeds with ones if grad is None."""
        if grad is None:
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        other = Tensor._lift(other)
        out_data = self.data + other.data
        return _make(out_data, (self, other), _add_bw, "add")

    __radd__ = __add__

    def __neg__(self):
        return _make(-self.data, (self,), lambda g, a=self: a._req and a._accum(-g), "neg")

    def __sub__(self, other):
        other = Tensor._lift(other)
        return _make(self.data - other.data, (self, other), _sub_bw, "sub")

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        other = Tensor._lift(other)
        return _make(self.data * other.data, (self, other), _mul_bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        return _make(self.data / other.data, (self, other), _div_bw, "div")

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __pow__(self, k):
        if not isinstance(k, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = _make(self.data ** k, (self,), None, f"pow{k}")
        if out._backward is not None:  # graph mode
            a = self

            def bw(g):
                a._accum(g * k * a.data ** (k - 1))
            out._backward = bw
        return out

    def __matmul__(self, other):
        return matmul(self, Tensor._lift(other))

    @property
    def _req(self) -> bool:
        return self.requires_grad or self._backward is not None

    # -- shape ops -------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.data.shape
        out = _make(self.data.reshape(shape), (self,), None, "reshape", check=False)
        if out._backward is not None:
            a = self
            out._backward = lambda g: a._accum(g.reshape(src))
        return out

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        out = _make(self.data.transpose(axes), (self,), None, "transpose", check=False)
        if out._backward is not None:
            a = self
            out._backward = lambda g: a._accum(g.transpose(inv))
        return out

    # -- reductions ------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        acc = self.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
        out_data = acc.astype(self.data.dtype)
        out = _make(out_data, (self,), None, "sum")
        if out._backward is not None:
            a = self

            def bw(g):
                gg = g
                if axis is not None and not keepdims:
                    gg = np.expand_dims(gg, axis)
                a._accum(np.broadcast_to(gg, a.data.shape))
            out._backward = bw
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            n = int(np.prod([self.data.shape[i] for i in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- pointwise nonlinearities ---------------------------------------
    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)
        out = _make(out_data, (self,), None, "exp")
        if out._backward is not None:
            a = self
            out._backward = lambda g: a._accum(g * out_data)
        return out

    def log(self) -> "Tensor":
        out = _make(np.log(self.data), (self,), None, "log")
        if out._backward is not None:
            a = self
            out._backward = lambda g: a._accum(g / a.data)
        return out

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)
        out = _make(out_data, (self,), None, "sqrt")
        if out._backward is not None:
            a = self
            out._backward = lambda g: a._accum(g * 0.5 / out_data)
        return out

    def clip(self, lo: float, hi: float) -> "Tensor":
        """Clamp values; gradient is passed through inside [lo, hi], zero outside."""
        out_data = np.clip(self.data, lo, hi)
        out = _make(out_data, (self,), None, "clip")
        if out._backward is not None:
            a = self
            mask = (a.data >= lo) & (a.data <= hi)

            def bw(g):
                a._accum(g * mask)
            out._backward = bw
        return out


def _make(data: np.ndarray, parents: tuple, backward, name: str,
          check: bool = True) -> Tensor:
    if check:
        _check_finite(data, name)
    needs = any(p._req for p in parents)
    if not needs:
        return Tensor(data)
    out = Tensor(data, _parents=tuple(p for p in parents if p._req))
    if backward is not None:
        out._backward = lambda g, ps=parents: backward(g, *ps)
    else:
        out._backward = True  # placeholder; caller assigns the closure
    return out


def _add_bw(g, a, b):
    if a._req:
        a._accum(_unbroadcast(g, a.data.shape))
    if b._req:
        b._accum(_unbroadcast(g, b.data.shape))


def _sub_bw(g, a, b):
    if a._req:
        a._accum(_unbroadcast(g, a.data.shape))
    if b._req:
        b._accum(_unbroadcast(-g, b.data.shape))


def _mul_bw(g, a, b):
    if a._req:
        a._accum(_unbroadcast(g * b.data, a.data.shape))
    if b._req:
        b._accum(_unbroadcast(g * a.data, b.data.shape))


def _div_bw(g, a, b):
    if a._req:
        a._accum(_unbroadcast(g / b.data, a.data.shape))
    if b._req:
        b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))


def tensor(data, requires_grad: bool = False, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batched dims must match exactly (no broadcasting)."""
    out = _make(np.matmul(a.data, b.data), (a, b), None, "matmul")
    if out._backward is not None:
        def bw(g):
            if a._req:
                a._accum(np.matmul(g, np.swapaxes(b.data, -1, -2)))
            if b._req:
                b._accum(np.matmul(np.swapaxes(a.data, -1, -2), g))
        out._backward = bw
    return out


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    parts = [Tensor._lift(p) for p in parts]
    out = _make(np.concatenate([p.data for p in parts], axis=axis),
                tuple(parts), None, "concat", check=False)
    if out._backward is not None:
        sizes = [p.data.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def bw(g):
            for p, piece in zip(parts, np.split(g, splits, axis=axis)):
                if p._req:
                    p._accum(piece)
        out._backward = bw
    return out


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0)
    out = _make(out_data, (x,), None, "relu", check=False)
    if out._backward is not None:
        mask = x.data > 0
        out._backward = lambda g: x._accum(g * mask)
    return out


def sigmoid(x: Tensor) -> Tensor:
    # Stable: exp of a non-positive argument on both branches.
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.maximum(d, 0))),
                        np.exp(np.minimum(d, 0)) / (1.0 + np.exp(np.minimum(d, 0))))
    out_data = out_data.astype(d.dtype)
    out = _make(out_data, (x,), None, "sigmoid")
    if out._backward is not None:
        out._backward = lambda g: x._accum(g * out_data * (1.0 - out_data))
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    d = x.data
    shifted = d - d.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = (e / e.sum(axis=axis, keepdims=True, dtype=np.float64)).astype(d.dtype)
    out = _make(s, (x,), None, "softmax")
    if out._backward is not None:
        def bw(g):
            dot = (g * s).sum(axis=axis, keepdims=True)
            x._accum(s * (g - dot))
        out._backward = bw
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = d.var(axis=-1, keepdims=True, dtype=np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(d.dtype)
    mu = mu.astype(d.dtype)
    xhat = (d - mu) * inv
    out = _make(xhat * gamma.data + beta.data, (x, gamma, beta), None, "layer_norm")
    if out._backward is not None:
        n = d.shape[-1]

        def bw(g):
            if gamma._req:
                gamma._accum((g * xhat).reshape(-1, n).sum(axis=0, dtype=np.float64)
                             .astype(d.dtype))
            if beta._req:
                beta._accum(g.reshape(-1, n).sum(axis=0, dtype=np.float64)
                            .astype(d.dtype))
            if x._req:
                gx = g * gamma.data
                t1 = gx.sum(axis=-1, keepdims=True)
                t2 = (gx * xhat).sum(axis=-1, keepdims=True)
                x._accum(inv * (gx - t1 / n - xhat * t2 / n))
        out._backward = bw
    return out
