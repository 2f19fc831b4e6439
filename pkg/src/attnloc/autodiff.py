"""Reverse-mode automatic differentiation over dense 2D float64 arrays.

Minimal dynamic-tape engine: every operation returns a new Tensor holding
its forward value and a closure that routes the upstream gradient to its
parents. The graph is rebuilt each forward pass, so input cardinalities may
vary freely between passes. A tensor graph is single-owner during a
forward/backward pass; leaf values must not be mutated mid-pass.
"""

from __future__ import annotations

import math

import numpy as np


class Tensor:
    """A 2D float64 array node on the autodiff tape.

    Scalars are stored as 1x1, row vectors as 1xN. Leaf tensors (no
    parents) are parameters or constants; `backward` on a scalar loss
    accumulates gradients into every reachable tensor's `.grad`.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents: tuple = (), _check: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2D, got shape {arr.shape}")
        if _check and not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        self.data = arr
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = None

    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple) -> "Tensor":
        return cls(data, _parents=parents, _check=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        _check_addable(self.shape, other.shape)
        out = Tensor._make(self.data + other.data, (self, other))

        def _bw(g):
            self._accum(g if g.shape == self.shape else g.sum(axis=0, keepdims=True))
            other._accum(g if g.shape == other.shape else g.sum(axis=0, keepdims=True))

        out._backward = _bw
        return out

    def __sub__(self, other: "Tensor") -> "Tensor":
        _check_addable(self.shape, other.shape)
        out = Tensor._make(self.data - other.data, (self, other))

        def _bw(g):
            self._accum(g if g.shape == self.shape else g.sum(axis=0, keepdims=True))
            gg = -g
            other._accum(gg if gg.shape == other.shape else gg.sum(axis=0, keepdims=True))

        out._backward = _bw
        return out

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            c = float(other)
            out = Tensor._make(self.data * c, (self,))
            out._backward = lambda g: self._accum(g * c)
            return out
        if self.shape != other.shape:
            raise ValueError(f"elementwise mul needs equal shapes, got {self.shape} and {other.shape}")
        out = Tensor._make(self.data * other.data, (self, other))

        def _bw(g):
            self._accum(g * other.data)
            other._accum(g * self.data)

        out._backward = _bw
        return out

    __rmul__ = __mul__

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if self.shape[1] != other.shape[0]:
            raise ValueError(f"matmul inner dims disagree: {self.shape} @ {other.shape}")
        out = Tensor._make(self.data @ other.data, (self, other))

        def _bw(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)

        out._backward = _bw
        return out

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def t(self) -> "Tensor":
        out = Tensor._make(self.data.T, (self,))
        out._backward = lambda g: self._accum(g.T)
        return out

    def relu(self) -> "Tensor":
        out = Tensor._make(np.maximum(self.data, 0.0), (self,))
        out._backward = lambda g: self._accum(g * (self.data > 0.0))
        return out

    def exp(self) -> "Tensor":
        out = Tensor._make(np.exp(self.data), (self,))
        out._backward = lambda g: self._accum(g * out.data)
        return out

    def sum(self) -> "Tensor":
        out = Tensor._make(np.array([[self.data.sum()]]), (self,))
        out._backward = lambda g: self._accum(np.full_like(self.data, g[0, 0]))
        return out

    def mean(self) -> "Tensor":
        n = self.data.size
        out = Tensor._make(np.array([[self.data.mean()]]), (self,))
        out._backward = lambda g: self._accum(np.full_like(self.data, g[0, 0] / n))
        return out

    def backward(self) -> None:
        """Accumulate dself/dleaf into every reachable tensor's .grad.

        Raises:
            ValueError: if self is not 1x1 (loss must be scalar).
        """
        if self.shape != (1, 1):
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        order = _toposort(self)
        self._accum(np.ones((1, 1)))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _check_addable(a: tuple, b: tuple) -> None:
    # equal shapes, or a 1xd bias row broadcast against nxd
    if a == b:
        return
    if a[1] == b[1] and (a[0] == 1 or b[0] == 1):
        return
    raise ValueError(f"add needs equal shapes or a 1xd bias row, got {a} and {b}")


def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    """Concatenate along rows (axis=0) or columns (axis=1)."""
    if axis not in (0, 1):
        raise ValueError(f"axis must be 0 or 1, got {axis}")
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    out = Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            t._accum(g[lo:hi, :] if axis == 0 else g[:, lo:hi])

    out._backward = _bw
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor._make(y, (x,))

    def _bw(g):
        # dL/dx = y * (g - sum_j g_j y_j) per row
        dot = (g * y).sum(axis=1, keepdims=True)
        x._accum(y * (g - dot))

    out._backward = _bw
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization: (x - mean) / sqrt(var + eps) * gamma + beta."""
    n, d = x.shape
    if d < 2:
        raise ValueError(f"layer_norm needs width >= 2, got {d}")
    if gamma.shape != (1, d) or beta.shape != (1, d):
        raise ValueError(f"gamma/beta must be 1x{d}, got {gamma.shape} and {beta.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor._make(xhat * gamma.data + beta.data, (x, gamma, beta))

    def _bw(g):
        gamma._accum((g * xhat).sum(axis=0, keepdims=True))
        beta._accum(g.sum(axis=0, keepdims=True))
        gh = g * gamma.data
        # standard layer-norm input gradient, per row
        mean_gh = gh.mean(axis=1, keepdims=True)
        mean_gh_xhat = (gh * xhat).mean(axis=1, keepdims=True)
        x._accum(inv * (gh - mean_gh - xhat * mean_gh_xhat))

    out._backward = _bw
    return out


def grouped_scores(q: Tensor, k: Tensor, group: int) -> Tensor:
    """Block-diagonal dot products: scores[i, j] = q[i] . k[i*group + j].

    q is (n, d) and k is (n*group, d); row i of the output scores row i of
    q against its own group of k rows only.
    """
    n, d = q.shape
    if k.shape != (n * group, d):
        raise ValueError(f"grouped keys must be ({n * group}, {d}), got {k.shape}")
    kk = k.data.reshape(n, group, d)
    out = Tensor._make(np.einsum("id,igd->ig", q.data, kk), (q, k))

    def _bw(g):
        q._accum(np.einsum("ig,igd->id", g, kk))
        k._accum(np.einsum("ig,id->igd", g, q.data).reshape(n * group, d))

    out._backward = _bw
    return out


def grouped_mix(w: Tensor, v: Tensor) -> Tensor:
    """Per-group weighted sums: out[i] = sum_j w[i, j] * v[i*group + j].

    w is (n, group) attention weights, v is (n*group, d) values.
    """
    n, group = w.shape
    if v.shape[0] != n * group:
        raise ValueError(f"grouped values must have {n * group} rows, got {v.shape[0]}")
    d = v.shape[1]
    vv = v.data.reshape(n, group, d)
    out = Tensor._make(np.einsum("ig,igd->id", w.data, vv), (w, v))

    def _bw(g):
        w._accum(np.einsum("id,igd->ig", g, vv))
        v._accum(np.einsum("ig,id->igd", w.data, g).reshape(n * group, d))

    out._backward = _bw
    return out


def max_pool_rows(x: Tensor) -> Tensor:
    """Columnwise maximum over rows; 1xd output.

    The gradient routes to the argmax row per column; ties go to the
    lowest row index.
    """
    n, d = x.shape
    if n < 1:
        raise ValueError("max_pool_rows needs at least one row")
    idx = np.argmax(x.data, axis=0)  # lowest index wins ties
    out = Tensor._make(x.data.max(axis=0, keepdims=True), (x,))

    def _bw(g):
        gx = np.zeros_like(x.data)
        gx[idx, np.arange(d)] = g[0, :]
        x._accum(gx)

    out._backward = _bw
    return out


def numeric_gradient(f, x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued f with respect to x.

    The oracle for gradient checks: f is re-evaluated with perturbed copies
    of x.data, so it must not cache state across calls.
    """
    g = np.zeros_like(x.data)
    flat = x.data.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        g.ravel()[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| / max(1, |a|, |b|), a scale-aware gradient-check metric."""
    denom = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / denom


def check_gradient(build, params: list[Tensor], h: float = 1e-5) -> float:
    """Worst relative error between analytic and numeric gradients.

    `build` constructs and returns the scalar loss Tensor from the current
    values of `params`.
    """
    for p in params:
        p.grad = None
    loss = build()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_gradient(lambda: float(build().data[0, 0]), p, h=h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Glorot/Xavier uniform init for a fan_in x fan_out weight matrix."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
