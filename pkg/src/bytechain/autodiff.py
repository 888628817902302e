"""Dense-tensor arithmetic with reverse-mode automatic differentiation.

Just enough machinery to train the desk-scale encoder and its task heads:
numpy arrays as storage, a per-call recorded graph, and an adaptive-moment
optimizer. Gradients accumulate additively; a fixed seed on a single
thread replays bit-identical trajectories.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .exceptions import InternalError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
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
    """A numpy array plus an optional gradient and graph linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=data.dtype if isinstance(data, np.ndarray) else np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    # operator sugar; all heavy lifting lives in the free functions below
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _as_tensor(x, dtype=np.float64) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.dtype, copy=True)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, -g)

    return _make(-a.data, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, _unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, tuple(ax % a.data.ndim for ax in axes))
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    def backward(g):
        _accum(a, np.swapaxes(g, i, j))

    return _make(np.swapaxes(a.data, i, j), (a,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(data, tuple(tensors), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        _accum(a, g * data)

    return _make(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * 0.5 / data)

    return _make(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - data * data))

    return _make(data, (a,), backward)


def maximum(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    data = np.maximum(a.data, b.data)

    def backward(g):
        # ties route to b; with a scalar floor this matches relu'(0) = 0
        _accum(a, _unbroadcast(g * (a.data > b.data), a.shape))
        _accum(b, _unbroadcast(g * (b.data >= a.data), b.shape))

    return _make(data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    return maximum(a, 0.0)


def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum(a, data * (g - dot))

    return _make(data, (a,), backward)


def log_softmax_lastdim(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse
    soft = np.exp(data)

    def backward(g):
        _accum(a, g - soft * g.sum(axis=-1, keepdims=True))

    return _make(data, (a,), backward)


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax of a rank-2 matrix."""
    if m.data.ndim != 2:
        raise ValueError(f"softmax_rows expects rank 2, got shape {m.shape}")
    return softmax_lastdim(m)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` (V, d) by an integer id array of any shape."""
    ids = np.asarray(ids)
    data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
            _accum(table, gt)

    return _make(data, (table,), backward)


def select_positions(x: Tensor, batch_idx: np.ndarray, pos_idx: np.ndarray) -> Tensor:
    """Pick rows (b, p, :) out of a (B, L, d) tensor; returns (K, d)."""
    data = x.data[batch_idx, pos_idx]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, (batch_idx, pos_idx), g)
            _accum(x, gx)

    return _make(data, (x,), backward)


def pick_classes(x: Tensor, idx: np.ndarray) -> Tensor:
    """x[k, idx[k]] along the last axis of a (K, C) tensor; returns (K,)."""
    rows = np.arange(x.shape[0])
    data = x.data[rows, idx]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[rows, idx] = g
            _accum(x, gx)

    return _make(data, (x,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype)
    scale = 1.0 / (1.0 - p)
    data = a.data * keep * scale

    def backward(g):
        _accum(a, g * keep * scale)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# composed helpers


def gelu(a: Tensor) -> Tensor:
    # tanh approximation keeps the op self-contained
    c = 0.7978845608028654  # sqrt(2/pi)
    inner = (a + a * a * a * 0.044715) * c
    return a * (tanh(inner) + 1.0) * 0.5


def layer_norm(x: Tensor, scale: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tmean(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * scale + bias


def backward(loss: Tensor) -> None:
    """Populate gradients of everything reachable from a scalar loss."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    _accum(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# parameters and optimizer


class ParameterSet:
    """Named trainable tensors with a canonical lexicographic order."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value), requires_grad=True)
        self._entries[name] = t
        return t

    def names(self) -> list[str]:
        return sorted(self._entries)

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        for name in self.names():
            yield name, self._entries[name]

    def tensors(self) -> list[Tensor]:
        return [self._entries[n] for n in self.names()]

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            t = self._entries[name]
            if t.data.shape != arr.shape:
                raise InternalError(
                    f"shape mismatch loading {name!r}: {arr.shape} vs {t.data.shape}"
                )
            t.data = arr.astype(t.dtype, copy=True)


class Adam:
    """Adaptive-moment optimizer over one or more ParameterSets."""

    def __init__(self, param_sets, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if isinstance(param_sets, ParameterSet):
            param_sets = [param_sets]
        self.param_sets = list(param_sets)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def _named(self):
        for ps in self.param_sets:
            for name, t in ps.items():
                yield name, t

    def zero_grad(self) -> None:
        for ps in self.param_sets:
            ps.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, param in self._named():
            g = param.grad
            if g is None:
                continue
            if g.shape != param.data.shape:
                raise InternalError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} shape {param.data.shape}"
                )
            if name not in self._m:
                self._m[name] = np.zeros_like(param.data)
                self._v[name] = np.zeros_like(param.data)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            param.data = param.data - self.lr * update
