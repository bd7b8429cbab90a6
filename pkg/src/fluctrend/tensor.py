"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run: every operation records its inputs and a backward closure,
and ``backward()`` walks the tape in reverse topological order. Graphs are
rebuilt on every forward pass, so a varying number of stocks per day needs
no special handling. All data is float64; tensors that participate in a
recorded graph are never mutated in place.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "sqrt",
    "sigmoid",
    "relu",
    "maximum",
    "matmul",
    "softmax",
    "tsum",
    "tmean",
    "transpose",
    "reshape",
    "concat",
    "avg_pool1d_replicate",
    "conv1d_strided",
    "backward",
    "finite_difference_gradcheck",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "name")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable[[np.ndarray], None] | None = None
        self.name: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    # operator sugar; non-Tensor operands are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, key):
        return take(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor with a unique name and persistent gradient buffer."""

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _track(*ts: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in ts)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor(data)
    if _track(*parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g, out):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g, out):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g, out):
        a._accum(_unbroadcast(g * b.data, a.shape))
        b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g, out):
        a._accum(_unbroadcast(g / b.data, a.shape))
        b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g, out):
        a._accum(-g)

    return _make(-a.data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def bwd(g, out):
        a._accum(g * out.data)

    return _make(y, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def bwd(g, out):
        a._accum(g * 0.5 / out.data)

    return _make(y, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g, out):
        a._accum(g * out.data * (1.0 - out.data))

    return _make(y, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def bwd(g, out):
        a._accum(g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), bwd)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    mask = a.data >= b.data  # ties routed to the first argument

    def bwd(g, out):
        a._accum(_unbroadcast(np.where(mask, g, 0.0), a.shape))
        b._accum(_unbroadcast(np.where(mask, 0.0, g), b.shape))

    return _make(np.where(mask, a.data, b.data), (a, b), bwd)


# ---------------------------------------------------------------------------
# linear algebra / reductions / shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bwd(g, out):
        a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bwd(g, out):
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            a._accum(np.broadcast_to(ge, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]

    def bwd(g, out):
        if axis is None:
            a._accum(np.broadcast_to(g / n, a.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            a._accum(np.broadcast_to(ge / n, a.shape).copy())

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis``; slices sum to one."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g, out):
        dot = (g * out.data).sum(axis=axis, keepdims=True)
        a._accum(out.data * (g - dot))

    return _make(y, (a,), bwd)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g, out):
        a._accum(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bwd(g, out):
        a._accum(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def take(a: Tensor, key) -> Tensor:
    def bwd(g, out):
        gx = np.zeros_like(a.data)
        if isinstance(key, np.ndarray) or (
            isinstance(key, tuple) and any(isinstance(k, np.ndarray) for k in key)
        ):
            np.add.at(gx, key, g)  # fancy indices may repeat
        else:
            gx[key] += g
        a._accum(gx)

    return _make(a.data[key].copy(), (a,), bwd)


def concat(ts: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, out):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accum(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bwd)


def avg_pool1d_replicate(a: Tensor, k: int) -> Tensor:
    """Centered moving average of odd window ``k`` along axis -2.

    The first and last time steps are replicated (k-1)/2 times so output
    length equals input length; constants map to themselves exactly.
    """
    if k % 2 == 0 or k < 1:
        raise ValueError(f"avg_pool1d window must be odd and >= 1, got k={k}")
    if k == 1:
        # identity, but still a graph node so callers can treat it uniformly
        return a * Tensor(1.0) if _track(a) else Tensor(a.data.copy())
    t_len = a.shape[-2]
    half = (k - 1) // 2
    base = np.arange(t_len)
    index_sets = [np.clip(base + off, 0, t_len - 1) for off in range(-half, half + 1)]

    acc = np.zeros_like(a.data)
    for idx in index_sets:
        acc += np.take(a.data, idx, axis=-2)
    acc /= k

    def bwd(g, out):
        gmoved = np.moveaxis(g, -2, 0) / k
        gx = np.zeros(np.moveaxis(a.data, -2, 0).shape)
        for idx in index_sets:
            np.add.at(gx, idx, gmoved)
        a._accum(np.moveaxis(gx, 0, -2))

    return _make(acc, (a,), bwd)


def conv1d_strided(x: Tensor, weight: Tensor, k_c: int, bias: Tensor | None = None) -> Tensor:
    """Non-overlapping 1-D convolution with kernel == stride == k_c.

    x is [L, M] (or batched [..., L, M]); weight is [k_c * M, C]. Rows are
    grouped into L / k_c windows, each flattened and mapped linearly.
    """
    length, m = x.shape[-2], x.shape[-1]
    if length % k_c != 0:
        raise ValueError(
            f"input length {length} not divisible by kernel/stride {k_c}; "
            f"market lookback must be a multiple of {k_c}"
        )
    if weight.shape[-2] != k_c * m:
        raise ValueError(f"conv weight expects {k_c * m} inputs, got {weight.shape}")
    windows = reshape(x, x.shape[:-2] + (length // k_c, k_c * m))
    out = matmul(windows, weight)
    if bias is not None:
        out = out + bias
    return out


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into .grad over the recorded graph."""
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    # iterative post-order topological sort (graphs can be deep)
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    loss._accum(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad, node)


def finite_difference_gradcheck(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    n_samples: int = 64,
    eps: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare autodiff gradients of scalar f() against central differences.

    Returns the max over sampled parameter coordinates of
    |g_auto - g_fd| / max(1, |g_auto|, |g_fd|).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    auto = {id(p): p.grad.copy() for p in params}

    sizes = np.array([p.size for p in params], dtype=np.int64)
    total = int(sizes.sum())
    n = min(n_samples, total)
    coords = rng.choice(total, size=n, replace=False)

    max_err = 0.0
    for c in coords:
        pi = int(np.searchsorted(np.cumsum(sizes), c, side="right"))
        flat = int(c - np.concatenate(([0], np.cumsum(sizes)))[pi])
        p = params[pi]
        orig = p.data.flat[flat]
        with no_grad():
            p.data.flat[flat] = orig + eps
            up = f().item()
            p.data.flat[flat] = orig - eps
            down = f().item()
        p.data.flat[flat] = orig
        g_fd = (up - down) / (2.0 * eps)
        g_auto = auto[id(p)].flat[flat]
        err = abs(g_auto - g_fd) / max(1.0, abs(g_auto), abs(g_fd))
        max_err = max(max_err, err)
    return max_err
