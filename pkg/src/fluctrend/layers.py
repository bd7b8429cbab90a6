"""Parameterized building blocks: linear/FFN, multi-head attention over the
stock axis, and the RWKV block (time mixing with the wkv recurrence plus
squared-ReLU channel mixing).

All blocks operate on the trailing two axes and accept arbitrary leading
batch axes. Time mixing runs along axis -2; attention runs across axis -2
of whatever view it is handed.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    Parameter,
    Tensor,
    avg_pool1d_replicate,
    concat,
    exp,
    matmul,
    maximum,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "Linear",
    "FFN",
    "LayerNorm",
    "MultiHeadAttention",
    "StockAttentionBlock",
    "TimeMix",
    "wkv",
    "ChannelMix",
    "RWKVBlock",
    "RWKVStack",
]


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Minimal container; subclasses append Parameters to self._params and
    submodules to self._children."""

    def __init__(self):
        self._params: list[Parameter] = []
        self._children: list[Module] = []

    def _param(self, name: str, data) -> Parameter:
        p = Parameter(data, name)
        self._params.append(p)
        return p

    def _child(self, mod: "Module") -> "Module":
        self._children.append(mod)
        return mod

    def parameters(self) -> list[Parameter]:
        out = list(self._params)
        for c in self._children:
            out.extend(c.parameters())
        return out


class Linear(Module):
    def __init__(self, prefix: str, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.weight = self._param(f"{prefix}.weight", _uniform_init(rng, n_in, (n_in, n_out)))
        self.bias = self._param(f"{prefix}.bias", np.zeros(n_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ValueError(f"linear expects width {self.n_in}, got {x.shape}")
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class FFN(Module):
    """Two-layer MLP with ReLU; optionally adds the input back (residual)."""

    def __init__(self, prefix: str, width: int, hidden: int, rng: np.random.Generator, residual: bool = True):
        super().__init__()
        self.residual = residual
        self.lin1 = self._child(Linear(f"{prefix}.lin1", width, hidden, rng))
        self.lin2 = self._child(Linear(f"{prefix}.lin2", hidden, width, rng))

    def forward(self, x: Tensor) -> Tensor:
        y = self.lin2.forward(relu(self.lin1.forward(x)))
        return x + y if self.residual else y


class LayerNorm(Module):
    """Pre-norm normalization over the channel axis, eps 1e-5."""

    EPS = 1e-5

    def __init__(self, prefix: str, width: int):
        super().__init__()
        self.scale = self._param(f"{prefix}.scale", np.ones(width))
        self.shift = self._param(f"{prefix}.shift", np.zeros(width))

    def forward(self, x: Tensor) -> Tensor:
        mu = tmean(x, axis=-1, keepdims=True)
        centered = x - mu
        var = tmean(centered * centered, axis=-1, keepdims=True)
        return centered / sqrt(var + self.EPS) * self.scale + self.shift


class MultiHeadAttention(Module):
    """Self-attention across axis -2 (the stock axis in this model)."""

    def __init__(self, prefix: str, width: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if width % heads != 0:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.width, self.heads = width, heads
        self.head_dim = width // heads
        self.w_q = self._param(f"{prefix}.w_q", _uniform_init(rng, width, (width, width)))
        self.w_k = self._param(f"{prefix}.w_k", _uniform_init(rng, width, (width, width)))
        self.w_v = self._param(f"{prefix}.w_v", _uniform_init(rng, width, (width, width)))
        self.w_o = self._param(f"{prefix}.w_o", _uniform_init(rng, width, (width, width)))

    def forward(self, seq: Tensor) -> Tensor:
        s = seq.shape[-2]
        if s == 0:
            raise ValueError("attention over an empty universe")
        lead = seq.shape[:-2]
        h, dh = self.heads, self.head_dim

        def split_heads(t: Tensor) -> Tensor:
            t = reshape(t, lead + (s, h, dh))
            ax = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
            return transpose(t, ax)  # [..., h, S, dh]

        q = split_heads(matmul(seq, self.w_q))
        k = split_heads(matmul(seq, self.w_k))
        v = split_heads(matmul(seq, self.w_v))
        scores = matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
        attn = softmax(scores * (1.0 / math.sqrt(dh)), axis=-1)
        mixed = matmul(attn, v)  # [..., h, S, dh]
        ax = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        mixed = reshape(transpose(mixed, ax), lead + (s, h * dh))
        return matmul(mixed, self.w_o)


class StockAttentionBlock(Module):
    """Cross-stock correlation at one time step: FFN(MHA(H) + H)."""

    def __init__(self, prefix: str, width: int, heads: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.mha = self._child(MultiHeadAttention(f"{prefix}.mha", width, heads, rng))
        self.ffn = self._child(FFN(f"{prefix}.ffn", width, hidden, rng, residual=True))

    def forward(self, seq: Tensor) -> Tensor:
        return self.ffn.forward(self.mha.forward(seq) + seq)


def wkv(k: Tensor, v: Tensor, decay: Tensor, u: Tensor) -> Tensor:
    """Weighted key-value aggregation along axis -2.

    Each output step t is a softmax-weighted average of the values seen so
    far, with history element i weighted by exp(k_i - (t - 1 - i) * decay)
    and the current step boosted by exp(u + k_t). Evaluated by a streaming
    recurrence carrying a running max exponent, so large keys cannot
    overflow. Step 0 reduces exactly to v_0.
    """
    t_len = k.shape[-2]
    width = k.shape[-1]
    k_t = k[..., 0, :]
    v_t = v[..., 0, :]
    outs = [v_t]
    num, den, top = v_t, Tensor(np.ones(v_t.shape)), k_t
    for t in range(1, t_len):
        k_t = k[..., t, :]
        v_t = v[..., t, :]
        bonus = u + k_t
        m = maximum(top, bonus)
        e_hist = exp(top - m)
        e_cur = exp(bonus - m)
        outs.append((e_hist * num + e_cur * v_t) / (e_hist * den + e_cur))
        # state ages one decay step and absorbs the plain key for step t
        aged = top - decay
        m2 = maximum(aged, k_t)
        e_hist2 = exp(aged - m2)
        e_cur2 = exp(k_t - m2)
        num = e_hist2 * num + e_cur2 * v_t
        den = e_hist2 * den + e_cur2
        top = m2
    lead = k.shape[:-2]
    return concat([reshape(o, lead + (1, width)) for o in outs], axis=-2)


def token_shift(x: Tensor) -> Tensor:
    """Previous time step per position, zero vector before the first step."""
    lead = x.shape[:-2]
    zeros = Tensor(np.zeros(lead + (1, x.shape[-1])))
    return concat([zeros, x[..., :-1, :]], axis=-2)


class TimeMix(Module):
    """RWKV time mixing along axis -2.

    Interpolates each projection input between the current and previous
    step (mu * x_t + (1 - mu) * x_{t-1}), then aggregates values with
    per-channel exponential decay exp(w_raw) per step plus a bonus u for
    the current step. Evaluated by a streaming recurrence that carries a
    running max exponent, so large keys cannot overflow.
    """

    def __init__(self, prefix: str, width: int, rng: np.random.Generator):
        super().__init__()
        self.width = width
        self.mu_r = self._param(f"{prefix}.mu_r", np.full(width, 0.5))
        self.mu_k = self._param(f"{prefix}.mu_k", np.full(width, 0.5))
        self.mu_v = self._param(f"{prefix}.mu_v", np.full(width, 0.5))
        self.w_raw = self._param(f"{prefix}.w_raw", np.zeros(width))
        self.u = self._param(f"{prefix}.u", np.zeros(width))
        self.w_r = self._param(f"{prefix}.w_r", _uniform_init(rng, width, (width, width)))
        self.w_k = self._param(f"{prefix}.w_k", _uniform_init(rng, width, (width, width)))
        self.w_v = self._param(f"{prefix}.w_v", _uniform_init(rng, width, (width, width)))
        self.w_out = self._param(f"{prefix}.w_out", _uniform_init(rng, width, (width, width)))

    def forward(self, x: Tensor) -> Tensor:
        prev = token_shift(x)
        r_in = self.mu_r * x + (1.0 - self.mu_r) * prev
        k_in = self.mu_k * x + (1.0 - self.mu_k) * prev
        v_in = self.mu_v * x + (1.0 - self.mu_v) * prev
        r = matmul(r_in, self.w_r)
        k = matmul(k_in, self.w_k)
        v = matmul(v_in, self.w_v)

        decay = exp(self.w_raw)  # positive per-channel decay per step
        mixed = wkv(k, v, decay, self.u)
        return matmul(sigmoid(r) * mixed, self.w_out)


class ChannelMix(Module):
    """RWKV channel mixing: sigmoid(R') gates a squared-ReLU key path."""

    def __init__(self, prefix: str, width: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.mu_r = self._param(f"{prefix}.mu_r", np.full(width, 0.5))
        self.mu_k = self._param(f"{prefix}.mu_k", np.full(width, 0.5))
        self.w_r = self._param(f"{prefix}.w_r", _uniform_init(rng, width, (width, width)))
        self.w_k = self._param(f"{prefix}.w_k", _uniform_init(rng, width, (width, hidden)))
        self.w_v = self._param(f"{prefix}.w_v", _uniform_init(rng, hidden, (hidden, width)))

    def forward(self, x: Tensor) -> Tensor:
        prev = token_shift(x)
        r = matmul(self.mu_r * x + (1.0 - self.mu_r) * prev, self.w_r)
        k = matmul(self.mu_k * x + (1.0 - self.mu_k) * prev, self.w_k)
        kk = relu(k)
        return sigmoid(r) * matmul(kk * kk, self.w_v)


class RWKVBlock(Module):
    """Pre-norm residual pair: time mixing then channel mixing."""

    def __init__(self, prefix: str, width: int, rng: np.random.Generator, cm_hidden: int | None = None):
        super().__init__()
        hidden = 4 * width if cm_hidden is None else cm_hidden
        self.ln1 = self._child(LayerNorm(f"{prefix}.ln1", width))
        self.time_mix = self._child(TimeMix(f"{prefix}.time_mix", width, rng))
        self.ln2 = self._child(LayerNorm(f"{prefix}.ln2", width))
        self.channel_mix = self._child(ChannelMix(f"{prefix}.channel_mix", width, hidden, rng))

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.time_mix.forward(self.ln1.forward(x))
        x = x + self.channel_mix.forward(self.ln2.forward(x))
        return x


class RWKVStack(Module):
    """n_layers stacked RWKV blocks; n_layers == 0 is the identity."""

    def __init__(self, prefix: str, width: int, n_layers: int, rng: np.random.Generator):
        super().__init__()
        self.blocks = [self._child(RWKVBlock(f"{prefix}.{i}", width, rng)) for i in range(n_layers)]

    def forward(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk.forward(x)
        return x
