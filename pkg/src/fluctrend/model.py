"""Dual-branch stock prediction network.

Pipeline per trading day: embed raw features, split each stock's window
into a smooth trend part and the residual fluctuation, run the fluctuation
through time-correlation (RWKV) then stock-correlation (attention), run
the trend the opposite way round, add a market embedding, and aggregate
the T per-step vectors with a learned query on the last step before the
linear predictor. Branch orders are switchable for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import FFN, Linear, Module, RWKVStack, StockAttentionBlock
from .tensor import (
    Parameter,
    Tensor,
    avg_pool1d_replicate,
    conv1d_strided,
    matmul,
    reshape,
    softmax,
    tmean,
    transpose,
    tsum,
)

TC_THEN_SC = "tc_sc"
SC_THEN_TC = "sc_tc"


@dataclass
class ModelConfig:
    n_features: int
    embed_dim: int = 16
    lookback: int = 8
    heads: int = 4
    pool_window: int = 5
    market_kernel: int = 2
    tc_layers: int = 1
    fluct_order: str = TC_THEN_SC
    trend_order: str = SC_THEN_TC
    market_features: int = 15
    ffn_hidden: int | None = None

    def __post_init__(self):
        if self.pool_window % 2 == 0 or self.pool_window < 1:
            raise ValueError(f"pool_window must be odd and >= 1, got {self.pool_window}")
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.lookback < 1:
            raise ValueError("lookback must be >= 1")
        for name, order in (("fluct_order", self.fluct_order), ("trend_order", self.trend_order)):
            if order not in (TC_THEN_SC, SC_THEN_TC):
                raise ValueError(f"{name} must be '{TC_THEN_SC}' or '{SC_THEN_TC}', got {order!r}")

    @property
    def hidden(self) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else self.embed_dim

    @property
    def market_window(self) -> int:
        return self.lookback * self.market_kernel

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "embed_dim": self.embed_dim,
            "lookback": self.lookback,
            "heads": self.heads,
            "pool_window": self.pool_window,
            "market_kernel": self.market_kernel,
            "tc_layers": self.tc_layers,
            "fluct_order": self.fluct_order,
            "trend_order": self.trend_order,
            "market_features": self.market_features,
            "ffn_hidden": self.ffn_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForwardOutput:
    predictions: Tensor  # [S]
    weights: Tensor  # [S, T], rows sum to 1
    trend: Tensor | None = None
    fluct: Tensor | None = None
    fused: Tensor | None = None


class DualBranchModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng([seed, 0])
        d, h = config.embed_dim, config.hidden
        self.embed = self._child(Linear("embed", config.n_features, d, rng))
        self.decomp_tc = self._child(RWKVStack("decomp.tc", d, config.tc_layers, rng))
        self.alpha = self._param("decomp.alpha", np.array(1.0))
        self.beta = self._param("decomp.beta", np.array(0.0))
        self.fluct_tc = self._child(RWKVStack("fluct.tc", d, config.tc_layers, rng))
        self.fluct_sc = self._child(StockAttentionBlock("fluct.sc", d, config.heads, h, rng))
        self.trend_tc = self._child(RWKVStack("trend.tc", d, config.tc_layers, rng))
        self.trend_sc = self._child(StockAttentionBlock("trend.sc", d, config.heads, h, rng))
        km = config.market_kernel * config.market_features
        self.market_conv_w = self._param("market.conv.weight", np.random.default_rng([seed, 1]).uniform(
            -1.0 / np.sqrt(km), 1.0 / np.sqrt(km), size=(km, d)))
        self.market_conv_b = self._param("market.conv.bias", np.zeros(d))
        self.market_linear = self._child(Linear("market.linear", d, d, rng))
        self.fuse_ffn = self._child(FFN("fuse.ffn", d, h, rng, residual=True))
        self.w_lambda = self._param("agg.w_lambda", np.random.default_rng([seed, 2]).uniform(
            -1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=(d, d)))
        self.predictor = self._child(Linear("predictor", d, 1, rng))
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ValueError("duplicate parameter names in model")

    # -- stages -------------------------------------------------------------

    def embed_features(self, features: Tensor) -> Tensor:
        """[S, T, F] -> [S, T, D]."""
        if features.shape[-1] != self.config.n_features:
            raise ValueError(
                f"expected {self.config.n_features} features, got {features.shape[-1]}"
            )
        return self.embed.forward(features)

    def decompose(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Split [S, T, D] into (trend, fluctuation); fluct is the residual
        x - trend so the parts sum back to the input."""
        trend_raw = self.alpha * avg_pool1d_replicate(x, self.config.pool_window) \
            + self.beta * self.decomp_tc.forward(x)
        fluct = x - trend_raw
        trend = x - fluct  # re-derive so the returned pair sums as closely as floats allow
        return trend, fluct

    def _branch(self, x: Tensor, order: str, tc: RWKVStack, sc: StockAttentionBlock) -> Tensor:
        def run_sc(z: Tensor) -> Tensor:
            # attention runs across stocks at each time step
            z = transpose(z, (1, 0, 2))  # [T, S, D]
            z = sc.forward(z)
            return transpose(z, (1, 0, 2))

        if order == TC_THEN_SC:
            return run_sc(tc.forward(x))
        return tc.forward(run_sc(x))

    def fluctuation_branch(self, x_fluct: Tensor) -> Tensor:
        return self._branch(x_fluct, self.config.fluct_order, self.fluct_tc, self.fluct_sc)

    def trend_branch(self, x_trend: Tensor) -> Tensor:
        return self._branch(x_trend, self.config.trend_order, self.trend_tc, self.trend_sc)

    def market_encode(self, market: Tensor) -> Tensor:
        """[(T*k_c), M] -> [T, D]."""
        cfg = self.config
        if market.shape != (cfg.market_window, cfg.market_features):
            raise ValueError(
                f"market history must be [{cfg.market_window} x {cfg.market_features}] "
                f"(lookback * market_kernel rows), got {market.shape}"
            )
        z = conv1d_strided(market, self.market_conv_w, cfg.market_kernel, self.market_conv_b)
        return self.market_linear.forward(z)

    def fuse_and_aggregate(self, z_trend: Tensor, z_fluct: Tensor, z_market: Tensor) -> tuple[Tensor, Tensor]:
        """Fused per-step vectors are pooled over time with a softmax whose
        query is the last step's vector; returns ([S, D], lambda [S, T])."""
        t_len = self.config.lookback
        z = self.fuse_ffn.forward(z_trend + z_fluct + reshape(z_market, (1,) + z_market.shape))
        projected = matmul(z, self.w_lambda)  # [S, T, D]
        query = z[:, t_len - 1, :]  # [S, D]
        logits = tsum(projected * reshape(query, (query.shape[0], 1, query.shape[1])), axis=-1)
        lam = softmax(logits, axis=-1)  # [S, T]
        agg = tsum(reshape(lam, lam.shape + (1,)) * z, axis=-2)
        return agg, lam

    def predict(self, agg: Tensor) -> Tensor:
        return reshape(self.predictor.forward(agg), (agg.shape[0],))

    # -- full pass ----------------------------------------------------------

    def forward(self, features: Tensor, market: Tensor, keep_intermediates: bool = False) -> ForwardOutput:
        x = self.embed_features(features)
        x_trend, x_fluct = self.decompose(x)
        z_f = self.fluctuation_branch(x_fluct)
        z_t = self.trend_branch(x_trend)
        z_m = self.market_encode(market)
        agg, lam = self.fuse_and_aggregate(z_t, z_f, z_m)
        preds = self.predict(agg)
        if keep_intermediates:
            return ForwardOutput(preds, lam, trend=x_trend, fluct=x_fluct, fused=agg)
        return ForwardOutput(preds, lam)

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}


def mse_loss(predictions: Tensor, labels: Tensor) -> Tensor:
    """Per-day MSE averaged over stocks (gradient scale independent of S)."""
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    diff = predictions - labels
    return tmean(diff * diff)
