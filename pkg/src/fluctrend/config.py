"""Run configuration: one JSON file wiring data, model, training, and
strategy settings. Unknown fields are rejected with a field-path message."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .backtest import StrategyConfig
from .data import DEFAULT_MARKET_INTERVALS, WindowConfig
from .train import LRSchedule, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    panel_csv: str = ""
    market_csv: str = ""
    horizon: int = 5
    market_intervals: tuple[int, ...] = DEFAULT_MARKET_INTERVALS
    train_frac: float = 0.75
    valid_frac: float = 0.05


@dataclass
class ModelSettings:
    embed_dim: int = 16
    lookback: int = 8
    heads: int = 4
    pool_window: int = 5
    market_kernel: int = 2
    tc_layers: int = 1
    fluct_order: str = "tc_sc"
    trend_order: str = "sc_tc"
    ffn_hidden: int | None = None


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/out"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)

    def window_config(self) -> WindowConfig:
        return WindowConfig(
            lookback=self.model.lookback,
            horizon=self.data.horizon,
            market_kernel=self.model.market_kernel,
            market_intervals=tuple(self.data.market_intervals),
            train_frac=self.data.train_frac,
            valid_frac=self.data.valid_frac,
        )


def _build(cls, obj: dict, path: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    fields = {f.name: f for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    unknown = set(obj) - set(fields)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
    kwargs = {}
    nested = {
        "data": DataConfig,
        "model": ModelSettings,
        "train": TrainConfig,
        "strategy": StrategyConfig,
        "schedule": LRSchedule,
    }
    for name, value in obj.items():
        sub = nested.get(name)
        if sub is not None and name in fields:
            kwargs[name] = _build(sub, value, f"{path}.{name}")
        elif name == "market_intervals":
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def load_run_config(path: str, require_paths: bool = True) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    cfg = _build(RunConfig, obj, "config")
    if require_paths:
        for fname, p in (("data.panel_csv", cfg.data.panel_csv), ("data.market_csv", cfg.data.market_csv)):
            if not p:
                raise ConfigError(f"config.{fname}: required path is empty")
            if not os.path.exists(p):
                raise ConfigError(f"config.{fname}: path does not exist: {p}")
    if not 0.0 < cfg.data.train_frac < 1.0 or cfg.data.valid_frac < 0.0:
        raise ConfigError("config.data: split fractions out of range")
    if cfg.data.train_frac + cfg.data.valid_frac >= 1.0:
        raise ConfigError("config.data: train_frac + valid_frac must leave room for test")
    return cfg
