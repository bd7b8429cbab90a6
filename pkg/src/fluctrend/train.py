"""Optimization loop: Adam, warmup + cosine annealing with warm restarts,
gradient clipping, deterministic epoch orchestration, checkpointing."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .data import Sample
from .model import DualBranchModel, ModelConfig, mse_loss
from .tensor import Tensor, backward

log = logging.getLogger("fluctrend.train")


class TrainingError(RuntimeError):
    pass


@dataclass
class LRSchedule:
    lr_min: float = 2e-4
    lr_max: float = 3e-3
    warmup_epochs: float = 10.0
    restart_period: float = 15.0
    total_epochs: int = 75

    def __post_init__(self):
        if not (0.0 < self.lr_min < self.lr_max):
            raise ValueError("schedule requires 0 < lr_min < lr_max")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")


def lr_at(sched: LRSchedule, epoch: float) -> float:
    """Linear warmup lr_min -> lr_max, then cosine annealing that restarts
    at lr_max every restart_period epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < sched.warmup_epochs:
        return sched.lr_min + (sched.lr_max - sched.lr_min) * epoch / sched.warmup_epochs
    phase = (epoch - sched.warmup_epochs) % sched.restart_period
    return sched.lr_min + 0.5 * (sched.lr_max - sched.lr_min) * (
        1.0 + math.cos(math.pi * phase / sched.restart_period)
    )


@dataclass
class TrainConfig:
    schedule: LRSchedule = field(default_factory=LRSchedule)
    batch_days: int = 1
    seed: int = 0
    clip_norm: float = 3.0
    checkpoint_every: int = 25
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_days < 1:
            raise ValueError("batch_days must be >= 1")


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, param_names: list[str], shapes: dict[str, tuple[int, ...]]):
        self.step = 0
        self.m = {n: np.zeros(shapes[n]) for n in param_names}
        self.v = {n: np.zeros(shapes[n]) for n in param_names}

    @classmethod
    def for_model(cls, model: DualBranchModel) -> "AdamState":
        params = model.named_parameters()
        return cls(list(params), {n: p.data.shape for n, p in params.items()})


def clip_global_norm(model: DualBranchModel, max_norm: float) -> float:
    total = 0.0
    params = model.parameters()
    for p in params:
        total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
        log.debug("gradient clipped: norm %.4f -> %.4f", norm, max_norm)
    return norm


def adam_step(model: DualBranchModel, state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update; zeroes gradients afterwards."""
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for p in model.parameters():
        g = p.grad
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in parameter '{p.name}'")
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / corr1) / (np.sqrt(v / corr2) + cfg.eps)
        p.zero_grad()


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_loss: float
    mean_grad_norm: float
    wall_ms: float


def train_epoch(
    model: DualBranchModel,
    samples: list[Sample],
    state: AdamState,
    cfg: TrainConfig,
    epoch: int,
) -> EpochStats:
    """One pass over day-samples in a seeded shuffled order; deterministic
    given (data, config, seed, epoch)."""
    if not samples:
        raise TrainingError("empty sample list")
    t0 = time.perf_counter()
    order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(samples))
    sched = cfg.schedule
    losses: list[float] = []
    norms: list[float] = []
    n = len(order)
    batches = [order[i : i + cfg.batch_days] for i in range(0, n, cfg.batch_days)]
    for bi, batch in enumerate(batches):
        model.zero_grads()
        day_losses = []
        for si in batch:
            s = samples[si]
            out = model.forward(Tensor(s.features), Tensor(s.market))
            day_losses.append(mse_loss(out.predictions, Tensor(s.labels)))
        loss = day_losses[0]
        for dl in day_losses[1:]:
            loss = loss + dl
        loss = loss * (1.0 / len(day_losses))
        backward(loss)
        norms.append(clip_global_norm(model, cfg.clip_norm))
        lr = lr_at(sched, epoch + bi / len(batches))
        adam_step(model, state, lr, cfg)
        losses.append(loss.item())
    return EpochStats(
        epoch=epoch,
        lr=lr_at(sched, float(epoch)),
        mean_loss=float(np.mean(losses)),
        mean_grad_norm=float(np.mean(norms)),
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )


def evaluate_loss(model: DualBranchModel, samples: list[Sample]) -> float:
    from .tensor import no_grad

    with no_grad():
        vals = [
            mse_loss(
                model.forward(Tensor(s.features), Tensor(s.market)).predictions,
                Tensor(s.labels),
            ).item()
            for s in samples
        ]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: DualBranchModel, state: AdamState | None, path: str, epoch: int = 0) -> None:
    tensors: dict[str, np.ndarray] = {p.name: p.data for p in model.parameters()}
    if state is not None:
        for name, arr in state.m.items():
            tensors[f"opt.m.{name}"] = arr
        for name, arr in state.v.items():
            tensors[f"opt.v.{name}"] = arr
    trailer = {
        "model": model.config.to_dict(),
        "train_state": {"epoch": epoch, "adam_step": state.step if state else 0},
    }
    ckpt.write_tensors(path, tensors, trailer)


def load_checkpoint(path: str, seed: int = 0) -> tuple[DualBranchModel, AdamState, int]:
    """Rebuild the model and optimizer state; returns (model, state, epoch)."""
    tensors, trailer = ckpt.read_tensors(path)
    config = ModelConfig.from_dict(trailer["model"])
    model = DualBranchModel(config, seed=seed)
    state = AdamState.for_model(model)
    state.step = int(trailer["train_state"]["adam_step"])
    load_into(model, state, tensors, path)
    return model, state, int(trailer["train_state"]["epoch"])


def load_into(model: DualBranchModel, state: AdamState | None, tensors: dict[str, np.ndarray], path: str) -> None:
    params = model.named_parameters()
    for name, p in params.items():
        if name not in tensors:
            raise ckpt.CheckpointError(f"{path}: missing tensor '{name}' for current config")
        if tensors[name].shape != p.data.shape:
            raise ckpt.CheckpointError(
                f"{path}: shape mismatch for '{name}': "
                f"checkpoint {tensors[name].shape} vs model {p.data.shape}"
            )
        p.data = tensors[name].copy()
        p.zero_grad()
    for name in tensors:
        base = name.removeprefix("opt.m.").removeprefix("opt.v.")
        if base not in params:
            raise ckpt.CheckpointError(f"{path}: unknown tensor '{name}' for current config")
    if state is not None:
        for name in params:
            if f"opt.m.{name}" in tensors:
                state.m[name] = tensors[f"opt.m.{name}"].copy()
                state.v[name] = tensors[f"opt.v.{name}"].copy()


def train(
    model: DualBranchModel,
    train_samples: list[Sample],
    cfg: TrainConfig,
    out_dir: str | None = None,
    state: AdamState | None = None,
    start_epoch: int = 0,
    log_file: str | None = None,
) -> AdamState:
    """Run epochs [start_epoch, total); writes checkpoints and a JSON-lines
    log when out_dir is given. Last-epoch checkpoint is the eval artifact."""
    import os

    if state is None:
        state = AdamState.for_model(model)
    total = cfg.schedule.total_epochs
    log_fh = open(log_file, "a", encoding="utf-8") if log_file else None
    try:
        for epoch in range(start_epoch, total):
            stats = train_epoch(model, train_samples, state, cfg, epoch)
            log.info(
                "epoch %d lr %.2e loss %.6f grad %.3f (%.0f ms)",
                epoch, stats.lr, stats.mean_loss, stats.mean_grad_norm, stats.wall_ms,
            )
            if log_fh:
                log_fh.write(json.dumps({
                    "epoch": stats.epoch,
                    "lr": stats.lr,
                    "mean_loss": stats.mean_loss,
                    "grad_norm": stats.mean_grad_norm,
                    "wall_ms": stats.wall_ms,
                }, sort_keys=True) + "\n")
                log_fh.flush()
            if out_dir and (
                (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == total
            ):
                save_checkpoint(model, state, os.path.join(out_dir, f"epoch_{epoch + 1:04d}.ckpt"), epoch + 1)
        if out_dir:
            save_checkpoint(model, state, os.path.join(out_dir, "last.ckpt"), total)
    finally:
        if log_fh:
            log_fh.close()
    return state
