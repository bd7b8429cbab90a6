"""Command-line entry point: synth, train, eval, backtest, gradcheck.

Every command is a deterministic function of (config, seed, input files);
log verbosity comes from the DFT_LOG environment variable
(error | info | debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import backtest as bt
from . import data as data_mod
from . import evaluate as ev
from .config import ConfigError, RunConfig, load_run_config
from .model import DualBranchModel, ModelConfig, mse_loss
from .tensor import Tensor, finite_difference_gradcheck
from .train import AdamState, load_checkpoint, load_into, save_checkpoint, train

log = logging.getLogger("fluctrend")


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("DFT_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_dataset(cfg: RunConfig):
    ds = data_mod.load_panel_csv(cfg.data.panel_csv)
    ms = data_mod.load_market_csv(cfg.data.market_csv)
    return data_mod.build_windows(ds, ms, cfg.window_config())


def _model_config(cfg: RunConfig, sample: data_mod.Sample) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        n_features=sample.features.shape[2],
        embed_dim=m.embed_dim,
        lookback=m.lookback,
        heads=m.heads,
        pool_window=m.pool_window,
        market_kernel=m.market_kernel,
        tc_layers=m.tc_layers,
        fluct_order=m.fluct_order,
        trend_order=m.trend_order,
        market_features=sample.market.shape[1],
        ffn_hidden=m.ffn_hidden,
    )


def _restore_model(cfg: RunConfig, sample_set: data_mod.SampleSet, checkpoint: str | None):
    mc = _model_config(cfg, sample_set.samples[0])
    model = DualBranchModel(mc, seed=cfg.seed)
    if checkpoint:
        loaded, _, _ = load_checkpoint(checkpoint, seed=cfg.seed)
        if loaded.config.to_dict() != mc.to_dict():
            raise ConfigError(
                f"checkpoint config does not match run config: "
                f"{loaded.config.to_dict()} vs {mc.to_dict()}"
            )
        model = loaded
    return model


def cmd_synth(args) -> int:
    ds, ms = data_mod.synth_generate(
        seed=args.seed,
        n_stocks=args.stocks,
        n_dates=args.days,
        signal_strength=args.signal,
    )
    os.makedirs(args.out, exist_ok=True)
    panel = os.path.join(args.out, "panel.csv")
    market = os.path.join(args.out, "market.csv")
    data_mod.export_panel_csv(ds, panel)
    data_mod.export_market_csv(ms, market)
    print(f"wrote {panel} and {market}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    cfg.train.seed = cfg.seed
    sample_set = _load_dataset(cfg)
    train_samples = sample_set.split("train")
    os.makedirs(cfg.output_dir, exist_ok=True)

    if args.resume:
        model, state, start_epoch = load_checkpoint(args.resume, seed=cfg.seed)
    else:
        model = DualBranchModel(_model_config(cfg, sample_set.samples[0]), seed=cfg.seed)
        state, start_epoch = None, 0
    train(
        model,
        train_samples,
        cfg.train,
        out_dir=cfg.output_dir,
        state=state,
        start_epoch=start_epoch,
        log_file=os.path.join(cfg.output_dir, "train_log.jsonl"),
    )
    print(f"trained to epoch {cfg.train.schedule.total_epochs}; checkpoints in {cfg.output_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    sample_set = _load_dataset(cfg)
    model = _restore_model(cfg, sample_set, args.checkpoint)
    days = ev.score_samples(model, sample_set.split(args.split))
    report = ev.aggregate(days)
    os.makedirs(cfg.output_dir, exist_ok=True)
    json_path = os.path.join(cfg.output_dir, f"metrics_{args.split}.json")
    csv_path = os.path.join(cfg.output_dir, f"daily_ic_{args.split}.csv")
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    ev.export_daily_ic_csv(report, csv_path)
    print(report.to_json())
    return 0


def cmd_backtest(args) -> int:
    cfg = load_run_config(args.config)
    sample_set = _load_dataset(cfg)
    model = _restore_model(cfg, sample_set, args.checkpoint)
    ds = data_mod.load_panel_csv(cfg.data.panel_csv)
    sym_index = {s: i for i, s in enumerate(ds.symbols)}
    scored = ev.score_samples(model, sample_set.split(args.split))
    date_index = {d: i for i, d in enumerate(ds.dates)}
    days = []
    for day in scored:
        t = date_index[day.date]
        if t + 1 >= len(ds.dates):
            continue
        nxt = {}
        for sym in day.symbols:
            si = sym_index[sym]
            c0, c1 = ds.closes[t, si], ds.closes[t + 1, si]
            if np.isfinite(c0) and np.isfinite(c1):
                nxt[sym] = float(c1 / c0 - 1.0)
        days.append(bt.TradingDay(day.date, day.symbols, day.scores, nxt))
    report = bt.run_topk_dropk(days, cfg.strategy)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, f"backtest_{args.split}.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_summary_json() + "\n")
    bt.export_curves(report, os.path.join(cfg.output_dir, f"curves_{args.split}.csv"))
    print(report.to_summary_json())
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    mc = ModelConfig(
        n_features=6, embed_dim=8, lookback=8, heads=2, pool_window=3,
        market_kernel=2, tc_layers=1, market_features=3,
    )
    model = DualBranchModel(mc, seed=args.seed)
    features = Tensor(rng.standard_normal((args.stocks, mc.lookback, mc.n_features)))
    market = Tensor(rng.standard_normal((mc.market_window, mc.market_features)))
    labels = Tensor(rng.standard_normal(args.stocks))

    def loss_fn():
        return mse_loss(model.forward(features, market).predictions, labels)

    err = finite_difference_gradcheck(
        loss_fn, model.parameters(), n_samples=args.samples, rng=np.random.default_rng([args.seed, 7])
    )
    print(f"max relative gradient error over {args.samples} coordinates: {err:.3e}")
    return 0 if err < 1e-4 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluctrend", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic panel + market CSV pair")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--stocks", type=int, default=20)
    sp.add_argument("--days", type=int, default=300)
    sp.add_argument("--signal", type=float, default=0.0, help="planted signal strength")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="train per config, writing checkpoints + log")
    tp.add_argument("--config", required=True)
    tp.add_argument("--resume", help="checkpoint to resume from")
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("eval", help="ranking metrics on a split")
    ep.add_argument("--config", required=True)
    ep.add_argument("--checkpoint", help="checkpoint path (fresh init when omitted)")
    ep.add_argument("--split", choices=["train", "valid", "test"], default="test")
    ep.set_defaults(func=cmd_eval)

    bp = sub.add_parser("backtest", help="top-k/drop-k simulation on a split")
    bp.add_argument("--config", required=True)
    bp.add_argument("--checkpoint")
    bp.add_argument("--split", choices=["train", "valid", "test"], default="test")
    bp.set_defaults(func=cmd_backtest)

    gp = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    gp.add_argument("--samples", type=int, default=64)
    gp.add_argument("--stocks", type=int, default=4)
    gp.add_argument("--seed", type=int, default=0)
    gp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, data_mod.DataError, ev.MetricError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
