"""Top-k/Drop-k portfolio simulation over daily prediction scores.

Each day the portfolio rebalances to the k highest-scored symbols
(lexicographic tie-break), equal-weighted. Conventions, documented rather
than universal: arithmetic annualization at 252 trading days; turnover is
half the L1 change in weights (0 on the first day); each day's return is
charged turnover * bps/1e4.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger("fluctrend.backtest")

TRADING_DAYS = 252


@dataclass
class StrategyConfig:
    top_k: int = 30
    transaction_cost_bps: float = 0.0
    benchmark: str = "equal_weight"  # or "index"

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.transaction_cost_bps < 0:
            raise ValueError("transaction_cost_bps must be >= 0")


@dataclass
class TradingDay:
    """Scores plus next-day realized simple returns for one rebalance date."""

    date: str
    symbols: list[str]
    scores: np.ndarray
    next_returns: dict[str, float]  # symbol -> next-day simple return
    benchmark_return: float | None = None  # used when benchmark == "index"


@dataclass
class BacktestReport:
    dates: list[str]
    portfolio_returns: np.ndarray
    benchmark_returns: np.ndarray
    excess_returns: np.ndarray
    cumulative: np.ndarray
    benchmark_cumulative: np.ndarray
    turnover: np.ndarray
    ar: float
    ir: float
    holdings: list[list[str]] = field(default_factory=list)

    def to_summary_json(self) -> str:
        return json.dumps(
            {
                "ar": self.ar,
                "ir": self.ir,
                "n_days": len(self.dates),
                "mean_turnover": float(self.turnover.mean()) if len(self.dates) else 0.0,
            },
            sort_keys=True,
        )


def annualized_return(excess: np.ndarray) -> float:
    """Arithmetic convention: mean daily excess times 252."""
    excess = np.asarray(excess, dtype=np.float64)
    if excess.size < 1:
        raise ValueError("need at least one day")
    return float(excess.mean() * TRADING_DAYS)


def information_ratio(excess: np.ndarray) -> float:
    """(mean * 252) / (population std * sqrt(252)); inf sentinel on zero std."""
    excess = np.asarray(excess, dtype=np.float64)
    if excess.size < 2:
        raise ValueError("need at least two days")
    std = excess.std()
    if std <= 0.0:
        log.warning("zero tracking error; IR reported as inf")
        mean = excess.mean()
        if mean == 0.0:
            return 0.0
        return math.inf if mean > 0 else -math.inf
    return float(excess.mean() * TRADING_DAYS / (std * math.sqrt(TRADING_DAYS)))


def select_top_k(symbols: list[str], scores: np.ndarray, k: int) -> list[str]:
    """Highest k by score; ties broken by symbol lexicographic order."""
    order = sorted(range(len(symbols)), key=lambda i: (-scores[i], symbols[i]))
    return [symbols[i] for i in order[: min(k, len(symbols))]]


def run_topk_dropk(days: list[TradingDay], cfg: StrategyConfig) -> BacktestReport:
    if not days:
        raise ValueError("no trading days supplied")
    cost_rate = cfg.transaction_cost_bps / 1e4
    prev_held: set[str] = set()
    dates, rets, bench, turns, holdings = [], [], [], [], []
    for day in days:
        if len(day.symbols) < cfg.top_k:
            log.info(
                "day %s has %d symbols < top_k %d; holding all",
                day.date, len(day.symbols), cfg.top_k,
            )
        held = select_top_k(day.symbols, day.scores, cfg.top_k)
        realized = []
        for sym in held:
            r = day.next_returns.get(sym)
            if r is None or not np.isfinite(r):
                log.info("day %s: %s missing next-day return, contributing 0", day.date, sym)
                r = 0.0
            realized.append(r)
        gross = float(np.mean(realized))

        # turnover: half the L1 weight change under equal weighting
        cur = set(held)
        if prev_held:
            w_prev = 1.0 / len(prev_held)
            w_cur = 1.0 / len(cur)
            l1 = sum(abs((w_cur if s in cur else 0.0) - (w_prev if s in prev_held else 0.0))
                     for s in cur | prev_held)
        else:
            l1 = 0.0  # initial positions assumed established before the window
        turnover = 0.5 * l1
        net = gross - turnover * cost_rate

        if cfg.benchmark == "index":
            if day.benchmark_return is None:
                raise ValueError(f"day {day.date}: index benchmark requested but none supplied")
            b = float(day.benchmark_return)
        else:
            avail = [r for r in day.next_returns.values() if np.isfinite(r)]
            b = float(np.mean(avail)) if avail else 0.0

        dates.append(day.date)
        rets.append(net)
        bench.append(b)
        turns.append(turnover)
        holdings.append(held)
        prev_held = cur

    rets = np.asarray(rets)
    bench = np.asarray(bench)
    excess = rets - bench
    report = BacktestReport(
        dates=dates,
        portfolio_returns=rets,
        benchmark_returns=bench,
        excess_returns=excess,
        cumulative=np.cumprod(1.0 + rets) - 1.0,
        benchmark_cumulative=np.cumprod(1.0 + bench) - 1.0,
        turnover=np.asarray(turns),
        ar=annualized_return(excess),
        ir=information_ratio(excess) if len(dates) >= 2 else 0.0,
        holdings=holdings,
    )
    return report


def export_curves(report: BacktestReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["date", "portfolio_return", "excess_return", "cumulative", "benchmark_cumulative"]
        )
        for i, date in enumerate(report.dates):
            writer.writerow([
                date,
                f"{report.portfolio_returns[i]:.12g}",
                f"{report.excess_returns[i]:.12g}",
                f"{report.cumulative[i]:.12g}",
                f"{report.benchmark_cumulative[i]:.12g}",
            ])
