"""Daily cross-sectional ranking metrics: Pearson/Spearman correlations and
their information ratios (mean over days divided by population std)."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Sample
from .model import DualBranchModel
from .tensor import Tensor, no_grad

log = logging.getLogger("fluctrend.evaluate")


class MetricError(ValueError):
    pass


@dataclass
class DailyScores:
    date: str
    symbols: list[str]
    scores: np.ndarray
    labels: np.ndarray


@dataclass
class MetricsReport:
    ic: float
    icir: float
    rank_ic: float
    rank_icir: float
    n_days: int
    n_dropped: int
    dates: list[str] = field(default_factory=list)
    daily_ic: list[float] = field(default_factory=list)
    daily_rank_ic: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "ic": self.ic,
                "icir": self.icir,
                "rank_ic": self.rank_ic,
                "rank_icir": self.rank_icir,
                "n_days": self.n_days,
                "n_dropped": self.n_dropped,
            },
            sort_keys=True,
        )


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"pearson needs equal-length vectors, got {x.shape} vs {y.shape}")
    if x.size < 2:
        raise MetricError("pearson needs at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc)) * math.sqrt(float(yc @ yc))
    if denom <= 0.0:
        raise MetricError("pearson undefined: zero variance input")
    return float(xc @ yc) / denom


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    return pearson(average_ranks(x), average_ranks(y))


def aggregate(days: list[DailyScores]) -> MetricsReport:
    """Mean daily correlation and its information ratio. Days with
    degenerate variance are dropped (counted), never coerced to zero."""
    dates: list[str] = []
    ics: list[float] = []
    rics: list[float] = []
    dropped = 0
    for day in days:
        try:
            ic = pearson(day.scores, day.labels)
            ric = spearman(day.scores, day.labels)
        except MetricError as e:
            dropped += 1
            log.info("dropped day %s from metrics: %s", day.date, e)
            continue
        dates.append(day.date)
        ics.append(ic)
        rics.append(ric)
    if len(ics) < 2:
        raise MetricError(f"need at least 2 retained days, have {len(ics)}")

    def ir(series: list[float]) -> float:
        arr = np.asarray(series)
        std = arr.std()
        if std <= 0.0:
            log.warning("zero variance in daily correlation series; IR reported as inf")
            return math.inf if arr.mean() >= 0 else -math.inf
        return float(arr.mean() / std)

    return MetricsReport(
        ic=float(np.mean(ics)),
        icir=ir(ics),
        rank_ic=float(np.mean(rics)),
        rank_icir=ir(rics),
        n_days=len(ics),
        n_dropped=dropped,
        dates=dates,
        daily_ic=ics,
        daily_rank_ic=rics,
    )


def score_samples(model: DualBranchModel, samples: list[Sample]) -> list[DailyScores]:
    """Model predictions per day, paired with the day's normalized labels."""
    out = []
    with no_grad():
        for s in samples:
            preds = model.forward(Tensor(s.features), Tensor(s.market)).predictions
            out.append(DailyScores(s.date, list(s.symbols), preds.data.copy(), s.labels.copy()))
    return out


def export_daily_ic_csv(report: MetricsReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "ic", "rank_ic"])
        for date, ic, ric in zip(report.dates, report.daily_ic, report.daily_rank_ic):
            writer.writerow([date, f"{ic:.12g}", f"{ric:.12g}"])
