"""Panel-data ingestion, labels, cross-sectional normalization, window
building, market features, and a synthetic generator with planted signal.

Conventions used throughout:
- all day offsets are trading-day (row) offsets, never calendar arithmetic
- z-scores use the population standard deviation
- missing data excludes a stock from a sample; values are never imputed
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger("fluctrend.data")

OHLCV_COLUMNS = ["date", "symbol", "open", "high", "low", "close", "volume"]

BUILTIN_RETURN_LAGS = (1, 5, 10, 20)
BUILTIN_MA_WINDOWS = (5, 10, 20, 30, 60)
BUILTIN_VOL_WINDOWS = (5, 10, 20)
BUILTIN_VOLUME_ZSCORE_WINDOW = 20
BUILTIN_WARMUP = 61  # longest lookback (60-day MA on 1-day returns) + 1

DEFAULT_MARKET_INTERVALS = (5, 10, 20, 30, 60)


class DataError(ValueError):
    pass


@dataclass
class PanelDataset:
    """Aligned (date x symbol) panel. NaN marks an absent observation."""

    dates: list[str]
    symbols: list[str]
    closes: np.ndarray  # [n_dates, n_symbols]
    features: np.ndarray | None = None  # [n_dates, n_symbols, F]
    ohlcv: np.ndarray | None = None  # [n_dates, n_symbols, 5] open/high/low/close/volume

    @property
    def n_features(self) -> int:
        if self.features is None:
            raise DataError("dataset has no feature matrix; compute or load features first")
        return self.features.shape[2]


@dataclass
class MarketSeries:
    dates: list[str]
    levels: np.ndarray  # [n_dates, n_indices], positive


@dataclass
class Sample:
    date: str
    date_index: int
    symbols: list[str]
    features: np.ndarray  # [S, T, F]
    market: np.ndarray  # [T * k_c, M]
    labels: np.ndarray  # [S], cross-sectionally z-scored
    raw_labels: np.ndarray  # [S]


@dataclass
class SampleSet:
    samples: list[Sample]
    splits: list[str]  # per-sample: train | valid | test
    excluded_days: list[tuple[str, str]] = field(default_factory=list)  # (date, reason)

    def split(self, name: str) -> list[Sample]:
        return [s for s, sp in zip(self.samples, self.splits) if sp == name]


# ---------------------------------------------------------------------------
# CSV ingestion


def _parse_rows(path: str):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, header row required")
        yield [h.strip() for h in header]
        yield from reader


def load_panel_csv(path: str) -> PanelDataset:
    """Load either schema: date,symbol,open,high,low,close,volume (OHLCV)
    or date,symbol,close,f0..f{F-1} (precomputed features)."""
    rows = _parse_rows(path)
    header = next(rows)
    if header[:7] == OHLCV_COLUMNS:
        mode, value_cols = "ohlcv", header[2:]
    elif header[:3] == ["date", "symbol", "close"] and all(
        c == f"f{i}" for i, c in enumerate(header[3:])
    ) and len(header) > 3:
        mode, value_cols = "precomputed", header[2:]
    else:
        raise DataError(
            f"{path}: unrecognized header {header}; expected "
            f"{OHLCV_COLUMNS} or date,symbol,close,f0..fN"
        )

    records: dict[tuple[str, str], list[float]] = {}
    for row_no, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{row_no}: expected {len(header)} columns, got {len(row)}")
        date, symbol = row[0].strip(), row[1].strip()
        key = (date, symbol)
        if key in records:
            raise DataError(f"{path}:{row_no}: duplicate (date, symbol) row for {key}")
        try:
            values = [float(v) for v in row[2:]]
        except ValueError as e:
            raise DataError(f"{path}:{row_no}: unparseable numeric value ({e})") from None
        if not all(np.isfinite(values)):
            raise DataError(f"{path}:{row_no}: non-finite value")
        records[key] = values

    dates = sorted({d for d, _ in records})
    symbols = sorted({s for _, s in records})
    d_idx = {d: i for i, d in enumerate(dates)}
    s_idx = {s: i for i, s in enumerate(symbols)}

    closes = np.full((len(dates), len(symbols)), np.nan)
    if mode == "ohlcv":
        ohlcv = np.full((len(dates), len(symbols), 5), np.nan)
        for (d, s), vals in records.items():
            ohlcv[d_idx[d], s_idx[s]] = vals
            closes[d_idx[d], s_idx[s]] = vals[3]
        _check_closes(closes, path)
        return PanelDataset(dates, symbols, closes, ohlcv=ohlcv)
    n_feat = len(value_cols) - 1
    features = np.full((len(dates), len(symbols), n_feat), np.nan)
    for (d, s), vals in records.items():
        closes[d_idx[d], s_idx[s]] = vals[0]
        features[d_idx[d], s_idx[s]] = vals[1:]
    _check_closes(closes, path)
    return PanelDataset(dates, symbols, closes, features=features)


def _check_closes(closes: np.ndarray, path: str) -> None:
    present = ~np.isnan(closes)
    if np.any(closes[present] <= 0):
        raise DataError(f"{path}: non-positive close price")


def export_panel_csv(ds: PanelDataset, path: str) -> None:
    """Write the precomputed-feature schema at 12 significant digits."""
    if ds.features is None:
        raise DataError("export requires a feature matrix")
    n_feat = ds.features.shape[2]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "symbol", "close"] + [f"f{i}" for i in range(n_feat)])
        for di, date in enumerate(ds.dates):
            for si, sym in enumerate(ds.symbols):
                if np.isnan(ds.closes[di, si]):
                    continue
                row = [date, sym, f"{ds.closes[di, si]:.12g}"]
                row += [f"{v:.12g}" for v in ds.features[di, si]]
                writer.writerow(row)


def load_market_csv(path: str) -> MarketSeries:
    rows = _parse_rows(path)
    header = next(rows)
    if header[0] != "date" or len(header) < 2:
        raise DataError(f"{path}: market header must be date,idx0,idx1,... got {header}")
    dates, levels = [], []
    for row_no, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{row_no}: expected {len(header)} columns")
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError as e:
            raise DataError(f"{path}:{row_no}: unparseable numeric value ({e})") from None
        if any(v <= 0 or not np.isfinite(v) for v in vals):
            raise DataError(f"{path}:{row_no}: index levels must be positive and finite")
        dates.append(row[0].strip())
        levels.append(vals)
    if dates != sorted(dates):
        raise DataError(f"{path}: market dates must be strictly increasing")
    return MarketSeries(dates, np.asarray(levels))


def export_market_csv(ms: MarketSeries, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + [f"idx{i}" for i in range(ms.levels.shape[1])])
        for date, row in zip(ms.dates, ms.levels):
            writer.writerow([date] + [f"{v:.12g}" for v in row])


# ---------------------------------------------------------------------------
# features and labels


def compute_builtin_features(ds: PanelDataset) -> np.ndarray:
    """13 OHLCV-derived features per (date, symbol): k-day returns, close
    over moving average, rolling 1-day-return volatility, volume z-score.
    NaN until the 61-day warmup has passed."""
    if ds.ohlcv is None:
        raise DataError("builtin features require OHLCV input data")
    n_dates, n_syms = ds.closes.shape
    close = ds.closes
    volume = ds.ohlcv[:, :, 4]
    n_feat = len(BUILTIN_RETURN_LAGS) + len(BUILTIN_MA_WINDOWS) + len(BUILTIN_VOL_WINDOWS) + 1
    out = np.full((n_dates, n_syms, n_feat), np.nan)
    ret1 = np.full_like(close, np.nan)
    ret1[1:] = close[1:] / close[:-1] - 1.0
    for t in range(BUILTIN_WARMUP, n_dates):
        col = 0
        for lag in BUILTIN_RETURN_LAGS:
            out[t, :, col] = close[t] / close[t - lag] - 1.0
            col += 1
        for w in BUILTIN_MA_WINDOWS:
            out[t, :, col] = close[t] / close[t - w + 1 : t + 1].mean(axis=0)
            col += 1
        for w in BUILTIN_VOL_WINDOWS:
            out[t, :, col] = ret1[t - w + 1 : t + 1].std(axis=0)
            col += 1
        vol_win = volume[t - BUILTIN_VOLUME_ZSCORE_WINDOW + 1 : t + 1]
        std = vol_win.std(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[t, :, col] = (volume[t] - vol_win.mean(axis=0)) / std
    return out


def compute_raw_labels(ds: PanelDataset, horizon: int) -> np.ndarray:
    """Forward return (c_{t+d} - c_{t+1}) / c_{t+1} per (date, symbol);
    NaN where either close is missing or out of range."""
    n_dates, n_syms = ds.closes.shape
    labels = np.full((n_dates, n_syms), np.nan)
    for t in range(n_dates - horizon):
        c_entry = ds.closes[t + 1]
        c_exit = ds.closes[t + horizon]
        labels[t] = (c_exit - c_entry) / c_entry
    return labels


def zscore_cross_section(values: np.ndarray) -> np.ndarray:
    """(v - mean) / population-std across one day's stocks."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise DataError(f"z-score needs at least 2 values, got {values.size}")
    std = values.std()
    if std <= 1e-12:
        raise DataError("z-score undefined: zero cross-sectional variance")
    return (values - values.mean()) / std


def build_market_features(
    ms: MarketSeries, intervals: tuple[int, ...] = DEFAULT_MARKET_INTERVALS
) -> np.ndarray:
    """Per index and interval d': trailing d'-day return, mean of 1-day
    returns, population std of 1-day returns. M = n_indices * 3 * len(d').
    NaN before max(d') days of history exist."""
    n_dates, n_idx = ms.levels.shape
    warmup = max(intervals)
    m = n_idx * 3 * len(intervals)
    out = np.full((n_dates, m), np.nan)
    ret1 = np.full_like(ms.levels, np.nan)
    ret1[1:] = ms.levels[1:] / ms.levels[:-1] - 1.0
    for t in range(warmup, n_dates):
        cols = []
        for i in range(n_idx):
            for dp in intervals:
                window = ret1[t - dp + 1 : t + 1, i]
                cols += [
                    ms.levels[t, i] / ms.levels[t - dp, i] - 1.0,
                    window.mean(),
                    window.std(),
                ]
        out[t] = cols
    return out


# ---------------------------------------------------------------------------
# window building


@dataclass
class WindowConfig:
    lookback: int = 8
    horizon: int = 5
    market_kernel: int = 2
    market_intervals: tuple[int, ...] = DEFAULT_MARKET_INTERVALS
    train_frac: float = 0.75
    valid_frac: float = 0.05


def build_windows(ds: PanelDataset, ms: MarketSeries, cfg: WindowConfig) -> SampleSet:
    """One Sample per eligible date, chronological, labels z-scored within
    the day. Stocks missing any in-window feature or either label close are
    excluded from that day only."""
    if ds.dates != ms.dates:
        raise DataError("panel and market date axes are not aligned")
    if ds.features is None:
        features = compute_builtin_features(ds)
    else:
        features = ds.features
    market = build_market_features(ms, cfg.market_intervals)
    raw_labels = compute_raw_labels(ds, cfg.horizon)

    n_dates = len(ds.dates)
    t_len, k_c = cfg.lookback, cfg.market_kernel
    mkt_window = t_len * k_c
    market_ok = ~np.isnan(market).any(axis=1)

    samples: list[Sample] = []
    excluded: list[tuple[str, str]] = []
    for t in range(n_dates):
        w_lo = t - t_len + 1
        m_lo = t - mkt_window + 1
        if w_lo < 0 or m_lo < 0 or t + cfg.horizon >= n_dates:
            continue
        if not market_ok[m_lo : t + 1].all():
            continue
        feat_win = features[w_lo : t + 1]  # [T, n_syms, F]
        have_features = ~np.isnan(feat_win).any(axis=(0, 2))
        have_label = ~np.isnan(raw_labels[t])
        keep = np.flatnonzero(have_features & have_label)
        if keep.size < 2:
            excluded.append((ds.dates[t], "fewer than 2 complete stocks"))
            continue
        raw = raw_labels[t, keep]
        if raw.std() <= 1e-12:
            excluded.append((ds.dates[t], "zero label variance"))
            continue
        samples.append(
            Sample(
                date=ds.dates[t],
                date_index=t,
                symbols=[ds.symbols[i] for i in keep],
                features=np.ascontiguousarray(feat_win[:, keep].transpose(1, 0, 2)),
                market=market[m_lo : t + 1].copy(),
                labels=zscore_cross_section(raw),
                raw_labels=raw.copy(),
            )
        )
    if not samples:
        raise DataError("no eligible sample dates; check lookback/horizon/warmup vs data span")
    for date, reason in excluded:
        log.info("excluded day %s: %s", date, reason)

    n = len(samples)
    n_train = int(round(n * cfg.train_frac))
    n_valid = int(round(n * cfg.valid_frac))
    splits = ["train"] * n_train + ["valid"] * n_valid + ["test"] * (n - n_train - n_valid)
    splits = splits[:n]
    return SampleSet(samples, splits, excluded)


# ---------------------------------------------------------------------------
# synthetic data


def synth_generate(
    seed: int,
    n_stocks: int = 20,
    n_dates: int = 300,
    signal_strength: float = 0.0,
    n_features: int = 5,
    n_indices: int = 1,
    horizon: int = 5,
    feature_noise: float = 0.25,
) -> tuple[PanelDataset, MarketSeries]:
    """Random-walk-plus-AR(1) price panel with one planted feature.

    Recipe (deterministic given seed):
    - log price = cumulative drift+trend walk plus an AR(1) component,
      closes are its exponential
    - feature f0 at date t equals signal_strength * standardized future
      horizon-day return (the same quantity the label is built from) plus
      feature_noise * N(0, 1); remaining features are pure noise
    - market index levels are independent exponential random walks
    """
    rng = np.random.default_rng([seed, 100])
    drift = rng.normal(0.0, 0.0004, size=n_stocks)
    trend_steps = rng.normal(0.0, 0.004, size=(n_dates, n_stocks)) + drift
    log_trend = np.cumsum(trend_steps, axis=0)
    ar = np.zeros((n_dates, n_stocks))
    shocks = rng.normal(0.0, 0.01, size=(n_dates, n_stocks))
    for t in range(1, n_dates):
        ar[t] = 0.5 * ar[t - 1] + shocks[t]
    closes = 100.0 * np.exp(log_trend + ar)

    symbols = [f"SYN{i:03d}" for i in range(n_stocks)]
    dates = [_synthetic_date(i) for i in range(n_dates)]

    ds_tmp = PanelDataset(dates, symbols, closes)
    raw = compute_raw_labels(ds_tmp, horizon)
    scale = np.nanstd(raw)
    planted = np.where(np.isnan(raw), 0.0, raw / max(scale, 1e-12))

    features = rng.normal(0.0, 1.0, size=(n_dates, n_stocks, n_features))
    features[:, :, 0] = signal_strength * planted + feature_noise * rng.normal(
        0.0, 1.0, size=(n_dates, n_stocks)
    )

    idx_steps = rng.normal(0.0002, 0.008, size=(n_dates, n_indices))
    levels = 1000.0 * np.exp(np.cumsum(idx_steps, axis=0))
    return (
        PanelDataset(dates, symbols, closes, features=features),
        MarketSeries(dates, levels),
    )


def _synthetic_date(i: int) -> str:
    # synthetic trading calendar: sequential ISO dates starting 2020-01-01
    import datetime

    return (datetime.date(2020, 1, 1) + datetime.timedelta(days=i)).isoformat()
