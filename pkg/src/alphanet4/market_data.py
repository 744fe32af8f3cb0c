"""Panel ingestion, the 13 derived model inputs, data images, and labels.

The 13 inputs, in canonical order (every downstream index contract depends
on this order):

    div_open_close, div_high_close, div_low_close, close, div_vwap_close,
    volume_sqrt, return, turnover, div_close_freeturn, div_price_turnover,
    div_volume_low, div_low_high, div_vwap_close_2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GapError, HistoryError, ParameterError
from .panel import FUNDAMENTAL_COLUMNS, Panel, StockSeries

FEATURE_NAMES = (
    "div_open_close",
    "div_high_close",
    "div_low_close",
    "close",
    "div_vwap_close",
    "volume_sqrt",
    "return",
    "turnover",
    "div_close_freeturn",
    "div_price_turnover",
    "div_volume_low",
    "div_low_high",
    "div_vwap_close_2",
)

N_FEATURES = len(FEATURE_NAMES)

# Longest default image: d=22 with 20 stride-1 placements, plus one row for
# the trailing `return`.
DEFAULT_LOOKBACK = 22 + 19 + 1

LABEL_HORIZON = 10


@dataclass
class PanelRow:
    """One stock-day record."""

    stock_id: str
    date: int
    open: float
    high: float
    low: float
    close: float
    vwap: float
    volume: float
    turnover: float
    free_turnover: float
    market_cap: float
    industry_id: int
    excluded: bool
    fundamentals: dict[str, float] = field(default_factory=dict)


@dataclass
class DataImage:
    """13 x k matrix of derived inputs for one stock ending at date t."""

    stock_id: str
    end_date: int
    values: np.ndarray

    @property
    def k(self) -> int:
        return self.values.shape[1]


@dataclass
class Label:
    stock_id: str
    date: int
    raw_forward_return: float
    residual_return: float | None = None


def row_at(series: StockSeries, i: int) -> PanelRow:
    c = series.columns
    fundamentals = {
        name: float(c[name][i]) for name in FUNDAMENTAL_COLUMNS if name in c
    }
    return PanelRow(
        stock_id=series.stock_id,
        date=int(series.dates[i]),
        open=float(c["open"][i]),
        high=float(c["high"][i]),
        low=float(c["low"][i]),
        close=float(c["close"][i]),
        vwap=float(c["vwap"][i]),
        volume=float(c["volume"][i]),
        turnover=float(c["turnover"][i]),
        free_turnover=float(c["free_turnover"][i]),
        market_cap=float(c["market_cap"][i]),
        industry_id=series.industry_id,
        excluded=bool(series.excluded[i]),
        fundamentals=fundamentals,
    )


def compute_input_features(row: PanelRow, prev_close: float) -> np.ndarray:
    """Derive the 13 canonical inputs for one stock-day.

    Requires positive prices and nonzero turnover denominators; callers mark
    rows violating that as unusable instead of calling this.
    """
    if prev_close <= 0:
        raise ParameterError("prev_close must be positive")
    for name in ("open", "high", "low", "close", "vwap"):
        if getattr(row, name) <= 0:
            raise ParameterError(f"{name} must be positive")
    if row.turnover == 0 or row.free_turnover == 0:
        raise ParameterError("zero turnover denominators make the row unusable")
    return np.array(
        [
            (row.open - row.close) / row.close,
            (row.high - row.close) / row.close,
            (row.low - row.close) / row.close,
            row.close,
            (row.vwap - row.close) / row.close,
            row.volume ** 0.125,
            row.close / prev_close - 1.0,
            row.turnover,
            row.close / row.free_turnover,
            (row.open * row.free_turnover) / (row.turnover * row.close),
            row.volume / row.low,
            row.low / row.high,
            row.vwap / row.close,
        ]
    )


def stock_feature_matrix(series: StockSeries) -> np.ndarray:
    """13 x (n-1) feature matrix for rows 1..n-1 (row 0 lacks a prior close).

    Cells in unusable rows (or rows following one) are NaN.
    """
    c = series.columns
    o, h, lo, cl, vw = (c[k] for k in ("open", "high", "low", "close", "vwap"))
    vol, to, fto = c["volume"], c["turnover"], c["free_turnover"]
    n = len(series)
    with np.errstate(divide="ignore", invalid="ignore"):
        full = np.stack(
            [
                (o - cl) / cl,
                (h - cl) / cl,
                (lo - cl) / cl,
                cl,
                (vw - cl) / cl,
                vol ** 0.125,
                np.concatenate([[np.nan], cl[1:] / cl[:-1] - 1.0]),
                to,
                cl / fto,
                (o * fto) / (to * cl),
                vol / lo,
                lo / h,
                vw / cl,
            ]
        )
    bad = ~series.usable
    bad_with_prev = bad.copy()
    bad_with_prev[1:] |= bad[:-1]
    full[:, bad_with_prev] = np.nan
    return full[:, 1:]


def assemble_data_image(
    panel: Panel,
    stock_id: str,
    t: int,
    d: int,
    seq_len: int = 20,
    stride: int = 1,
) -> DataImage:
    """13 x k image ending at date t, k = d + (seq_len - 1) * stride."""
    if d < 1 or seq_len < 1 or stride < 1:
        raise ParameterError("d, seq_len, and stride must be >= 1")
    series = panel[stock_id]
    k = d + (seq_len - 1) * stride
    i = series.position(t)
    if i is None or i - k < 0:
        raise HistoryError(f"{stock_id}: needs {k + 1} rows ending at {t}")
    if series.dates[i - k] != t - k:
        raise HistoryError(f"{stock_id}: rows ending at {t} are not consecutive")
    lo, hi = i - k, i + 1
    if not series.usable[lo:hi].all():
        raise GapError(f"{stock_id}: unusable row inside [{t - k}, {t}]")
    values = _window_features(series, lo, hi)
    return DataImage(stock_id=stock_id, end_date=t, values=values)


def _window_features(series: StockSeries, lo: int, hi: int) -> np.ndarray:
    """Feature columns for rows lo+1..hi-1 (row lo supplies the prior close)."""
    c = series.columns
    o, h, low, cl, vw = (c[k][lo:hi] for k in ("open", "high", "low", "close", "vwap"))
    vol, to, fto = (c[k][lo:hi] for k in ("volume", "turnover", "free_turnover"))
    ret = cl[1:] / cl[:-1] - 1.0
    o, h, low, cl, vw, vol, to, fto = (
        a[1:] for a in (o, h, low, cl, vw, vol, to, fto)
    )
    return np.stack(
        [
            (o - cl) / cl,
            (h - cl) / cl,
            (low - cl) / cl,
            cl,
            (vw - cl) / cl,
            vol ** 0.125,
            ret,
            to,
            cl / fto,
            (o * fto) / (to * cl),
            vol / low,
            low / h,
            vw / cl,
        ]
    )


def build_label(panel: Panel, stock_id: str, t: int, horizon: int = LABEL_HORIZON) -> Label:
    """Forward close-to-close return over `horizon` trading days."""
    series = panel[stock_id]
    i = series.position(t)
    j = series.position(t + horizon)
    if i is None or j is None:
        raise HistoryError(f"{stock_id}: close missing at {t} or {t + horizon}")
    close = series.columns["close"]
    return Label(stock_id, t, float(close[j] / close[i] - 1.0))


def filter_universe(panel: Panel, t: int, lookback: int = DEFAULT_LOOKBACK) -> list[str]:
    """Tradable stocks at date t.

    Drops stocks excluded at t and stocks with any missing or unusable row
    in the `lookback` rows ending at t.
    """
    out = []
    for sid in panel.stock_ids:
        series = panel[sid]
        i = series.position(t)
        if i is None or series.excluded[i]:
            continue
        lo = i - lookback + 1
        if lo < 0 or series.dates[lo] != t - lookback + 1:
            continue
        if not series.usable[lo : i + 1].all():
            continue
        out.append(sid)
    return out


# --- synthetic universe -----------------------------------------------------

# Planted alpha: each day's cross-sectional drift adds
#     alpha_strength * SIGNAL_SCALE * g(t-1)
# to the next day's return, where
#     g = 0.6 * zscore(mean of last 5 returns) - 0.4 * zscore(turnover(t) -
#         mean turnover over the prior 20 days)
# and zscore is cross-sectional. Both components are visible to the model
# through the `return` and `turnover` input rows.
SIGNAL_SCALE = 0.013
SIGNAL_WARMUP = 21

_FUNDAMENTAL_BASES = {
    "epibs": (0.05, 0.02),
    "etop": (0.05, 0.02),
    "cetop": (0.06, 0.02),
    "sgro": (0.10, 0.05),
    "egro": (0.08, 0.05),
    "egibs": (0.09, 0.04),
    "egibs_s": (0.07, 0.04),
    "book_to_price": (0.60, 0.20),
    "mlev": (0.40, 0.15),
    "dtoa": (0.45, 0.15),
    "blev": (0.35, 0.15),
}


def _cross_zscore(x: np.ndarray) -> np.ndarray:
    mu = x.mean()
    sd = x.std()
    if sd == 0:
        return np.zeros_like(x)
    return (x - mu) / sd


def _signal_components(ret_window: np.ndarray, turn_now: np.ndarray, turn_window: np.ndarray):
    """Raw signal pieces per stock: 5-day mean return, turnover jump."""
    mom5 = ret_window.mean(axis=1)
    dturn = turn_now - turn_window.mean(axis=1)
    return mom5, dturn


def _combine_signal(mom5: np.ndarray, dturn: np.ndarray) -> np.ndarray:
    return 0.6 * _cross_zscore(mom5) - 0.4 * _cross_zscore(dturn)


def planted_signal(panel: Panel, t: int) -> dict[str, float]:
    """The generator's g(t) recomputed from panel data; keyed by stock_id.

    Only defined for dates with full warmup history on every stock.
    """
    rets, turns_now, turns_hist, sids = [], [], [], []
    for sid in panel.stock_ids:
        series = panel[sid]
        i = series.position(t)
        if i is None or i < SIGNAL_WARMUP:
            continue
        close = series.columns["close"]
        r = close[i - 4 : i + 1] / close[i - 5 : i] - 1.0
        turn = series.columns["turnover"]
        rets.append(r)
        turns_now.append(turn[i])
        turns_hist.append(turn[i - 20 : i])
        sids.append(sid)
    if not sids:
        return {}
    mom5, dturn = _signal_components(
        np.array(rets), np.array(turns_now), np.array(turns_hist)
    )
    g = _combine_signal(mom5, dturn)
    return {sid: float(v) for sid, v in zip(sids, g)}


def generate_synthetic_panel(
    seed: int,
    n_stocks: int,
    n_days: int,
    alpha_strength: float,
    n_industries: int = 8,
    excluded_frac: float = 0.02,
    with_fundamentals: bool = False,
) -> Panel:
    """Geometric-random-walk panel with factor structure and a planted signal.

    Deterministic given `seed`. Cross-sectional returns carry market,
    industry, and size factor moves plus idiosyncratic noise; when
    alpha_strength > 0 the documented signal g is added to the next day's
    drift (see SIGNAL_SCALE above).
    """
    if n_stocks < 2:
        raise ParameterError("n_stocks must be >= 2 (cross-sections need pairs)")
    if n_days < 60:
        raise ParameterError("n_days must be >= 60")
    if not 0.0 <= alpha_strength <= 1.0:
        raise ParameterError("alpha_strength must lie in [0, 1]")
    if n_industries < 1 or n_industries > n_stocks:
        raise ParameterError("n_industries must lie in [1, n_stocks]")
    rng = np.random.default_rng(np.random.PCG64(seed))

    industry = np.arange(n_stocks) % n_industries
    beta = rng.normal(1.0, 0.3, n_stocks)
    ln_shares = rng.normal(18.0, 1.0, n_stocks)
    shares = np.exp(ln_shares)
    free_float = rng.uniform(0.3, 0.9, n_stocks)
    close0 = np.exp(rng.normal(np.log(20.0), 0.5, n_stocks))
    size_loading = _cross_zscore(ln_shares + np.log(close0))
    turn_base = np.exp(rng.normal(np.log(0.015), 0.4, n_stocks))

    close = np.empty((n_days, n_stocks))
    rets = np.zeros((n_days, n_stocks))
    turnover = np.empty((n_days, n_stocks))
    close[0] = close0
    turnover[0] = turn_base * np.exp(rng.normal(0.0, 0.35, n_stocks))

    for t in range(1, n_days):
        mkt = rng.normal(0.0003, 0.009)
        ind = rng.normal(0.0, 0.006, n_industries)
        sz = rng.normal(0.0, 0.004)
        idio = rng.normal(0.0, 0.015, n_stocks)
        r = beta * mkt + ind[industry] + size_loading * sz + idio
        if alpha_strength > 0.0 and t > SIGNAL_WARMUP:
            mom5, dturn = _signal_components(
                rets[t - 5 : t].T, turnover[t - 1], turnover[t - 21 : t - 1].T
            )
            r += alpha_strength * SIGNAL_SCALE * _combine_signal(mom5, dturn)
        r = np.clip(r, -0.3, 0.4)
        rets[t] = r
        close[t] = close[t - 1] * (1.0 + r)
        turnover[t] = turn_base * np.exp(rng.normal(0.0, 0.35, n_stocks))

    open_gap = rng.normal(0.0, 0.004, (n_days, n_stocks))
    open_ = np.vstack([close[0] * (1.0 + open_gap[0]), close[:-1] * (1.0 + open_gap[1:])])
    hi_base = np.maximum(open_, close)
    lo_base = np.minimum(open_, close)
    high = hi_base * (1.0 + np.abs(rng.normal(0.0, 0.003, (n_days, n_stocks))))
    low = lo_base * (1.0 - np.abs(rng.normal(0.0, 0.003, (n_days, n_stocks))))
    vwap = low + rng.uniform(0.25, 0.75, (n_days, n_stocks)) * (high - low)
    volume = turnover * shares
    market_cap = close * shares
    excluded = rng.random((n_days, n_stocks)) < excluded_frac

    fundamentals: dict[str, np.ndarray] = {}
    if with_fundamentals:
        for name, (base, scale) in _FUNDAMENTAL_BASES.items():
            level = rng.normal(base, scale, n_stocks)
            steps = rng.normal(0.0, scale * 0.01, (n_days, n_stocks))
            fundamentals[name] = level + np.cumsum(steps, axis=0)

    width = len(str(n_stocks - 1))
    series = {}
    dates = np.arange(n_days, dtype=np.int64)
    for n in range(n_stocks):
        sid = f"S{n:0{width}d}"
        columns = {
            "open": open_[:, n],
            "high": high[:, n],
            "low": low[:, n],
            "close": close[:, n],
            "vwap": vwap[:, n],
            "volume": volume[:, n],
            "turnover": turnover[:, n],
            "free_turnover": turnover[:, n] / free_float[n],
            "market_cap": market_cap[:, n],
        }
        for name, arr in fundamentals.items():
            columns[name] = arr[:, n]
        series[sid] = StockSeries(
            sid, dates.copy(), columns, int(industry[n]), excluded[:, n].copy()
        )
    return Panel(series)
