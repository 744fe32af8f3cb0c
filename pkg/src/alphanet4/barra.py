"""CNE5-style exposures, constrained cross-sectional regression, and label
neutralization.

Only the return-decomposition half of the risk model is implemented: per
date, excess returns are split into country + industry + style factor
returns plus stock residuals, and the residual becomes the fitting target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BetaError,
    DomainError,
    HistoryError,
    LogDomainError,
    ParameterError,
    RegressionError,
)
from .panel import Panel

logger = logging.getLogger(__name__)

PRICE_STYLES = (
    "beta",
    "momentum",
    "size",
    "residual_volatility",
    "liquidity",
    "nonlinear_size",
)

FUNDAMENTAL_STYLES = ("earnings_yield", "growth", "book_to_price", "leverage")

EARNINGS_YIELD_WEIGHTS = {"epibs": 0.68, "etop": 0.11, "cetop": 0.21}
GROWTH_WEIGHTS = {"sgro": 0.47, "egro": 0.24, "egibs": 0.18, "egibs_s": 0.11}
LEVERAGE_WEIGHTS = {"mlev": 0.38, "dtoa": 0.35, "blev": 0.27}
LIQUIDITY_WEIGHTS = (0.35, 0.35, 0.30)  # STOM, STOQ, STOA

TURNOVER_FLOOR = 1e-12


@dataclass(frozen=True)
class StyleConfig:
    """Window and blend parameters for the style factors.

    Defaults are conventional; the source model never pins them down.
    """

    beta_window: int = 252
    beta_half_life: int = 63
    momentum_window: int = 252  # T
    momentum_lag: int = 21  # L
    momentum_half_life: int = 126
    dastd_window: int = 252
    dastd_half_life: int = 63
    cmra_months: int = 12
    cmra_month_len: int = 21
    resvol_weights: tuple[float, float, float] = (0.74, 0.16, 0.10)
    liquidity_month_len: int = 21
    liquidity_quarter_months: int = 3
    liquidity_year_months: int = 12
    riskfree: float = 0.0
    styles: tuple[str, ...] = PRICE_STYLES
    use_fundamentals: bool = False

    @property
    def min_history(self) -> int:
        """Rows of history an exposure date needs (plus one for returns)."""
        need = [
            self.beta_window,
            self.momentum_window + self.momentum_lag,
            self.dastd_window,
            self.cmra_months * self.cmra_month_len,
            self.liquidity_month_len * self.liquidity_year_months,
        ]
        return max(need) + 1


@dataclass
class ExposureMatrix:
    date: int
    stock_ids: list[str]
    matrix: np.ndarray  # N x (1 + P_present + Q)
    factor_names: list[str]
    industry_ids: list[int]  # industries with columns, in column order
    cap_weights: np.ndarray  # market-cap shares s_n (sum 1)

    @property
    def n_industries(self) -> int:
        return len(self.industry_ids)

    @property
    def n_styles(self) -> int:
        return len(self.factor_names) - 1 - self.n_industries


@dataclass
class FactorReturns:
    date: int
    country: float
    industry: dict[int, float]
    style: dict[str, float]
    residuals: dict[str, float]


def ewma_weights(n: int, half_life: float) -> np.ndarray:
    """Normalized weights over n observations, newest last and heaviest."""
    age = np.arange(n - 1, -1, -1, dtype=float)
    w = 0.5 ** (age / half_life)
    return w / w.sum()


def style_beta(
    stock_returns: np.ndarray,
    market_returns: np.ndarray,
    riskfree: float,
    half_life: float,
) -> tuple[float, np.ndarray]:
    """EWMA-weighted regression slope of excess stock return on the market.

    Returns (beta, residual series) — the residuals feed HSIGMA.
    """
    y = np.asarray(stock_returns, dtype=float) - riskfree
    x = np.asarray(market_returns, dtype=float)
    if y.shape != x.shape or y.ndim != 1 or len(y) < 2:
        raise ParameterError("beta needs aligned 1-d return series of length >= 2")
    w = ewma_weights(len(y), half_life)
    xm = (w * x).sum()
    ym = (w * y).sum()
    sxx = (w * (x - xm) ** 2).sum()
    if sxx <= 0.0:
        raise BetaError("market return series has no variance under the weights")
    beta = float((w * (x - xm) * (y - ym)).sum() / sxx)
    alpha = ym - beta * xm
    resid = y - alpha - beta * x
    return beta, resid


def style_momentum(
    stock_returns: np.ndarray,
    riskfree: float,
    window: int,
    lag: int,
    half_life: float,
) -> float:
    """EWMA-weighted sum of lagged log excess returns.

    Skips the most recent `lag` returns, then weights the prior `window`
    returns (weights normalized to sum 1).
    """
    r = np.asarray(stock_returns, dtype=float)
    if len(r) < window + lag:
        raise HistoryError(f"momentum needs {window + lag} returns, got {len(r)}")
    if np.any(r <= -1.0) or riskfree <= -1.0:
        raise LogDomainError("returns <= -1 cannot be log-transformed")
    sl = r[len(r) - window - lag : len(r) - lag]
    ex = np.log1p(sl) - np.log1p(riskfree)
    return float((ewma_weights(window, half_life) * ex).sum())


def style_size(market_cap: float) -> float:
    """Log of total market value."""
    if market_cap <= 0.0:
        raise DomainError("market cap must be positive")
    return float(np.log(market_cap))


def dastd(excess_returns: np.ndarray, half_life: float) -> float:
    """EWMA standard deviation of excess returns."""
    r = np.asarray(excess_returns, dtype=float)
    w = ewma_weights(len(r), half_life)
    mu = (w * r).sum()
    return float(np.sqrt((w * (r - mu) ** 2).sum()))


def cmra(excess_returns: np.ndarray, months: int, month_len: int) -> float:
    """Range of cumulative monthly log excess returns, Z(0) = 0 included."""
    r = np.asarray(excess_returns, dtype=float)
    need = months * month_len
    if len(r) < need:
        raise HistoryError(f"CMRA needs {need} returns, got {len(r)}")
    if np.any(r <= -1.0):
        raise LogDomainError("returns <= -1 cannot be log-transformed")
    tail = np.log1p(r[len(r) - need :])
    monthly = tail.reshape(months, month_len).sum(axis=1)
    # Z(T) cumulates the most recent T months, newest first.
    z = np.concatenate([[0.0], np.cumsum(monthly[::-1])])
    return float(z.max() - z.min())


def style_residual_volatility(
    excess_returns: np.ndarray,
    beta_residuals: np.ndarray,
    config: StyleConfig,
) -> float:
    """Raw DASTD/CMRA/HSIGMA blend (cross-sectional de-collinearization with
    beta happens later, at exposure-matrix level)."""
    r = np.asarray(excess_returns, dtype=float)
    if len(r) < config.dastd_window:
        raise HistoryError("residual volatility needs a full DASTD window")
    wd, wc, wh = config.resvol_weights
    d = dastd(r[len(r) - config.dastd_window :], config.dastd_half_life)
    c = cmra(r, config.cmra_months, config.cmra_month_len)
    e = np.asarray(beta_residuals, dtype=float)
    h = float(np.sqrt(((e - e.mean()) ** 2).sum() / (len(e) - 1))) if len(e) > 1 else 0.0
    return wd * d + wc * c + wh * h


def style_liquidity(turnover: np.ndarray, config: StyleConfig) -> float:
    """0.35 * STOM + 0.35 * STOQ + 0.30 * STOA on log monthly turnover sums."""
    t = np.asarray(turnover, dtype=float)
    m = config.liquidity_month_len
    nq, na = config.liquidity_quarter_months, config.liquidity_year_months
    if len(t) < m * na:
        raise HistoryError(f"liquidity needs {m * na} rows, got {len(t)}")

    def log_sum(days: int, months: int) -> float:
        s = t[len(t) - days :].sum() / months
        return float(np.log(max(s, TURNOVER_FLOOR)))

    stom = log_sum(m, 1)
    stoq = log_sum(m * nq, nq)
    stoa = log_sum(m * na, na)
    w = LIQUIDITY_WEIGHTS
    return w[0] * stom + w[1] * stoq + w[2] * stoa


def style_fundamental_blends(fundamentals: dict[str, float]) -> dict[str, float]:
    """Fixed-weight composites; a factor is omitted when any input is absent."""
    out: dict[str, float] = {}
    specs = {
        "earnings_yield": EARNINGS_YIELD_WEIGHTS,
        "growth": GROWTH_WEIGHTS,
        "leverage": LEVERAGE_WEIGHTS,
    }
    for name, weights in specs.items():
        if all(k in fundamentals for k in weights):
            out[name] = sum(w * fundamentals[k] for k, w in weights.items())
        elif any(k in fundamentals for k in weights):
            missing = [k for k in weights if k not in fundamentals]
            logger.warning("%s omitted: missing inputs %s", name, missing)
    if "book_to_price" in fundamentals:
        out["book_to_price"] = fundamentals["book_to_price"]
    return out


def standardize_exposures(column: np.ndarray, cap_weights: np.ndarray) -> np.ndarray:
    """Cap-weighted mean 0, equal-weighted (population) std 1.

    Zero-variance columns come back as zeros.
    """
    x = np.asarray(column, dtype=float)
    s = np.asarray(cap_weights, dtype=float)
    if x.shape != s.shape or x.ndim != 1 or len(x) < 2:
        raise ParameterError("column and cap weights must align, length >= 2")
    s = s / s.sum()
    centered = x - (s * x).sum()
    sd = centered.std()
    if sd == 0.0:
        logger.warning("zero-variance style column zeroed")
        return np.zeros_like(x)
    return centered / sd


def weighted_residualize(y: np.ndarray, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Residual of a weighted regression of y on x (with intercept)."""
    w = weights / weights.sum()
    xm = (w * x).sum()
    ym = (w * y).sum()
    sxx = (w * (x - xm) ** 2).sum()
    if sxx == 0.0:
        return y - ym
    b = (w * (x - xm) * (y - ym)).sum() / sxx
    return y - ym - b * (x - xm)


def style_nonlinear_size(size_column: np.ndarray, cap_weights: np.ndarray) -> np.ndarray:
    """Cube the standardized size, strip its size component, standardize."""
    cube = np.asarray(size_column, dtype=float) ** 3
    resid = weighted_residualize(cube, size_column, np.asarray(cap_weights, dtype=float))
    if resid.std() == 0.0:
        return np.zeros_like(resid)
    return standardize_exposures(resid, cap_weights)


def market_return_series(panel: Panel) -> dict[int, float]:
    """Cap-weighted daily universe return, weights from the prior close."""
    out: dict[int, float] = {}
    per_stock = {}
    for s in panel:
        close = s.columns["close"]
        cap = s.columns["market_cap"]
        rets = close[1:] / close[:-1] - 1.0
        per_stock[s.stock_id] = (s.dates, rets, cap)
    for t in panel.dates[1:]:
        num = den = 0.0
        for dates, rets, cap in per_stock.values():
            i = int(np.searchsorted(dates, t))
            if i < len(dates) and dates[i] == t and i >= 1:
                num += cap[i - 1] * rets[i - 1]
                den += cap[i - 1]
        if den > 0.0:
            out[int(t)] = num / den
    return out


class BarraModel:
    """Builds exposures and runs the daily constrained regression."""

    def __init__(self, panel: Panel, config: StyleConfig | None = None):
        self.panel = panel
        self.config = config or StyleConfig()
        self._market = market_return_series(panel)
        self._market_dates = np.array(sorted(self._market), dtype=np.int64)
        self._market_values = np.array([self._market[int(t)] for t in self._market_dates])

    def _market_window(self, end_date: int, n: int) -> np.ndarray:
        j = int(np.searchsorted(self._market_dates, end_date, side="right"))
        if j - n < 0:
            raise HistoryError(f"market series too short before {end_date}")
        return self._market_values[j - n : j]

    def exposures(self, date: int, stock_ids: list[str]) -> ExposureMatrix:
        """Exposure matrix at `date` for the given cross-section."""
        cfg = self.config
        n = len(stock_ids)
        if n < 2:
            raise ParameterError("exposure cross-section needs >= 2 stocks")
        caps = np.empty(n)
        industries = np.empty(n, dtype=int)
        raw: dict[str, np.ndarray] = {
            name: np.empty(n) for name in cfg.styles if name != "nonlinear_size"
        }
        fund_raw: dict[str, list[float]] = {}
        beta_needed = "beta" in cfg.styles or "residual_volatility" in cfg.styles
        for idx, sid in enumerate(stock_ids):
            series = self.panel[sid]
            i = series.position(date)
            if i is None or i < cfg.min_history:
                raise HistoryError(f"{sid}: not enough history at {date}")
            close = series.columns["close"]
            caps[idx] = series.columns["market_cap"][i]
            industries[idx] = series.industry_id
            rets = close[i - cfg.min_history + 1 : i + 1] / close[i - cfg.min_history : i] - 1.0
            if beta_needed:
                nb = cfg.beta_window
                mkt = self._market_window(int(series.dates[i]), nb)
                beta, resid = style_beta(rets[-nb:], mkt, cfg.riskfree, cfg.beta_half_life)
            if "beta" in raw:
                raw["beta"][idx] = beta
            if "momentum" in raw:
                raw["momentum"][idx] = style_momentum(
                    rets, cfg.riskfree, cfg.momentum_window, cfg.momentum_lag,
                    cfg.momentum_half_life,
                )
            if "size" in raw:
                raw["size"][idx] = style_size(caps[idx])
            if "residual_volatility" in raw:
                raw["residual_volatility"][idx] = style_residual_volatility(
                    rets - cfg.riskfree, resid, cfg
                )
            if "liquidity" in raw:
                turn = series.columns["turnover"][: i + 1]
                raw["liquidity"][idx] = style_liquidity(turn, cfg)
            if cfg.use_fundamentals and self.panel.has_fundamentals:
                fundamentals = {
                    k: float(series.columns[k][i])
                    for k in series.columns
                    if k not in ("open", "high", "low", "close", "vwap", "volume",
                                 "turnover", "free_turnover", "market_cap")
                }
                blends = style_fundamental_blends(fundamentals)
                for k, v in blends.items():
                    fund_raw.setdefault(k, []).append(v)

        cap_weights = caps / caps.sum()
        style_cols: dict[str, np.ndarray] = {}
        for name in cfg.styles:
            if name in ("nonlinear_size", "residual_volatility"):
                continue
            style_cols[name] = standardize_exposures(raw[name], cap_weights)
        if "residual_volatility" in cfg.styles:
            rv = raw["residual_volatility"]
            if "beta" in style_cols:
                rv = weighted_residualize(rv, style_cols["beta"], cap_weights)
            style_cols["residual_volatility"] = standardize_exposures(rv, cap_weights)
        if "nonlinear_size" in cfg.styles:
            if "size" not in style_cols:
                raise ParameterError("nonlinear_size requires the size style")
            style_cols["nonlinear_size"] = style_nonlinear_size(
                style_cols["size"], cap_weights
            )
        for name in FUNDAMENTAL_STYLES:
            if name in fund_raw and len(fund_raw[name]) == n:
                style_cols[name] = standardize_exposures(
                    np.array(fund_raw[name]), cap_weights
                )

        present = sorted(set(int(p) for p in industries))
        dummies = np.zeros((n, len(present)))
        for col, p in enumerate(present):
            dummies[industries == p, col] = 1.0
        style_names = [s for s in cfg.styles if s in style_cols] + [
            s for s in FUNDAMENTAL_STYLES if s in style_cols and s not in cfg.styles
        ]
        matrix = np.column_stack(
            [np.ones(n), dummies] + [style_cols[s] for s in style_names]
        )
        names = ["country"] + [f"ind_{p}" for p in present] + style_names
        return ExposureMatrix(
            date=date,
            stock_ids=list(stock_ids),
            matrix=matrix,
            factor_names=names,
            industry_ids=present,
            cap_weights=cap_weights,
        )


def cross_sectional_regression(
    excess_returns: np.ndarray, exposures: ExposureMatrix
) -> FactorReturns:
    """Weighted least squares with the industry-neutrality constraint.

    Regression weights are sqrt(market cap); the constraint
    sum_p w_p * f_p = 0 (w_p = industry cap share) removes the
    country/industry collinearity by substituting out the last industry.
    """
    r = np.asarray(excess_returns, dtype=float)
    X = exposures.matrix
    n, m = X.shape
    if r.shape != (n,):
        raise ParameterError("returns do not align with the exposure matrix")
    if n <= m:
        raise RegressionError(f"need more stocks ({n}) than factors ({m})")
    P = exposures.n_industries
    caps = exposures.cap_weights
    w = np.sqrt(caps)
    w = w / w.sum()

    ind_block = X[:, 1 : 1 + P]
    members = ind_block.sum(axis=0)
    if np.any(members < 1):
        empty = [exposures.factor_names[1 + p] for p in np.where(members < 1)[0]]
        raise RegressionError(f"industries without members: {empty}")
    ind_cap = np.array([caps[ind_block[:, p] > 0].sum() for p in range(P)])

    if P > 1:
        # Reduced basis: I_p - (w_p / w_P) * I_P for p < P.
        reduce_cols = [
            ind_block[:, p] - (ind_cap[p] / ind_cap[P - 1]) * ind_block[:, P - 1]
            for p in range(P - 1)
        ]
        design = np.column_stack([X[:, :1]] + reduce_cols + [X[:, 1 + P :]])
        reduced_names = (
            exposures.factor_names[:1]
            + exposures.factor_names[1:P]
            + exposures.factor_names[1 + P :]
        )
    else:
        design = np.column_stack([X[:, :1], X[:, 1 + P :]])
        reduced_names = exposures.factor_names[:1] + exposures.factor_names[1 + P :]

    sw = np.sqrt(w)
    A = design * sw[:, None]
    b = r * sw
    offending = _dependent_columns(A, reduced_names)
    if offending:
        raise RegressionError(f"rank-deficient design, offending columns: {offending}")
    coef, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < design.shape[1]:
        raise RegressionError("rank-deficient design after constraint")

    f_c = float(coef[0])
    f_ind = np.zeros(P)
    if P > 1:
        f_ind[: P - 1] = coef[1:P]
        f_ind[P - 1] = -float((ind_cap[: P - 1] / ind_cap[P - 1]) @ f_ind[: P - 1])
    styles = coef[P:] if P > 1 else coef[1:]
    full = np.concatenate([[f_c], f_ind, styles])
    resid = r - X @ full
    style_names = exposures.factor_names[1 + P :]
    return FactorReturns(
        date=exposures.date,
        country=f_c,
        industry={p: float(f_ind[i]) for i, p in enumerate(exposures.industry_ids)},
        style={name: float(v) for name, v in zip(style_names, styles)},
        residuals={sid: float(u) for sid, u in zip(exposures.stock_ids, resid)},
    )


def _dependent_columns(A: np.ndarray, names: list[str]) -> list[str]:
    """Greedy Gram-Schmidt scan for columns with no independent component."""
    basis: list[np.ndarray] = []
    offending = []
    for j in range(A.shape[1]):
        v = A[:, j].astype(float)
        scale = np.linalg.norm(v)
        for q in basis:
            v = v - (q @ v) * q
        if np.linalg.norm(v) <= 1e-10 * max(scale, 1.0):
            offending.append(names[j])
        else:
            basis.append(v / np.linalg.norm(v))
    return offending


def neutralize_labels(
    labels: dict[str, float],
    exposures: ExposureMatrix,
    riskfree_per_period: float = 0.0,
) -> tuple[dict[str, float], FactorReturns]:
    """Residualize forward returns against date-t exposures.

    Returns ({stock_id: residual_return}, factor returns). Stocks missing a
    label are dropped from the regression.
    """
    sids = [sid for sid in exposures.stock_ids if sid in labels]
    if len(sids) != len(exposures.stock_ids):
        keep = [i for i, sid in enumerate(exposures.stock_ids) if sid in labels]
        exposures = ExposureMatrix(
            date=exposures.date,
            stock_ids=sids,
            matrix=exposures.matrix[keep],
            factor_names=exposures.factor_names,
            industry_ids=exposures.industry_ids,
            cap_weights=exposures.cap_weights[keep] / exposures.cap_weights[keep].sum(),
        )
    r = np.array([labels[sid] for sid in sids]) - riskfree_per_period
    fr = cross_sectional_regression(r, exposures)
    return dict(fr.residuals), fr
