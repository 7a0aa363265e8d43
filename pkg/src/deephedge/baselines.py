"""Black-Scholes and Leland delta-hedging benchmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .account import OptionSpec, Trajectory, run_hedge
from .errors import ConfigError
from .market import SELL, BUY, MarketParams, PathBatch, impact_trade

BLACK_SCHOLES = "black_scholes"
LELAND = "leland"


def norm_cdf(x):
    """Standard normal CDF (Cephes ``ndtr``; ~1e-16 relative accuracy)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("norm_cdf: non-finite input")
    out = ndtr(x)
    return float(out) if out.ndim == 0 else out


def _d1(s_t, strike, r_annualized, sigma, tau):
    return (np.log(s_t / strike) + (r_annualized + 0.5 * sigma**2) * tau) / np.sqrt(sigma**2 * tau)


def bs_delta(s_t, strike, r_annualized, sigma, steps_remaining, dt):
    """Call delta ``Phi(d1)`` with ``steps_remaining * dt`` years left."""
    if np.any(np.asarray(steps_remaining) < 1):
        raise ValueError("bs_delta needs at least one step remaining")
    if sigma <= 0:
        raise ValueError("bs_delta needs sigma > 0")
    s_t = np.asarray(s_t, dtype=np.float64)
    if np.any(s_t <= 0) or strike <= 0:
        raise ValueError("bs_delta needs positive prices")
    return norm_cdf(_d1(s_t, strike, r_annualized, sigma, steps_remaining * dt))


def bs_call_price(s, strike, r_annualized, sigma, tau):
    """Black-Scholes call value with ``tau`` years to expiry."""
    if tau <= 0 or sigma <= 0:
        return max(s - strike, 0.0)
    d1 = _d1(s, strike, r_annualized, sigma, tau)
    d2 = d1 - sigma * math.sqrt(tau)
    return float(s * norm_cdf(d1) - strike * math.exp(-r_annualized * tau) * norm_cdf(d2))


def default_premium(params: MarketParams, strike: float, horizon: int) -> float:
    """Black-Scholes price of the hedged call at inception."""
    return bs_call_price(params.s0, strike, params.r / params.dt, params.sigma, horizon * params.dt)


def calibrate_k(beta, params: MarketParams, side=SELL, alpha=None):
    """Proportional cost rate matching the impact of trading one share at ``S_0``.

    Sell side (default): ``S_0 (1 - k) = F_sell(S_0, 0, 1)``, i.e. ``k = 2 - 2**beta``.
    Buy side: ``S_0 (1 + k) = F_buy(S_0, 0, 1)``, i.e. ``k = 2**alpha - 2``.
    """
    s0 = params.s0
    if side == SELL:
        return 1.0 - impact_trade(SELL, s0, 0.0, 1.0, beta) / s0
    if side == BUY:
        return impact_trade(BUY, s0, 0.0, 1.0, params.alpha if alpha is None else alpha) / s0 - 1.0
    raise ValueError(f"unknown calibration side {side!r}")


def leland_sigma(sigma, k, dt):
    if sigma <= 0 or dt <= 0 or k < 0:
        raise ValueError("leland_sigma needs sigma > 0, dt > 0, k >= 0")
    return sigma * math.sqrt(1.0 + math.sqrt(2.0 / math.pi) * k / (sigma * math.sqrt(dt)))


@dataclass(frozen=True)
class BaselineKind:
    kind: str = BLACK_SCHOLES
    k: float = 0.0

    def __post_init__(self):
        if self.kind not in (BLACK_SCHOLES, LELAND):
            raise ConfigError(f"unknown baseline {self.kind!r}")
        if not 0 <= self.k < 1:
            raise ConfigError("proportional cost rate k must lie in [0, 1)")

    @property
    def label(self):
        return "bs" if self.kind == BLACK_SCHOLES else "leland"

    def hedge_sigma(self, params: MarketParams):
        if self.kind == LELAND:
            return leland_sigma(params.sigma, self.k, params.dt)
        return params.sigma

    @classmethod
    def leland_for(cls, params: MarketParams, k=None):
        """Leland baseline with ``k`` calibrated on the sell side unless given."""
        return cls(LELAND, calibrate_k(params.beta, params) if k is None else k)


def baseline_positions(kind: BaselineKind, t, s_t, option: OptionSpec, params: MarketParams):
    """Target ``X_{t+1}``; depends on ``(t, S_t)`` only."""
    sigma = kind.hedge_sigma(params)
    return bs_delta(s_t, option.strike, params.r / params.dt, sigma, option.horizon - t, params.dt)


def baseline_strategy(kind: BaselineKind, option: OptionSpec, params: MarketParams):
    def strategy(t, s_t, state, v_t):
        return baseline_positions(kind, t, s_t, option, params)

    return strategy


def baseline_rollout(kind: BaselineKind, paths, option: OptionSpec, params: MarketParams, record=True) -> Trajectory:
    """Delta-hedge ``paths`` (a :class:`PathBatch`, price path or array) and settle."""
    prices = paths.prices if isinstance(paths, PathBatch) or hasattr(paths, "prices") else paths
    return run_hedge(baseline_strategy(kind, option, params), prices, option, params, record=record)
