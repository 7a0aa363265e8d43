"""Price paths and limit-order-book impact.

Mid prices follow a geometric Brownian motion. Trading ``x`` shares walks the
book along the supply curves

    G_buy(s, x)  = s * ((1 + x)**alpha - 1)
    G_sell(s, x) = s * ((1 + x)**beta - 1)

and an order of size ``x`` placed when a persistence state ``y`` from earlier
trades is still in the book costs (or yields) ``G(s, x + y) - G(s, y)``.
The persistence states decay geometrically between rebalances.

All functions accept plain floats, numpy arrays or :class:`~deephedge.autodiff.Var`
operands.

Random streams: path ``i`` of batch ``b`` under seed ``s`` draws its Gaussian
innovations from ``PCG64(SeedSequence(s, spawn_key=(b, i)))``. Every path is
therefore reproducible on its own, independent of how many paths are drawn or
in what order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import value_of
from .errors import ConfigError

BUY = "buy"
SELL = "sell"

# float64 prices + draws; larger batches must be generated in chunks
MAX_PATH_BYTES = 2 * 1024**3


@dataclass(frozen=True)
class MarketParams:
    """Exogenous market constants.

    ``mu`` and ``sigma`` are annualised, ``dt`` is in years, ``r`` is the
    per-step rate (cash accrues by ``exp(r)`` each step), ``lambda_a`` and
    ``lambda_b`` are per-step decay rates where ``math.inf`` means no
    persistence.
    """

    mu: float = 0.0892
    sigma: float = 0.1952
    s0: float = 1000.0
    dt: float = 1.0 / 12.0
    r: float = 0.0
    alpha: float = 1.0
    beta: float = 1.0
    lambda_a: float = math.inf
    lambda_b: float = math.inf
    a0: float = 0.0
    b0: float = 0.0

    def __post_init__(self):
        for name in ("mu", "sigma", "s0", "dt", "r", "alpha", "beta", "a0", "b0"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        for name in ("lambda_a", "lambda_b"):
            lam = getattr(self, name)
            if math.isnan(lam) or lam < 0:
                raise ConfigError(f"{name} must be >= 0 (inf allowed), got {lam}")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.dt <= 0:
            raise ConfigError("dt must be > 0")
        if self.s0 <= 0:
            raise ConfigError("s0 must be > 0")
        if self.alpha < 1:
            raise ConfigError("alpha must be >= 1")
        if not 0 < self.beta <= 1:
            raise ConfigError("beta must lie in (0, 1]")
        if self.a0 < 0 or self.b0 < 0:
            raise ConfigError("initial persistence states must be >= 0")


@dataclass(frozen=True)
class PricePath:
    prices: np.ndarray
    draws: np.ndarray
    seed: int
    path_id: int = 0


@dataclass(frozen=True)
class PathBatch:
    """``n`` price paths stored row-wise: ``prices`` is ``(n, T + 1)``."""

    prices: np.ndarray
    draws: np.ndarray
    seed: int
    batch: int = 0

    def __len__(self):
        return self.prices.shape[0]

    @property
    def horizon(self):
        return self.prices.shape[1] - 1

    def __getitem__(self, i):
        return PricePath(self.prices[i], self.draws[i], self.seed, i)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def to_csv(self, path):
        """Write ``path_id, t, S_t`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_id", "t", "S_t"])
            for i, row in enumerate(self.prices):
                for t, s in enumerate(row):
                    w.writerow([i, t, f"{s:.17g}"])


@dataclass(frozen=True)
class ImpactState:
    """Buy-side (``a``) and sell-side (``b``) persistence, in shares."""

    a: object = 0.0
    b: object = 0.0


def initial_impact(params: MarketParams) -> ImpactState:
    return ImpactState(params.a0, params.b0)


def gbm_step(prev_price, params: MarketParams, z):
    """One GBM step from ``prev_price`` with standard normal draw ``z``."""
    prev_price = np.asarray(prev_price, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if not (np.isfinite(prev_price).all() and np.isfinite(z).all()):
        raise ValueError("gbm_step: non-finite input")
    if (prev_price <= 0).any():
        raise ValueError("gbm_step: prices must be positive")
    drift = (params.mu - 0.5 * params.sigma**2) * params.dt
    vol = params.sigma * math.sqrt(params.dt)
    return prev_price * np.exp(drift + vol * z)


def path_draws(seed: int, horizon: int, path_ids, batch: int = 0) -> np.ndarray:
    """Standard normal innovations, one independent substream per path."""
    out = np.empty((len(path_ids), horizon))
    for row, i in enumerate(path_ids):
        ss = np.random.SeedSequence(seed, spawn_key=(batch, int(i)))
        out[row] = np.random.Generator(np.random.PCG64(ss)).standard_normal(horizon)
    return out


def paths_from_draws(params: MarketParams, draws: np.ndarray) -> np.ndarray:
    """Apply :func:`gbm_step` recursively from ``params.s0``."""
    n, horizon = draws.shape
    prices = np.empty((n, horizon + 1))
    prices[:, 0] = params.s0
    for t in range(horizon):
        prices[:, t + 1] = gbm_step(prices[:, t], params, draws[:, t])
    return prices


def simulate_paths(params: MarketParams, horizon: int, n_paths: int, seed: int, batch: int = 0) -> PathBatch:
    if horizon < 1 or n_paths < 1:
        raise ConfigError("simulate_paths needs horizon >= 1 and n_paths >= 1")
    if 2 * 8 * n_paths * (horizon + 1) > MAX_PATH_BYTES:
        raise ConfigError(
            f"{n_paths} paths x {horizon} steps exceeds the path storage budget "
            f"({MAX_PATH_BYTES} bytes); simulate in chunks"
        )
    draws = path_draws(seed, horizon, range(n_paths), batch)
    return PathBatch(paths_from_draws(params, draws), draws, seed, batch)


def constant_path(price: float, horizon: int) -> PathBatch:
    """A single path frozen at ``price``."""
    return PathBatch(np.full((1, horizon + 1), float(price)), np.zeros((1, horizon)), seed=-1)


def _check_quantity(x, what):
    v = value_of(x)
    if np.any(np.asarray(v) < 0):
        raise ValueError(f"{what} must be >= 0; split signed trades into positive/negative parts first")


def _check_exponent(side, exponent):
    if side == BUY:
        if exponent < 1:
            raise ValueError("buy exponent must be >= 1")
    elif side == SELL:
        if not 0 < exponent <= 1:
            raise ValueError("sell exponent must lie in (0, 1]")
    else:
        raise ValueError(f"side must be 'buy' or 'sell', got {side!r}")


def supply_curve(side, s_t, x, exponent):
    """Cumulative amount to walk ``x`` shares into the book at mid ``s_t``."""
    _check_exponent(side, exponent)
    _check_quantity(x, "depth")
    # expm1/log1p keep exponent == 1 exact to rounding for tiny x
    return s_t * np.expm1(exponent * np.log1p(x))


def impact_trade(side, s_t, y, x, exponent):
    """Cost (buy) or revenue (sell) of ``x`` shares given persistence ``y``.

    Equals ``G(s, x + y) - G(s, y)``, evaluated as
    ``s * (1 + y)**e * expm1(e * log1p(x / (1 + y)))``.
    """
    _check_exponent(side, exponent)
    _check_quantity(x, "trade size")
    _check_quantity(y, "persistence state")
    if exponent == 1:
        return s_t * x
    if isinstance(y, (int, float)) and y == 0:
        return s_t * np.expm1(exponent * np.log1p(x))
    one_y = 1.0 + y
    return s_t * one_y**exponent * np.expm1(exponent * np.log1p(x / one_y))


def buy_cost(params: MarketParams, s_t, y, x):
    return impact_trade(BUY, s_t, y, x, params.alpha)


def sell_revenue(params: MarketParams, s_t, y, x):
    return impact_trade(SELL, s_t, y, x, params.beta)


def _decay(level, added, lam):
    if math.isinf(lam):
        return 0.0
    if lam == 0:
        return level + added
    return math.exp(-lam) * (level + added)


def persistence_step(state: ImpactState, trade_delta, params: MarketParams) -> ImpactState:
    """Absorb the signed trade ``trade_delta`` and decay once."""
    return absorb_trade(state, np.maximum(trade_delta, 0.0), np.maximum(-trade_delta, 0.0), params)


def absorb_trade(state: ImpactState, buys, sells, params: MarketParams) -> ImpactState:
    """:func:`persistence_step` with the trade already split into its parts."""
    return ImpactState(
        _decay(state.a, buys, params.lambda_a),
        _decay(state.b, sells, params.lambda_b),
    )
