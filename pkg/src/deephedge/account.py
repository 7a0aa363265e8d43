"""Self-financing hedging account for a short European call.

Timeline: the position chosen at decision time ``t`` is ``X_{t+1}``. Its
transaction amount ``c_t`` is priced at ``S_t`` against the current
persistence state ``(A_t, B_t)``; the persistence state then absorbs the
trade and decays once, producing ``(A_{t+1}, B_{t+1})``; cash accrues from
``M_t - c_t`` to ``M_{t+1}``. Positive transaction amounts are outflows.

Quantities may be floats, arrays over a batch of paths, or tape variables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import value_of
from .errors import ConfigError, EpisodeFailure, NonFiniteError
from .market import (
    ImpactState,
    MarketParams,
    PricePath,
    buy_cost,
    absorb_trade,
    initial_impact,
    sell_revenue,
)


@dataclass(frozen=True)
class OptionSpec:
    """Short call: strike ``K``, ``horizon`` rebalancing steps, premium received."""

    strike: float = 1000.0
    horizon: int = 12
    premium: float = 0.0

    def __post_init__(self):
        if self.strike <= 0:
            raise ConfigError("strike must be > 0")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("horizon must be an integer >= 1")
        if self.premium < 0:
            raise ConfigError("premium must be >= 0")


@dataclass(frozen=True)
class AccountState:
    """Hedger's book right before the time-``t`` rebalance.

    ``last_cost`` is the transaction amount paid by the rebalance that
    produced this state (0 at ``t = 0``).
    """

    t: int
    x: object
    cum_buys: object
    cum_sells: object
    cash: object
    impact: ImpactState
    last_cost: object = 0.0


def initial_state(option: OptionSpec, params: MarketParams) -> AccountState:
    return AccountState(0, 0.0, 0.0, 0.0, option.premium, initial_impact(params))


def transaction_amount(s_t, impact: ImpactState, trade_delta, params: MarketParams):
    """Cash paid for a signed trade; negative for net sales."""
    buys = np.maximum(trade_delta, 0.0)
    sells = np.maximum(-trade_delta, 0.0)
    return buy_cost(params, s_t, impact.a, buys) - sell_revenue(params, s_t, impact.b, sells)


def rebalance(state: AccountState, s_t, new_position, params: MarketParams) -> AccountState:
    if not np.isfinite(value_of(new_position)).all():
        raise NonFiniteError(f"non-finite target position at t={state.t}")
    delta = new_position - state.x
    buys = np.maximum(delta, 0.0)
    sells = np.maximum(-delta, 0.0)
    cost = buy_cost(params, s_t, state.impact.a, buys) - sell_revenue(params, s_t, state.impact.b, sells)
    cash = state.cash - cost
    if params.r != 0:
        cash = cash * np.exp(params.r)
    return AccountState(
        t=state.t + 1,
        x=new_position,
        cum_buys=state.cum_buys + buys,
        cum_sells=state.cum_sells + sells,
        cash=cash,
        impact=absorb_trade(state.impact, buys, sells, params),
        last_cost=cost,
    )


def exercise_event(s_T, impact_T: ImpactState, strike, params: MarketParams):
    """True where selling one share into the book would fetch more than ``K``.

    Evaluated on plain values: the indicator is a constant for differentiation.
    """
    revenue = sell_revenue(params, value_of(s_T), value_of(impact_T.b), 1.0)
    return np.asarray(revenue) > strike


def settle(state: AccountState, s_T, strike, params: MarketParams):
    """Profit right after maturity: deliver on exercise, unwind the rest."""
    exercised = exercise_event(s_T, state.impact, strike, params).astype(np.float64)
    x = state.x
    return (
        sell_revenue(params, s_T, state.impact.b, np.maximum(x - exercised, 0.0))
        - buy_cost(params, s_T, state.impact.a, np.maximum(exercised - x, 0.0))
        + state.cash
        + strike * exercised
    )


def portfolio_value(state: AccountState, s_t, params: MarketParams):
    """Cash plus the liquidation value of the stock position at ``s_t``."""
    x = state.x
    return (
        state.cash
        + sell_revenue(params, s_t, state.impact.b, np.maximum(x, 0.0))
        - buy_cost(params, s_t, state.impact.a, np.maximum(-x, 0.0))
    )


@dataclass
class Trajectory:
    """Batch hedging outcome. Per-step arrays are ``(n, T)`` or ``(n, T + 1)``."""

    prices: np.ndarray
    profit: object
    positions: np.ndarray | None = None
    costs: np.ndarray | None = None
    cash: np.ndarray | None = None
    values: np.ndarray | None = None
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    final_state: AccountState | None = None

    @property
    def loss(self):
        return -self.profit

    def records(self, seed=-1):
        if self.positions is None:
            raise ValueError("trajectory was run without record=True")
        n = self.prices.shape[0]
        profit = np.broadcast_to(value_of(self.profit), (n,))
        return [
            EpisodeRecord(
                path=PricePath(self.prices[i], np.empty(0), seed, i),
                actions=self.positions[i],
                costs=self.costs[i],
                cash=self.cash[i],
                values=self.values[i],
                a=self.a[i],
                b=self.b[i],
                profit=float(profit[i]),
            )
            for i in range(n)
        ]


@dataclass
class EpisodeRecord:
    """One path's hedge: actions ``X_1..X_T``, costs ``c_0..c_{T-1}``.

    ``cash``, ``values``, ``a``, ``b`` run over ``t = 0..T`` (cash at ``T``
    is the accrued terminal cash ``M_T``).
    """

    path: PricePath
    actions: np.ndarray
    costs: np.ndarray
    cash: np.ndarray
    values: np.ndarray
    a: np.ndarray
    b: np.ndarray
    profit: float
    loss: float = field(init=False)

    def __post_init__(self):
        self.loss = -self.profit

    @property
    def terminal_cash(self):
        return float(self.cash[-1])

    @property
    def horizon(self):
        return len(self.actions)


def _fmt(v):
    return f"{float(v):.17g}"


def write_episodes_csv(records, path):
    """``path_id,t,S_t,X_next,c_t,M_t,V_t,A_t,B_t,P_X``; the ``t = T`` row carries ``P_X``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "t", "S_t", "X_next", "c_t", "M_t", "V_t", "A_t", "B_t", "P_X"])
        for rec in records:
            pid = rec.path.path_id
            T = rec.horizon
            for t in range(T):
                w.writerow([
                    pid, t, _fmt(rec.path.prices[t]), _fmt(rec.actions[t]), _fmt(rec.costs[t]),
                    _fmt(rec.cash[t]), _fmt(rec.values[t]), _fmt(rec.a[t]), _fmt(rec.b[t]), "",
                ])
            w.writerow([
                pid, T, _fmt(rec.path.prices[T]), "", "", _fmt(rec.cash[T]), _fmt(rec.values[T]),
                _fmt(rec.a[T]), _fmt(rec.b[T]), _fmt(rec.profit),
            ])


def run_hedge(strategy, prices, option: OptionSpec, params: MarketParams, record=False) -> Trajectory:
    """Roll a hedging strategy over a batch of price paths and settle.

    ``strategy(t, s_t, state, v_t)`` returns the target position ``X_{t+1}``
    for every path. Non-finite values abort with :class:`EpisodeFailure`
    carrying the step index.
    """
    prices = np.atleast_2d(np.asarray(prices, dtype=np.float64))
    n, steps = prices.shape
    T = option.horizon
    if steps != T + 1:
        raise ConfigError(f"paths have {steps - 1} steps but the option horizon is {T}")
    state = initial_state(option, params)
    if record:
        cols = {k: np.zeros((n, T + 1)) for k in ("positions", "costs", "cash", "values", "a", "b")}

    def put(name, t, v):
        cols[name][:, t] = value_of(v)

    t = 0
    try:
        for t in range(T):
            s_t = prices[:, t]
            v_t = portfolio_value(state, s_t, params)
            target = strategy(t, s_t, state, v_t)
            new_state = rebalance(state, s_t, target, params)
            if record:
                put("cash", t, state.cash)
                put("values", t, v_t)
                put("a", t, state.impact.a)
                put("b", t, state.impact.b)
                put("positions", t, target)
                put("costs", t, new_state.last_cost)
            state = new_state
        t = T
        s_T = prices[:, T]
        profit = settle(state, s_T, option.strike, params)
    except (NonFiniteError, FloatingPointError) as exc:
        raise EpisodeFailure(t, str(exc)) from exc
    if not np.isfinite(value_of(profit)).all():
        raise EpisodeFailure(T, "non-finite profit")
    traj = Trajectory(prices=prices, profit=profit, final_state=state)
    if record:
        put("cash", T, state.cash)
        put("values", T, portfolio_value(state, s_T, params))
        put("a", T, state.impact.a)
        put("b", T, state.impact.b)
        traj.positions = cols["positions"][:, :T]
        traj.costs = cols["costs"][:, :T]
        traj.cash, traj.values, traj.a, traj.b = cols["cash"], cols["values"], cols["a"], cols["b"]
    return traj


def turnover(positions) -> np.ndarray:
    """Per-path ``sum_t |X_t - X_{t-1}|`` with ``X_0 = 0``."""
    positions = np.atleast_2d(positions)
    dx = np.diff(positions, axis=1, prepend=0.0)
    return np.abs(dx).sum(axis=1)


def excess_cost(trajectory: Trajectory) -> np.ndarray:
    """Per-path transaction amounts paid above frictionless mid-price execution."""
    dx = np.diff(trajectory.positions, axis=1, prepend=0.0)
    mid = trajectory.prices[:, :-1] * dx
    return (trajectory.costs - mid).sum(axis=1)


__all__ = [
    "OptionSpec", "AccountState", "EpisodeRecord", "Trajectory", "initial_state",
    "transaction_amount", "rebalance", "exercise_event", "settle", "portfolio_value",
    "run_hedge", "write_episodes_csv", "turnover", "excess_cost",
]
