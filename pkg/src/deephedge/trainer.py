"""Differentiable hedging episodes, semi-quadratic risk, and policy-gradient training."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .account import OptionSpec, excess_cost, run_hedge, turnover
from .autodiff import Tape, value_of
from .baselines import BaselineKind, baseline_strategy
from .errors import ConfigError, EpisodeFailure, NonFiniteError, TrainingFailure
from .market import MarketParams, PathBatch, path_draws, paths_from_draws, simulate_paths
from .network import (
    N_FEATURES,
    AdamState,
    PolicyParams,
    adam_step,
    forward_layers,
    init_policy,
    save_checkpoint,
    unpack,
)

log = logging.getLogger(__name__)

DEFAULT_CLIP = 5.0


def normalize_state(t, s_t, impact, x_t, v_t, option: OptionSpec, v0):
    """Policy input ``(t/T, log(S_t/K), A_t, B_t, X_t, V_t/V_0)``, one row per path."""
    if v0 == 0:
        raise ConfigError("initial portfolio value V_0 is zero; the premium must be positive")
    s_t = np.asarray(s_t, dtype=np.float64)
    return ad.stack([
        np.full(s_t.shape, t / option.horizon),
        np.log(s_t / option.strike),
        impact.a,
        impact.b,
        x_t,
        v_t / v0,
    ])


def clip_position(x, bound):
    """``clip(x, -bound, bound)`` built from positive parts so it stays on the tape."""
    if bound is None:
        return x
    return x - np.maximum(x - bound, 0.0) + np.maximum(-(x + bound), 0.0)


def policy_strategy(policy: PolicyParams, option: OptionSpec, params: MarketParams, theta=None, clip=DEFAULT_CLIP):
    v0 = option.premium
    if v0 == 0:
        raise ConfigError("initial portfolio value V_0 is zero; the premium must be positive")

    layers = unpack(policy.theta if theta is None else theta, policy.architecture)

    def strategy(t, s_t, state, v_t):
        features = normalize_state(t, s_t, state.impact, state.x, v_t, option, v0)
        return clip_position(forward_layers(layers, policy.activation, features).reshape(-1), clip)

    return strategy


def rollout_episode(policy: PolicyParams, paths, option: OptionSpec, params: MarketParams, tape=None,
                    theta=None, clip=DEFAULT_CLIP):
    """Hedging losses ``R = -P_X`` for every path.

    With a ``tape``, the losses are recorded end to end (``theta`` defaults to
    a fresh leaf holding ``policy.theta``); prices enter as constants.
    """
    if tape is not None and theta is None:
        theta = tape.var(policy.theta)
    prices = paths.prices if hasattr(paths, "prices") else paths
    traj = run_hedge(policy_strategy(policy, option, params, theta, clip), prices, option, params)
    return -traj.profit


def semi_quadratic_risk(losses):
    """Sample mean of ``max(0, R)**2``."""
    if np.size(value_of(losses)) == 0:
        raise ValueError("semi_quadratic_risk needs a nonempty batch")
    if not isinstance(losses, ad.Var):
        losses = np.asarray(losses, dtype=np.float64)
    gain_free = np.maximum(losses, 0.0)
    return (gain_free * gain_free).mean()


@dataclass
class TrainConfig:
    market: MarketParams = field(default_factory=MarketParams)
    option: OptionSpec = field(default_factory=OptionSpec)
    batch_size: int = 256
    n_iterations: int = 5000
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 2000
    seed: int = 42
    hidden: tuple = (64, 64, 64)
    activation: str = "relu"
    clip: float | None = DEFAULT_CLIP
    checkpoint_every: int = 500
    max_abort_fraction: float = 0.01

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.n_iterations < 0:
            raise ConfigError("n_iterations must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.option.premium <= 0:
            raise ConfigError("training needs a positive premium (V_0 normalisation)")

    @property
    def architecture(self):
        return (N_FEATURES, *self.hidden, 1)

    def lr_at(self, iteration):
        if self.lr_decay_every <= 0:
            return self.lr
        return self.lr * self.lr_decay ** (iteration // self.lr_decay_every)

    def meta(self):
        """Environment description stored in checkpoint headers."""
        m, o = self.market, self.option
        return {
            "market.mu_annual": repr(m.mu), "market.sigma_annual": repr(m.sigma),
            "market.s0_currency": repr(m.s0), "market.dt_years": repr(m.dt),
            "market.r_per_step": repr(m.r), "market.alpha": repr(m.alpha), "market.beta": repr(m.beta),
            "market.lambda_a_per_step": repr(m.lambda_a), "market.lambda_b_per_step": repr(m.lambda_b),
            "market.a0_shares": repr(m.a0), "market.b0_shares": repr(m.b0),
            "option.strike_currency": repr(o.strike), "option.horizon_steps": repr(o.horizon),
            "option.premium_currency": repr(o.premium),
            "train.clip_shares": repr(self.clip),
        }


@dataclass
class TrainResult:
    policy: PolicyParams
    history: list
    adam: AdamState
    aborted: int = 0

    def __iter__(self):
        return iter((self.policy, self.history))


def loss_and_grad(policy: PolicyParams, paths, option, params, clip=DEFAULT_CLIP):
    """Batch risk and its gradient with respect to ``policy.theta``."""
    tape = Tape()
    theta = tape.var(policy.theta)
    losses = rollout_episode(policy, paths, option, params, tape=tape, theta=theta, clip=clip)
    risk = semi_quadratic_risk(losses)
    return float(risk.value), tape.backward(risk, theta)


def train(config: TrainConfig, out_dir=None, fixed_paths=None, log_timing=False) -> TrainResult:
    """Adam on the minibatch semi-quadratic risk.

    Iteration ``j`` draws a fresh batch from substream batch ``j + 1`` of
    ``config.seed`` unless ``fixed_paths`` is given. Steps whose episode or
    gradient is non-finite are skipped and logged; exceeding
    ``max_abort_fraction`` of all iterations raises :class:`TrainingFailure`.
    With ``out_dir``, writes ``train_log.csv`` and checkpoints.
    """
    m, o = config.market, config.option
    policy = init_policy(config.architecture, config.activation, config.seed)
    adam = AdamState.zeros(policy.theta.size, lr=config.lr)
    history, aborted = [], 0
    max_aborted = math.floor(config.max_abort_fraction * config.n_iterations)
    rows = []

    def checkpoint(name):
        save_checkpoint(os.path.join(out_dir, name), policy, adam, config.seed, config.meta())

    for j in range(config.n_iterations):
        start = time.perf_counter()
        if fixed_paths is None:
            paths = simulate_paths(m, o.horizon, config.batch_size, config.seed, batch=j + 1)
        else:
            paths = fixed_paths
        try:
            with np.errstate(all="ignore"):
                rho, grad = loss_and_grad(policy, paths, o, m, config.clip)
            theta, new_adam = adam_step(policy.theta, grad, adam, lr=config.lr_at(j))
        except (EpisodeFailure, NonFiniteError) as exc:
            aborted += 1
            log.warning("iteration %d aborted: %s", j, exc)
            history.append(float("nan"))
            rows.append((j, float("nan"), float("nan"), (time.perf_counter() - start) * 1e3))
            if aborted > max_aborted:
                raise TrainingFailure(
                    f"{aborted} of {config.n_iterations} iterations aborted (limit {max_aborted})"
                ) from exc
            continue
        policy = PolicyParams(policy.architecture, theta, policy.activation)
        adam = new_adam
        history.append(rho)
        rows.append((j, rho, float(np.linalg.norm(grad)), (time.perf_counter() - start) * 1e3))
        if out_dir and config.checkpoint_every and (j + 1) % config.checkpoint_every == 0:
            checkpoint(f"checkpoint_{j + 1:06d}.ckpt")

    if out_dir:
        checkpoint("policy.ckpt")
        write_train_log(os.path.join(out_dir, "train_log.csv"), rows, log_timing)
    return TrainResult(policy, history, adam, aborted)


def write_train_log(path, rows, log_timing=False):
    """``iteration,rho_hat,grad_norm[,wall_ms]``; timing only on request so reruns match byte for byte."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "rho_hat", "grad_norm"] + (["wall_ms"] if log_timing else []))
        for j, rho, gn, ms in rows:
            row = [j, f"{rho:.17g}", f"{gn:.17g}"]
            if log_timing:
                row.append(f"{ms:.3f}")
            w.writerow(row)


@dataclass(frozen=True)
class RiskReport:
    label: str
    n_paths: int
    rho_hat: float
    pnl_mean: float
    pnl_std: float
    turnover_mean: float
    impact_cost_mean: float

    FIELDS = ("label", "n_paths", "rho_hat", "pnl_mean", "pnl_std", "turnover_mean", "impact_cost_mean")

    def row(self):
        return [self.label, self.n_paths] + [f"{getattr(self, k):.17g}" for k in self.FIELDS[2:]]


def _strategy_for(strategy, option, params, clip):
    if isinstance(strategy, BaselineKind):
        return baseline_strategy(strategy, option, params), strategy.label
    if isinstance(strategy, PolicyParams):
        return policy_strategy(strategy, option, params, clip=clip), "drl"
    raise TypeError(f"cannot evaluate {type(strategy).__name__}")


def common_test_chunks(params: MarketParams, horizon, n_paths, seed, chunk=20_000):
    """Common test paths (substream batch 0), yielded in bounded chunks."""
    for lo in range(0, n_paths, chunk):
        ids = range(lo, min(lo + chunk, n_paths))
        yield paths_from_draws(params, path_draws(seed, horizon, ids, batch=0))


def evaluate(strategy, n_paths, seed, params: MarketParams, option: OptionSpec, clip=DEFAULT_CLIP,
             paths=None, label=None) -> RiskReport:
    """Out-of-sample risk report on a common-seed test set.

    ``strategy`` is a :class:`PolicyParams` or a :class:`BaselineKind`.
    ``paths`` (a :class:`PathBatch` or list of price arrays) replaces the
    seeded test set.
    """
    fn, default_label = _strategy_for(strategy, option, params, clip)
    if paths is None:
        chunks = common_test_chunks(params, option.horizon, n_paths, seed)
    elif isinstance(paths, PathBatch):
        chunks = [paths.prices]
    else:
        chunks = paths
    profit, turn, cost = [], [], []
    for prices in chunks:
        traj = run_hedge(fn, prices, option, params, record=True)
        profit.append(np.broadcast_to(traj.profit, (prices.shape[0],)))
        turn.append(turnover(traj.positions))
        cost.append(excess_cost(traj))
    profit = np.concatenate(profit)
    return RiskReport(
        label=label or default_label,
        n_paths=int(profit.size),
        rho_hat=float(semi_quadratic_risk(-profit)),
        pnl_mean=float(profit.mean()),
        pnl_std=float(profit.std()),
        turnover_mean=float(np.concatenate(turn).mean()),
        impact_cost_mean=float(np.concatenate(cost).mean()),
    )


def write_reports_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RiskReport.FIELDS)
        for rep in reports:
            w.writerow(rep.row())
