"""Seeded analyses of trained policies against the delta-hedging baselines.

Every experiment reads its trained policies from checkpoints whose headers
describe the training environment, writes CSVs (17 significant digits, LF
line endings) and a manifest, and is a pure function of config, seed and
checkpoints.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .account import OptionSpec, run_hedge, turnover
from .baselines import BLACK_SCHOLES, LELAND, BaselineKind, baseline_positions, baseline_strategy, calibrate_k
from .config import ExperimentConfig, parse_grid, parse_list, parse_number
from .errors import ConfigError, MissingCheckpointError
from .market import ImpactState, MarketParams, constant_path, simulate_paths
from .network import Checkpoint, forward_layers, load_checkpoint, unpack
from .trainer import (
    RiskReport,
    evaluate,
    common_test_chunks,
    normalize_state,
    policy_strategy,
    train,
    write_reports_csv,
)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
RESOLVED_CONFIG = "resolved_config.ini"


def fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(v)
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def sha256_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(out_dir, cfg: ExperimentConfig, command, checkpoints=(), outputs=()):
    """Resolved config, seed, input checkpoint and output hashes."""
    with open(os.path.join(out_dir, RESOLVED_CONFIG), "w", newline="\n") as fh:
        fh.write(cfg.to_ini())
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "resolved_config": RESOLVED_CONFIG,
        "config": cfg.raw,
        "checkpoints": {p: sha256_file(p) for p in checkpoints},
        "outputs": {os.path.basename(p): sha256_file(p) for p in outputs},
    }
    with open(os.path.join(out_dir, MANIFEST), "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# Checkpoint environments ---------------------------------------------------

@dataclass
class TrainedPolicy:
    checkpoint: Checkpoint
    market: MarketParams
    option: OptionSpec
    clip: float | None

    @property
    def policy(self):
        return self.checkpoint.policy

    def strategy(self, market=None):
        return policy_strategy(self.policy, self.option, market or self.market, clip=self.clip)

    def describe(self):
        m = self.market
        return f"alpha={m.alpha} beta={m.beta} mu={m.mu} lambda={m.lambda_a} T={self.option.horizon}"


def trained_policy(path) -> TrainedPolicy:
    if not os.path.exists(path):
        raise MissingCheckpointError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    meta = ckpt.meta
    try:
        market = MarketParams(
            mu=float(meta["market.mu_annual"]),
            sigma=float(meta["market.sigma_annual"]),
            s0=float(meta["market.s0_currency"]),
            dt=float(meta["market.dt_years"]),
            r=float(meta["market.r_per_step"]),
            alpha=float(meta["market.alpha"]),
            beta=float(meta["market.beta"]),
            lambda_a=float(meta["market.lambda_a_per_step"]),
            lambda_b=float(meta["market.lambda_b_per_step"]),
            a0=float(meta["market.a0_shares"]),
            b0=float(meta["market.b0_shares"]),
        )
        option = OptionSpec(
            float(meta["option.strike_currency"]),
            int(meta["option.horizon_steps"]),
            float(meta["option.premium_currency"]),
        )
        clip = None if meta["train.clip_shares"] == "None" else float(meta["train.clip_shares"])
    except KeyError as exc:
        raise ConfigError(f"{path}: checkpoint header lacks {exc}") from None
    return TrainedPolicy(ckpt, market, option, clip)


def _close(a, b):
    return a == b or math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-12)


def select(policies, **want) -> TrainedPolicy:
    """The first policy whose training environment matches ``want``.

    Keys: ``alpha``, ``beta``, ``mu``, ``lambda_`` (both sides), ``horizon``,
    ``dt``. Raises :class:`MissingCheckpointError` naming the training run
    that would provide it.
    """
    for tp in policies:
        m = tp.market
        have = {
            "alpha": m.alpha, "beta": m.beta, "mu": m.mu, "dt": m.dt,
            "lambda_": m.lambda_a if m.lambda_a == m.lambda_b else float("nan"),
            "horizon": tp.option.horizon,
        }
        if all(_close(have[k], v) for k, v in want.items()):
            return tp
    keys = {"alpha": "market.alpha", "beta": "market.beta", "mu": "market.mu_annual",
            "lambda_": "market.lambda_a_per_step=market.lambda_b_per_step", "horizon": "option.horizon_steps",
            "dt": "market.dt_years"}
    wanted = ", ".join(f"{keys[k]}={fmt(v)}" for k, v in want.items())
    raise MissingCheckpointError(f"no checkpoint trained with {wanted}; run `deephedge train` with these settings "
                                 f"and list the result under experiment.checkpoints")


def load_policies(cfg: ExperimentConfig):
    return [trained_policy(p) for p in cfg.checkpoints]


def impact_levels(text):
    levels = []
    for part in text.split(","):
        if part.strip():
            a, _, b = part.partition(":")
            levels.append((parse_number(a), parse_number(b)))
    if not levels:
        raise ConfigError("no impact levels configured")
    return levels


def leland_kind(cfg: ExperimentConfig, market: MarketParams):
    k = cfg.get("evaluate.leland_k").strip().lower()
    if k == "auto":
        side = cfg.get("evaluate.leland_calibration_side").strip().lower()
        return BaselineKind(LELAND, calibrate_k(market.beta, market, side=side))
    return BaselineKind(LELAND, parse_number(k))


def record_positions(strategy, prices, option, market):
    return run_hedge(strategy, prices, option, market, record=True)


# Experiments -----------------------------------------------------------------

def run_train(cfg: ExperimentConfig, out_dir, log_timing=False):
    os.makedirs(out_dir, exist_ok=True)
    result = train(cfg.train, out_dir=out_dir, log_timing=log_timing)
    outputs = sorted(os.path.join(out_dir, f) for f in os.listdir(out_dir) if f.endswith((".ckpt", ".csv")))
    write_manifest(out_dir, cfg, "train", outputs=outputs)
    return result


def run_evaluate(cfg: ExperimentConfig, out_dir, checkpoint=None):
    path = checkpoint or cfg.get("evaluate.checkpoint").strip()
    if not path:
        raise MissingCheckpointError("evaluate needs a checkpoint (--checkpoint or evaluate.checkpoint)")
    tp = trained_policy(path)
    market = tp.market
    stress = cfg.get("evaluate.stress_mu_annual").strip()
    if stress:
        market = MarketParams(**{**market.__dict__, "mu": parse_number(stress)})
    n = int(cfg.get("evaluate.n_paths"))
    seed = int(cfg.get("evaluate.test_seed"))
    strategies = [(tp.policy, "drl")]
    for name in parse_list(cfg.get("evaluate.baselines"), str.strip):
        if name == BLACK_SCHOLES:
            strategies.append((BaselineKind(), "bs"))
        elif name == LELAND:
            strategies.append((leland_kind(cfg, market), "leland"))
        else:
            raise ConfigError(f"unknown baseline {name!r}")
    reports = [evaluate(s, n, seed, market, tp.option, clip=tp.clip, label=label) for s, label in strategies]
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, "evaluation.csv")
    write_reports_csv(out, reports)
    write_manifest(out_dir, cfg, "evaluate", checkpoints=[path], outputs=[out])
    return reports


def run_policy_surface(cfg: ExperimentConfig, out_dir):
    """Positions at a fixed decision step over a grid of ``S_t`` and ``V_t``.

    ``A_t = B_t = 0``; ``X_t`` is ``experiment.previous_position_shares``.
    """
    policies = load_policies(cfg)
    t = int(cfg.get("experiment.decision_step"))
    x_prev = cfg.number("experiment.previous_position_shares")
    s_grid = np.array(parse_grid(cfg.get("experiment.s_grid_currency")))
    v_rel = np.array(parse_list(cfg.get("experiment.v_levels_relative")))
    rows, used = [], []
    for alpha, beta in impact_levels(cfg.get("experiment.surface_impact_levels")):
        tp = select(policies, alpha=alpha, beta=beta, mu=cfg.market.mu, lambda_=math.inf,
                    horizon=cfg.option.horizon)
        used.append(tp.checkpoint.path)
        m, o = tp.market, tp.option
        if not 0 <= t < o.horizon:
            raise ConfigError(f"decision_step {t} outside 0..{o.horizon - 1}")
        v0 = o.premium
        s = np.repeat(s_grid, len(v_rel))
        v = np.tile(v_rel * v0, len(s_grid))
        feats = normalize_state(t, s, ImpactState(0.0, 0.0), np.full(s.shape, x_prev), v, o, v0)
        x_drl = forward_layers(unpack(tp.policy.theta, tp.policy.architecture), tp.policy.activation, feats)
        x_drl = x_drl.reshape(-1)
        if tp.clip is not None:
            x_drl = np.clip(x_drl, -tp.clip, tp.clip)
        x_bs = baseline_positions(BaselineKind(), t, s, o, m)
        x_le = baseline_positions(leland_kind(cfg, m), t, s, o, m)
        rows += [(m.alpha, m.beta, s[i], v[i], x_drl[i], x_bs[i], x_le[i]) for i in range(len(s))]
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, "policy_surface.csv")
    write_csv(out, ["alpha", "beta", "S_t", "V_t", "X_drl", "X_bs", "X_leland"], rows)
    write_manifest(out_dir, cfg, "policy-surface", used, [out])
    return rows


def _position_rows(label, alpha, beta, prices, positions):
    T = positions.shape[0]
    prev = np.concatenate([[0.0], positions[:-1]])
    return [(label, alpha, beta, t, prices[t], prev[t], positions[t]) for t in range(T)]


def run_path_comparison(cfg: ExperimentConfig, out_dir):
    """Position sequences on one seeded path, plus Monte-Carlo turnover."""
    policies = load_policies(cfg)
    T = cfg.option.horizon
    path = simulate_paths(cfg.market, T, 1, int(cfg.get("experiment.path_seed")))
    prices = path.prices[0]
    n_test = int(cfg.get("experiment.test_paths"))
    test_seed = int(cfg.get("evaluate.test_seed"))
    rows, turn_rows, used = [], [], []
    bs_done = False
    for alpha, beta in impact_levels(cfg.get("experiment.impact_levels")):
        tp = select(policies, alpha=alpha, beta=beta, mu=cfg.market.mu, lambda_=math.inf, horizon=T)
        used.append(tp.checkpoint.path)
        m, o = tp.market, tp.option
        strategies = [("drl", tp.strategy())]
        if not bs_done:
            strategies.append(("bs", baseline_strategy(BaselineKind(), o, m)))
            bs_done = True
        strategies.append(("leland", baseline_strategy(leland_kind(cfg, m), o, m)))
        for label, strat in strategies:
            traj = record_positions(strat, path.prices, o, m)
            rows += _position_rows(label, m.alpha, m.beta, prices, traj.positions[0])
            turns = [turnover(record_positions(strat, chunk, o, m).positions)
                     for chunk in common_test_chunks(m, T, n_test, test_seed)]
            turn_rows.append((label, m.alpha, m.beta, n_test, float(np.concatenate(turns).mean())))
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, "path_comparison.csv")
    out2 = os.path.join(out_dir, "path_turnover.csv")
    write_csv(out, ["strategy", "alpha", "beta", "t", "S_t", "X_t", "X_next"], rows)
    write_csv(out2, ["strategy", "alpha", "beta", "n_paths", "turnover_mean"], turn_rows)
    write_manifest(out_dir, cfg, "path-comparison", used, [out, out2])
    return rows, turn_rows


def run_constant_price(cfg: ExperimentConfig, out_dir):
    """Positions on a path frozen at the strike, for each training drift."""
    policies = load_policies(cfg)
    T = cfg.option.horizon
    path = constant_path(cfg.option.strike, T)
    rows, summary, used = [], [], []
    for mu in parse_list(cfg.get("experiment.drifts_annual")):
        for alpha, beta in impact_levels(cfg.get("experiment.impact_levels")):
            tp = select(policies, alpha=alpha, beta=beta, mu=mu, lambda_=math.inf, horizon=T)
            used.append(tp.checkpoint.path)
            m, o = tp.market, tp.option
            for label, strat in (("drl", tp.strategy()), ("bs", baseline_strategy(BaselineKind(), o, m)),
                                 ("leland", baseline_strategy(leland_kind(cfg, m), o, m))):
                x = record_positions(strat, path.prices, o, m).positions[0]
                rows += [(mu, label, m.alpha, m.beta, t, path.prices[0, t], x[t]) for t in range(T)]
                if label == "drl":
                    summary.append((mu, m.alpha, m.beta, float(x[:4].mean())))
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, "constant_price.csv")
    out2 = os.path.join(out_dir, "constant_price_summary.csv")
    write_csv(out, ["mu_annual", "strategy", "alpha", "beta", "t", "S_t", "X_next"], rows)
    write_csv(out2, ["mu_annual", "alpha", "beta", "mean_drl_position_t0_3"], summary)
    write_manifest(out_dir, cfg, "constant-price", used, [out, out2])
    return rows, summary


def run_pin_risk(cfg: ExperimentConfig, out_dir):
    """Near-maturity hedging at the money under several persistence levels.

    The summary reports the standard deviation (ddof=0) of the last three
    position changes per level and flags the DRL rows when it does not
    shrink from no persistence to permanent impact; that is a warning only.
    """
    policies = load_policies(cfg)
    T = cfg.option.horizon
    m_cfg = cfg.market
    start = MarketParams(**{**m_cfg.__dict__, "s0": cfg.option.strike})
    path = simulate_paths(start, T, 1, int(cfg.get("experiment.path_seed")))
    prices = path.prices[0]
    levels = parse_list(cfg.get("experiment.persistence_levels_per_step"))
    rows, summary, used = [], [], []
    drl_stdevs = []
    for lam in levels:
        tp = select(policies, alpha=m_cfg.alpha, beta=m_cfg.beta, mu=m_cfg.mu, lambda_=lam, horizon=T, dt=m_cfg.dt)
        used.append(tp.checkpoint.path)
        m, o = tp.market, tp.option
        for label, strat in (("drl", tp.strategy()), ("bs", baseline_strategy(BaselineKind(), o, m)),
                             ("leland", baseline_strategy(leland_kind(cfg, m), o, m))):
            traj = record_positions(strat, path.prices, o, m)
            x = traj.positions[0]
            prev = np.concatenate([[0.0], x[:-1]])
            rows += [(lam, label, t, prices[t], prev[t], x[t], traj.a[0, t], traj.b[0, t]) for t in range(T)]
            dx = np.diff(x, prepend=0.0)
            sd = float(np.std(dx[-3:]))
            summary.append([lam, label, sd, ""])
            if label == "drl":
                drl_stdevs.append((lam, sd, len(summary) - 1))
    order = sorted(drl_stdevs, key=lambda item: -item[0])
    for (_, sd_prev, _), (lam, sd, idx) in zip(order, order[1:]):
        ok = sd <= sd_prev
        summary[idx][3] = "ok" if ok else "warning"
        if not ok:
            log.warning("pin risk: final-step fluctuation grows at lambda=%s (%.4g > %.4g)", fmt(lam), sd, sd_prev)
    if order:
        summary[order[0][2]][3] = "ok"
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, "pin_risk.csv")
    out2 = os.path.join(out_dir, "pin_risk_summary.csv")
    write_csv(out, ["lambda_per_step", "strategy", "t", "S_t", "X_t", "X_next", "A_t", "B_t"], rows)
    write_csv(out2, ["lambda_per_step", "strategy", "stdev_dx_last3", "monotone_flag"], summary)
    write_manifest(out_dir, cfg, "pin-risk", used, [out, out2])
    return rows, summary


RUNNERS = {
    "policy_surface": run_policy_surface,
    "path_comparison": run_path_comparison,
    "constant_price": run_constant_price,
    "pin_risk": run_pin_risk,
}


__all__ = [
    "RiskReport", "TrainedPolicy", "trained_policy", "select", "run_train", "run_evaluate",
    "run_policy_surface", "run_path_comparison", "run_constant_price", "run_pin_risk", "RUNNERS",
]
