"""Sectioned key-value experiment configuration.

Configs are INI files; every dimensionful key names its unit::

    [run]
    experiment = train
    seed = 42
    output_dir = runs/low_liquidity

    [market]
    mu_annual = 0.0892
    sigma_annual = 0.1952
    dt_years = 1/12
    alpha = 1.02
    beta = 0.98
    lambda_a_per_step = inf

Keys are addressed as ``section.key`` (``market.sigma_annual``) by
command-line overrides and in the resolved config written beside outputs.
Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

from .account import OptionSpec
from .baselines import default_premium
from .errors import ConfigError
from .market import MarketParams
from .trainer import TrainConfig

EXPERIMENTS = ("train", "evaluate", "policy_surface", "path_comparison", "constant_price", "pin_risk")

DEFAULTS = {
    "run": {"experiment": "train", "seed": "42", "output_dir": ""},
    "market": {
        "mu_annual": "0.0892",
        "sigma_annual": "0.1952",
        "s0_currency": "1000",
        "dt_years": "1/12",
        "r_per_step": "0",
        "alpha": "1",
        "beta": "1",
        "lambda_a_per_step": "inf",
        "lambda_b_per_step": "inf",
        "a0_shares": "0",
        "b0_shares": "0",
    },
    "option": {"strike_currency": "1000", "horizon_steps": "12", "premium_currency": "auto"},
    "train": {
        "batch_size_paths": "256",
        "iterations": "5000",
        "lr": "0.001",
        "lr_decay_factor": "0.5",
        "lr_decay_every_iterations": "2000",
        "hidden_units": "64,64,64",
        "activation": "relu",
        "clip_shares": "5",
        "checkpoint_every_iterations": "500",
        "log_timing": "false",
    },
    "evaluate": {
        "n_paths": "100000",
        "test_seed": "2024",
        "checkpoint": "",
        "baselines": "black_scholes,leland",
        "leland_k": "auto",
        "leland_calibration_side": "sell",
        "stress_mu_annual": "",
    },
    "experiment": {
        "checkpoints": "",
        "impact_levels": "1:1, 1.01:0.99, 1.02:0.98",
        "surface_impact_levels": "1:1, 1.01:0.99",
        "s_grid_currency": "700:1300:10",
        "v_levels_relative": "0.5, 0.75, 1, 1.25, 1.5",
        "decision_step": "6",
        "previous_position_shares": "0.5",
        "path_seed": "7",
        "test_paths": "10000",
        "drifts_annual": "0.0892, 0",
        "persistence_levels_per_step": "inf, 0.6931471805599453, 0",
        "jobs": "1",
    },
}


def parse_number(text: str) -> float:
    """Float from ``0.25``, ``1/12``, ``inf`` or ``-inf``."""
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    try:
        return float(Fraction(t))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def parse_list(text: str, conv=parse_number):
    return [conv(p) for p in text.split(",") if p.strip()]


def parse_grid(text: str):
    """``start:stop:step`` (inclusive of stop) or a comma list."""
    if ":" in text:
        parts = [parse_number(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ConfigError(f"bad grid {text!r}; expected start:stop:step")
        start, stop, step = parts
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(n)]
    return parse_list(text)


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    output_dir: str
    market: MarketParams
    option: OptionSpec
    train: TrainConfig
    raw: dict
    base_dir: str = "."
    checkpoints: list = field(default_factory=list)

    def section(self, name):
        return self.raw[name]

    def get(self, key):
        section, _, name = key.partition(".")
        return self.raw[section][name]

    def number(self, key):
        return parse_number(self.get(key))

    def resolve_path(self, p):
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    def to_ini(self):
        """Fully resolved config (premium and seed made explicit)."""
        lines = []
        for section in DEFAULTS:
            lines.append(f"[{section}]")
            for key in DEFAULTS[section]:
                lines.append(f"{key} = {self.raw[section][key]}")
            lines.append("")
        return "\n".join(lines)


def read_raw(path=None, overrides=()):
    raw = {s: dict(v) for s, v in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in parser.sections():
            if section not in raw:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, val in parser.items(section):
                if key not in raw[section]:
                    raise ConfigError(f"{path}: unknown key {section}.{key}")
                raw[section][key] = val.strip()
    for item in overrides:
        key, sep, val = item.partition("=")
        section, _, name = key.strip().partition(".")
        if not sep or section not in raw or name not in raw[section]:
            raise ConfigError(f"bad override {item!r}; expected section.key=value with a known key")
        raw[section][name] = val.strip()
    return raw


def build_config(raw, base_dir=".") -> ExperimentConfig:
    try:
        run, mk, op, tr = raw["run"], raw["market"], raw["option"], raw["train"]
        experiment = run["experiment"].strip().replace("-", "_")
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        seed = int(run["seed"])
        market = MarketParams(
            mu=parse_number(mk["mu_annual"]),
            sigma=parse_number(mk["sigma_annual"]),
            s0=parse_number(mk["s0_currency"]),
            dt=parse_number(mk["dt_years"]),
            r=parse_number(mk["r_per_step"]),
            alpha=parse_number(mk["alpha"]),
            beta=parse_number(mk["beta"]),
            lambda_a=parse_number(mk["lambda_a_per_step"]),
            lambda_b=parse_number(mk["lambda_b_per_step"]),
            a0=parse_number(mk["a0_shares"]),
            b0=parse_number(mk["b0_shares"]),
        )
        strike = parse_number(op["strike_currency"])
        horizon = int(op["horizon_steps"])
        if op["premium_currency"].strip().lower() == "auto":
            premium = default_premium(market, strike, horizon)
            raw["option"]["premium_currency"] = repr(premium)
        else:
            premium = parse_number(op["premium_currency"])
        option = OptionSpec(strike, horizon, premium)
        clip = tr["clip_shares"].strip().lower()
        train = TrainConfig(
            market=market,
            option=option,
            batch_size=int(tr["batch_size_paths"]),
            n_iterations=int(tr["iterations"]),
            lr=parse_number(tr["lr"]),
            lr_decay=parse_number(tr["lr_decay_factor"]),
            lr_decay_every=int(tr["lr_decay_every_iterations"]),
            seed=seed,
            hidden=tuple(int(n) for n in tr["hidden_units"].split(",") if n.strip()),
            activation=tr["activation"].strip(),
            clip=None if clip in ("none", "") else parse_number(clip),
            checkpoint_every=int(tr["checkpoint_every_iterations"]),
        ) if experiment == "train" else None
        parse_bool(tr["log_timing"])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    cfg = ExperimentConfig(experiment, seed, run["output_dir"], market, option, train, raw, base_dir)
    cfg.checkpoints = [cfg.resolve_path(p.strip()) for p in raw["experiment"]["checkpoints"].split(",") if p.strip()]
    raw["experiment"]["checkpoints"] = ",".join(cfg.checkpoints)
    if raw["evaluate"]["checkpoint"].strip():
        raw["evaluate"]["checkpoint"] = cfg.resolve_path(raw["evaluate"]["checkpoint"].strip())
    return cfg


def load_config(path=None, overrides=()) -> ExperimentConfig:
    raw = read_raw(path, overrides)
    base = os.path.dirname(os.path.abspath(path)) if path else os.getcwd()
    return build_config(raw, base)
