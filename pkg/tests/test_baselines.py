import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deephedge.account import OptionSpec
from deephedge.baselines import (
    BLACK_SCHOLES,
    LELAND,
    BaselineKind,
    baseline_positions,
    baseline_rollout,
    bs_call_price,
    bs_delta,
    calibrate_k,
    default_premium,
    leland_sigma,
    norm_cdf,
)
from deephedge.errors import ConfigError
from deephedge.market import BUY, MarketParams, constant_path, simulate_paths

mpmath.mp.dps = 40


def phi_oracle(x):
    return float(mpmath.ncdf(mpmath.mpf(x)))


def d1_oracle(s, k, r, sigma, tau):
    s, k, r, sigma, tau = map(mpmath.mpf, (s, k, r, sigma, tau))
    return (mpmath.log(s / k) + (r + sigma**2 / 2) * tau) / mpmath.sqrt(sigma**2 * tau)


# norm_cdf

def test_norm_cdf_examples():
    assert norm_cdf(0.0) == 0.5
    assert norm_cdf(1.96) == pytest.approx(0.9750021, abs=1e-6)
    assert norm_cdf(-8.0) < 1e-14


def test_norm_cdf_against_high_precision_oracle():
    xs = np.linspace(-8, 8, 1601)
    got = norm_cdf(xs)
    want = np.array([phi_oracle(x) for x in xs])
    assert np.max(np.abs(got - want)) <= 1e-7


@settings(max_examples=300, deadline=None)
@given(st.floats(-8, 8))
def test_norm_cdf_symmetry(x):
    assert abs(norm_cdf(-x) - (1 - norm_cdf(x))) <= 1e-12


def test_norm_cdf_rejects_non_finite():
    with pytest.raises(ValueError):
        norm_cdf(math.nan)


# bs_delta

def test_at_the_money_delta_six_months():
    got = bs_delta(1000.0, 1000.0, 0.0, 0.1952, 6, 1 / 12)
    want = phi_oracle(d1_oracle(1000, 1000, 0, 0.1952, 0.5))
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(0.5275, abs=5e-4)


def test_delta_saturates():
    assert bs_delta(10_000.0, 1000.0, 0.0, 0.1952, 6, 1 / 12) >= 0.999
    assert bs_delta(100.0, 1000.0, 0.0, 0.1952, 6, 1 / 12) <= 0.001


def test_delta_needs_remaining_steps():
    with pytest.raises(ValueError):
        bs_delta(1000.0, 1000.0, 0.0, 0.1952, 0, 1 / 12)
    with pytest.raises(ValueError):
        bs_delta(1000.0, 1000.0, 0.0, 0.0, 3, 1 / 12)


@settings(max_examples=100, deadline=None)
@given(steps=st.integers(1, 24), sigma=st.floats(0.05, 0.8))
def test_delta_monotone_in_price_and_in_unit_interval(steps, sigma):
    grid = np.linspace(600.0, 1500.0, 181)
    d = bs_delta(grid, 1000.0, 0.0, sigma, steps, 1 / 12)
    assert (np.diff(d) >= 0).all()
    assert ((d >= 0) & (d <= 1)).all()
    # strictly inside (0, 1) wherever float64 can represent it
    inner = np.abs(np.log(grid / 1000.0)) < 6 * sigma * math.sqrt(steps / 12)
    assert ((d[inner] > 0) & (d[inner] < 1)).all()


def test_call_price_against_oracle():
    tau = 1.0
    d1 = d1_oracle(1000, 1000, 0, 0.1952, tau)
    d2 = d1 - mpmath.mpf(0.1952)
    want = float(1000 * mpmath.ncdf(d1) - 1000 * mpmath.ncdf(d2))
    assert bs_call_price(1000.0, 1000.0, 0.0, 0.1952, tau) == pytest.approx(want, rel=1e-12)
    assert default_premium(MarketParams(), 1000.0, 12) == pytest.approx(want, rel=1e-12)
    assert bs_call_price(1100.0, 1000.0, 0.0, 0.2, 0.0) == 100.0


# calibration and Leland volatility

def test_calibrate_k_values():
    p = MarketParams()
    assert calibrate_k(1.0, p) == 0.0
    assert calibrate_k(0.99, p) == pytest.approx(2 - 2**0.99, abs=1e-14)
    assert calibrate_k(0.99, p) == pytest.approx(0.013815, abs=1e-5)
    assert calibrate_k(0.98, p) == pytest.approx(2 - 2**0.98, abs=1e-14)


def test_calibrate_k_buy_side_override():
    assert calibrate_k(0.98, MarketParams(alpha=1.02), side=BUY) == pytest.approx(2**1.02 - 2, abs=1e-14)


def leland_oracle(sigma, k, dt):
    sigma, k, dt = map(mpmath.mpf, (sigma, k, dt))
    return float(sigma * mpmath.sqrt(1 + mpmath.sqrt(2 / mpmath.pi) * k / (sigma * mpmath.sqrt(dt))))


def test_leland_sigma_values():
    assert leland_sigma(0.1952, 0.0, 1 / 12) == 0.1952
    got = leland_sigma(0.1952, 0.013815, 1 / 12)
    assert got == pytest.approx(leland_oracle(0.1952, 0.013815, 1 / 12), rel=1e-13)
    assert got == pytest.approx(0.21344, abs=5e-4)
    assert leland_sigma(0.1952, 0.0276, 1 / 12) == pytest.approx(0.22946, abs=1e-3)


@settings(max_examples=100, deadline=None)
@given(k1=st.integers(0, 5000).map(lambda i: i / 1e4), k2=st.integers(0, 5000).map(lambda i: i / 1e4))
def test_leland_sigma_increasing_in_k(k1, k2):
    lo, hi = sorted((k1, k2))
    if hi > lo:
        assert leland_sigma(0.1952, hi, 1 / 12) > leland_sigma(0.1952, lo, 1 / 12)
    if hi > 0:
        assert leland_sigma(0.1952, hi, 1 / 12) > 0.1952


def test_baseline_kind_invariants():
    with pytest.raises(ConfigError):
        BaselineKind(LELAND, 1.0)
    with pytest.raises(ConfigError):
        BaselineKind("whalley_wilmott")
    assert BaselineKind().label == "bs" and BaselineKind(LELAND, 0.01).label == "leland"
    assert BaselineKind.leland_for(MarketParams(beta=0.99)).k == pytest.approx(2 - 2**0.99)


# rollouts

def test_last_decision_on_constant_path_is_slightly_above_half():
    option = OptionSpec(1000.0, 12, 77.0)
    traj = baseline_rollout(BaselineKind(), constant_path(1000.0, 12), option, MarketParams())
    last = traj.positions[0, -1]
    want = phi_oracle(d1_oracle(1000, 1000, 0, 0.1952, 1 / 12))
    assert last == pytest.approx(want, abs=1e-12)
    assert last == pytest.approx(0.5113, abs=1e-3)
    assert 0.5 < last < 0.52


def test_leland_with_zero_cost_equals_black_scholes():
    p = MarketParams(alpha=1.01, beta=0.99)
    option = OptionSpec(1000.0, 12, 77.0)
    paths = simulate_paths(p, 12, 20, seed=8)
    bs = baseline_rollout(BaselineKind(BLACK_SCHOLES), paths, option, p)
    le = baseline_rollout(BaselineKind(LELAND, 0.0), paths, option, p)
    for name in ("positions", "costs", "cash", "values", "a", "b", "profit"):
        np.testing.assert_array_equal(getattr(bs, name), getattr(le, name))


def test_baseline_positions_ignore_impact_state():
    option = OptionSpec(1000.0, 12, 77.0)
    paths = simulate_paths(MarketParams(), 12, 30, seed=8)
    runs = [baseline_rollout(BaselineKind(LELAND, 0.02), paths, option, MarketParams(**kw))
            for kw in ({}, {"alpha": 1.02, "beta": 0.98}, {"alpha": 1.02, "beta": 0.98, "lambda_a": 0.0, "lambda_b": 0.0})]
    for other in runs[1:]:
        np.testing.assert_array_equal(runs[0].positions, other.positions)
    assert not np.array_equal(runs[0].profit, runs[1].profit)


def test_baseline_positions_match_delta_formula():
    p = MarketParams()
    option = OptionSpec(1000.0, 12, 77.0)
    paths = simulate_paths(p, 12, 5, seed=2)
    kind = BaselineKind(LELAND, 0.0138)
    traj = baseline_rollout(kind, paths, option, p)
    sig = leland_sigma(p.sigma, 0.0138, p.dt)
    for t in range(12):
        want = bs_delta(paths.prices[:, t], 1000.0, 0.0, sig, 12 - t, p.dt)
        np.testing.assert_array_equal(traj.positions[:, t], want)
        np.testing.assert_array_equal(baseline_positions(kind, t, paths.prices[:, t], option, p), want)
