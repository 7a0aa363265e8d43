import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deephedge.autodiff import Tape
from deephedge.errors import ConfigError, NonFiniteError
from deephedge.network import (
    AdamState,
    PolicyParams,
    adam_step,
    ffnn_forward,
    init_policy,
    load_checkpoint,
    n_params,
    save_checkpoint,
)

FEATURES = [0.5, -0.1, 0.2, 0.3, 0.4, 1.1]


def loop_forward(theta, arch, features, activation="relu"):
    """Explicit-loop dense pass in 50-digit arithmetic.

    Layout per layer: weights W[i][j] (input i, output j) row-major, then biases.
    """
    mpmath.mp.dps = 50
    h = [mpmath.mpf(f) for f in features]
    pos = 0
    for layer, (n_in, n_out) in enumerate(zip(arch[:-1], arch[1:])):
        out = []
        for j in range(n_out):
            acc = mpmath.mpf(0)
            for i in range(n_in):
                acc += h[i] * mpmath.mpf(theta[pos + i * n_out + j])
            acc += mpmath.mpf(theta[pos + n_in * n_out + j])
            if layer < len(arch) - 2:
                acc = max(acc, mpmath.mpf(0)) if activation == "relu" else mpmath.tanh(acc)
            out.append(acc)
        pos += n_in * n_out + n_out
        h = out
    return float(h[0])


def test_parameter_count():
    assert n_params((6, 4, 1)) == 6 * 4 + 4 + 4 + 1
    assert n_params((6, 64, 64, 64, 1)) == 6 * 64 + 64 + 2 * (64 * 64 + 64) + 65


def test_zero_parameters_give_zero_action():
    p = PolicyParams((6, 5, 1), np.zeros(n_params((6, 5, 1))))
    assert ffnn_forward(p, np.array(FEATURES)) == 0.0
    np.testing.assert_array_equal(ffnn_forward(p, np.ones((3, 6))), np.zeros(3))


def test_single_linear_layer():
    w, b = np.arange(1.0, 7.0), 0.25
    p = PolicyParams((6, 1), np.concatenate([w, [b]]))
    assert ffnn_forward(p, np.array(FEATURES)) == pytest.approx(float(np.dot(w, FEATURES) + b), rel=1e-15)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_ramp_parameters_match_loop_oracle(activation):
    arch = (6, 4, 1)
    theta = 0.01 * np.arange(n_params(arch))
    p = PolicyParams(arch, theta, activation)
    assert ffnn_forward(p, np.array(FEATURES)) == pytest.approx(loop_forward(theta, arch, FEATURES, activation),
                                                                abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_networks_match_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    arch = (6, 5, 3, 1)
    theta = rng.normal(size=n_params(arch))
    x = rng.normal(size=6)
    assert ffnn_forward(PolicyParams(arch, theta), x) == pytest.approx(loop_forward(theta, arch, x), abs=1e-12)


def test_forward_is_differentiable_in_theta():
    arch = (6, 3, 1)
    theta0 = np.random.default_rng(3).normal(size=n_params(arch))
    p = PolicyParams(arch, theta0, "tanh")
    tape = Tape()
    theta = tape.var(theta0)
    out = ffnn_forward(p, np.array(FEATURES), theta)
    g = tape.backward(out, theta)
    h = 1e-6
    fd = [(ffnn_forward(p, np.array(FEATURES), theta0 + h * e) - ffnn_forward(p, np.array(FEATURES), theta0 - h * e))
          / (2 * h) for e in np.eye(theta0.size)]
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-10)


def test_forward_rejects_non_finite_features():
    with pytest.raises(ValueError):
        ffnn_forward(init_policy((6, 2, 1)), np.array([math.nan] * 6))


def test_policy_params_validation():
    with pytest.raises(ConfigError):
        PolicyParams((6, 2, 1), np.zeros(3))
    with pytest.raises(ConfigError):
        PolicyParams((6, 2, 2), np.zeros(n_params((6, 2, 2))))
    with pytest.raises(ConfigError):
        PolicyParams((6, 1), np.array([math.nan] * 7))
    with pytest.raises(ConfigError):
        PolicyParams((6, 1), np.zeros(7), "sigmoid")


def test_initial_policy_is_no_trade_and_seeded():
    p = init_policy((6, 8, 8, 1), "relu", seed=5)
    np.testing.assert_array_equal(ffnn_forward(p, np.random.default_rng(0).normal(size=(10, 6))), np.zeros(10))
    assert np.any(p.theta != 0)
    np.testing.assert_array_equal(p.theta, init_policy((6, 8, 8, 1), "relu", seed=5).theta)
    assert not np.array_equal(p.theta, init_policy((6, 8, 8, 1), "relu", seed=6).theta)
    first = p.theta[:48]
    assert np.abs(first).max() <= 1 / math.sqrt(6)


# Adam

def test_adam_zero_gradient():
    theta = np.array([1.0, -2.0])
    state = AdamState(np.array([0.1, 0.2]), np.array([0.01, 0.04]), 3)
    new, st2 = adam_step(theta, np.zeros(2), state)
    np.testing.assert_allclose(st2.m, 0.9 * state.m)
    np.testing.assert_allclose(st2.v, 0.999 * state.v)
    assert st2.step_count == 4
    # moments still push theta; only the gradient contribution is zero
    state0 = AdamState.zeros(2)
    new0, _ = adam_step(theta, np.zeros(2), state0)
    np.testing.assert_array_equal(new0, theta)


def test_adam_first_step_is_signed_learning_rate():
    g = np.array([3.0, -0.5, 1e-3])
    new, _ = adam_step(np.zeros(3), g, AdamState.zeros(3, lr=0.01))
    np.testing.assert_allclose(new, -0.01 * np.sign(g), rtol=1e-4)


def adam_oracle(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(theta)
    return out


@settings(max_examples=50, deadline=None)
@given(g=st.floats(-100, 100).filter(lambda x: abs(x) > 1e-6))
def test_adam_constant_gradient_steps_do_not_expand(g):
    state = AdamState.zeros(1)
    t0 = np.zeros(1)
    t1, state = adam_step(t0, np.array([g]), state)
    t2, state = adam_step(t1, np.array([g]), state)
    u1, u2 = abs(t1[0] - t0[0]), abs(t2[0] - t1[0])
    assert u2 <= u1 * (1 + 1e-9)
    want = adam_oracle(0.0, [g, g])
    assert t1[0] == pytest.approx(want[0], rel=1e-12) and t2[0] == pytest.approx(want[1], rel=1e-12)


def test_adam_is_pure_and_checks_inputs():
    theta, state = np.ones(2), AdamState.zeros(2)
    adam_step(theta, np.ones(2), state)
    assert state.step_count == 0 and (state.m == 0).all() and (theta == 1).all()
    with pytest.raises(NonFiniteError):
        adam_step(theta, np.array([1.0, math.inf]), state)
    with pytest.raises(ValueError):
        adam_step(theta, np.ones(3), state)


# checkpoints

def test_checkpoint_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(7)
    arch = (6, 4, 1)
    policy = PolicyParams(arch, rng.normal(size=n_params(arch)) * 1e-3, "tanh")
    adam = AdamState(rng.normal(size=policy.theta.size), rng.random(policy.theta.size), 17, 5e-4)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, policy, adam, seed=11, meta={"market.alpha": "1.02"})
    ck = load_checkpoint(path)
    assert ck.policy.architecture == arch and ck.policy.activation == "tanh"
    assert ck.policy.theta.tobytes() == policy.theta.tobytes()
    assert ck.adam.m.tobytes() == adam.m.tobytes() and ck.adam.v.tobytes() == adam.v.tobytes()
    assert (ck.adam.step_count, ck.adam.lr, ck.seed) == (17, 5e-4, 11)
    assert ck.meta == {"market.alpha": "1.02"}
    again = tmp_path / "b.ckpt"
    save_checkpoint(again, ck.policy, ck.adam, ck.seed, ck.meta)
    assert path.read_bytes() == again.read_bytes()
    assert b"\r" not in path.read_bytes()
    assert ck.sha256() == load_checkpoint(again).sha256()


def test_checkpoint_rejects_foreign_files(tmp_path):
    bad = tmp_path / "x.ckpt"
    bad.write_text("hello\n")
    with pytest.raises(ConfigError):
        load_checkpoint(bad)
    bad.write_text("deephedge-checkpoint 99\n")
    with pytest.raises(ConfigError):
        load_checkpoint(bad)
    bad.write_text("deephedge-checkpoint 1\narchitecture = 6,1\n")
    with pytest.raises(ConfigError):
        load_checkpoint(bad)
