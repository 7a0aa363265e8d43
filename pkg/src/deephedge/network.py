"""Feedforward policy, Adam, and the portable checkpoint format.

Parameter layout in the flat vector ``theta``: for each dense layer in order,
the weight matrix ``(n_in, n_out)`` in row-major order followed by its bias
``(n_out,)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var, value_of
from .errors import ConfigError, NonFiniteError

N_FEATURES = 6
ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_MAGIC = "deephedge-checkpoint"
CHECKPOINT_VERSION = 1


def layer_shapes(architecture):
    return [(n_in, n_out) for n_in, n_out in zip(architecture[:-1], architecture[1:])]


def n_params(architecture) -> int:
    return sum(n_in * n_out + n_out for n_in, n_out in layer_shapes(architecture))


@dataclass
class PolicyParams:
    architecture: tuple
    theta: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.architecture = tuple(int(n) for n in self.architecture)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if len(self.architecture) < 2 or self.architecture[-1] != 1:
            raise ConfigError(f"architecture must end in a single output, got {self.architecture}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.theta.shape != (n_params(self.architecture),):
            raise ConfigError(
                f"theta has {self.theta.size} entries, architecture {self.architecture} needs "
                f"{n_params(self.architecture)}"
            )
        if not np.isfinite(self.theta).all():
            raise ConfigError("theta contains non-finite entries")


def unpack(theta, architecture):
    """Split ``theta`` (array or tape ``Var``) into ``[(W, b), ...]``."""
    layers, pos = [], 0
    for n_in, n_out in layer_shapes(architecture):
        w = theta[pos:pos + n_in * n_out].reshape(n_in, n_out)
        pos += n_in * n_out
        b = theta[pos:pos + n_out]
        pos += n_out
        layers.append((w, b))
    return layers


def init_policy(architecture, activation="relu", seed=0) -> PolicyParams:
    """Fan-in scaled uniform hidden layers; the output layer starts at zero.

    The initial policy is therefore ``X = 0`` everywhere.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0xC0FFEE,))))
    parts = []
    shapes = layer_shapes(architecture)
    for i, (n_in, n_out) in enumerate(shapes):
        if i == len(shapes) - 1:
            parts += [np.zeros(n_in * n_out), np.zeros(n_out)]
        else:
            bound = 1.0 / math.sqrt(n_in)
            parts += [rng.uniform(-bound, bound, n_in * n_out), rng.uniform(-bound, bound, n_out)]
    return PolicyParams(tuple(architecture), np.concatenate(parts), activation)


def _activate(h, activation):
    if activation == "relu":
        return np.maximum(h, 0.0)
    return np.tanh(h)


def ffnn_forward(params: PolicyParams, features, theta=None):
    """Dense forward pass with identity output; returns one action per row.

    ``theta`` overrides ``params.theta`` (pass a tape ``Var`` to differentiate).
    """
    theta = params.theta if theta is None else theta
    if not isinstance(features, Var) and not np.isfinite(features).all():
        raise ValueError("ffnn_forward: non-finite features")
    h = features if isinstance(features, Var) else np.asarray(features, dtype=np.float64)
    single = np.ndim(value_of(h)) == 1
    if single:
        h = h.reshape(1, -1)
    out = forward_layers(unpack(theta, params.architecture), params.activation, h).reshape(-1)
    return out[0] if single else out


def forward_layers(layers, activation, h):
    """Dense pass over already unpacked ``[(W, b), ...]``; ``h`` is ``(n, n_in)``."""
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < len(layers) - 1:
            h = _activate(h, activation)
    return h


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, lr=1e-3, **kw):
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(theta, grad, state: AdamState, lr=None):
    """One bias-corrected Adam update. Returns ``(theta', state')``; inputs untouched."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != np.shape(theta):
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {np.shape(theta)}")
    if not np.isfinite(grad).all():
        raise NonFiniteError("non-finite gradient passed to adam_step")
    lr = state.lr if lr is None else lr
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_theta, AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)


# Checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    policy: PolicyParams
    adam: AdamState
    seed: int
    meta: dict = field(default_factory=dict)
    path: str | None = None

    def sha256(self):
        if self.path is None:
            return None
        with open(self.path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()


def _g17(x):
    return f"{float(x):.17g}"


def save_checkpoint(path, policy: PolicyParams, adam: AdamState, seed: int, meta=None):
    """Text checkpoint: versioned header, then ``theta``, ``m``, ``v`` blocks."""
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"architecture = {','.join(map(str, policy.architecture))}",
        f"activation = {policy.activation}",
        f"step_count = {adam.step_count}",
        f"seed = {seed}",
        f"adam = {_g17(adam.lr)},{_g17(adam.beta1)},{_g17(adam.beta2)},{_g17(adam.eps)}",
    ]
    for key in sorted(meta or {}):
        lines.append(f"meta.{key} = {meta[key]}")
    for name, arr in (("theta", policy.theta), ("m", adam.m), ("v", adam.v)):
        lines.append(f"[{name}] {len(arr)}")
        lines.extend(_g17(x) for x in arr)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        lines = fh.read().split("\n")
    head = lines[0].split()
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    if int(head[1]) != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {head[1]}")
    header, meta, blocks = {}, {}, {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if not line:
            i += 1
            continue
        if line.startswith("["):
            name, count = line[1:].split("]")
            count = int(count)
            blocks[name] = np.array([float(x) for x in lines[i + 1:i + 1 + count]])
            i += 1 + count
            continue
        key, _, val = line.partition(" = ")
        if key.startswith("meta."):
            meta[key[5:]] = val
        else:
            header[key] = val
        i += 1
    try:
        arch = tuple(int(n) for n in header["architecture"].split(","))
        lr, b1, b2, eps = (float(x) for x in header["adam"].split(","))
        policy = PolicyParams(arch, blocks["theta"], header["activation"])
        adam = AdamState(blocks["m"], blocks["v"], int(header["step_count"]), lr, b1, b2, eps)
        seed = int(header["seed"])
    except KeyError as exc:
        raise ConfigError(f"{path}: checkpoint is missing {exc}") from None
    return Checkpoint(policy, adam, seed, meta, str(path))
