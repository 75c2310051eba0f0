"""Dense numeric kernel shared by the CNN, SVM and LSTM.

Everything runs in float64. Optimizer steps update parameter arrays in place
and return ``(params, state)`` so callers can chain them functionally.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError, EmptyBatch, EmptyLogits, InvalidRate, ShapeMismatch

OPTIMIZERS = ("sgd_momentum", "adadelta", "rmsprop")


@dataclass
class OptimizerConfig:
    kind: str = "sgd_momentum"
    learning_rate: float = 0.001
    momentum: float = 0.80
    decay: float = 1e-5
    rho: float = 0.95
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


# CNN optimizer; the decay constant is 1e-5
CNN_OPTIMIZER = OptimizerConfig("sgd_momentum", learning_rate=0.001, momentum=0.80, decay=1e-5)
SVM_OPTIMIZER = OptimizerConfig("adadelta", learning_rate=1.0, momentum=0.0, decay=0.0, rho=0.95, epsilon=1e-6)
LSTM_OPTIMIZER = OptimizerConfig("rmsprop", learning_rate=0.01, momentum=0.0, decay=0.0, rho=0.9, epsilon=1e-8)


def average_loss(per_example_losses) -> float:
    losses = np.asarray(per_example_losses, dtype=np.float64)
    if losses.size == 0:
        raise EmptyBatch("cannot average an empty batch")
    return float(losses.mean())


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits, axis=-1):
    """Numerically stable softmax (max subtraction)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise EmptyLogits("softmax of empty logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def dropout_mask(shape, rate: float, seed=None):
    """Inverted-dropout mask: 0 with probability ``rate``, else ``1/(1-rate)``."""
    if not 0 <= rate < 1:
        raise InvalidRate(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0:
        return np.ones(shape)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def glorot_uniform(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _check(params, grads):
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")


def sgd_momentum_step(params, grads, state, cfg: OptimizerConfig):
    _check(params, grads)
    t = state.get("iteration", 0)
    lr = cfg.learning_rate / (1.0 + cfg.decay * t)
    vel = state.setdefault("velocity", {})
    for name, g in grads.items():
        v = vel.get(name)
        if v is None:
            v = vel[name] = np.zeros_like(params[name])
        v *= cfg.momentum
        v -= lr * g
        params[name] += v
    state["iteration"] = t + 1
    return params, state


def adadelta_step(params, grads, state, cfg: OptimizerConfig):
    _check(params, grads)
    eg = state.setdefault("eg2", {})
    ed = state.setdefault("edx2", {})
    rho, eps = cfg.rho, cfg.epsilon
    for name, g in grads.items():
        if name not in eg:
            eg[name] = np.zeros_like(params[name])
            ed[name] = np.zeros_like(params[name])
        a, d = eg[name], ed[name]
        a *= rho
        a += (1 - rho) * g * g
        dx = -np.sqrt(d + eps) / np.sqrt(a + eps) * g
        d *= rho
        d += (1 - rho) * dx * dx
        params[name] += cfg.learning_rate * dx
    state["iteration"] = state.get("iteration", 0) + 1
    return params, state


def rmsprop_step(params, grads, state, cfg: OptimizerConfig):
    _check(params, grads)
    eg = state.setdefault("eg2", {})
    rho, eps = cfg.rho, cfg.epsilon
    for name, g in grads.items():
        a = eg.get(name)
        if a is None:
            a = eg[name] = np.zeros_like(params[name])
        a *= rho
        a += (1 - rho) * g * g
        params[name] -= cfg.learning_rate * g / np.sqrt(a + eps)
    state["iteration"] = state.get("iteration", 0) + 1
    return params, state


_STEPS = {"sgd_momentum": sgd_momentum_step, "adadelta": adadelta_step, "rmsprop": rmsprop_step}


def optimizer_step(params, grads, state, cfg: OptimizerConfig):
    return _STEPS[cfg.kind](params, grads, state, cfg)


def finite_diff_check(loss_fn, params, epsilon: float = 1e-6, max_entries=None, rng=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)`` with ``grads`` keyed like
    ``params`` (a dict of arrays; a bare array is wrapped as ``{"p": array}``).
    Relative error uses ``max(|a|, |n|, 1e-8)`` as denominator. With
    ``max_entries`` only that many randomly chosen entries per array are probed.
    """
    bare = not isinstance(params, dict)
    if bare:
        arr = params
        params = {"p": arr}
        inner = loss_fn

        def loss_fn(ps):
            loss, g = inner(ps["p"])
            return loss, {"p": np.asarray(g, dtype=np.float64)}

    _, grads = loss_fn(params)
    rng = np.random.default_rng(rng)
    worst = 0.0
    for name, p in params.items():
        if not p.flags.c_contiguous:
            raise ShapeMismatch(f"{name} must be C-contiguous to be probed in place")
        flat = p.reshape(-1)
        analytic = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + epsilon
            fp, _ = loss_fn(params)
            flat[i] = old - epsilon
            fm, _ = loss_fn(params)
            flat[i] = old
            num = (fp - fm) / (2 * epsilon)
            a = analytic[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
