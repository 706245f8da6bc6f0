from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError


@dataclass
class OptimizerConfig:
    rule: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.rule not in ("sgd", "adam"):
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


class Optimizer:
    """Applies in-place updates to a fixed list of parameter arrays."""

    def __init__(self, config=None):
        self.config = config or OptimizerConfig()
        self.t = 0
        self._m = None
        self._v = None

    def step(self, params, grads):
        cfg = self.config
        if len(params) != len(grads):
            raise ShapeError("params/grads length mismatch")
        self.t += 1
        if cfg.rule == "sgd":
            for p, g in zip(params, grads):
                p -= cfg.learning_rate * g
        else:
            if self._m is None:
                self._m = [np.zeros_like(p) for p in params]
                self._v = [np.zeros_like(p) for p in params]
            c1 = 1.0 - cfg.beta1 ** self.t
            c2 = 1.0 - cfg.beta2 ** self.t
            for p, g, m, v in zip(params, grads, self._m, self._v):
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * g * g
                p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if self.t % 100 == 0:
            assert_finite(params)


def assert_finite(params):
    for i, p in enumerate(params):
        if not np.all(np.isfinite(p)):
            raise NumericError(f"parameter {i} became non-finite")


def mse(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def huber(pred, target, delta=1.0):
    diff = pred - target
    small = np.abs(diff) <= delta
    loss = np.where(small, 0.5 * diff * diff, delta * (np.abs(diff) - 0.5 * delta))
    grad = np.where(small, diff, delta * np.sign(diff))
    return float(np.mean(loss)), grad / diff.size


LOSSES = {"mse": mse, "huber": huber}


def train_step(net, batch, loss="mse", opt=None):
    """One gradient step on ``batch = (X, Y)``; returns the pre-update loss."""
    X, Y = batch
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) == 0:
        raise ShapeError("empty batch")
    opt = opt if opt is not None else Optimizer()
    pred, cache = net.forward_cache(X)
    if pred.shape != Y.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {Y.shape}")
    value, dpred = LOSSES[loss](pred, Y)
    if not np.isfinite(value):
        raise NumericError(f"non-finite {loss} loss (max |pred| = {np.max(np.abs(pred))})")
    grads, _ = net.backward(cache, dpred)
    opt.step(net.params, grads)
    return value
