"""Dense float64 building blocks: layers, probabilities, losses, AdamW and the LR schedule.

Matrices are plain 2-D ``numpy.float64`` arrays (row-major).  Every layer has an
explicit backward pass; there is no tape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

EPS = 1e-7


class DimensionError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


# --------------------------------------------------------------------------- layers


def affine_forward(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Return ``X @ W + b`` with ``b`` broadcast over rows."""
    W = as_matrix(W, "W")
    X = as_matrix(X, "X")
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if X.shape[1] != W.shape[0]:
        raise DimensionError(f"cannot apply W of shape {W.shape} to X of shape {X.shape}")
    if b.shape[0] != W.shape[1]:
        raise DimensionError(f"bias of length {b.shape[0]} does not fit W of shape {W.shape}")
    return X @ W + b


def affine_backward(W: np.ndarray, X: np.ndarray, dY: np.ndarray):
    """Gradients ``(dW, db, dX)`` of a scalar loss through ``Y = X @ W + b``."""
    return X.T @ dY, dY.sum(axis=0), dY @ W.T


# --------------------------------------------------------------------------- probabilities


def sigmoid(z):
    """Overflow-free logistic function; works on scalars and arrays."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return float(out) if out.ndim == 0 else out


def softmax2(z1, z2):
    """Two-way softmax, returned as ``(q1, q2)``.

    Written as a sigmoid of the logit difference, which makes it exactly
    invariant to a common shift of both logits.
    """
    q1 = sigmoid(np.asarray(z1, dtype=np.float64) - np.asarray(z2, dtype=np.float64))
    return q1, 1.0 - q1


def softmax2_rows(Z: np.ndarray) -> np.ndarray:
    q1 = sigmoid(Z[:, 0] - Z[:, 1])
    return np.stack([q1, 1.0 - q1], axis=1)


def softmax2_backward(Q: np.ndarray, dQ: np.ndarray) -> np.ndarray:
    """Map ``dL/dQ`` (n, 2) to ``dL/dlogits`` for rows produced by :func:`softmax2_rows`."""
    s = (dQ * Q).sum(axis=1, keepdims=True)
    return Q * (dQ - s)


def clamp_prob(p):
    return np.clip(p, EPS, 1.0 - EPS)


def bce(y_hat, y):
    """Binary cross entropy with ``y_hat`` clamped to ``[EPS, 1 - EPS]``."""
    c = clamp_prob(np.asarray(y_hat, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    out = -(y * np.log(c) + (1.0 - y) * np.log1p(-c))
    return float(out) if out.ndim == 0 else out


def bce_grad(y_hat, y):
    """d bce / d y_hat; zero where the clamp is active."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    c = clamp_prob(y_hat)
    g = (c - y) / (c * (1.0 - c))
    return np.where((y_hat < EPS) | (y_hat > 1.0 - EPS), 0.0, g)


# --------------------------------------------------------------------------- parameters / optimizer


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    m1: np.ndarray = field(default=None)
    m2: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        for name in ("grad", "m1", "m2"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(self.value))
            elif getattr(self, name).shape != self.value.shape:
                raise DimensionError(f"{name} shape {getattr(self, name).shape} != value shape {self.value.shape}")

    def zero_grad(self):
        self.grad[...] = 0.0


@dataclass
class OptimizerConfig:
    lr_base: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.001
    warmup_epochs: int = 5
    total_epochs: int = 40

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def adamw_step(params: Iterable[Parameter], config: OptimizerConfig, lr_t: float, step: int) -> None:
    """One in-place AdamW update; gradients are zeroed afterwards.

    Decoupled decay is applied first: ``value -= lr_t * weight_decay * value``.
    """
    if step < 1:
        raise ValueError("step counts from 1")
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for p in params:
        if config.weight_decay:
            p.value -= lr_t * config.weight_decay * p.value
        p.m1 *= b1
        p.m1 += (1.0 - b1) * p.grad
        p.m2 *= b2
        p.m2 += (1.0 - b2) * p.grad * p.grad
        p.value -= lr_t * (p.m1 / c1) / (np.sqrt(p.m2 / c2) + config.eps)
        p.zero_grad()


def cosine_warmup_lr(epoch_progress: float, config: OptimizerConfig) -> float:
    """Linear warmup from 0 to ``lr_base`` followed by cosine decay to 0.

    ``epoch_progress`` is the fraction of ``total_epochs`` elapsed.
    """
    t = min(max(float(epoch_progress), 0.0), 1.0)
    if config.total_epochs <= 0:
        return config.lr_base
    warm = min(config.warmup_epochs / config.total_epochs, 1.0)
    if warm > 0 and t < warm:
        return config.lr_base * t / warm
    if warm >= 1.0:
        return config.lr_base
    s = (t - warm) / (1.0 - warm)
    return config.lr_base * 0.5 * (1.0 + math.cos(math.pi * s))


# --------------------------------------------------------------------------- gradient checking


def grad_check(loss_fn: Callable[[], float], params: Sequence[Parameter], eps: float = 1e-5) -> float:
    """Largest ``|analytic - numeric| / max(1, |numeric|)`` over all parameter entries.

    ``loss_fn`` must recompute the loss from the current parameter values and
    accumulate analytic gradients into ``param.grad`` (which is zeroed here
    before the analytic pass).
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    for p in params:
        p.zero_grad()
    base = loss_fn()
    if not math.isfinite(base):
        raise NumericalError(f"loss is not finite: {base}")
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        af = a.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn()
            flat[k] = orig - eps
            down = loss_fn()
            flat[k] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericalError(f"non-finite loss while perturbing entry {k} of a {p.value.shape} parameter")
            num = (up - down) / (2.0 * eps)
            worst = max(worst, abs(af[k] - num) / max(1.0, abs(num)))
    for p in params:
        p.zero_grad()
    return worst
