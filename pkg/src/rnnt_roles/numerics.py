"""Numerically stable log-space primitives and the Adam optimizer.

Everything runs on plain float64 numpy arrays; there is no autograd.
Layers and losses compute their own gradients and accumulate them into
``Parameter.grad``, and ``adam_step`` applies them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericalError(RuntimeError):
    """Raised when a computation produces or receives non-finite values."""


def logsumexp(values) -> float:
    """ln(sum(exp(v_i))) via max-shift. Exact for a single element.

    Raises ValueError on an empty sequence. All -inf inputs yield -inf.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("logsumexp of an empty sequence")
    m = float(np.max(v))
    if not np.isfinite(m):
        # all -inf, or a +inf/nan is present; shifting would produce nan
        return m
    return m + float(np.log(np.sum(np.exp(v - m))))


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Log-domain softmax along ``axis``, max-shifted for stability."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim == 0:
        raise ValueError("log_softmax requires at least one dimension")
    m = np.max(x, axis=axis, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(logits, axis=axis))


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")
    return x


@dataclass
class Parameter:
    """A named trainable tensor with an accumulated gradient.

    ``frozen`` parameters are never touched by the optimizer; training code
    additionally avoids accumulating gradients into them.
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = None
    frozen: bool = False

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad = np.asarray(self.grad, dtype=np.float64)
        if self.grad.shape != self.value.shape:
            raise ValueError(
                f"gradient shape {self.grad.shape} != value shape "
                f"{self.value.shape} for parameter {self.name!r}"
            )

    def zero_grad(self):
        self.grad.fill(0.0)


@dataclass
class AdamConfig:
    """Adam with linear warm-up and decoupled weight decay.

    Defaults are the full-scale recipe values; toy runs override them (see
    ``cli.default_config``).
    """

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-6
    warmup_steps: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.beta1 < 1.0:
            raise ValueError("beta1 must be in (0, 1)")
        if not 0.0 < self.beta2 < 1.0:
            raise ValueError("beta2 must be in (0, 1)")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState, step: int, config: AdamConfig):
    """One Adam update over ``params`` (1-based ``step``), then zero grads.

    Effective learning rate is ``lr * min(1, step / warmup_steps)``; weight
    decay is decoupled (applied to the value, scaled by the effective rate).
    Frozen parameters are skipped entirely.
    """
    if step < 1:
        raise ValueError("step is 1-based")
    if config.warmup_steps > 0:
        lr = config.learning_rate * min(1.0, step / config.warmup_steps)
    else:
        lr = config.learning_rate
    b1, b2 = config.beta1, config.beta2
    for p in params:
        if p.frozen:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient for parameter {p.name!r}")
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        update = m_hat / (np.sqrt(v_hat) + config.epsilon)
        if config.weight_decay != 0.0:
            update = update + config.weight_decay * p.value
        p.value -= lr * update
        p.zero_grad()
