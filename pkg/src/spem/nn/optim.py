"""Softmax cross-entropy, Adam and the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy of ``logits (B, C)`` and its gradient w.r.t. the logits.

    A single ``(C,)`` logit vector with a scalar label is also accepted.
    """
    logits = np.asarray(logits)
    if not np.issubdtype(logits.dtype, np.floating):
        logits = logits.astype(np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None]
    labels = np.atleast_1d(np.asarray(labels))
    b, c = logits.shape
    if c < 2:
        raise ValueError("need at least two classes")
    if labels.shape != (b,) or labels.min() < 0 or labels.max() >= c:
        raise ValueError("label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    loss = -logp[np.arange(b), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(b), labels] -= 1.0
    grad /= b
    if single:
        return loss, grad[0]
    return loss, grad


def lr_at_epoch(epoch: int, base: float = 1e-3, decay: float = 0.1, every: int = 100) -> float:
    """Learning rate for a 1-based ``epoch``: ``base * decay**floor((epoch-1)/every)``."""
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    return base * decay ** ((epoch - 1) // every)


def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns ``(param, m, v)`` as new arrays."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, lr: float):
        """Update ``params`` in place from ``grads`` (both keyed by name)."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}")
        self.t += 1
        for name, p in params.items():
            m = self.m.get(name, np.zeros_like(p))
            v = self.v.get(name, np.zeros_like(p))
            new, self.m[name], self.v[name] = adam_step(p, grads[name], m, v, self.t, lr,
                                                        self.beta1, self.beta2, self.eps)
            p[...] = new
