"""Loss pieces and stochastic activations shared by the model families."""

from __future__ import annotations

import numpy as np

from tabforge.nn import tensor as T
from tabforge.nn.tensor import Tensor


def straight_through(soft: Tensor, hard_data: np.ndarray) -> Tensor:
    """Forward value ``hard_data``, gradient of ``soft`` (identity pass-through)."""
    out = T._node(np.asarray(hard_data, dtype=soft.data.dtype), (soft,), lambda g: (g,), "straight_through")
    return out


def gumbel_softmax(logits: Tensor, tau: float, rng: np.random.Generator, hard: bool = False) -> Tensor:
    """Relaxed one-hot sample: softmax((logits + gumbel noise) / tau).

    hard=True returns the argmax one-hot in the forward value while gradients
    flow through the relaxed sample.
    """
    if tau <= 0:
        raise ValueError("gumbel-softmax temperature must be > 0")
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    u = np.clip(rng.random(logits.data.shape), 1e-12, 1.0 - 1e-12)
    noise = -np.log(-np.log(u)).astype(logits.data.dtype)
    soft = T.softmax((logits + Tensor(noise)) * (1.0 / tau), axis=-1)
    if not hard:
        return soft
    idx = soft.data.argmax(axis=-1)
    hard_data = np.zeros_like(soft.data)
    np.put_along_axis(hard_data, idx[..., None], 1.0, axis=-1)
    return straight_through(soft, hard_data)


def kl_std_normal(mu, sigma):
    """KL(N(mu, diag(sigma^2)) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - ln sigma^2).

    Accepts 1-D vectors (returns a scalar) or 2-D batches (returns per-row
    values); reduction over the last axis.
    """
    graph = isinstance(mu, Tensor) or isinstance(sigma, Tensor)
    if not graph:
        mu, sigma = np.asarray(mu, dtype=np.float64), np.asarray(sigma, dtype=np.float64)
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        return 0.5 * np.sum(mu**2 + sigma**2 - 1.0 - np.log(sigma**2), axis=-1)
    mu = mu if isinstance(mu, Tensor) else Tensor(mu)
    sigma = sigma if isinstance(sigma, Tensor) else Tensor(sigma)
    if np.any(sigma.data <= 0):
        raise ValueError("sigma must be positive")
    var = sigma * sigma
    inner = mu * mu + var - 1.0 - T.log(var)
    return T.mul(T.sum_(inner, axis=-1), 0.5)


def cross_entropy_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row cross entropy -log softmax(logits)[target]; callers aggregate."""
    targets = np.asarray(targets)
    logp = T.log_softmax(logits, axis=-1)
    rows = np.arange(logits.data.shape[0])
    return -T.take_pairs(logp, rows, targets)
