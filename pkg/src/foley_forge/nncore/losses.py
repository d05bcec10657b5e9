"""Common losses with analytic gradients w.r.t. their logits/scores."""

import numpy as np


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch.

    logits: (N, K); labels: (N,) int class ids.
    Returns (loss, dlogits).
    """
    n = logits.shape[0]
    p = softmax(logits)
    idx = np.arange(n)
    loss = -np.mean(np.log(p[idx, labels] + 1e-300))
    dlogits = p.copy()
    dlogits[idx, labels] -= 1.0
    return loss, dlogits / n


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy on raw scores; returns (loss, dlogits)."""
    p = sigmoid(logits)
    eps = 1e-12
    loss = -np.mean(targets * np.log(p + eps) + (1 - targets) * np.log(1 - p + eps))
    dlogits = (p - targets) / logits.size
    return loss, dlogits
