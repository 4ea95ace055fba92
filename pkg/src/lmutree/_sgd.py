"""Per-sample SGD kernel for leaf linear models."""

import numpy as np
from numba import njit


@njit(cache=True)
def sgd_epochs(X, y, w, b, alpha, epochs):
    """Run ``epochs`` in-order passes of per-sample SGD on 0.5 * (y - Xw - b)**2.

    ``w`` is updated in place; the new bias is returned.
    """
    m, n = X.shape
    for _ in range(epochs):
        for t in range(m):
            pred = b
            for j in range(n):
                pred += X[t, j] * w[j]
            r = alpha * (y[t] - pred)
            for j in range(n):
                w[j] += r * X[t, j]
            b += r
    return b


@njit(cache=True)
def mean_squared_error(X, y, w, b):
    m, n = X.shape
    total = 0.0
    for t in range(m):
        pred = b
        for j in range(n):
            pred += X[t, j] * w[j]
        total += (y[t] - pred) ** 2
    return total / m


def warmup():
    X = np.zeros((1, 1))
    y = np.zeros(1)
    w = np.zeros(1)
    sgd_epochs(X, y, w, 0.0, 0.1, 1)
    mean_squared_error(X, y, w, 0.0)


def sample_loss(x, y, w, b):
    """Per-sample loss 0.5 * (y - x.w - b)**2."""
    e = y - float(np.dot(x, w)) - b
    return 0.5 * e * e


def sample_gradient(x, y, w, b):
    """Gradient of ``sample_loss`` with respect to (w, b)."""
    e = y - float(np.dot(x, w)) - b
    return -e * np.asarray(x, dtype=np.float64), -e
