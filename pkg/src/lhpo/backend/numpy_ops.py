"""Pure-NumPy implementation of the network kernels.

Reference backend: always available, used when the compiled extension is
missing or disabled. Both backends implement the same three operations on a
fixed two-hidden-layer perceptron (ReLU hidden activations, linear output),
given as ``layers = [(W0, b0), (W1, b1), (W2, b2)]`` with C-contiguous
float64 arrays.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def mlp_forward(layers, x: np.ndarray) -> np.ndarray:
    (w0, b0), (w1, b1), (w2, b2) = layers
    h1 = np.maximum(x @ w0 + b0, 0.0)
    h2 = np.maximum(h1 @ w1 + b1, 0.0)
    return h2 @ w2 + b2


def mlp_forward_cache(layers, x: np.ndarray):
    """Forward pass that also returns the hidden activations for backprop."""
    (w0, b0), (w1, b1), (w2, b2) = layers
    h1 = np.maximum(x @ w0 + b0, 0.0)
    h2 = np.maximum(h1 @ w1 + b1, 0.0)
    return h2 @ w2 + b2, h1, h2


def mlp_backward(layers, x: np.ndarray, h1: np.ndarray, h2: np.ndarray, dy: np.ndarray):
    """Gradients of every layer plus the input, given output cotangent dy.

    Returns ``([(dW0, db0), (dW1, db1), (dW2, db2)], dx)``.
    """
    (w0, _), (w1, _), (w2, _) = layers
    dw2 = h2.T @ dy
    db2 = dy.sum(axis=0)
    dz2 = (dy @ w2.T) * (h2 > 0.0)
    dw1 = h1.T @ dz2
    db1 = dz2.sum(axis=0)
    dz1 = (dz2 @ w1.T) * (h1 > 0.0)
    dw0 = x.T @ dz1
    db0 = dz1.sum(axis=0)
    dx = dz1 @ w0.T
    return [(dw0, db0), (dw1, db1), (dw2, db2)], dx
