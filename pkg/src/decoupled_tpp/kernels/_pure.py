"""Numpy reference implementation of the hot kernels.

The compiled backend in ``_fused`` implements the same four functions with
identical signatures and save-buffer layouts; either module can be swapped in
behind :mod:`decoupled_tpp.kernels`.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def softplus(x: np.ndarray) -> np.ndarray:
    """Overflow-safe ln(1 + e^x): returns x for x > 30 and e^x for x < -30."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    hi = x > 30.0
    lo = x < -30.0
    mid = ~(hi | lo)
    out[hi] = x[hi]
    out[lo] = np.exp(x[lo])
    out[mid] = np.log1p(np.exp(x[mid]))
    return out


def softplus_grad(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """d softplus/dx = sigmoid(x), applied to an incoming gradient."""
    x = np.asarray(x, dtype=np.float64)
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)
    return sig * grad_out


def mlp_forward(
    x: np.ndarray,
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    activation: str = "tanh",
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Dense chain x @ W0 + b0 -> act -> ... -> W_last + b_last (last layer linear).

    Returns the output and the list of layer inputs [x, a1, ..., a_{L-1}]
    needed by :func:`mlp_backward`.
    """
    acts = [np.ascontiguousarray(x, dtype=np.float64)]
    h = acts[0]
    last = len(weights) - 1
    for layer, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if layer < last:
            h = _activate(h, activation)
            acts.append(h)
    return h, acts


def mlp_backward(
    grad_out: np.ndarray,
    acts: list[np.ndarray],
    weights: list[np.ndarray],
    activation: str = "tanh",
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Gradients of an mlp_forward call: returns (dx, dweights, dbiases)."""
    grads_w: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    dz = np.asarray(grad_out, dtype=np.float64)
    for layer in range(len(weights) - 1, -1, -1):
        a_in = acts[layer]
        grads_w[layer] = a_in.T @ dz
        grads_b[layer] = dz.sum(axis=0)
        dz = dz @ weights[layer].T
        if layer > 0:
            dz = dz * _activation_grad(acts[layer], activation)
    return dz, grads_w, grads_b


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    if activation == "softplus":
        return softplus(z)
    raise ValueError(f"unknown activation {activation!r}")


def _activation_grad(post: np.ndarray, activation: str) -> np.ndarray:
    # Both activations admit a gradient in terms of their own output, which
    # keeps the save-buffer layout identical across backends.
    if activation == "tanh":
        return 1.0 - post * post
    if activation == "softplus":
        return 1.0 - np.exp(-post)
    raise ValueError(f"unknown activation {activation!r}")
