"""Distribution selection: selection MLP, Gumbel noise, straight-through Gumbel-softmax."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import MlpSpec, init_mlp, mlp_backward, mlp_forward, mlp_grad_dict, mlp_param_dict


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_backward(probs, grad_probs):
    """Vector-Jacobian product of softmax at output ``probs``."""
    return probs * (grad_probs - np.sum(probs * grad_probs, axis=-1, keepdims=True))


def log_softmax_backward(probs, grad_logp):
    return grad_logp - probs * np.sum(grad_logp, axis=-1, keepdims=True)


def one_hot(index, n: int) -> np.ndarray:
    index = np.asarray(index)
    return (index[..., None] == np.arange(n)).astype(np.float64)


@dataclass
class SelectionOutput:
    alpha: np.ndarray
    gumbel: np.ndarray
    pi_soft: np.ndarray
    mask: np.ndarray
    index: np.ndarray


class SelectionNetwork:
    """MLP from h_u to L selection logits; alpha = softmax(logits)."""

    def __init__(self, input_dim: int, n_distributions: int, hidden_sizes=(64, 32), seed: int = 0, prefix: str = "dsm"):
        self.prefix = prefix
        self.layers = init_mlp(MlpSpec([input_dim, *hidden_sizes, n_distributions], "relu", seed))

    def params(self) -> dict[str, np.ndarray]:
        return mlp_param_dict(self.layers, self.prefix)

    def forward(self, h_u):
        return mlp_forward(self.layers, h_u)

    def backward(self, tape, grad_logits):
        layer_grads, grad_in = mlp_backward(self.layers, tape, grad_logits)
        return mlp_grad_dict(layer_grads, self.prefix), grad_in


def selection_probs(h_u, net: SelectionNetwork) -> np.ndarray:
    logits, _ = net.forward(h_u)
    return softmax(logits)


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel variates -log(-log U); U == 0 is redrawn."""
    u = rng.random(shape)
    while True:
        bad = u <= 0.0
        if not np.any(bad):
            break
        u[bad] = rng.random(int(bad.sum()))
    return -np.log(-np.log(u))


def gumbel_softmax_st(alpha, g, tau: float):
    """Relaxed weights, hard one-hot mask and chosen index.

    Forward consumers use ``mask``; the backward pass treats it as ``pi_soft``
    (see :func:`gumbel_softmax_backward`). Ties go to the lowest index.
    """
    return gumbel_softmax_st_log(np.log(np.asarray(alpha, dtype=np.float64)), g, tau)


def gumbel_softmax_st_log(log_alpha, g, tau: float):
    """:func:`gumbel_softmax_st` taking ``log alpha`` directly."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    scores = np.asarray(log_alpha, dtype=np.float64) + np.asarray(g, dtype=np.float64)
    pi_soft = softmax(scores / tau)
    index = np.argmax(scores, axis=-1)
    return pi_soft, one_hot(index, scores.shape[-1]), index


def gumbel_softmax_backward(pi_soft, grad_pi, tau: float):
    """Gradient w.r.t. ``log alpha`` given the gradient w.r.t. the relaxed weights."""
    return softmax_backward(pi_soft, grad_pi) / tau


def select_distribution(alpha) -> np.ndarray:
    """Inference-time choice: argmax of alpha, lowest index on ties."""
    return np.argmax(np.asarray(alpha), axis=-1)
