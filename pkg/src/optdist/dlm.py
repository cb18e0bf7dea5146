"""Sub-distribution networks emitting zero-inflated lognormal parameters.

Each SDN is a relu tower followed by a 3-unit linear head ``(a, b, c)``:
``p = sigmoid(a)``, ``mu = b``, ``sigma = softplus(c) + SIGMA_FLOOR``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .diffcore import DenseLayer, MlpSpec, init_mlp, mlp_backward, mlp_forward, mlp_grad_dict, mlp_param_dict, softplus

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ZilnParams:
    p: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray


def heads_to_params(raw: np.ndarray) -> ZilnParams:
    raw = np.asarray(raw, dtype=np.float64)
    return ZilnParams(expit(raw[..., 0]), raw[..., 1].copy(), softplus(raw[..., 2]) + SIGMA_FLOOR)


def _check_labels(y, c):
    if np.any((c == 1) & ~(y > 0)):
        raise ValueError("converted examples need y > 0")


def ziln_nll(params: ZilnParams, y, c):
    """Negative log-likelihood of ``y`` under ZILN(p, mu, sigma); natural logs."""
    y = np.asarray(y, dtype=np.float64)
    c = np.asarray(c)
    _check_labels(y, c)
    p, mu, sigma = params.p, params.mu, params.sigma
    log_y = np.log(np.where(c == 1, y, 1.0))
    pos = -np.log(p) + np.log(np.where(c == 1, y, 1.0) * np.sqrt(2.0 * np.pi) * sigma) + (log_y - mu) ** 2 / (2.0 * sigma**2)
    neg = -np.log1p(-p)
    return np.where(c == 1, pos, neg)


def ziln_nll_from_heads(raw, y, c):
    """Loss and its gradient w.r.t. the head pre-activations, shape ``(..., 3)``.

    Same value as :func:`ziln_nll` but evaluated through log-sigmoid identities
    so that extreme logits stay finite.
    """
    raw = np.asarray(raw, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c = np.asarray(c)
    _check_labels(y, c)
    a, mu, cr = raw[..., 0], raw[..., 1], raw[..., 2]
    sigma = softplus(cr) + SIGMA_FLOOR
    pos_mask = c == 1
    log_y = np.log(np.where(pos_mask, y, 1.0))
    r = log_y - mu
    pos = softplus(-a) + log_y + HALF_LOG_2PI + np.log(sigma) + r * r / (2.0 * sigma * sigma)
    neg = softplus(a)
    loss = np.where(pos_mask, pos, neg)

    grad = np.empty_like(raw)
    p = expit(a)
    grad[..., 0] = np.where(pos_mask, p - 1.0, p)
    grad[..., 1] = np.where(pos_mask, -r / sigma**2, 0.0)
    dsigma = 1.0 / sigma - r * r / sigma**3
    grad[..., 2] = np.where(pos_mask, dsigma * expit(cr), 0.0)
    return loss, grad


def ziln_expectation(params: ZilnParams):
    """Mean of the ZILN distribution, p * exp(mu + sigma^2 / 2)."""
    expo = params.mu + 0.5 * params.sigma**2
    with np.errstate(over="ignore"):
        out = params.p * np.exp(expo)
    bad = ~np.isfinite(out)
    if np.any(bad):
        logger.warning("ZILN expectation overflowed for %d value(s); clamped", int(np.sum(bad)))
        out = np.where(bad, np.finfo(np.float64).max, out)
    return out


class SubDistributionNetwork:
    def __init__(self, input_dim: int, tower_sizes=(64, 32, 32), seed: int = 0, prefix: str = "sdn"):
        self.prefix = prefix
        if tower_sizes:
            self.tower = init_mlp(MlpSpec([input_dim, *tower_sizes], "relu", seed, output_activation="relu"))
            last = self.tower[-1].n_out
        else:
            self.tower = []
            last = input_dim
        self.head = init_mlp(MlpSpec([last, 3], "identity", seed + 7919))[0]

    @property
    def layers(self) -> list[DenseLayer]:
        return [*self.tower, self.head]

    def params(self) -> dict[str, np.ndarray]:
        out = mlp_param_dict(self.tower, f"{self.prefix}.tower")
        out[f"{self.prefix}.head.W"] = self.head.weights
        out[f"{self.prefix}.head.b"] = self.head.bias
        return out

    def forward(self, h_u):
        return mlp_forward(self.layers, h_u)

    def backward(self, tape, grad_raw):
        layer_grads, grad_in = mlp_backward(self.layers, tape, grad_raw)
        grads = mlp_grad_dict(layer_grads[:-1], f"{self.prefix}.tower")
        grads[f"{self.prefix}.head.W"], grads[f"{self.prefix}.head.b"] = layer_grads[-1]
        return grads, grad_in


@dataclass
class DlmOutput:
    params: list[ZilnParams]  # one entry per SDN
    losses: np.ndarray  # Q, shape (n, L)


class DistributionLearningModule:
    """L independent SDN towers over the shared representation."""

    def __init__(self, input_dim: int, n_distributions: int, tower_sizes=(64, 32, 32), seed: int = 0, prefix: str = "dlm"):
        if n_distributions < 1:
            raise ValueError("need at least one sub-distribution")
        self.sdns = [
            SubDistributionNetwork(input_dim, tower_sizes, seed=_sdn_seed(seed, i), prefix=f"{prefix}.{i}")
            for i in range(n_distributions)
        ]

    def __len__(self):
        return len(self.sdns)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for sdn in self.sdns:
            out.update(sdn.params())
        return out

    def sdn_forward(self, h_u, index: int) -> ZilnParams:
        if not 0 <= index < len(self.sdns):
            raise IndexError(f"SDN index {index} out of range for L={len(self.sdns)}")
        raw, _ = self.sdns[index].forward(h_u)
        return heads_to_params(raw)

    def forward(self, h_u):
        """Raw head outputs stacked to shape ``(n, L, 3)`` plus per-SDN tapes."""
        raws, tapes = [], []
        for sdn in self.sdns:
            raw, tape = sdn.forward(h_u)
            raws.append(raw)
            tapes.append(tape)
        return np.stack(raws, axis=-2), tapes

    def losses(self, h_u, y, c) -> DlmOutput:
        raw, _ = self.forward(h_u)
        q, _ = ziln_nll_from_heads(raw, np.asarray(y)[..., None], np.asarray(c)[..., None])
        return DlmOutput([heads_to_params(raw[..., i, :]) for i in range(len(self.sdns))], q)

    def backward(self, tapes, grad_raw):
        """``grad_raw`` has shape ``(n, L, 3)``. Returns parameter grads and d/dh_u."""
        grads = {}
        grad_in = None
        for i, (sdn, tape) in enumerate(zip(self.sdns, tapes)):
            g, gi = sdn.backward(tape, grad_raw[:, i, :])
            grads.update(g)
            grad_in = gi if grad_in is None else grad_in + gi
        return grads, grad_in


def _sdn_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base), 1000 + index]).generate_state(1)[0])
