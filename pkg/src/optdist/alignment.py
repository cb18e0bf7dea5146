"""Pseudo labels from the SDN losses and the alignment losses that train the selector.

Every function works on a single loss vector ``Q`` of length L or on a batch
``(n, L)``; reductions are over the last axis.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import xlogy

from .dsm import one_hot, softmax

EPS_LOG = 1e-12


def hard_pseudo_label(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return one_hot(np.argmin(q, axis=-1), q.shape[-1])


def soft_pseudo_label(q) -> np.ndarray:
    return softmax(-np.asarray(q, dtype=np.float64))


def focal_ce(y_hard, alpha):
    """Focal-weighted cross-entropy sum_i -y_i (1 - a_i)^2 log a_i."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return np.sum(-np.asarray(y_hard) * (1.0 - alpha) ** 2 * np.log(np.maximum(alpha, EPS_LOG)), axis=-1)


def focal_ce_grad(y_hard, alpha):
    """d focal_ce / d alpha."""
    alpha = np.asarray(alpha, dtype=np.float64)
    a = np.maximum(alpha, EPS_LOG)
    d = 2.0 * (1.0 - alpha) * np.log(a) - np.where(alpha > EPS_LOG, (1.0 - alpha) ** 2 / a, 0.0)
    return np.asarray(y_hard) * d


def kl_loss(omega, alpha):
    """KL(omega || alpha) in nats."""
    omega = np.asarray(omega, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    return np.sum(xlogy(omega, omega) - omega * np.log(np.maximum(alpha, EPS_LOG)), axis=-1)


def kl_grad_alpha(omega, alpha):
    alpha = np.asarray(alpha, dtype=np.float64)
    return np.where(alpha > EPS_LOG, -np.asarray(omega) / np.maximum(alpha, EPS_LOG), 0.0)


def kl_grad_q(omega, alpha):
    """d KL(softmax(-Q) || alpha) / dQ, used only when pseudo labels are not detached."""
    omega = np.asarray(omega, dtype=np.float64)
    r = np.log(np.maximum(omega, 1e-300)) - np.log(np.maximum(np.asarray(alpha), EPS_LOG))
    return -omega * (r - np.sum(omega * r, axis=-1, keepdims=True))


def weighted_dlm_loss(weights, q):
    return np.sum(np.asarray(weights) * np.asarray(q, dtype=np.float64), axis=-1)


@dataclass
class LossBreakdown:
    dlm: float  # weighted SDN loss
    ce: float
    kl: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


def total_loss(dlm, ce, kl, no_ce: bool = False, no_kl: bool = False) -> LossBreakdown:
    """Batch means of the three terms; disabled terms are reported as 0."""
    dlm = np.atleast_1d(np.asarray(dlm, dtype=np.float64))
    ce = np.zeros_like(dlm) if no_ce else np.atleast_1d(np.asarray(ce, dtype=np.float64))
    kl = np.zeros_like(dlm) if no_kl else np.atleast_1d(np.asarray(kl, dtype=np.float64))
    per_example = dlm
    if not no_ce:
        per_example = per_example + ce
    if not no_kl:
        per_example = per_example + kl
    return LossBreakdown(float(dlm.mean()), float(ce.mean()), float(kl.mean()), float(per_example.mean()))
