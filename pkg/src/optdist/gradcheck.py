"""Central-difference check of the full training objective on a toy model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EncodedDataset
from .diffcore import finite_diff_check
from .training import TrainConfig, build_model

TOY_CONFIG = TrainConfig(
    kind="optdist",
    n_distributions=3,
    embedding_dim=3,
    bottom_sizes=(8,),
    tower_sizes=(8, 8),
    selector_sizes=(8,),
    seed=0,
)


@dataclass
class GradcheckResult:
    max_rel_error: float
    worst: str | None
    threshold: float
    n_params: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.threshold

    def as_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "worst": self.worst,
            "threshold": self.threshold,
            "n_params": self.n_params,
            "verdict": "PASS" if self.passed else "FAIL",
        }


def toy_batch(n: int = 16, n_cat: int = 2, vocab: int = 5, n_cont: int = 2, seed: int = 0) -> EncodedDataset:
    rng = np.random.default_rng(seed)
    cat = rng.integers(0, vocab, size=(n, n_cat))
    cont = rng.standard_normal((n, n_cont))
    conv = rng.random(n) < 0.5
    y = np.where(conv, np.exp(rng.normal(1.0, 1.0, n)), 0.0)
    return EncodedDataset(cat, cont, y)


def gradient_check(config: TrainConfig | None = None, eps: float = 1e-5, threshold: float = 1e-4,
                   n: int = 16, vocab: int = 5, n_cat: int = 2, n_cont: int = 2, seed: int = 0,
                   corrupt: bool = False, floor: float = 1e-12) -> GradcheckResult:
    """Compare analytic gradients with central differences at a random parameter point.

    Parameters (biases included) are jittered away from their initial values so
    that no ReLU sits exactly on its kink. Gumbel noise is drawn once and held
    fixed; stop-gradient quantities are pinned at their values at the base
    point. ``corrupt`` perturbs one analytic gradient entry (fault injection).
    ``floor`` is the smallest denominator of the relative error.
    """
    config = (config or TOY_CONFIG).validate()
    batch = toy_batch(n, n_cat, vocab, n_cont, seed)
    model = build_model(config, [vocab] * n_cat, n_cont)
    rng = np.random.default_rng([seed, 11])
    for p in model.params.values():
        p += rng.normal(0.0, 0.1, size=p.shape)
    noise = model.sample_noise(n, rng)
    _, grads, info = model.loss_and_grad(batch, noise)
    frozen = model.frozen_from(info)
    if corrupt:
        key = next(iter(grads))
        grads[key] = grads[key].copy()
        grads[key].flat[0] += 1.0
    err, worst = finite_diff_check(lambda: model.loss_and_grad(batch, noise, frozen)[0].total, model.params, grads, eps, floor)
    return GradcheckResult(float(err), worst, threshold, model.n_params())
