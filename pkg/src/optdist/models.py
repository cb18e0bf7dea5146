"""OptDist and the baseline networks, each with an exact hand-derived backward pass.

All networks share one interface:

``params``
    dict of named float64 arrays, updated in place by the optimizer.
``loss_and_grad(batch, gumbel=None, frozen=None)``
    returns ``(LossBreakdown, grads, info)``.
``predict(cat, cont)``
    point prediction of the CLTV.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import alignment as al
from .data import EncodedDataset
from .diffcore import MlpSpec, init_mlp, mlp_backward, mlp_forward, mlp_grad_dict, mlp_param_dict, softplus
from .dlm import DistributionLearningModule, heads_to_params, ziln_expectation, ziln_nll_from_heads
from .dsm import (
    SelectionNetwork,
    gumbel_softmax_backward,
    gumbel_softmax_st_log,
    log_softmax,
    log_softmax_backward,
    softmax_backward,
)
from .representation import Representation

MODEL_KINDS = ("optdist", "ziln", "two_stage", "mtl_mse")


def component_seed(seed: int, tag: int) -> int:
    """Seed for one sub-network, independent of which other sub-networks exist."""
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1)[0] % (2**31))


_REP, _DLM, _DSM, _AUX = 1, 2, 3, 4


def _bce_with_logits(z, c):
    return softplus(z) - c * z, expit(z) - c


class _Base:
    kind = "base"
    n_distributions = 1

    def __init__(self, vocab_sizes, n_cont, embedding_dim=5, bottom_sizes=(64,), tower_sizes=(64, 32, 32), seed=0, **_):
        self.arch = dict(
            vocab_sizes=[int(v) for v in vocab_sizes],
            n_cont=int(n_cont),
            embedding_dim=int(embedding_dim),
            bottom_sizes=[int(s) for s in bottom_sizes],
            tower_sizes=[int(s) for s in tower_sizes],
            seed=int(seed),
        )

    def select(self, cat, cont):
        return np.zeros(len(np.asarray(cat)), dtype=np.int64)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


class OptDistNetwork(_Base):
    """Shared representation, L ZILN towers, and a Gumbel-softmax selector."""

    kind = "optdist"

    def __init__(self, vocab_sizes, n_cont, n_distributions=4, temperature=1.0, embedding_dim=5,
                 bottom_sizes=(64,), tower_sizes=(64, 32, 32), selector_sizes=(64, 32), seed=0,
                 no_gumbel=False, no_kl=False, no_ce=False, no_stopgrad=False, **_):
        super().__init__(vocab_sizes, n_cont, embedding_dim, bottom_sizes, tower_sizes, seed)
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.arch.update(n_distributions=int(n_distributions), selector_sizes=[int(s) for s in selector_sizes])
        self.n_distributions = int(n_distributions)
        self.temperature = float(temperature)
        self.no_gumbel, self.no_kl, self.no_ce, self.no_stopgrad = bool(no_gumbel), bool(no_kl), bool(no_ce), bool(no_stopgrad)
        self.rep = Representation(vocab_sizes, n_cont, embedding_dim, bottom_sizes, component_seed(seed, _REP))
        self.dlm = DistributionLearningModule(self.rep.output_dim, self.n_distributions, tower_sizes, component_seed(seed, _DLM))
        self.dsm = SelectionNetwork(self.rep.output_dim, self.n_distributions, selector_sizes, component_seed(seed, _DSM))
        self.params = {**self.rep.params(), **self.dlm.params(), **self.dsm.params()}

    def sample_noise(self, n: int, rng: np.random.Generator):
        from .dsm import sample_gumbel

        if self.no_gumbel:
            return None
        return sample_gumbel((n, self.n_distributions), rng)

    def loss_and_grad(self, batch: EncodedDataset, gumbel=None, frozen=None):
        """One batch of the OptDist objective.

        ``gumbel`` is the ``(n, L)`` noise (zeros when None). ``frozen`` replaces the
        stop-gradient quantities (hard mask, relaxed-weight anchor, SDN losses,
        pseudo labels) with given constants; the returned value is then the
        surrogate whose exact derivative is the returned gradient. Pass the
        ``info`` of an earlier call to reproduce it.
        """
        n, L = len(batch), self.n_distributions
        y, conv = batch.y, batch.converted
        h_u, rep_cache = self.rep.forward(batch.cat, batch.cont)
        raw, dlm_tapes = self.dlm.forward(h_u)
        q, dq_draw = ziln_nll_from_heads(raw, y[:, None], conv[:, None])
        logits, dsm_tape = self.dsm.forward(h_u)
        log_alpha = log_softmax(logits)
        alpha = np.exp(log_alpha)
        fz = frozen or {}

        grad_log_alpha = np.zeros((n, L))
        grad_alpha = np.zeros((n, L))
        if self.no_gumbel:
            weights = alpha
            l_u = al.weighted_dlm_loss(alpha, q)
            grad_q = alpha.copy()
            grad_alpha += q
            pi_soft = mask = alpha
            index = np.argmax(alpha, axis=-1)
        else:
            g = np.zeros((n, L)) if gumbel is None else np.asarray(gumbel, dtype=np.float64)
            pi_soft, mask, index = gumbel_softmax_st_log(log_alpha, g, self.temperature)
            mask0 = fz.get("mask", mask)
            pi0 = fz.get("pi_soft", pi_soft)
            q0 = fz.get("q", q)
            # straight-through: value uses the hard mask, gradient flows via pi_soft
            l_u = al.weighted_dlm_loss(mask0, q) + al.weighted_dlm_loss(pi_soft - pi0, q0)
            weights = mask0
            grad_q = mask0.copy()
            grad_log_alpha += gumbel_softmax_backward(pi_soft, q0, self.temperature)

        y_hard = fz.get("y_hard", al.hard_pseudo_label(q))
        omega = fz.get("omega", al.soft_pseudo_label(q))
        ce = al.focal_ce(y_hard, alpha)
        kl = al.kl_loss(omega, alpha)
        if not self.no_ce:
            grad_alpha += al.focal_ce_grad(y_hard, alpha)
        if not self.no_kl:
            grad_alpha += al.kl_grad_alpha(omega, alpha)
            if self.no_stopgrad:
                grad_q += al.kl_grad_q(omega, alpha)
        breakdown = al.total_loss(l_u, ce, kl, no_ce=self.no_ce, no_kl=self.no_kl)

        inv_n = 1.0 / n
        grad_logits = softmax_backward(alpha, grad_alpha) + log_softmax_backward(alpha, grad_log_alpha)
        grad_logits *= inv_n
        grad_raw = dq_draw * (grad_q * inv_n)[:, :, None]

        grads, dh_dlm = self.dlm.backward(dlm_tapes, grad_raw)
        g_dsm, dh_dsm = self.dsm.backward(dsm_tape, grad_logits)
        grads.update(g_dsm)
        grads.update(self.rep.backward(rep_cache, dh_dlm + dh_dsm))

        info = dict(
            q=q, alpha=alpha, pi_soft=pi_soft, mask=mask if not self.no_gumbel else weights,
            index=index, y_hard=y_hard, omega=omega,
        )
        return breakdown, grads, info

    def frozen_from(self, info) -> dict:
        """Stop-gradient constants to pin for a finite-difference check."""
        keys = ["mask", "pi_soft", "q", "y_hard"]
        if not self.no_stopgrad:
            keys.append("omega")
        if self.no_gumbel:
            keys = [k for k in keys if k in ("y_hard", "omega")]
        return {k: info[k] for k in keys}

    def distribution_params(self, cat, cont):
        h_u, _ = self.rep.forward(cat, cont)
        raw, _ = self.dlm.forward(h_u)
        logits, _ = self.dsm.forward(h_u)
        return heads_to_params(raw), np.exp(log_softmax(logits))

    def select(self, cat, cont):
        _, alpha = self.distribution_params(cat, cont)
        return np.argmax(alpha, axis=-1)

    def predict(self, cat, cont):
        params, alpha = self.distribution_params(cat, cont)
        s = np.argmax(alpha, axis=-1)
        rows = np.arange(len(s))
        chosen = type(params)(params.p[rows, s], params.mu[rows, s], params.sigma[rows, s])
        return ziln_expectation(chosen)


class ZilnNetwork(_Base):
    """Single ZILN tower on the shared representation; no selector, no alignment."""

    kind = "ziln"

    def __init__(self, vocab_sizes, n_cont, embedding_dim=5, bottom_sizes=(64,), tower_sizes=(64, 32, 32), seed=0, **_):
        super().__init__(vocab_sizes, n_cont, embedding_dim, bottom_sizes, tower_sizes, seed)
        self.rep = Representation(vocab_sizes, n_cont, embedding_dim, bottom_sizes, component_seed(seed, _REP))
        # same seed and names as SDN 0 of an OptDist network built from this seed
        self.dlm = DistributionLearningModule(self.rep.output_dim, 1, tower_sizes, component_seed(seed, _DLM))
        self.params = {**self.rep.params(), **self.dlm.params()}

    def sample_noise(self, n, rng):
        return None

    def loss_and_grad(self, batch: EncodedDataset, gumbel=None, frozen=None):
        n = len(batch)
        h_u, rep_cache = self.rep.forward(batch.cat, batch.cont)
        raw, tapes = self.dlm.forward(h_u)
        q, dq_draw = ziln_nll_from_heads(raw, batch.y[:, None], batch.converted[:, None])
        breakdown = al.total_loss(q[:, 0], 0.0, 0.0, no_ce=True, no_kl=True)
        grads, dh = self.dlm.backward(tapes, dq_draw * (1.0 / n))
        grads.update(self.rep.backward(rep_cache, dh))
        return breakdown, grads, {"q": q}

    def frozen_from(self, info):
        return {}

    def predict(self, cat, cont):
        h_u, _ = self.rep.forward(cat, cont)
        raw, _ = self.dlm.forward(h_u)
        return ziln_expectation(heads_to_params(raw[:, 0, :]))


class _Tower:
    """Relu tower plus a linear head of width ``n_out``."""

    def __init__(self, input_dim, sizes, n_out, seed, prefix):
        self.prefix = prefix
        self.layers = init_mlp(MlpSpec([input_dim, *sizes, n_out], "relu", seed))

    def params(self):
        return mlp_param_dict(self.layers, self.prefix)

    def forward(self, x):
        return mlp_forward(self.layers, x)

    def backward(self, tape, grad):
        lg, gin = mlp_backward(self.layers, tape, grad)
        return mlp_grad_dict(lg, self.prefix), gin


class TwoStageNetwork(_Base):
    """Independent conversion classifier and log1p-revenue regressor.

    The regressor is fit by MSE on log(1 + y) over converted users only;
    prediction is p_hat * expm1(max(r, 0)).
    """

    kind = "two_stage"

    def __init__(self, vocab_sizes, n_cont, embedding_dim=5, bottom_sizes=(64,), tower_sizes=(64, 32, 32), seed=0, **_):
        super().__init__(vocab_sizes, n_cont, embedding_dim, bottom_sizes, tower_sizes, seed)
        self.cls_rep = Representation(vocab_sizes, n_cont, embedding_dim, bottom_sizes, component_seed(seed, _REP), prefix="cls.rep")
        self.reg_rep = Representation(vocab_sizes, n_cont, embedding_dim, bottom_sizes, component_seed(seed, _AUX), prefix="reg.rep")
        self.cls = _Tower(self.cls_rep.output_dim, tower_sizes, 1, component_seed(seed, _DLM), "cls.tower")
        self.reg = _Tower(self.reg_rep.output_dim, tower_sizes, 1, component_seed(seed, _DSM), "reg.tower")
        self.params = {**self.cls_rep.params(), **self.cls.params(), **self.reg_rep.params(), **self.reg.params()}

    def sample_noise(self, n, rng):
        return None

    def loss_and_grad(self, batch, gumbel=None, frozen=None):
        n = len(batch)
        c = batch.converted.astype(np.float64)
        h1, rc1 = self.cls_rep.forward(batch.cat, batch.cont)
        z, t1 = self.cls.forward(h1)
        bce, dz = _bce_with_logits(z[:, 0], c)
        h2, rc2 = self.reg_rep.forward(batch.cat, batch.cont)
        r, t2 = self.reg.forward(h2)
        target = np.log1p(batch.y)
        n_pos = max(int(c.sum()), 1)
        resid = (r[:, 0] - target) * c
        mse = resid**2 * (n / n_pos)  # per-example share of the mean over positives
        breakdown = al.LossBreakdown(float(bce.mean()) + float(mse.mean()), 0.0, 0.0, float((bce + mse).mean()))

        grads, dh1 = self.cls.backward(t1, (dz / n)[:, None])
        grads.update(self.cls_rep.backward(rc1, dh1))
        g2, dh2 = self.reg.backward(t2, (2.0 * resid / n_pos)[:, None])
        grads.update(g2)
        grads.update(self.reg_rep.backward(rc2, dh2))
        return breakdown, grads, {}

    def frozen_from(self, info):
        return {}

    def components(self, cat, cont):
        h1, _ = self.cls_rep.forward(cat, cont)
        z, _ = self.cls.forward(h1)
        h2, _ = self.reg_rep.forward(cat, cont)
        r, _ = self.reg.forward(h2)
        return expit(z[:, 0]), np.expm1(np.maximum(r[:, 0], 0.0))

    def predict(self, cat, cont):
        p, v = self.components(cat, cont)
        return p * v


class MtlMseNetwork(_Base):
    """Shared bottom with a conversion head and a value head.

    Conversion head: cross-entropy on C. Value head: MSE of p_hat * v_hat
    against y over all users. Prediction is p_hat * v_hat.
    """

    kind = "mtl_mse"

    def __init__(self, vocab_sizes, n_cont, embedding_dim=5, bottom_sizes=(64,), tower_sizes=(64, 32, 32), seed=0, **_):
        super().__init__(vocab_sizes, n_cont, embedding_dim, bottom_sizes, tower_sizes, seed)
        self.rep = Representation(vocab_sizes, n_cont, embedding_dim, bottom_sizes, component_seed(seed, _REP))
        self.cvr = _Tower(self.rep.output_dim, tower_sizes, 1, component_seed(seed, _DLM), "cvr")
        self.value = _Tower(self.rep.output_dim, tower_sizes, 1, component_seed(seed, _DSM), "value")
        self.params = {**self.rep.params(), **self.cvr.params(), **self.value.params()}

    def sample_noise(self, n, rng):
        return None

    @staticmethod
    def value_loss(p, v, y):
        return (p * v - y) ** 2

    def loss_and_grad(self, batch, gumbel=None, frozen=None):
        n = len(batch)
        c = batch.converted.astype(np.float64)
        h, rc = self.rep.forward(batch.cat, batch.cont)
        z, t1 = self.cvr.forward(h)
        v, t2 = self.value.forward(h)
        z, v = z[:, 0], v[:, 0]
        bce, dz = _bce_with_logits(z, c)
        p = expit(z)
        mse = self.value_loss(p, v, batch.y)
        breakdown = al.LossBreakdown(float(bce.mean()) + float(mse.mean()), 0.0, 0.0, float((bce + mse).mean()))
        dpred = 2.0 * (p * v - batch.y)
        dz_total = (dz + dpred * v * p * (1.0 - p)) / n
        dv = dpred * p / n
        grads, dh1 = self.cvr.backward(t1, dz_total[:, None])
        g2, dh2 = self.value.backward(t2, dv[:, None])
        grads.update(g2)
        grads.update(self.rep.backward(rc, dh1 + dh2))
        return breakdown, grads, {}

    def frozen_from(self, info):
        return {}

    def components(self, cat, cont):
        h, _ = self.rep.forward(cat, cont)
        z, _ = self.cvr.forward(h)
        v, _ = self.value.forward(h)
        return expit(z[:, 0]), v[:, 0]

    def predict(self, cat, cont):
        p, v = self.components(cat, cont)
        return p * v


_KIND_TO_CLASS = {
    "optdist": OptDistNetwork,
    "ziln": ZilnNetwork,
    "two_stage": TwoStageNetwork,
    "mtl_mse": MtlMseNetwork,
}


def network_class(kind: str):
    try:
        return _KIND_TO_CLASS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}") from None
