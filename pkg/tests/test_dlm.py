import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import lognorm

from optdist.dlm import (
    SIGMA_FLOOR,
    DistributionLearningModule,
    SubDistributionNetwork,
    ZilnParams,
    heads_to_params,
    ziln_expectation,
    ziln_nll,
    ziln_nll_from_heads,
)

finite = st.floats(-30, 30, allow_nan=False)


def P(p, mu, sigma):
    return ZilnParams(np.float64(p), np.float64(mu), np.float64(sigma))


def test_zero_heads():
    z = heads_to_params(np.zeros(3))
    assert z.p == 0.5 and z.mu == 0.0
    assert z.sigma == pytest.approx(math.log(2) + SIGMA_FLOOR, abs=1e-15)


def test_nll_unconverted():
    assert ziln_nll(P(0.5, 0.0, 1.0), 0.0, 0) == pytest.approx(math.log(2), abs=1e-12)


def test_nll_converted_closed_form():
    v = ziln_nll(P(0.5, 0.0, 1.0), 1.0, 1)
    assert v == pytest.approx(math.log(2) + 0.5 * math.log(2 * math.pi), abs=1e-12)
    assert v == pytest.approx(1.612085713764618, abs=1e-12)


@pytest.mark.parametrize("mu,expected", [(0.0, 0.0), (1.0, 1.0)])
def test_mu_gradient(mu, expected):
    raw = np.array([0.0, mu, 5.0])
    # sigma head chosen so that sigma is ~1: softplus(c) = 1 - floor
    raw[2] = math.log(math.expm1(1.0 - SIGMA_FLOOR))
    _, g = ziln_nll_from_heads(raw, 1.0, 1)
    assert g[1] == pytest.approx(expected, abs=1e-9)
    eps = 1e-6
    up = ziln_nll_from_heads(raw + [0, eps, 0], 1.0, 1)[0]
    down = ziln_nll_from_heads(raw - [0, eps, 0], 1.0, 1)[0]
    assert (up - down) / (2 * eps) == pytest.approx(expected, abs=1e-7)


def test_nll_rejects_nonpositive_converted_label():
    with pytest.raises(ValueError):
        ziln_nll(P(0.5, 0, 1), 0.0, 1)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(-3, 3), st.floats(0.05, 3), st.floats(1e-3, 1e3))
def test_nll_matches_density(p, mu, sigma, y):
    log_dens = lognorm.logpdf(y, s=sigma, scale=math.exp(mu))
    assert ziln_nll(P(p, mu, sigma), y, 1) == pytest.approx(-math.log(p) - log_dens, rel=1e-12, abs=1e-12)
    assert ziln_nll(P(p, mu, sigma), 0.0, 0) == pytest.approx(-math.log(1 - p), rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), finite, finite, st.floats(1e-3, 1e3), st.booleans())
def test_head_form_matches_public_form(a, b, c, y, conv):
    raw = np.array([a, b, c])
    params = heads_to_params(raw)
    yy = y if conv else 0.0
    loss, _ = ziln_nll_from_heads(raw, yy, int(conv))
    assert loss == pytest.approx(ziln_nll(params, yy, int(conv)), rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(finite, st.floats(-5, 5), st.floats(-3, 3), st.floats(1e-2, 1e2), st.booleans())
def test_head_gradient_fd(a, b, c, y, conv):
    raw = np.array([a, b, c])
    yy, cc = (y, 1) if conv else (0.0, 0)
    _, g = ziln_nll_from_heads(raw, yy, cc)
    eps = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = eps
        num = (ziln_nll_from_heads(raw + e, yy, cc)[0] - ziln_nll_from_heads(raw - e, yy, cc)[0]) / (2 * eps)
        assert g[k] == pytest.approx(num, rel=1e-5, abs=1e-6)


def test_extreme_logits_finite():
    loss, g = ziln_nll_from_heads(np.array([800.0, 0.0, 0.0]), 0.0, 0)
    assert np.isfinite(loss) and np.all(np.isfinite(g))
    loss, _ = ziln_nll_from_heads(np.array([-800.0, 0.0, 0.0]), 2.0, 1)
    assert np.isfinite(loss)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 3), st.floats(1e-2, 1e2))
def test_convex_in_mu(m1, m2, sigma, y):
    f = lambda m: float(ziln_nll(P(0.3, m, sigma), y, 1))
    assert f((m1 + m2) / 2) <= (f(m1) + f(m2)) / 2 + 1e-12


@pytest.mark.parametrize(
    "p,mu,sigma,expected",
    [(1.0, 0.0, SIGMA_FLOOR, 1.0), (0.5, 0.0, 2.0, 3.694528049465325), (0.1, math.log(10), SIGMA_FLOOR, 1.0)],
)
def test_expectation(p, mu, sigma, expected):
    assert ziln_expectation(P(p, mu, sigma)) == pytest.approx(expected, abs=1e-9)


def test_expectation_overflow_clamped(caplog):
    v = ziln_expectation(P(0.5, 800.0, 1.0))
    assert v == np.finfo(np.float64).max
    assert "overflow" in caplog.text


def test_sdn_seed_diversity():
    h = np.random.default_rng(0).standard_normal((4, 6))
    dlm = DistributionLearningModule(6, 2, (8,), seed=0)
    a = dlm.sdn_forward(h, 0)
    b = dlm.sdn_forward(h, 1)
    assert not np.allclose(a.mu, b.mu)


def test_sdn_index_range():
    dlm = DistributionLearningModule(3, 2, (4,), seed=0)
    with pytest.raises(IndexError):
        dlm.sdn_forward(np.zeros(3), 2)


def test_losses_match_isolated_recomputation():
    rng = np.random.default_rng(1)
    h = rng.standard_normal((10, 5))
    y = np.where(rng.random(10) < 0.5, rng.lognormal(size=10), 0.0)
    c = (y > 0).astype(int)
    dlm = DistributionLearningModule(5, 3, (6, 4), seed=4)
    out = dlm.losses(h, y, c)
    assert out.losses.shape == (10, 3)
    for i in range(3):
        params = dlm.sdn_forward(h, i)
        np.testing.assert_allclose(out.losses[:, i], ziln_nll(params, y, c), rtol=1e-10, atol=1e-12)


def test_cloned_sdns_identical_losses():
    dlm = DistributionLearningModule(4, 2, (5,), seed=0)
    for k, v in dlm.sdns[0].params().items():
        dlm.sdns[1].params()[k.replace("dlm.0", "dlm.1")][...] = v
    h = np.random.default_rng(2).standard_normal((6, 4))
    q = dlm.losses(h, np.ones(6), np.ones(6, dtype=int)).losses
    assert np.array_equal(q[:, 0], q[:, 1])


def test_parameter_disjointness():
    dlm = DistributionLearningModule(4, 3, (5,), seed=0)
    h = np.random.default_rng(3).standard_normal((6, 4))
    y, c = np.full(6, 2.0), np.ones(6, dtype=int)
    before = dlm.losses(h, y, c).losses
    for p in dlm.sdns[1].params().values():
        p += 0.5
    after = dlm.losses(h, y, c).losses
    assert np.array_equal(before[:, [0, 2]], after[:, [0, 2]])
    assert not np.array_equal(before[:, 1], after[:, 1])
    names = [set(s.params()) for s in dlm.sdns]
    assert not (names[0] & names[1]) and not (names[1] & names[2])


def test_single_sdn_backward_shapes():
    sdn = SubDistributionNetwork(4, (5,), seed=0, prefix="s")
    raw, tape = sdn.forward(np.ones((2, 4)))
    grads, gi = sdn.backward(tape, np.ones_like(raw))
    assert set(grads) == set(sdn.params()) and gi.shape == (2, 4)
