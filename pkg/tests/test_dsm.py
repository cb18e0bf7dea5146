import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from optdist.dsm import (
    SelectionNetwork,
    gumbel_softmax_backward,
    gumbel_softmax_st,
    gumbel_softmax_st_log,
    sample_gumbel,
    select_distribution,
    selection_probs,
    softmax,
)

logit_vec = arrays(np.float64, st.integers(2, 6), elements=st.floats(-20, 20))


def test_equal_logits_uniform():
    np.testing.assert_allclose(softmax(np.full(4, 3.3)), 0.25, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(logit_vec, st.floats(-50, 50))
def test_softmax_shift_invariant(z, c):
    np.testing.assert_allclose(softmax(z), softmax(z + c), atol=1e-12)
    assert abs(softmax(z).sum() - 1.0) < 1e-9


def test_softmax_closed_form():
    np.testing.assert_allclose(softmax([0.0, math.log(3)]), [0.25, 0.75], atol=1e-15)


def test_selection_probs_positive():
    net = SelectionNetwork(5, 4, (6,), seed=0)
    a = selection_probs(np.random.default_rng(0).standard_normal((8, 5)), net)
    assert np.all(a > 0) and np.allclose(a.sum(-1), 1.0, atol=1e-9)


class _FixedRng:
    def __init__(self, values):
        self.values = list(values)

    def random(self, shape):
        n = int(np.prod(shape))
        out = np.array([self.values.pop(0) for _ in range(n)], dtype=np.float64)
        return out.reshape(shape)


def test_gumbel_substitutions():
    g = sample_gumbel((2,), _FixedRng([1 / math.e, math.exp(-math.e)]))
    assert g[0] == pytest.approx(0.0, abs=1e-15)
    assert g[1] == pytest.approx(-1.0, abs=1e-15)


def test_gumbel_redraws_zero():
    g = sample_gumbel((1,), _FixedRng([0.0, 1 / math.e]))
    assert g[0] == pytest.approx(0.0, abs=1e-15)


def test_gumbel_mean():
    g = sample_gumbel((1_000_000,), np.random.default_rng(0))
    se = (math.pi / math.sqrt(6)) / 1000
    assert abs(g.mean() - np.euler_gamma) < 3 * se


def test_uniform_alpha_zero_noise():
    pi, mask, s = gumbel_softmax_st(np.full(3, 1 / 3), np.zeros(3), 1.0)
    np.testing.assert_allclose(pi, 1 / 3)
    assert s == 0 and np.array_equal(mask, [1, 0, 0])


def test_closed_form_low_temperature():
    pi, mask, _ = gumbel_softmax_st([0.9, 0.1], np.zeros(2), 0.1)
    expected = 0.9**10 / (0.9**10 + 0.1**10)
    assert pi[0] == pytest.approx(expected, abs=1e-15)
    assert 1 - pi[0] == pytest.approx(2.8679725261326894e-10, rel=1e-6)
    assert np.array_equal(mask, [1, 0])


def test_decreasing_tau_sharpens():
    alpha, g = np.array([0.2, 0.5, 0.3]), np.array([0.1, -0.2, 0.3])
    maxes = [gumbel_softmax_st(alpha, g, t)[0].max() for t in (2.0, 1.0, 0.5, 0.1, 0.01)]
    assert all(b > a for a, b in zip(maxes, maxes[1:]))


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_bad_tau(tau):
    with pytest.raises(ValueError):
        gumbel_softmax_st([0.5, 0.5], [0, 0], tau)


@settings(max_examples=100, deadline=None)
@given(logit_vec, st.floats(0.05, 5))
def test_mask_one_hot_and_consistent(z, tau):
    alpha = softmax(z)
    g = sample_gumbel(z.shape, np.random.default_rng(0))
    pi, mask, s = gumbel_softmax_st(alpha, g, tau)
    assert mask.sum() == 1 and mask[s] == 1
    assert abs(pi.sum() - 1) < 1e-9


@settings(max_examples=100, deadline=None)
@given(logit_vec, st.floats(0.01, 100))
def test_alpha_rescale_invariance(z, c):
    alpha = softmax(z)
    a = gumbel_softmax_st_log(np.log(alpha), np.zeros_like(z), 0.7)[0]
    b = gumbel_softmax_st_log(np.log(alpha) + math.log(c), np.zeros_like(z), 0.7)[0]
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_train_inference_consistency():
    alpha = softmax(np.random.default_rng(5).standard_normal((50, 4)))
    _, _, s = gumbel_softmax_st(alpha, np.zeros_like(alpha), 1e-4)
    assert np.array_equal(s, select_distribution(alpha))


def test_select_distribution():
    assert select_distribution([0.2, 0.5, 0.3]) == 1
    assert select_distribution([0.5, 0.5]) == 0


def test_select_monotone_invariance():
    z = np.random.default_rng(1).standard_normal((20, 5))
    assert np.array_equal(select_distribution(softmax(z)), select_distribution(softmax(np.tanh(z) * 3 + 1)))


def test_backward_matches_fd():
    rng = np.random.default_rng(2)
    la, g, w = rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(4)
    tau = 0.7
    pi, _, _ = gumbel_softmax_st_log(la, g, tau)
    grad = gumbel_softmax_backward(pi, w, tau)
    eps = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = eps
        f = lambda x: np.dot(w, gumbel_softmax_st_log(x, g, tau)[0])
        assert grad[k] == pytest.approx((f(la + e) - f(la - e)) / (2 * eps), rel=1e-6, abs=1e-9)
