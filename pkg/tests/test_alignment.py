import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from optdist.alignment import (
    focal_ce,
    focal_ce_grad,
    hard_pseudo_label,
    kl_grad_alpha,
    kl_grad_q,
    kl_loss,
    soft_pseudo_label,
    total_loss,
    weighted_dlm_loss,
)
from optdist.dsm import softmax

q_vec = arrays(np.float64, st.integers(2, 6), elements=st.floats(-20, 20))


def _rand_simplex(rng, n):
    return rng.dirichlet(np.ones(n))


def test_hard_label():
    assert np.array_equal(hard_pseudo_label([2.0, 1.0, 3.0]), [0, 1, 0])
    assert np.array_equal(hard_pseudo_label([1.0, 1.0]), [1, 0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 6), elements=st.integers(-40, 40).map(lambda k: k / 4)), st.integers(-100, 100))
def test_hard_label_shift_invariant(q, c):
    # a grid of quarters keeps every shift exact in floating point
    assert np.array_equal(hard_pseudo_label(q), hard_pseudo_label(q + c))


def test_focal_closed_form():
    assert focal_ce([1, 0], [0.5, 0.5]) == pytest.approx(0.25 * math.log(2), abs=1e-15)
    assert focal_ce([1, 0], [0.5, 0.5]) == pytest.approx(0.17328679513998632, abs=1e-12)


def test_focal_vanishes_at_one():
    assert focal_ce([1, 0], [1.0 - 1e-12, 1e-12]) < 1e-20
    assert focal_ce([1, 0], [1.0, 0.0]) == 0.0


def test_focal_finite_at_zero():
    assert np.isfinite(focal_ce([1, 0], [0.0, 1.0]))


@pytest.mark.parametrize("a", [0.5, 0.1, 0.9])
def test_focal_grad_fd(a):
    alpha = np.array([a, 1 - a])
    g = focal_ce_grad([1, 0], alpha)
    eps = 1e-7
    num = (focal_ce([1, 0], alpha + [eps, 0]) - focal_ce([1, 0], alpha - [eps, 0])) / (2 * eps)
    assert g[0] == pytest.approx(num, rel=1e-7)
    assert g[1] == 0.0


def test_focal_grad_at_half():
    expected = 2 * 0.5 * math.log(0.5) - 0.25 / 0.5
    assert focal_ce_grad([1, 0], [0.5, 0.5])[0] == pytest.approx(expected, abs=1e-15)


def test_soft_labels():
    np.testing.assert_allclose(soft_pseudo_label([math.log(2)] * 2), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(soft_pseudo_label([0.0, math.log(3)]), [0.75, 0.25], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(q_vec)
def test_soft_label_monotone(q):
    w = soft_pseudo_label(q)
    assert abs(w.sum() - 1) < 1e-9
    order = np.argsort(q)
    for i, j in zip(order, order[1:]):
        if q[i] < q[j]:
            assert w[i] >= w[j]


def test_kl_closed_form():
    v = kl_loss([0.5, 0.5], [0.25, 0.75])
    assert v == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3), abs=1e-15)
    assert v == pytest.approx(0.14384103622589042, abs=1e-12)


def test_kl_identity():
    a = np.array([0.1, 0.2, 0.7])
    assert kl_loss(a, a) == pytest.approx(0.0, abs=1e-15)


def test_kl_nonnegative_sweep():
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(5), size=10_000)
    a = rng.dirichlet(np.ones(5), size=10_000)
    assert np.all(kl_loss(w, a) >= -1e-15)


def test_kl_grad_alpha_fd():
    w, a = np.array([0.2, 0.3, 0.5]), np.array([0.4, 0.4, 0.2])
    g = kl_grad_alpha(w, a)
    eps = 1e-7
    for k in range(3):
        e = np.zeros(3)
        e[k] = eps
        assert g[k] == pytest.approx((kl_loss(w, a + e) - kl_loss(w, a - e)) / (2 * eps), rel=1e-6)


def test_kl_grad_q_fd():
    q, a = np.array([1.0, 0.3, 2.0]), np.array([0.4, 0.4, 0.2])
    g = kl_grad_q(soft_pseudo_label(q), a)
    eps = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = eps
        f = lambda x: kl_loss(soft_pseudo_label(x), a)
        assert g[k] == pytest.approx((f(q + e) - f(q - e)) / (2 * eps), rel=1e-6)


def test_weighted_loss_examples():
    assert weighted_dlm_loss([0, 1, 0], [2, 1, 3]) == 1
    assert weighted_dlm_loss([1 / 3] * 3, [2, 1, 3]) == pytest.approx(2.0)
    assert weighted_dlm_loss([0.25, 0.75], [4, 0]) == 1.0


def test_total_loss_examples():
    assert total_loss(1.0, 0.2, 0.05).total == pytest.approx(1.25, abs=1e-15)
    b = total_loss([1.0, 3.0], [0.5, 0.5], [0.1, 0.1], no_ce=True, no_kl=True)
    assert b.total == 2.0 and b.ce == 0.0 and b.kl == 0.0
    one = total_loss(1.0, 0.2, 0.05)
    two = total_loss([1.0, 1.0], [0.2, 0.2], [0.05, 0.05])
    assert one.total == two.total


def test_converged_alignment_is_zero():
    q = np.array([0.5, 2.0, 3.0])
    alpha = np.array([1.0, 0.0, 0.0])
    assert focal_ce(hard_pseudo_label(q), alpha) == 0.0
    assert kl_loss(alpha, alpha) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_breakdown_nonnegative(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(0, 3, (8, 4))
    a = softmax(rng.standard_normal((8, 4)))
    b = total_loss(q.min(-1), focal_ce(hard_pseudo_label(q), a), kl_loss(soft_pseudo_label(q), a))
    assert b.ce >= 0 and b.kl >= 0
    assert b.total == pytest.approx(b.dlm + b.ce + b.kl, abs=1e-12)
