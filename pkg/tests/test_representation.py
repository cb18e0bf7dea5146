import numpy as np
import pytest

from optdist.representation import Representation, embed_concat


def test_length():
    tables = [np.ones((4, 3)), np.ones((2, 3))]
    h = embed_concat([1, 0], [0.5], tables)
    assert h.shape == (7,)


def test_zero_tables():
    tables = [np.zeros((4, 3)), np.zeros((2, 3))]
    h = embed_concat([3, 1], [2.5], tables)
    assert np.array_equal(h, [0, 0, 0, 0, 0, 0, 2.5])


def test_schema_permutation_permutes_h():
    rng = np.random.default_rng(0)
    t1, t2 = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
    a = embed_concat([1, 2], [0.1, 0.2], [t1, t2])
    b = embed_concat([2, 1], [0.2, 0.1], [t2, t1])
    assert np.array_equal(a, np.concatenate([b[2:4], b[0:2], b[5:], b[4:5]]))


def test_out_of_bounds():
    with pytest.raises(IndexError):
        embed_concat([4], [], [np.zeros((4, 2))])
    with pytest.raises(IndexError):
        embed_concat([-1], [], [np.zeros((4, 2))])


def test_identity_bottom():
    rep = Representation([5], 2, 3, bottom_sizes=(), seed=0)
    h_u, _ = rep.forward(np.array([[2]]), np.array([[0.5, -1.0]]))
    np.testing.assert_array_equal(h_u[0], np.concatenate([rep.tables[0][2], [0.5, -1.0]]))


def test_identical_examples_identical_output():
    rep = Representation([5, 4], 2, 3, bottom_sizes=(8,), seed=1)
    cat = np.tile([[1, 3]], (4, 1))
    cont = np.tile([[0.3, -0.2]], (4, 1))
    h_u, _ = rep.forward(cat, cont)
    assert all(np.array_equal(h_u[0], h_u[i]) for i in range(4))


def test_untouched_rows_have_exact_zero_gradient():
    rep = Representation([6, 4], 1, 3, bottom_sizes=(8,), seed=2)
    cat = np.array([[1, 0], [3, 0], [1, 2]])
    h_u, cache = rep.forward(cat, np.zeros((3, 1)))
    g = rep.backward(cache, np.ones_like(h_u))
    for j, touched in enumerate([{1, 3}, {0, 2}]):
        for row in range(rep.tables[j].shape[0]):
            if row not in touched:
                assert np.all(g[f"rep.emb.{j}"][row] == 0.0)


def test_embedding_gradient_matches_fd():
    rep = Representation([6], 2, 3, bottom_sizes=(5,), seed=3)
    rng = np.random.default_rng(0)
    for p in rep.params().values():
        p += rng.normal(0, 0.1, p.shape)
    cat = np.array([[1], [4], [1]])
    cont = rng.standard_normal((3, 2))
    r = rng.standard_normal((3, 5))
    h_u, cache = rep.forward(cat, cont)
    g = rep.backward(cache, r)
    table = rep.tables[0]
    eps = 1e-6
    for row in range(6):
        for col in range(3):
            orig = table[row, col]
            table[row, col] = orig + eps
            up = np.sum(rep.forward(cat, cont)[0] * r)
            table[row, col] = orig - eps
            down = np.sum(rep.forward(cat, cont)[0] * r)
            table[row, col] = orig
            num = (up - down) / (2 * eps)
            assert g["rep.emb.0"][row, col] == pytest.approx(num, rel=1e-5, abs=1e-9)
            if row not in (1, 4):
                assert num == 0.0


def test_param_names():
    rep = Representation([3, 3], 1, 2, bottom_sizes=(4,), seed=0)
    assert set(rep.params()) == {"rep.emb.0", "rep.emb.1", "rep.bottom.0.W", "rep.bottom.0.b"}
