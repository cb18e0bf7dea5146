import numpy as np
import pytest

from optdist.data import (
    SYNTHETIC_SCHEMA,
    EncodedDataset,
    SyntheticConfig,
    build_vocab,
    encode_all,
    fit_normalizer,
    generate_synthetic,
    split,
)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_batch(n=16, n_cat=2, vocab=5, n_cont=2, seed=0):
    rng = np.random.default_rng(seed)
    cat = rng.integers(0, vocab, size=(n, n_cat))
    cont = rng.standard_normal((n, n_cont))
    y = np.where(rng.random(n) < 0.5, np.exp(rng.normal(1.0, 1.0, n)), 0.0)
    return EncodedDataset(cat, cont, y)


def encoded_synthetic(n=2000, seed=0, **kw):
    cfg = SyntheticConfig([0.05, 0.2, 0.5, 0.9], [0.0, 1.0, 2.0, 3.0], [0.5] * 4, n=n, noise=0.05, seed=seed, **kw)
    raws, clusters = generate_synthetic(cfg)
    parts = split(list(range(n)), seed=seed)
    tr_raw = [raws[i] for i in parts[0]]
    vocab = build_vocab(tr_raw, SYNTHETIC_SCHEMA)
    norm = fit_normalizer(tr_raw, SYNTHETIC_SCHEMA)
    encoded = [encode_all([raws[i] for i in p], SYNTHETIC_SCHEMA, vocab, norm) for p in parts]
    vocab_sizes = [len(vocab[c]) for c in SYNTHETIC_SCHEMA.categorical]
    return encoded, [clusters[np.asarray(p, dtype=int)] for p in parts], vocab_sizes


@pytest.fixture
def batch():
    return make_batch()


@pytest.fixture(scope="session")
def small_synthetic():
    return encoded_synthetic(n=2000, seed=0)


SMALL = dict(embedding_dim=3, bottom_sizes=(8,), tower_sizes=(8, 8), selector_sizes=(8,))
