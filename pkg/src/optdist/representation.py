"""Embedding lookup, concatenation with continuous features, and the shared bottom."""
from __future__ import annotations

import numpy as np

from .diffcore import MlpSpec, init_mlp, mlp_backward, mlp_forward, mlp_grad_dict, mlp_param_dict


def embed_concat(cat, cont, tables: list[np.ndarray]) -> np.ndarray:
    """h = [e_1, ..., e_m] for one example (1-d inputs) or a batch (2-d inputs).

    Embedded categorical features come first in schema order, then the
    continuous values, each as a length-1 block.
    """
    cat = np.asarray(cat, dtype=np.int64)
    cont = np.asarray(cont, dtype=np.float64)
    single = cat.ndim == 1 and cont.ndim == 1
    if single:
        cat, cont = cat[None, :], cont[None, :]
    if cat.shape[1] != len(tables):
        raise ValueError(f"{cat.shape[1]} categorical columns but {len(tables)} embedding tables")
    blocks = []
    for j, table in enumerate(tables):
        idx = cat[:, j]
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise IndexError(f"categorical feature {j}: index out of range [0, {table.shape[0]})")
        blocks.append(table[idx])
    blocks.append(cont)
    h = np.concatenate(blocks, axis=1) if blocks else np.zeros((cat.shape[0], 0))
    return h[0] if single else h


class Representation:
    """Embedding tables plus an optional relu bottom producing the shared h_u.

    An empty ``bottom_sizes`` makes the bottom the identity (h_u = h).
    """

    def __init__(self, vocab_sizes, n_cont: int, embedding_dim: int, bottom_sizes=(64,), seed: int = 0, prefix: str = "rep"):
        self.prefix = prefix
        self.vocab_sizes = [int(v) for v in vocab_sizes]
        self.n_cont = int(n_cont)
        self.embedding_dim = int(embedding_dim)
        rng = np.random.default_rng(seed)
        self.tables = [rng.uniform(-0.05, 0.05, size=(v, self.embedding_dim)) for v in self.vocab_sizes]
        self.input_dim = len(self.vocab_sizes) * self.embedding_dim + self.n_cont
        if bottom_sizes:
            self.bottom = init_mlp(
                MlpSpec([self.input_dim, *bottom_sizes], "relu", seed + 1, output_activation="relu")
            )
        else:
            self.bottom = []
        self.output_dim = self.bottom[-1].n_out if self.bottom else self.input_dim

    def params(self) -> dict[str, np.ndarray]:
        out = {f"{self.prefix}.emb.{j}": t for j, t in enumerate(self.tables)}
        out.update(mlp_param_dict(self.bottom, f"{self.prefix}.bottom"))
        return out

    def forward(self, cat, cont):
        h = embed_concat(cat, cont, self.tables)
        h_u, tape = mlp_forward(self.bottom, h)
        return h_u, (np.asarray(cat, dtype=np.int64), tape)

    def backward(self, cache, grad_hu) -> dict[str, np.ndarray]:
        cat, tape = cache
        layer_grads, grad_h = mlp_backward(self.bottom, tape, grad_hu)
        grads = mlp_grad_dict(layer_grads, f"{self.prefix}.bottom")
        d = self.embedding_dim
        for j, table in enumerate(self.tables):
            g = np.zeros_like(table)
            np.add.at(g, cat[:, j], grad_h[:, j * d:(j + 1) * d])
            grads[f"{self.prefix}.emb.{j}"] = g
        return grads
