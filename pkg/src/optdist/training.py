"""Single-level joint training of all OptDist parameters, baselines and sweeps."""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .alignment import LossBreakdown
from .data import EncodedDataset
from .diffcore import AdamState, adam_step, sgd_step
from .metrics import evaluate
from .models import MODEL_KINDS, network_class

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class TrainConfig:
    kind: str = "optdist"
    n_distributions: int = 4
    temperature: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 2048
    max_epochs: int = 50
    patience: int = 3
    seed: int = 0
    embedding_dim: int = 5
    bottom_sizes: tuple = (64,)
    tower_sizes: tuple = (64, 32, 32)
    selector_sizes: tuple = (64, 32)
    no_gumbel: bool = False
    no_kl: bool = False
    no_ce: bool = False
    no_stopgrad: bool = False
    optimizer: str = "adam"

    def problems(self) -> list[str]:
        out = []
        if self.kind not in MODEL_KINDS:
            out.append(f"kind: unknown model kind {self.kind!r}, expected one of {list(MODEL_KINDS)}")
        if int(self.n_distributions) < 1:
            out.append("n_distributions: must be >= 1")
        if not self.temperature > 0:
            out.append("temperature: must be > 0")
        if not self.learning_rate > 0:
            out.append("learning_rate: must be > 0")
        if int(self.batch_size) < 1:
            out.append("batch_size: must be >= 1")
        if int(self.max_epochs) < 0:
            out.append("max_epochs: must be >= 0")
        if int(self.patience) < 1:
            out.append("patience: must be >= 1")
        if int(self.embedding_dim) < 1:
            out.append("embedding_dim: must be >= 1")
        for name in ("bottom_sizes", "tower_sizes", "selector_sizes"):
            if any(int(s) < 1 for s in getattr(self, name)):
                out.append(f"{name}: layer sizes must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            out.append(f"optimizer: expected 'adam' or 'sgd', got {self.optimizer!r}")
        return out

    def validate(self) -> "TrainConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("bottom_sizes", "tower_sizes", "selector_sizes"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError([f"{k}: unknown training option" for k in unknown])
        d = dict(d)
        for k in ("bottom_sizes", "tower_sizes", "selector_sizes"):
            if k in d:
                d[k] = tuple(int(s) for s in d[k])
        return cls(**d)


def build_model(config: TrainConfig, vocab_sizes, n_cont: int):
    config.validate()
    cls = network_class(config.kind)
    return cls(vocab_sizes, n_cont, **config.to_dict())


def make_optimizer(model, config: TrainConfig):
    return AdamState.zeros_like(model.params) if config.optimizer == "adam" else None


def train_step(batch: EncodedDataset, model, opt_state, config: TrainConfig, rng: np.random.Generator,
               learning_rate: float | None = None) -> LossBreakdown:
    """One joint update of every parameter; returns the pre-update losses.

    Fresh Gumbel noise is drawn per example from ``rng``. A non-finite loss
    skips the update.
    """
    lr = config.learning_rate if learning_rate is None else learning_rate
    noise = model.sample_noise(len(batch), rng)
    breakdown, grads, _ = model.loss_and_grad(batch, noise)
    if not math.isfinite(breakdown.total):
        logger.warning("non-finite loss %r, step skipped", breakdown.total)
        return breakdown
    if opt_state is None:
        sgd_step(model.params, grads, lr)
    else:
        adam_step(model.params, grads, opt_state, lr)
    return breakdown


@dataclass
class EpochRecord:
    epoch: int
    train: dict
    validation: dict | None
    selection_counts: list[int]
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    skipped_steps: int = 0

    def __len__(self):
        return len(self.epochs)

    def val_scores(self) -> list[float | None]:
        return [None if e.validation is None else e.validation.get("norm_gini") for e in self.epochs]


def _validation_score(model, val: EncodedDataset):
    report = evaluate(model, val)
    return report.norm_gini, report


def _snapshot(params):
    return {k: v.copy() for k, v in params.items()}


def _restore(params, snap):
    for k, v in snap.items():
        np.copyto(params[k], v)


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def train(config: TrainConfig, train_ds: EncodedDataset, val_ds: EncodedDataset | None = None,
          vocab_sizes=None, log=None):
    """Epoch loop with shuffled mini-batches and early stopping on validation Norm-GINI.

    Returns the model restored to its best validation epoch and the history.
    ``vocab_sizes`` defaults to ``max index + 1`` per categorical column.
    ``log``, if given, is called with every :class:`EpochRecord`.
    """
    config.validate()
    if len(train_ds) == 0:
        raise ValueError("empty training split")
    if vocab_sizes is None:
        vocab_sizes = [int(train_ds.cat[:, j].max()) + 1 for j in range(train_ds.cat.shape[1])]
    model = build_model(config, vocab_sizes, train_ds.cont.shape[1])
    opt_state = make_optimizer(model, config)
    rng = np.random.default_rng([int(config.seed), 7])
    history = TrainHistory()
    has_val = val_ds is not None and len(val_ds) > 0

    best_score, best_snap, stale = -math.inf, None, 0
    for epoch in range(int(config.max_epochs)):
        t0 = time.perf_counter()
        sums = np.zeros(4)
        for idx in iterate_batches(len(train_ds), int(config.batch_size), rng):
            bd = train_step(train_ds.subset(idx), model, opt_state, config, rng)
            if not math.isfinite(bd.total):
                history.skipped_steps += 1
                continue
            sums += len(idx) * np.array([bd.dlm, bd.ce, bd.kl, bd.total])
        means = dict(zip(("dlm", "ce", "kl", "total"), (sums / len(train_ds)).tolist()))

        validation, counts = None, [0] * model.n_distributions
        score = None
        if has_val:
            score, report = _validation_score(model, val_ds)
            validation = report.as_dict()
            counts = np.bincount(model.select(val_ds.cat, val_ds.cont), minlength=model.n_distributions).tolist()
        record = EpochRecord(epoch + 1, means, validation, counts, time.perf_counter() - t0)
        history.epochs.append(record)
        if log is not None:
            log(record)

        if not has_val:
            continue
        value = -math.inf if score is None else score
        if best_snap is None or value > best_score:
            best_score, best_snap, stale = value, _snapshot(model.params), 0
            history.best_epoch = epoch + 1
        else:
            stale += 1
            if stale >= int(config.patience):
                break

    if best_snap is not None:
        _restore(model.params, best_snap)
    elif history.epochs:
        history.best_epoch = len(history.epochs)
    return model, history


def run_sweep(base: TrainConfig, axis: str, values, train_ds, val_ds, test_ds, seeds=None, vocab_sizes=None):
    """Train and test once per (setting, seed); one row per setting with mean/std.

    ``axis`` is a :class:`TrainConfig` field name, e.g. ``n_distributions``,
    ``temperature`` or ``learning_rate``.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep axis is empty")
    if axis not in {f.name for f in dataclasses.fields(TrainConfig)}:
        raise ConfigError([f"axis: {axis!r} is not a training option"])
    seeds = [base.seed] if seeds is None else list(seeds)
    rows = []
    for value in values:
        per_seed = []
        for seed in seeds:
            cfg = base.replace(**{axis: value, "seed": int(seed)})
            model, _ = train(cfg, train_ds, val_ds, vocab_sizes=vocab_sizes)
            per_seed.append(evaluate(model, test_ds).as_dict())
        row = {axis: value, "seeds": seeds}
        for metric in ("mae", "norm_gini", "spearman_rho", "norm_gini_pos", "spearman_rho_pos"):
            vals = [r[metric] for r in per_seed if r[metric] is not None]
            row[f"{metric}_mean"] = float(np.mean(vals)) if vals else None
            row[f"{metric}_std"] = float(np.std(vals)) if vals else None
        row["runs"] = per_seed
        rows.append(row)
    return rows
