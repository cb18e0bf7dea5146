"""scikit-learn compatible front end.

>>> est = OptDistRegressor(n_distributions=4, categorical_features=["city"])
>>> est.fit(X_train, y_train, eval_set=(X_val, y_val)).predict(X_test)  # doctest: +SKIP
"""
from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_consistent_length, check_is_fitted

from .data import (
    EncodedDataset,
    Feature,
    FeatureSchema,
    RawExample,
    build_vocab,
    encode_all,
    fit_normalizer,
)
from .metrics import norm_gini
from .training import TrainConfig, train


def _as_frame(X) -> pd.DataFrame:
    if isinstance(X, pd.DataFrame):
        return X.reset_index(drop=True)
    arr = np.asarray(X, dtype=object)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-d input, got shape {arr.shape}")
    return pd.DataFrame(arr, columns=[str(i) for i in range(arr.shape[1])])


def _check_target(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if not np.all(np.isfinite(y)):
        raise ValueError("target contains non-finite values")
    if np.any(y < 0):
        raise ValueError("CLTV targets must be non-negative")
    return y


class FeatureEncoder(TransformerMixin, BaseEstimator):
    """Vocabulary + z-score encoding of a mixed categorical/continuous table.

    ``transform`` returns an :class:`~optdist.data.EncodedDataset` whose label
    column is zero unless ``y`` is passed.
    """

    def __init__(self, categorical_features="auto"):
        self.categorical_features = categorical_features

    def _schema(self, frame: pd.DataFrame) -> FeatureSchema:
        cols = [str(c) for c in frame.columns]
        if isinstance(self.categorical_features, str) and self.categorical_features == "auto":
            cats = {str(c) for c in frame.columns if frame[c].dtype == object or str(frame[c].dtype) == "category"}
        elif self.categorical_features is None:
            cats = set()
        else:
            cats = set()
            for c in self.categorical_features:
                cats.add(cols[c] if isinstance(c, (int, np.integer)) else str(c))
            unknown = cats - set(cols)
            if unknown:
                raise ValueError(f"categorical_features not in X: {sorted(unknown)}")
        label = "__y__"
        return FeatureSchema(tuple(Feature(c, "categorical" if c in cats else "continuous") for c in cols), label)

    def _raws(self, frame: pd.DataFrame, y=None) -> list[RawExample]:
        frame = frame.copy()
        frame.columns = [str(c) for c in frame.columns]
        cats = set(self.schema_.categorical)
        records = frame.to_dict("records")
        labels = np.zeros(len(frame)) if y is None else y
        out = []
        for rec, lab in zip(records, labels):
            vals = {k: (str(v) if k in cats else float(v)) for k, v in rec.items()}
            out.append(RawExample(vals, float(lab)))
        return out

    def fit(self, X, y=None):
        frame = _as_frame(X)
        self.schema_ = self._schema(frame)
        raws = self._raws(frame)
        if not raws:
            raise ValueError("cannot fit on an empty table")
        self.vocab_ = build_vocab(raws, self.schema_)
        self.normalizer_ = fit_normalizer(raws, self.schema_)
        self.n_features_in_ = frame.shape[1]
        return self

    def transform(self, X, y=None) -> EncodedDataset:
        check_is_fitted(self, "schema_")
        frame = _as_frame(X)
        if frame.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {frame.shape[1]} features, encoder was fit with {self.n_features_in_}")
        frame.columns = [f.name for f in self.schema_.features]
        return encode_all(self._raws(frame, y), self.schema_, self.vocab_, self.normalizer_)

    @property
    def vocab_sizes_(self) -> list[int]:
        return [len(self.vocab_[n]) for n in self.schema_.categorical]


class OptDistRegressor(RegressorMixin, BaseEstimator):
    """CLTV regressor: OptDist or one of its baselines, selected by ``kind``.

    ``fit`` learns the feature encoding on the training data only. Pass
    ``eval_set=(X_val, y_val)`` to enable early stopping on validation
    Norm-GINI; without it, training runs for ``max_epochs``.
    """

    def __init__(self, kind="optdist", n_distributions=4, temperature=1.0, learning_rate=1e-3,
                 batch_size=2048, max_epochs=50, patience=3, embedding_dim=5, bottom_sizes=(64,),
                 tower_sizes=(64, 32, 32), selector_sizes=(64, 32), no_gumbel=False, no_kl=False,
                 no_ce=False, no_stopgrad=False, optimizer="adam", categorical_features="auto",
                 random_state=0):
        self.kind = kind
        self.n_distributions = n_distributions
        self.temperature = temperature
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.embedding_dim = embedding_dim
        self.bottom_sizes = bottom_sizes
        self.tower_sizes = tower_sizes
        self.selector_sizes = selector_sizes
        self.no_gumbel = no_gumbel
        self.no_kl = no_kl
        self.no_ce = no_ce
        self.no_stopgrad = no_stopgrad
        self.optimizer = optimizer
        self.categorical_features = categorical_features
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            kind=self.kind, n_distributions=self.n_distributions, temperature=self.temperature,
            learning_rate=self.learning_rate, batch_size=self.batch_size, max_epochs=self.max_epochs,
            patience=self.patience, seed=int(self.random_state or 0), embedding_dim=self.embedding_dim,
            bottom_sizes=tuple(self.bottom_sizes), tower_sizes=tuple(self.tower_sizes),
            selector_sizes=tuple(self.selector_sizes), no_gumbel=self.no_gumbel, no_kl=self.no_kl,
            no_ce=self.no_ce, no_stopgrad=self.no_stopgrad, optimizer=self.optimizer,
        )

    def fit(self, X, y, eval_set=None):
        y = _check_target(y)
        check_consistent_length(X, y)
        config = self.train_config().validate()
        self.encoder_ = FeatureEncoder(self.categorical_features).fit(X)
        train_ds = self.encoder_.transform(X, y)
        val_ds = None
        if eval_set is not None:
            X_val, y_val = eval_set
            y_val = _check_target(y_val)
            check_consistent_length(X_val, y_val)
            val_ds = self.encoder_.transform(X_val, y_val)
        self.model_, self.history_ = train(config, train_ds, val_ds, vocab_sizes=self.encoder_.vocab_sizes_)
        self.n_features_in_ = self.encoder_.n_features_in_
        return self

    def _encode(self, X) -> EncodedDataset:
        check_is_fitted(self, "model_")
        return self.encoder_.transform(X)

    def predict(self, X) -> np.ndarray:
        ds = self._encode(X)
        return self.model_.predict(ds.cat, ds.cont)

    def select_distribution(self, X) -> np.ndarray:
        """Index of the sub-distribution used for each row (zeros for baselines)."""
        ds = self._encode(X)
        return self.model_.select(ds.cat, ds.cont)

    def gini_score(self, X, y) -> float:
        return norm_gini(self.predict(X), _check_target(y))
