"""Ranking and error metrics for CLTV predictions."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class UndefinedMetric(ValueError):
    """A rank metric has no value for the given inputs (e.g. constant labels)."""


def _pair(predictions, labels):
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {y.size} labels")
    return p, y


def mae(predictions, labels) -> float:
    p, y = _pair(predictions, labels)
    if p.size == 0:
        raise ValueError("MAE of an empty set")
    return float(np.mean(np.abs(p - y)))


def _gini_raw(labels_sorted: np.ndarray) -> float:
    n = labels_sorted.size
    total = labels_sorted.sum()
    lorenz = np.cumsum(labels_sorted) / total
    return float((lorenz.sum() - (n + 1) / 2.0) / n)


def norm_gini(predictions, labels) -> float:
    """Gini of labels ordered by prediction, divided by the Gini of the perfect order.

    Ordering is by descending key; ties keep the original order. The argument
    order matters: ``norm_gini(pred, y) != norm_gini(y, pred)`` in general.
    """
    p, y = _pair(predictions, labels)
    if p.size < 2:
        raise UndefinedMetric("Norm-GINI needs at least two examples")
    if np.all(y == y[0]):
        raise UndefinedMetric("Norm-GINI is undefined when all labels are equal")
    if y.sum() == 0:
        raise UndefinedMetric("Norm-GINI is undefined when labels sum to zero")
    by_pred = y[np.argsort(-p, kind="stable")]
    by_label = y[np.argsort(-y, kind="stable")]
    best = _gini_raw(by_label)
    if best == 0:
        raise UndefinedMetric("Norm-GINI is undefined for a zero perfect-order Gini")
    return _gini_raw(by_pred) / best


def spearman_rho(predictions, labels) -> float:
    """Pearson correlation of average ranks."""
    p, y = _pair(predictions, labels)
    if p.size < 2:
        raise UndefinedMetric("Spearman's rho needs at least two examples")
    rp = rankdata(p) - (p.size + 1) / 2.0
    ry = rankdata(y) - (y.size + 1) / 2.0
    denom = math.sqrt(float(np.dot(rp, rp)) * float(np.dot(ry, ry)))
    if denom == 0:
        raise UndefinedMetric("Spearman's rho is undefined for constant ranks")
    return float(np.dot(rp, ry) / denom)


def _maybe(fn, p, y):
    try:
        return fn(p, y)
    except UndefinedMetric:
        return None


@dataclass
class MetricsReport:
    mae: float
    norm_gini: float | None
    spearman_rho: float | None
    norm_gini_pos: float | None
    spearman_rho_pos: float | None
    n: int
    n_pos: int

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def metrics_report(predictions, labels) -> MetricsReport:
    """All five metrics; undefined rank metrics are reported as None."""
    p, y = _pair(predictions, labels)
    pos = y > 0
    n_pos = int(pos.sum())
    return MetricsReport(
        mae=mae(p, y),
        norm_gini=_maybe(norm_gini, p, y),
        spearman_rho=_maybe(spearman_rho, p, y),
        norm_gini_pos=_maybe(norm_gini, p[pos], y[pos]) if n_pos >= 2 else None,
        spearman_rho_pos=_maybe(spearman_rho, p[pos], y[pos]) if n_pos >= 2 else None,
        n=int(y.size),
        n_pos=n_pos,
    )


def evaluate(model, dataset) -> MetricsReport:
    """Score ``model`` (anything with ``predict(cat, cont)``) on an encoded dataset."""
    return metrics_report(model.predict(dataset.cat, dataset.cont), dataset.y)


def selection_purity(assignments, clusters) -> float:
    """Fraction of rows whose hidden cluster is the majority cluster of their assigned SDN.

    A selector that sends everything to one SDN scores the largest cluster share.
    """
    a = np.asarray(assignments, dtype=np.int64)
    c = np.asarray(clusters, dtype=np.int64)
    if a.size == 0:
        raise ValueError("purity of an empty assignment")
    table = np.zeros((a.max() + 1, c.max() + 1), dtype=np.int64)
    np.add.at(table, (a, c), 1)
    return float(table.max(axis=1).sum() / a.size)
