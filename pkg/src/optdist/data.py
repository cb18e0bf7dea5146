"""Schema, CSV ingestion, encoding, splitting and a synthetic ZILN-mixture generator."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

UNKNOWN = "<unk>"


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str  # "categorical" | "continuous"


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]
    label: str = "y"
    horizon_days: int | None = None

    def __post_init__(self):
        names = [f.name for f in self.features]
        if not names:
            raise SchemaError("schema needs at least one feature")
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate feature names in {names}")
        if self.label in names:
            raise SchemaError(f"label column {self.label!r} is also listed as a feature")
        for f in self.features:
            if f.kind not in ("categorical", "continuous"):
                raise SchemaError(f"feature {f.name!r} has unknown kind {f.kind!r}")

    @property
    def categorical(self) -> list[str]:
        return [f.name for f in self.features if f.kind == "categorical"]

    @property
    def continuous(self) -> list[str]:
        return [f.name for f in self.features if f.kind == "continuous"]

    @property
    def columns(self) -> list[str]:
        return [f.name for f in self.features] + [self.label]

    def to_dict(self) -> dict:
        return {
            "features": [asdict(f) for f in self.features],
            "label": self.label,
            "horizon_days": self.horizon_days,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        try:
            feats = tuple(Feature(f["name"], f["kind"]) for f in d["features"])
        except (KeyError, TypeError) as e:
            raise SchemaError(f"malformed schema manifest: {e}") from e
        return cls(feats, d.get("label", "y"), d.get("horizon_days"))

    def diff(self, other: "FeatureSchema") -> list[str]:
        """Human-readable field-level differences between two schemas."""
        out = []
        mine = {f.name: f.kind for f in self.features}
        theirs = {f.name: f.kind for f in other.features}
        for name in mine.keys() - theirs.keys():
            out.append(f"missing feature {name!r}")
        for name in theirs.keys() - mine.keys():
            out.append(f"unexpected feature {name!r}")
        for name in mine.keys() & theirs.keys():
            if mine[name] != theirs[name]:
                out.append(f"feature {name!r}: kind {theirs[name]!r} != expected {mine[name]!r}")
        if self.label != other.label:
            out.append(f"label {other.label!r} != expected {self.label!r}")
        if not out and [f.name for f in self.features] != [f.name for f in other.features]:
            out.append("feature order differs")
        return sorted(out)


def load_schema(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_dict(json.load(fh))


def save_schema(schema: FeatureSchema, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class RawExample:
    values: dict  # feature name -> str (categorical) or float (continuous)
    label: float


def _parse_float(text, what, lineno):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise DataError(f"line {lineno}: cannot parse {what} {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {lineno}: non-finite {what} {text!r}")
    return v


def load_csv(path, schema: FeatureSchema) -> list[RawExample]:
    """Read a UTF-8 CSV with a header row. Line numbers in errors are 1-based file lines."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        out = []
        errors = []
        for row in reader:
            lineno = reader.line_num
            try:
                y = _parse_float(row[schema.label], "label", lineno)
                if y < 0:
                    raise DataError(f"line {lineno}: negative label {row[schema.label]!r}")
                values = {}
                for f in schema.features:
                    if f.kind == "categorical":
                        values[f.name] = row[f.name] if row[f.name] is not None else ""
                    else:
                        values[f.name] = _parse_float(row[f.name], f"feature {f.name!r}", lineno)
                out.append(RawExample(values, y))
            except DataError as e:
                errors.append(str(e))
        if errors:
            shown = "; ".join(errors[:10])
            more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
            raise DataError(f"{path}: {len(errors)} malformed row(s): {shown}{more}")
    return out


def write_csv(path, examples: list[RawExample], schema: FeatureSchema):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.columns)
        for ex in examples:
            row = []
            for f in schema.features:
                v = ex.values[f.name]
                row.append(repr(float(v)) if f.kind == "continuous" else v)
            row.append(repr(float(ex.label)))
            w.writerow(row)


def build_vocab(train: list[RawExample], schema: FeatureSchema) -> dict[str, dict[str, int]]:
    """Index 0 is reserved for unknown values; the rest follow first occurrence."""
    if not train:
        raise DataError("cannot build a vocabulary from an empty training split")
    vocab = {}
    for name in schema.categorical:
        table = {UNKNOWN: 0}
        for ex in train:
            v = ex.values[name]
            if v not in table:
                table[v] = len(table)
        vocab[name] = table
    return vocab


@dataclass(frozen=True)
class Normalizer:
    mean: dict[str, float]
    std: dict[str, float]

    def apply(self, name: str, value: float) -> float:
        s = self.std[name]
        if s == 0:
            return 0.0
        return (value - self.mean[name]) / s


def fit_normalizer(train: list[RawExample], schema: FeatureSchema) -> Normalizer:
    if not train:
        raise DataError("cannot fit a normalizer on an empty training split")
    mean, std = {}, {}
    for name in schema.continuous:
        col = np.array([ex.values[name] for ex in train], dtype=np.float64)
        mean[name] = float(col.mean())
        std[name] = float(col.std())  # population std
    return Normalizer(mean, std)


@dataclass(frozen=True)
class EncodedExample:
    categorical_indices: tuple[int, ...]
    continuous_values: tuple[float, ...]
    label: float
    converted: int


def encode(raw: RawExample, schema: FeatureSchema, vocab, normalizer: Normalizer) -> EncodedExample:
    cats = tuple(vocab[n].get(raw.values[n], 0) for n in schema.categorical)
    conts = tuple(normalizer.apply(n, float(raw.values[n])) for n in schema.continuous)
    y = float(raw.label)
    return EncodedExample(cats, conts, y, int(y > 0))


@dataclass
class EncodedDataset:
    """Column-stacked encoded examples, the unit every model consumes."""

    cat: np.ndarray  # (n, n_cat) int64
    cont: np.ndarray  # (n, n_cont) float64
    y: np.ndarray  # (n,)
    converted: np.ndarray = field(default=None)  # (n,) int64

    def __post_init__(self):
        self.cat = np.asarray(self.cat, dtype=np.int64).reshape(len(self.y), -1)
        self.cont = np.asarray(self.cont, dtype=np.float64).reshape(len(self.y), -1)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.converted is None:
            self.converted = (self.y > 0).astype(np.int64)

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "EncodedDataset":
        return EncodedDataset(self.cat[idx], self.cont[idx], self.y[idx], self.converted[idx])

    @classmethod
    def from_examples(cls, examples: list[EncodedExample], n_cat: int, n_cont: int) -> "EncodedDataset":
        n = len(examples)
        cat = np.array([e.categorical_indices for e in examples], dtype=np.int64).reshape(n, n_cat)
        cont = np.array([e.continuous_values for e in examples], dtype=np.float64).reshape(n, n_cont)
        y = np.array([e.label for e in examples], dtype=np.float64)
        c = np.array([e.converted for e in examples], dtype=np.int64)
        return cls(cat, cont, y, c)


def encode_all(raws, schema, vocab, normalizer) -> EncodedDataset:
    encoded = [encode(r, schema, vocab, normalizer) for r in raws]
    return EncodedDataset.from_examples(encoded, len(schema.categorical), len(schema.continuous))


def split(dataset, ratios=(0.7, 0.1, 0.2), seed: int = 0):
    """Shuffle with ``seed`` and cut into train/val/test.

    Val and test get floor(n * r); the remainder goes to train.
    Works on lists and on :class:`EncodedDataset`.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    n_test = int(math.floor(n * ratios[2] + 1e-9))
    n_train = n - n_val - n_test
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    if isinstance(dataset, EncodedDataset):
        return tuple(dataset.subset(p) for p in parts)
    return tuple([dataset[i] for i in p] for p in parts)


@dataclass
class SyntheticConfig:
    conversion: list[float]  # p_k per cluster
    mu: list[float]
    sigma: list[float]
    priors: list[float] | None = None  # uniform when omitted
    n: int = 50_000
    noise: float = 0.05  # probability the cluster token is replaced by a wrong one
    seed: int = 0
    feature_scale: float = 2.0  # radius of the cluster centres in the continuous plane

    @property
    def k(self) -> int:
        return len(self.conversion)

    def validate(self):
        k = self.k
        if k < 1:
            raise ValueError("need at least one cluster")
        if not (len(self.mu) == len(self.sigma) == k):
            raise ValueError("conversion, mu and sigma must have one entry per cluster")
        pri = self.resolved_priors()
        if len(pri) != k or any(p < 0 for p in pri) or abs(sum(pri) - 1.0) > 1e-9:
            raise ValueError(f"priors must be {k} non-negative numbers summing to 1")
        if any(not (0.0 <= p <= 1.0) for p in self.conversion):
            raise ValueError("conversion probabilities must lie in [0, 1]")
        if any(s <= 0 for s in self.sigma):
            raise ValueError("sigma must be positive")
        if int(self.n) < 1:
            raise ValueError("n must be >= 1")
        if not (0.0 <= self.noise <= 1.0):
            raise ValueError("noise must lie in [0, 1]")

    def resolved_priors(self) -> list[float]:
        return list(self.priors) if self.priors is not None else [1.0 / self.k] * self.k


SYNTHETIC_SCHEMA = FeatureSchema(
    (Feature("token", "categorical"), Feature("x1", "continuous"), Feature("x2", "continuous")),
    label="y",
)


def generate_synthetic(config: SyntheticConfig) -> tuple[list[RawExample], np.ndarray]:
    """Sample a zero-inflated lognormal mixture.

    Returns the examples (schema :data:`SYNTHETIC_SCHEMA`) and the hidden cluster
    index of every row. The cluster index is for evaluation only.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    k, n = config.k, int(config.n)
    clusters = rng.choice(k, size=n, p=np.asarray(config.resolved_priors()))

    flip = rng.random(n) < config.noise
    if k > 1:
        # a wrong token is uniform over the other k-1 clusters
        shift = rng.integers(1, k, size=n)
        tokens = np.where(flip, (clusters + shift) % k, clusters)
    else:
        tokens = clusters

    angles = 2.0 * np.pi * np.arange(k) / k
    centres = config.feature_scale * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    x = centres[clusters] + rng.standard_normal((n, 2))

    p = np.asarray(config.conversion)[clusters]
    mu = np.asarray(config.mu)[clusters]
    sigma = np.asarray(config.sigma)[clusters]
    converted = rng.random(n) < p
    y = np.where(converted, np.exp(mu + sigma * rng.standard_normal(n)), 0.0)

    examples = [
        RawExample({"token": f"c{tokens[i]}", "x1": float(x[i, 0]), "x2": float(x[i, 1])}, float(y[i]))
        for i in range(n)
    ]
    return examples, clusters.astype(np.int64)
