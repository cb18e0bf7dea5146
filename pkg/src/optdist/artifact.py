"""Single-file model artifacts: parameters, vocabulary, normalizer and config in one ``.npz``."""
from __future__ import annotations

import json

import numpy as np

from .data import FeatureSchema, Normalizer
from .training import TrainConfig, build_model

ARTIFACT_VERSION = 1


class ArtifactError(ValueError):
    pass


def save_artifact(path, model, config: TrainConfig, schema: FeatureSchema, vocab, normalizer: Normalizer, extra=None):
    meta = {
        "version": ARTIFACT_VERSION,
        "kind": model.kind,
        "single_distribution": model.n_distributions == 1,
        "config": config.to_dict(),
        "arch": model.arch,
        "schema": schema.to_dict(),
        "vocab": vocab,
        "normalizer": {"mean": normalizer.mean, "std": normalizer.std},
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8), **arrays)


def load_artifact(path):
    """Returns ``(model, config, schema, vocab, normalizer, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z:
            raise ArtifactError(f"{path}: not a model artifact")
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if meta.get("version") != ARTIFACT_VERSION:
            raise ArtifactError(f"{path}: artifact version {meta.get('version')} != supported {ARTIFACT_VERSION}")
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    config = TrainConfig.from_dict(meta["config"])
    schema = FeatureSchema.from_dict(meta["schema"])
    model = build_model(config, meta["arch"]["vocab_sizes"], meta["arch"]["n_cont"])
    if set(params) != set(model.params):
        raise ArtifactError(f"{path}: parameter set does not match the recorded architecture")
    for k, v in params.items():
        np.copyto(model.params[k], v)
    normalizer = Normalizer(meta["normalizer"]["mean"], meta["normalizer"]["std"])
    return model, config, schema, meta["vocab"], normalizer, meta
