"""Command-line interface: ``optdist {generate,train,evaluate,sweep,gradcheck}``.

Every command takes ``--out DIR`` and most take ``--config FILE`` (JSON)::

    {
      "synthetic": {"conversion": [...], "mu": [...], "sigma": [...], "n": 50000, "noise": 0.05, "seed": 0},
      "data": {"csv": "data.csv", "schema": "schema.json", "split_seed": 0},
      "train": {"n_distributions": 4, "temperature": 1.0, ...},
      "sweep": {"axis": "n_distributions", "values": [2, 3, 4, 5, 6], "seeds": [0, 1, 2]}
    }

Relative paths are resolved against the config file's directory. Any training
option can be overridden with a flag of the same name, e.g. ``--no_kl true``.
Failures exit with status 2 and print one ``error: <kind>: <message>`` line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .artifact import ArtifactError, load_artifact, save_artifact
from .data import (
    DataError,
    SchemaError,
    SyntheticConfig,
    SYNTHETIC_SCHEMA,
    build_vocab,
    encode_all,
    fit_normalizer,
    generate_synthetic,
    load_csv,
    load_schema,
    save_schema,
    split,
    write_csv,
)
from .gradcheck import TOY_CONFIG, gradient_check
from .metrics import evaluate
from .training import ConfigError, TrainConfig, run_sweep, train

logger = logging.getLogger("optdist")


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(message)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_sizes(text: str) -> tuple:
    return tuple(int(s) for s in text.split(",") if s.strip())


def _add_train_overrides(parser):
    group = parser.add_argument_group("training overrides")
    for f in dataclasses.fields(TrainConfig):
        if f.type in ("bool", bool):
            kind = _parse_bool
        elif f.type in ("tuple", tuple):
            kind = _parse_sizes
        elif f.type in ("int", int):
            kind = int
        elif f.type in ("float", float):
            kind = float
        else:
            kind = str
        group.add_argument(f"--{f.name}", type=kind, default=None)


def _load_config(path) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    if not p.exists():
        raise CliError("ConfigError", f"config file {p} does not exist")
    try:
        with open(p, encoding="utf-8") as fh:
            return json.load(fh), p.resolve().parent
    except json.JSONDecodeError as e:
        raise CliError("ConfigError", f"{p}: invalid JSON: {e}") from None


def _train_config(cfg: dict, args) -> TrainConfig:
    base = dict(cfg.get("train", {}))
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    return TrainConfig.from_dict(base)


def _synthetic_config(cfg: dict) -> SyntheticConfig:
    section = cfg.get("synthetic")
    if section is None:
        raise CliError("ConfigError", "config has no 'synthetic' section")
    try:
        return SyntheticConfig(**section)
    except TypeError as e:
        raise CliError("ConfigError", f"synthetic: {e}") from None


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError("OutputError", f"cannot create output directory {out}: {e}") from None
    return out


def _write_json(path: Path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _collect_problems(cfg: dict, base: Path, args, need_data: bool) -> tuple[TrainConfig | None, list[str]]:
    problems = []
    tc = None
    try:
        tc = _train_config(cfg, args)
        problems += tc.problems()
    except ConfigError as e:
        problems += e.problems
    except TypeError as e:
        problems.append(f"train: {e}")
    if need_data:
        data = cfg.get("data")
        if data is None and "synthetic" not in cfg:
            problems.append("config needs a 'data' or a 'synthetic' section")
        if data is not None:
            for key in ("csv", "schema"):
                if key not in data:
                    problems.append(f"data.{key}: missing")
                elif not _resolve(base, data[key]).exists():
                    problems.append(f"data.{key}: {_resolve(base, data[key])} does not exist")
        elif "synthetic" in cfg:
            try:
                _synthetic_config(cfg).validate()
            except (CliError, ValueError) as e:
                problems.append(f"synthetic: {e}")
    return tc, problems


def _load_splits(cfg: dict, base: Path):
    """Raw examples + schema, split 7:1:2. Cluster labels ride along for synthetic data."""
    data = cfg.get("data")
    if data is not None:
        schema = load_schema(_resolve(base, data["schema"]))
        raws = load_csv(_resolve(base, data["csv"]), schema)
        seed = int(data.get("split_seed", 0))
        clusters = None
    else:
        sc = _synthetic_config(cfg)
        raws, clusters = generate_synthetic(sc)
        schema = SYNTHETIC_SCHEMA
        seed = sc.seed
    parts = split(list(range(len(raws))), seed=seed)
    return schema, raws, parts, clusters


def _encode_splits(schema, raws, parts):
    tr_raw = [raws[i] for i in parts[0]]
    vocab = build_vocab(tr_raw, schema)
    normalizer = fit_normalizer(tr_raw, schema)
    encoded = [encode_all([raws[i] for i in p], schema, vocab, normalizer) for p in parts]
    return vocab, normalizer, encoded


def cmd_generate(args):
    cfg, _ = _load_config(args.config)
    sc = _synthetic_config(cfg)
    if args.seed is not None:
        sc.seed = args.seed
    try:
        sc.validate()
    except ValueError as e:
        raise CliError("ConfigError", f"synthetic: {e}") from None
    out = _out_dir(args)
    raws, clusters = generate_synthetic(sc)
    write_csv(out / "data.csv", raws, SYNTHETIC_SCHEMA)
    save_schema(SYNTHETIC_SCHEMA, out / "schema.json")
    with open(out / "clusters.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "cluster"])
        w.writerows(enumerate(clusters.tolist()))
    ys = np.array([r.label for r in raws])
    summary = {"n": len(raws), "n_pos": int((ys > 0).sum()), "positive_ratio": float((ys > 0).mean())}
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_train(args):
    cfg, base = _load_config(args.config)
    tc, problems = _collect_problems(cfg, base, args, need_data=True)
    if problems:
        raise CliError("ConfigError", "; ".join(problems))
    out = _out_dir(args)
    schema, raws, parts, _ = _load_splits(cfg, base)
    vocab, normalizer, (tr, va, te) = _encode_splits(schema, raws, parts)
    vocab_sizes = [len(vocab[n]) for n in schema.categorical]

    with open(out / "history.jsonl", "w", encoding="utf-8") as hist:
        def log(record):
            line = json.dumps(dataclasses.asdict(record), sort_keys=True)
            hist.write(line + "\n")
            logger.info("epoch %d %s", record.epoch, line)

        model, history = train(tc, tr, va, vocab_sizes=vocab_sizes, log=log)

    test_report = evaluate(model, te) if len(te) else None
    save_artifact(out / "model.npz", model, tc, schema, vocab, normalizer,
                  extra={"best_epoch": history.best_epoch})
    final = {
        "kind": model.kind,
        "single_distribution": model.n_distributions == 1,
        "best_epoch": history.best_epoch,
        "epochs": len(history),
        "test": None if test_report is None else test_report.as_dict(),
    }
    _write_json(out / "metrics.json", final)
    _write_json(out / "config.json", {**cfg, "train": tc.to_dict()})
    print(json.dumps(final, sort_keys=True))
    return 0


def cmd_evaluate(args):
    try:
        model, _, schema, vocab, normalizer, _ = load_artifact(args.model)
    except (OSError, ArtifactError) as e:
        raise CliError("ArtifactError", str(e)) from None
    if args.schema is not None:
        given = load_schema(args.schema)
        diff = schema.diff(given)
        if diff:
            raise CliError("SchemaError", "schema mismatch: " + "; ".join(diff))
    with open(args.data, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    missing = [c for c in schema.columns if c not in header]
    if missing:
        raise CliError("SchemaError", "schema mismatch: " + "; ".join(f"missing column {c!r}" for c in missing))
    raws = load_csv(args.data, schema)
    ds = encode_all(raws, schema, vocab, normalizer)
    report = evaluate(model, ds)
    out = _out_dir(args)
    _write_json(out / "metrics.json", report.as_dict())
    print(report.to_json())
    return 0


def cmd_sweep(args):
    cfg, base = _load_config(args.config)
    tc, problems = _collect_problems(cfg, base, args, need_data=True)
    section = cfg.get("sweep", {})
    axis = args.axis or section.get("axis")
    values = section.get("values") if args.values is None else args.values
    seeds = section.get("seeds") if args.seeds is None else args.seeds
    if not axis:
        problems.append("sweep.axis: missing")
    elif axis not in {f.name for f in dataclasses.fields(TrainConfig)}:
        problems.append(f"sweep.axis: {axis!r} is not a training option")
    if not values:
        problems.append("sweep.values: empty")
    if problems:
        raise CliError("ConfigError", "; ".join(problems))
    field_type = {f.name: f.type for f in dataclasses.fields(TrainConfig)}[axis]
    cast = int if field_type in ("int", int) else float if field_type in ("float", float) else (lambda v: v)
    values = [cast(v) for v in values]
    out = _out_dir(args)
    schema, raws, parts, _ = _load_splits(cfg, base)
    vocab, _, (tr, va, te) = _encode_splits(schema, raws, parts)
    vocab_sizes = [len(vocab[n]) for n in schema.categorical]
    rows = run_sweep(tc, axis, values, tr, va, te, seeds=seeds, vocab_sizes=vocab_sizes)
    _write_json(out / "sweep.json", rows)
    flat = [{k: v for k, v in r.items() if k not in ("runs", "seeds")} for r in rows]
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(flat[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(flat)
    for r in flat:
        print(json.dumps(r, sort_keys=True))
    return 0


def cmd_gradcheck(args):
    cfg, _ = _load_config(args.config)
    base = dict(TOY_CONFIG.to_dict(), **cfg.get("train", {}))
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    tc = TrainConfig.from_dict(base)
    result = gradient_check(tc, eps=args.eps, threshold=args.threshold, seed=args.seed or 0,
                            corrupt=args.corrupt_gradient)
    out = _out_dir(args)
    _write_json(out / "gradcheck.json", result.as_dict())
    print(f"max relative error {result.max_rel_error:.3e} (threshold {result.threshold:g}) -> "
          f"{'PASS' if result.passed else 'FAIL'}")
    return 0 if result.passed else 1


def _csv_list(kind):
    def parse(text):
        return [kind(v) for v in text.split(",") if v.strip()]
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optdist", description="OptDist CLTV prediction")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic ZILN-mixture dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and save the best-validation artifact")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    _add_train_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model on a CSV file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train/evaluate over one hyperparameter axis")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--axis", default=None)
    p.add_argument("--values", type=_csv_list(str), default=None)
    p.add_argument("--seeds", type=_csv_list(int), default=None)
    _add_train_overrides(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training gradients")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    _add_train_overrides(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e.kind}: {e}", file=sys.stderr)
    except ConfigError as e:
        print(f"error: ConfigError: {e}", file=sys.stderr)
    except SchemaError as e:
        print(f"error: SchemaError: {e}", file=sys.stderr)
    except DataError as e:
        print(f"error: DataError: {e}", file=sys.stderr)
    except (ArtifactError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
