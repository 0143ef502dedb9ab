"""Command-line entry point (``ince`` / ``python -m ince``).

Every subcommand prints its result to stdout.  Failures print one JSON object
``{"error": <type>, "message": <text>}`` to stderr; bad arguments and unusable
inputs exit with 2, other failures with 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .data import prepare_split, preprocess, train_test_split
from .errors import (
    CheckpointError,
    ContractViolation,
    DatasetUnavailable,
    InceError,
    ParseError,
    SchemaError,
)
from .interaction import InteractionEncoder
from .interpret import export_embedding_points, interpret
from .model import InceConfig, cross_validate, evaluate, load_checkpoint, save_checkpoint, train
from .params import analytic_report, verify_model_counts
from .transformer import TransformerEncoder

INPUT_ERRORS = (SchemaError, ParseError, ContractViolation, DatasetUnavailable, CheckpointError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _strs(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_data(p, required=True):
    p.add_argument("--data", required=required,
                   help="CSV path, or a bundled dataset name: " + ", ".join(bench.BUILTIN))
    p.add_argument("--schema", help="schema file (required for CSV input)")
    p.add_argument("--rows", type=int, default=None, help="random row subsample")


def _add_model(p):
    p.add_argument("--encoder", choices=["in", "transformer"], default="in")
    p.add_argument("--l", type=int, default=32, help="latent size")
    p.add_argument("--d", type=int, default=3, help="MLP depth (interaction network)")
    p.add_argument("--n", type=int, default=2, help="stacked layers; 0 bypasses the encoder")
    p.add_argument("--h", type=int, default=1, help="attention heads")
    p.add_argument("--f", type=int, default=512, help="feed-forward size")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)


def _config(a) -> InceConfig:
    return InceConfig(latent=a.l, depth=a.d, n_layers=a.n, encoder=a.encoder, heads=a.h, ff=a.f,
                      epochs=a.epochs, batch_size=a.batch_size, lr=a.lr, seed=a.seed)


def _load(a):
    if a.schema and not Path(a.schema).is_file():
        raise SchemaError(f"schema file not found: {a.schema}")
    return bench.load_data(a.data, a.schema, a.rows)


def _split(a, raw, schema):
    target = raw.columns[schema.target_name]
    return train_test_split(target, a.test_fraction, a.split_seed, stratify=schema.is_classification)


def _checkpoint_data(a):
    """Rows of ``--data`` preprocessed with the checkpoint's own statistics."""
    model = load_checkpoint(a.checkpoint)
    raw, schema = _load(a)
    if model.schema is not None and schema.n_features != model.schema.n_features:
        raise CheckpointError(
            f"schema has {schema.n_features} features, checkpoint was trained on {model.schema.n_features}"
        )
    if a.test_fraction:
        _, test_idx = _split(a, raw, schema)
        raw = raw.subset(test_idx)
    return model, preprocess(raw, schema, model.stats)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


# -- subcommands ------------------------------------------------------------------------


def cmd_train(a) -> int:
    raw, schema = _load(a)
    train_idx, test_idx = _split(a, raw, schema)
    train_ds, test_ds = prepare_split(raw, schema, train_idx, test_idx)
    result = train(_config(a), train_ds, test_ds, log_path=a.log)
    metrics = evaluate(result.final, test_ds)
    if a.out:
        save_checkpoint(result.final, a.out)
    _emit({"test": metrics, "best_epoch": result.best_epoch, "checkpoint": a.out})
    return 0


def cmd_evaluate(a) -> int:
    model, ds = _checkpoint_data(a)
    _emit(evaluate(model, ds))
    return 0


def cmd_cv(a) -> int:
    raw, schema = _load(a)
    cv = cross_validate(_config(a), raw, schema, k=a.folds, seeds=a.seeds, n_jobs=a.jobs)
    out = cv.to_dict()
    if a.out:
        Path(a.out).write_text(json.dumps(out, indent=2), encoding="utf-8")
    _emit({k: out[k] for k in ("metric", "mean", "std")})
    return 0


def cmd_grid(a) -> int:
    if a.schema and not Path(a.schema).is_file():
        raise SchemaError(f"schema file not found: {a.schema}")
    spec = bench.ExperimentSpec(
        data=a.data, schema=a.schema, latent=a.l, n_layers=a.n, depth=a.d, encoder=a.encoder,
        heads=a.h, ff=a.f, folds=a.folds, seeds=a.seeds, out_dir=a.out_dir, epochs=a.epochs,
        batch_size=a.batch_size, lr=a.lr, n_rows=a.rows, sweep=a.sweep,
    )
    runs = bench.run_experiment(spec, n_jobs=a.jobs)
    _emit({"runs": len(runs), "trained": sum(r.trained for r in runs), "index": str(Path(a.out_dir) / "index.json")})
    return 0


def cmd_paramcount(a) -> int:
    if a.verify:
        rng = np.random.default_rng(0)
        enc = (InteractionEncoder(a.l, a.d, a.n, rng) if a.encoder == "in"
               else TransformerEncoder(a.l, a.h, a.f, a.n, rng))
        report = verify_model_counts(enc)
    else:
        report = analytic_report(a.encoder, a.l, a.d, a.n, a.h, a.f)
    if a.json:
        print(report.to_json())
    elif a.table:
        print(report.to_table())
    else:
        print(report.analytic)
    return 0


def cmd_interpret(a) -> int:
    model, ds = _checkpoint_data(a)
    result = interpret(model, ds, a.out_dir)
    _emit({"spearman_rho": result.rho, "spearman_p": result.p_value, "out_dir": a.out_dir})
    return 0


def cmd_normalized_metric(a) -> int:
    tables = bench.normalized_metric(a.runs)
    if not tables:
        raise ContractViolation(f"{a.runs}: no dataset/latent pair has complete depth and stack curves")
    bench.write_normalized_csv(tables, a.out)
    c_d, c_n = bench.average_curves(tables)
    _emit({"tables": len(tables), "out": a.out, "mean_c_d": c_d.tolist(), "mean_c_n": c_n.tolist()})
    return 0


def cmd_export_embeddings(a) -> int:
    model, ds = _checkpoint_data(a)
    rows = export_embedding_points(model, ds, a.out)
    _emit({"points": len(rows), "out": a.out})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ince", description="Interaction-network contextual embeddings for tabular data")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train on a train/test split and save a checkpoint")
    _add_data(p)
    _add_model(p)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log", help="JSON-lines training log")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("evaluate", cmd_evaluate, "score a checkpoint on a dataset"),
        ("interpret", cmd_interpret, "edge-interaction analysis of an interaction-network checkpoint"),
        ("export-embeddings", cmd_export_embeddings, "2-D columnar and contextual points of an l=2 checkpoint"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        _add_data(p)
        p.add_argument("--test-fraction", type=float, default=0.0,
                       help="use only the held-out part of the split made by train (0 = all rows)")
        p.add_argument("--split-seed", type=int, default=0)
        if name == "interpret":
            p.add_argument("--out-dir", required=True)
        elif name == "export-embeddings":
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("cv", help="K-fold cross validation over one or more seeds")
    _add_data(p)
    _add_model(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seeds", type=_ints, default=[0])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="write the full per-fold result as JSON")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("grid", help="persisted sweep over a model grid")
    _add_data(p)
    p.add_argument("--encoder", type=_strs, default=["in"])
    p.add_argument("--l", type=_ints, default=[32])
    p.add_argument("--d", type=_ints, default=[3])
    p.add_argument("--n", type=_ints, default=[2])
    p.add_argument("--h", type=_ints, default=[1])
    p.add_argument("--f", type=_ints, default=[512])
    p.add_argument("--sweep", choices=["grid", "axes"], default="grid",
                   help="'axes' runs the depth and stack curves needed by normalized-metric")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4])
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default="runs")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("paramcount", help="closed-form encoder parameter count")
    p.add_argument("--encoder", choices=["in", "transformer"], default="in")
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--h", type=int, default=1)
    p.add_argument("--f", type=int, default=512)
    p.add_argument("--verify", action="store_true", help="also build the encoder and compare block by block")
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true")
    fmt.add_argument("--table", action="store_true")
    p.set_defaults(func=cmd_paramcount)

    p = sub.add_parser("normalized-metric", help="normalized depth/stack curves from a sweep directory")
    p.add_argument("--runs", required=True, help="sweep output directory (holds index.json)")
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_normalized_metric)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", str(exc), 2)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except (InceError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
