"""Command-line entry point: ``exprgen <subcommand>``.

Every invocation ends with one stderr line of the form
``exprgen: status=<ok|error> code=<n> command=<name> [kind=<error class>] message="..."``.
Exit codes: 0 success, 2 configuration error, 3 data-format error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import urllib.request
from pathlib import Path

import numpy as np

from . import checkpoint, classifiers, dataio, experiment, gan, metrics, rbm
from .errors import (
    DimensionError, ExperimentError, ExprgenError, FormatError, LabelingError, NumericError, ParseError,
)

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4
GEO_SERIES_URL = "https://ftp.ncbi.nlm.nih.gov/geo/series/{stub}nnn/{acc}/matrix/{acc}_series_matrix.txt.gz"


def exit_code(exc):
    cause = exc.cause if isinstance(exc, ExperimentError) else exc
    if isinstance(cause, NumericError):
        return EXIT_NUMERIC
    if isinstance(cause, (FormatError, ParseError, LabelingError, DimensionError, OSError)):
        return EXIT_FORMAT
    return EXIT_CONFIG


def _record(status, code, command, message, kind=None):
    kind_part = f" kind={kind}" if kind else ""
    return f"exprgen: status={status} code={code} command={command}{kind_part} message={json.dumps(message)}"


# config keys exposed as flags on the run commands
CONFIG_FLAGS = [f for f in experiment.FIELD_TYPES if f not in ("data",)]


def _add_config_args(p):
    p.add_argument("data", nargs="*", help="expression matrix file(s); several files are stacked by sample")
    p.add_argument("--config", help="key = value config file; flags override it")
    for name in CONFIG_FLAGS:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, metavar="VALUE")


def _config_from_args(args, **forced):
    overrides = {name: experiment.coerce(name, getattr(args, name))
                 for name in CONFIG_FLAGS if getattr(args, name, None) is not None}
    if args.data:
        overrides["data"] = tuple(args.data)
    overrides.update(forced)
    return experiment.load_config(args.config, **overrides)


def cmd_ingest(args):
    cfg = experiment.ExperimentConfig(
        data=tuple(args.data), format=args.format, orientation=args.orientation, labels=args.labels or "",
        task=args.task or "rbm_task1", part="1a" if (args.task or "").startswith("gan") else "",
        pipeline="gan" if (args.task or "").startswith("gan") else "rbm_logistic", augment=args.augment,
    )
    matrix = experiment.load_matrix(cfg)
    if args.task:
        matrix = experiment.prepare_task(matrix, cfg)
    counts = {c: matrix.labels.count(c) for c in sorted(set(matrix.labels))}
    print(f"{matrix.shape[0]} x {matrix.shape[1]}")
    for cls, n in counts.items():
        print(f"{cls}\t{n}")
    if args.write:
        dataio.write_series_matrix(matrix, args.write)
    return f"{matrix.shape[0]}x{matrix.shape[1]}"


def cmd_synth(args):
    classes = tuple(c.strip() for c in args.classes.split(","))
    matrix = experiment.make_synthetic(classes, args.per_class, args.genes, args.separation, args.seed)
    out = Path(args.out_dir)
    if not out.is_absolute():
        out = experiment.output_root() / out
    data_path, label_path = experiment.write_synthetic(matrix, out, args.name)
    print(data_path)
    print(label_path)
    return f"{matrix.shape[0]}x{matrix.shape[1]}"


def _run(args, **forced):
    cfg = _config_from_args(args, **forced)
    result = experiment.run_experiment(cfg)
    print(result.report.summary())
    print(result.out_dir)
    return str(result.out_dir)


def cmd_train_rbm(args):
    cfg = _config_from_args(args)
    if cfg.pipeline == "gan":
        raise experiment.ConfigurationError("train-rbm needs an rbm pipeline")
    return _run(args)


def cmd_train_gan(args):
    forced = {"pipeline": "gan"}
    if args.task is None and not args.config:
        forced["task"] = "gan_task2"
    return _run(args, **forced)


def _scaled(path, matrix):
    _, arrays = checkpoint.load(path, kind="minmax")
    return dataio.minmax_scale(matrix, (arrays["lo"], arrays["hi"]))


def cmd_classify(args):
    run = Path(args.run_dir)
    parse = dataio.parse_series_matrix if args.format == "series_matrix" else dataio.parse_tsv_matrix
    matrix = _scaled(run / "scaler.npz", parse(Path(args.data)))
    rows = []
    if (run / "gan.npz").exists():
        model = gan.GanModel.load(run / "gan.npz")
        res = gan.classify_by_membership(model, matrix, args.threshold)
        rows = zip(matrix.sample_ids, res.in_class.astype(int), res.scores)
    else:
        model = rbm.RbmModel.load(run / "rbm.npz")
        feats = rbm.transform(model, matrix)
        manifest, _ = checkpoint.load(run / "head.npz")
        if manifest["kind"] == "svm":
            labels, scores = classifiers.svm_predict(classifiers.SvmModel.load(run / "head.npz"), feats)
            rows = zip(matrix.sample_ids, (labels == 1).astype(int), scores)
        else:
            scores, labels = classifiers.logistic_predict(classifiers.LogisticModel.load(run / "head.npz"), feats)
            rows = zip(matrix.sample_ids, labels, scores)
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["sample_id", "pred", "score"])
    n = 0
    for sid, pred, score in rows:
        writer.writerow([sid, int(pred), repr(float(score))])
        n += 1
    if out is not sys.stdout:
        out.close()
    return f"{n} samples"


def cmd_evaluate(args):
    """Score a predictions CSV (``sample_id,true,pred[,score]``)."""
    with open(args.predictions, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"true", "pred"} <= set(reader.fieldnames):
            raise FormatError("predictions file needs 'true' and 'pred' columns", line=1)
        truth, pred = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                truth.append(int(row["true"]))
                pred.append(int(row["pred"]))
            except (TypeError, ValueError):
                raise ParseError("labels must be integers", row=lineno) from None
    report = metrics.evaluate(np.array(truth), np.array(pred), averaging=args.averaging)
    text = metrics.report_csv(report)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    print(report.summary(), file=sys.stderr)
    return report.summary()


def cmd_sweep(args):
    cfg = _config_from_args(args)
    rows, path = experiment.run_sweep(cfg, args.param, args.values.split(","), args.seed_policy)
    sys.stdout.write(path.read_text())
    return str(path)


def cmd_fetch(args):
    acc = args.accession.upper()
    stub = acc[:-3] if len(acc) > 6 else "GSE"
    url = GEO_SERIES_URL.format(stub=stub, acc=acc)
    dest = Path(args.out or f"{acc}_series_matrix.txt.gz")
    with urllib.request.urlopen(url, timeout=60) as resp:
        dest.write_bytes(resp.read())
    print(dest)
    return str(dest)


def build_parser():
    parser = argparse.ArgumentParser(prog="exprgen", description="RBM and GAN features for expression-based tissue classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and summarize expression data")
    p.add_argument("data", nargs="+")
    p.add_argument("--format", default="series_matrix", choices=["series_matrix", "tsv"])
    p.add_argument("--orientation", default="genes_in_rows", choices=["genes_in_rows", "samples_in_rows"])
    p.add_argument("--labels")
    p.add_argument("--task", choices=experiment.RBM_TASKS + experiment.GAN_TASKS)
    p.add_argument("--augment", type=int, default=8)
    p.add_argument("--write", help="write the (task-prepared) matrix as a series matrix")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a synthetic two-class dataset")
    p.add_argument("--out-dir", default="synthetic")
    p.add_argument("--name", default="synthetic")
    p.add_argument("--classes", default="ibc,non_ibc")
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--genes", type=int, default=512)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    for name, func, text in [("train-rbm", cmd_train_rbm, "RBM features + logistic/SVM head"),
                             ("train-gan", cmd_train_gan, "GAN membership task")]:
        p = sub.add_parser(name, help=text)
        _add_config_args(p)
        p.set_defaults(func=func)

    p = sub.add_parser("classify", help="apply a finished run's models to new samples")
    p.add_argument("run_dir")
    p.add_argument("data")
    p.add_argument("--format", default="series_matrix", choices=["series_matrix", "tsv"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="precision/recall/F1 of a predictions CSV")
    p.add_argument("predictions")
    p.add_argument("--averaging", default="weighted", choices=["weighted", "macro"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="one run per hyperparameter value")
    _add_config_args(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated")
    p.add_argument("--seed-policy", default="shared", choices=["shared", "offset"])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fetch", help="download a GEO series matrix (network)")
    p.add_argument("accession")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fetch)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        message = args.func(args)
    except (ExprgenError, OSError) as exc:
        code = exit_code(exc)
        cause = exc.cause if isinstance(exc, ExperimentError) else exc
        print(f"error: {exc}", file=sys.stderr)
        print(_record("error", code, args.command, str(exc), type(cause).__name__), file=sys.stderr)
        return code
    print(_record("ok", EXIT_OK, args.command, message or ""), file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
