"""Experiment harness: task preprocessing, RBM and GAN pipelines, sweeps and synthetic data.

Every run writes into one directory:

- ``report.csv``     averaged precision/recall/F1 (metrics sweep layout)
- ``per_class.csv``  confusion counts and per-class scores
- ``trace.csv``      RBM reconstruction error per epoch, or the GAN step trace
- ``predictions.csv``
- ``*.npz``          model checkpoints and the scaling bounds
- ``manifest.txt``   the resolved config; feeding it back as ``--config`` replays the run
"""
from __future__ import annotations

import csv
import dataclasses
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, classifiers, dataio, gan, metrics, rbm
from .errors import ConfigurationError, ExperimentError, ExprgenError, FormatError, LabelingError

OUTPUT_ROOT_ENV = "EXPRGEN_OUTPUT_ROOT"
MANIFEST_VERSION = 1

RBM_TASKS = ("rbm_task1", "rbm_task2", "rbm_prostate")
GAN_TASKS = ("gan_task1", "gan_task2", "gan_task3")
GAN_PARTS = ("1a", "1b", "2a", "2b")
PIPELINES = ("rbm_logistic", "rbm_svm", "gan")

# task -> (negative class name, positive class name, {source label: task class})
TASK_CLASSES = {
    "rbm_task1": ("non_ibc", "ibc", {"ibc": "ibc", "non_ibc": "non_ibc"}),
    "rbm_task2": ("normal", "cancerous", {"ibc": "cancerous", "non_ibc": "cancerous", "normal": "normal"}),
    "rbm_prostate": ("prostate_normal", "prostate_tumor",
                     {"prostate_tumor": "prostate_tumor", "prostate_normal": "prostate_normal"}),
    "gan_task1": ("non_cancerous", "cancerous", {"ibc": "cancerous", "non_ibc": "cancerous", "normal": "non_cancerous"}),
    "gan_task2": ("non_ibc", "ibc", {"ibc": "ibc", "non_ibc": "non_ibc"}),
    "gan_task3": ("prostate_normal", "prostate_tumor",
                  {"prostate_tumor": "prostate_tumor", "prostate_normal": "prostate_normal"}),
}
# tasks whose normal class is replicated before anything else
AUGMENTED_TASKS = ("rbm_task2", "gan_task1")

REDUCED_GAN = dict(upsample=(2, 2), gen_channels=(8, 4), disc_channels=(4, 8), disc_dense=16)


@dataclass
class ExperimentConfig:
    data: tuple[str, ...] = ()
    format: str = "series_matrix"
    orientation: str = "genes_in_rows"
    labels: str = ""
    task: str = "rbm_task1"
    part: str = ""
    pipeline: str = "rbm_logistic"
    # RBM and heads
    alpha: float = 0.01
    noc: int = 200
    cd_steps: int = 1
    minibatch: int = 10
    logistic_c: float = 1.0
    svm_c: float = 1.0
    gamma: float = 0.06
    # GAN
    alpha_d: float = 3e-5
    alpha_g: float = 3e-5
    k: int = 1
    gan_minibatch: int = 8
    gan_arch: str = "full"
    non_saturating: bool = False
    # shared
    epochs: int = 50
    augment: int = 8
    split: float = 0.5
    seed: int = 0
    averaging: str = "weighted"
    out: str = ""

    def __post_init__(self):
        if isinstance(self.data, str):
            self.data = tuple(p.strip() for p in self.data.split(",") if p.strip())
        self.data = tuple(str(p) for p in self.data)
        if self.task not in RBM_TASKS + GAN_TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}; expected one of {', '.join(RBM_TASKS + GAN_TASKS)}")
        if self.pipeline not in PIPELINES:
            raise ConfigurationError(f"unknown pipeline {self.pipeline!r}; expected one of {', '.join(PIPELINES)}")
        if (self.task in GAN_TASKS) != (self.pipeline == "gan"):
            raise ConfigurationError(f"task {self.task} cannot run on pipeline {self.pipeline}")
        if self.task in GAN_TASKS and self.part not in GAN_PARTS:
            raise ConfigurationError(f"GAN tasks need part in {', '.join(GAN_PARTS)}, got {self.part!r}")
        if self.task in RBM_TASKS and self.part:
            raise ConfigurationError("parts apply to GAN tasks only")
        if not 0.0 < self.split < 1.0:
            raise ConfigurationError(f"split must be in (0, 1), got {self.split}")
        if self.format not in ("series_matrix", "tsv"):
            raise ConfigurationError(f"unknown data format {self.format!r}")
        if self.gan_arch not in ("full", "reduced"):
            raise ConfigurationError(f"gan_arch must be full or reduced, got {self.gan_arch!r}")
        if self.averaging not in ("weighted", "macro"):
            raise ConfigurationError(f"unknown averaging mode {self.averaging!r}")
        if min(self.noc, self.cd_steps, self.minibatch, self.augment) < 1 or self.epochs < 0:
            raise ConfigurationError("noc, cd_steps, minibatch and augment must be >= 1, epochs >= 0")

    @property
    def run_name(self):
        return f"{self.task}_{self.part}" if self.part else self.task

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _convert(name, raw, kind):
    raw = raw.strip()
    try:
        if kind in ("bool", bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{name}: cannot read {raw!r} as {kind}") from None
    return raw


FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def coerce(name, raw):
    """Convert a textual value for config field ``name``."""
    if name not in FIELD_TYPES:
        raise ConfigurationError(f"unknown config key {name!r}")
    kind = FIELD_TYPES[name]
    if kind.startswith("tuple"):
        return tuple(p.strip() for p in raw.split(",") if p.strip())
    return _convert(name, raw, kind)


def parse_config_text(text) -> dict:
    """``key = value`` lines; blank lines and ``#`` comments ignored."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError("config lines must look like 'key = value'", line=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = coerce(key, raw)
    return values


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Config file values (if any), then ``overrides`` on top."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - set(FIELD_TYPES)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return ExperimentConfig(**values)


def output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def resolve_out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.out) if config.out else Path("runs") / config.run_name
    return out if out.is_absolute() else output_root() / out


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def load_matrix(config: ExperimentConfig) -> dataio.ExpressionMatrix:
    """Parse every data file, stack their samples and attach class labels."""
    if not config.data:
        raise ConfigurationError("no data files given")
    parts = []
    for path in config.data:
        path = Path(path)
        if config.format == "series_matrix":
            parts.append(dataio.parse_series_matrix(path))
        else:
            parts.append(dataio.parse_tsv_matrix(path, config.orientation))
    first = parts[0]
    for other, path in zip(parts[1:], config.data[1:]):
        if other.gene_ids != first.gene_ids:
            raise FormatError(f"{path}: gene ids differ from {config.data[0]}")
    matrix = dataio.ExpressionMatrix(
        np.vstack([p.values for p in parts]),
        sum((p.sample_ids for p in parts), ()),
        first.gene_ids,
    )
    if config.labels:
        label_map = dataio.parse_label_map(Path(config.labels))
    elif config.task in ("rbm_prostate", "gan_task3"):
        raise LabelingError(["<prostate tasks need a label map file>"])
    else:
        label_map = dataio.gse45584_labels()
    return dataio.attach_labels(matrix, label_map)


def prepare_task(matrix: dataio.ExpressionMatrix, config: ExperimentConfig) -> dataio.ExpressionMatrix:
    """Task-specific sample selection, augmentation and relabelling to the task's two classes."""
    _, _, mapping = TASK_CLASSES[config.task]
    matrix = matrix.where_label(*mapping)
    if config.task in AUGMENTED_TASKS:
        matrix = dataio.augment_replicate(matrix, "normal", config.augment)
    matrix = matrix.relabel(mapping)
    present = set(matrix.labels)
    if len(present) < 2:
        raise LabelingError([f"<task {config.task} needs both of {sorted(set(mapping.values()))}, found {sorted(present)}>"])
    return matrix


def gan_roles(config: ExperimentConfig):
    """``(train class, test class)`` for the configured GAN task part."""
    negative, positive, _ = TASK_CLASSES[config.task]
    first, second = (positive, negative) if config.part.startswith("1") else (negative, positive)
    return (first, first) if config.part.endswith("a") else (first, second)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    report: metrics.EvalReport
    out_dir: Path
    artifacts: dict = field(default_factory=dict)


def _write(out_dir, name, text, artifacts):
    path = out_dir / name
    path.write_text(text)
    artifacts[name] = path
    return path


def _predictions_csv(sample_ids, truth, pred, scores):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample_id", "true", "pred", "score"])
    for row in zip(sample_ids, truth, pred, scores):
        writer.writerow([row[0], row[1], row[2], repr(float(row[3]))])
    return buf.getvalue()


def _manifest_text(config, extra):
    resolved = config.replace(
        data=tuple(str(Path(p).resolve()) for p in config.data),
        labels=str(Path(config.labels).resolve()) if config.labels else "",
    )
    head = [f"# exprgen run manifest v{MANIFEST_VERSION}",
            f"# checkpoint format v{checkpoint.FORMAT_VERSION}"]
    head += [f"# {k}: {v}" for k, v in extra.items()]
    return "\n".join(head) + "\n" + resolved.to_text()


def _run_rbm(config, matrix, out_dir, artifacts, info):
    negative, positive, _ = TASK_CLASSES[config.task]
    train, test = dataio.shuffle_split(matrix, dataio.SplitSpec(config.split, config.seed))
    bounds = dataio.minmax_bounds(train)
    train, test = dataio.minmax_scale(train), dataio.minmax_scale(test, bounds)
    info.update(train_shape=train.shape, test_shape=test.shape)

    model = rbm.RbmModel.initialize(matrix.shape[1], config.noc, seed=config.seed)
    cd = rbm.CdConfig(epsilon=config.alpha, n_steps=config.cd_steps, epochs=config.epochs,
                      minibatch=config.minibatch, seed=config.seed)
    history = rbm.train(model, train.values, cd)
    f_train, f_test = rbm.transform(model, train), rbm.transform(model, test)
    y_train = np.array([lab == positive for lab in train.labels], dtype=int)
    y_test = np.array([lab == positive for lab in test.labels], dtype=int)

    if config.pipeline == "rbm_logistic":
        head = classifiers.logistic_fit(f_train, y_train, C=config.logistic_c, seed=config.seed)
        scores, pred = classifiers.logistic_predict(head, f_test)
    else:
        head = classifiers.svm_fit(f_train, 2 * y_train - 1, svm_C=config.svm_c, gamma=config.gamma, seed=config.seed)
        labels, scores = classifiers.svm_predict(head, f_test)
        pred = (labels == 1).astype(int)

    model.save(out_dir / "rbm.npz", task=config.task)
    head.save(out_dir / "head.npz", pipeline=config.pipeline)
    checkpoint.save(out_dir / "scaler.npz", "minmax", {"lo": bounds[0], "hi": bounds[1]})
    artifacts.update({n: out_dir / n for n in ("rbm.npz", "head.npz", "scaler.npz")})
    _write(out_dir, "trace.csv", "epoch,recon_mse\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(history)), artifacts)
    _write(out_dir, "predictions.csv", _predictions_csv(test.sample_ids, y_test, pred, scores), artifacts)
    return metrics.evaluate(y_test, pred, averaging=config.averaging, class_names=(negative, positive))


def _run_gan(config, matrix, out_dir, artifacts, info):
    tr_class, ts_class = gan_roles(config)
    pool = matrix.where_label(tr_class)
    train, held_out = dataio.shuffle_split(pool, dataio.SplitSpec(config.split, config.seed))
    test = held_out
    if ts_class != tr_class:
        others = matrix.where_label(ts_class)
        test = dataio.ExpressionMatrix(
            np.vstack([held_out.values, others.values]), held_out.sample_ids + others.sample_ids,
            held_out.gene_ids, held_out.labels + others.labels,
        )
    bounds = dataio.minmax_bounds(train)
    train, test = dataio.minmax_scale(train), dataio.minmax_scale(test, bounds)
    info.update(train_class=tr_class, test_class=ts_class, train_shape=train.shape, test_shape=test.shape)

    genes = matrix.shape[1]
    if config.gan_arch == "reduced":
        model = gan.build_architecture(genes, "custom", seed=config.seed, **REDUCED_GAN)
    else:
        model = gan.build_architecture(genes, "prostate" if config.task == "gan_task3" else "breast", seed=config.seed)
    info.update(map_shape=model.map_shape)
    gcfg = gan.GanTrainConfig(alpha_d=config.alpha_d, alpha_g=config.alpha_g, k=config.k, m=config.gan_minibatch,
                              epochs=config.epochs, seed=config.seed, non_saturating=config.non_saturating)
    trace = gan.train(model, train, gcfg)
    result = gan.classify_by_membership(model, test)
    truth = np.array([lab == tr_class for lab in test.labels], dtype=int)
    pred = result.in_class.astype(int)

    model.save(out_dir / "gan.npz", task=config.task, part=config.part)
    checkpoint.save(out_dir / "scaler.npz", "minmax", {"lo": bounds[0], "hi": bounds[1]})
    artifacts.update({n: out_dir / n for n in ("gan.npz", "scaler.npz")})
    _write(out_dir, "trace.csv", trace.to_csv(), artifacts)
    _write(out_dir, "predictions.csv", _predictions_csv(test.sample_ids, truth, pred, result.scores), artifacts)
    return metrics.evaluate(truth, pred, averaging=config.averaging, class_names=(f"not_{tr_class}", tr_class))


def run_experiment(config: ExperimentConfig, matrix: dataio.ExpressionMatrix | None = None) -> RunResult:
    """Run one configured task end to end and write its artifacts.

    On failure an ``INCOMPLETE`` marker holding the error is left in the output
    directory and the error is re-raised as ExperimentError.
    """
    out_dir = resolve_out_dir(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / "INCOMPLETE"
    marker.write_text("run in progress\n")
    artifacts, info = {}, {}
    try:
        if matrix is None:
            matrix = load_matrix(config)
        matrix = prepare_task(matrix, config)
        info["task_shape"] = matrix.shape
        if config.pipeline == "gan":
            report = _run_gan(config, matrix, out_dir, artifacts, info)
        else:
            report = _run_rbm(config, matrix, out_dir, artifacts, info)
        _write(out_dir, "report.csv", metrics.report_csv(report), artifacts)
        _write(out_dir, "per_class.csv", metrics.per_class_csv(report), artifacts)
        _write(out_dir, "manifest.txt", _manifest_text(config, info), artifacts)
    except ExprgenError as exc:
        marker.write_text(f"{type(exc).__name__}: {exc}\n")
        if isinstance(exc, ExperimentError):
            raise
        raise ExperimentError(config.run_name, exc) from exc
    marker.unlink()
    report.extra.update(info)
    return RunResult(report, out_dir, artifacts)


def run_sweep(config: ExperimentConfig, param, values, seed_policy="shared", matrix=None):
    """One run per value of ``param``; returns ``(rows, csv_path)``.

    ``seed_policy="shared"`` keeps ``config.seed`` for every run, ``"offset"``
    uses ``seed + index``.
    """
    if param not in FIELD_TYPES or param in ("data", "out", "task", "pipeline", "part"):
        raise ConfigurationError(f"cannot sweep {param!r}")
    if seed_policy not in ("shared", "offset"):
        raise ConfigurationError(f"seed policy must be shared or offset, got {seed_policy!r}")
    values = [coerce(param, v) if isinstance(v, str) else v for v in values]
    sweep_dir = resolve_out_dir(config)
    runs = []
    for i, value in enumerate(values):
        seed = config.seed + i if seed_policy == "offset" else config.seed
        if param == "seed":
            seed = value
        sub = config.replace(**{param: value, "seed": seed, "out": str(sweep_dir / f"{param}={value}")})
        runs.append((value, run_experiment(sub, matrix).report))
    rows = metrics.sweep_table(runs)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    path = sweep_dir / "sweep.csv"
    path.write_text(metrics.sweep_csv(rows))
    return rows, path


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def make_synthetic(classes=("ibc", "non_ibc"), per_class=40, genes=512, separation=3.0, seed=0,
                   sigma=0.5, signal_fraction=0.1) -> dataio.ExpressionMatrix:
    """Lognormal expression matrix; each class after the first is shifted by
    ``separation * sigma`` in log space on its own random ``signal_fraction`` of genes."""
    if separation < 0:
        raise ConfigurationError(f"separation must be >= 0, got {separation}")
    for cls in classes:
        if cls not in dataio.CLASSES:
            raise ConfigurationError(f"unknown class {cls!r}")
    counts = [per_class] * len(classes) if np.isscalar(per_class) else list(per_class)
    rng = np.random.default_rng(seed)
    base = rng.normal(5.0, 1.0, size=genes)
    n_signal = max(1, int(round(signal_fraction * genes)))
    blocks, labels = [], []
    for i, (cls, n) in enumerate(zip(classes, counts)):
        log_x = base + sigma * rng.standard_normal((n, genes))
        if i > 0:
            log_x[:, rng.choice(genes, n_signal, replace=False)] += separation * sigma
        blocks.append(np.exp(log_x))
        labels += [cls] * n
    ids = [f"SYN{seed:03d}_{j:04d}" for j in range(len(labels))]
    return dataio.ExpressionMatrix(
        np.vstack(blocks), ids, [f"probe_{g:05d}" for g in range(genes)], labels,
        metadata={"Series_title": [["synthetic expression"]], "Series_sample_count": [[str(len(ids))]]},
    )


def write_synthetic(matrix: dataio.ExpressionMatrix, out_dir, name="synthetic"):
    """Write ``<name>_series_matrix.txt`` and ``<name>_labels.tsv``; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_path = out_dir / f"{name}_series_matrix.txt"
    label_path = out_dir / f"{name}_labels.tsv"
    dataio.write_series_matrix(matrix, data_path)
    dataio.write_label_map(dict(zip(matrix.sample_ids, matrix.labels)), label_path)
    return data_path, label_path
