"""Microarray ingestion, labelling, augmentation, scaling and train/test splitting."""
from __future__ import annotations

import gzip
import io
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError, LabelingError, ParseError, SplitError

CLASSES = ("ibc", "non_ibc", "normal", "prostate_tumor", "prostate_normal")

TABLE_BEGIN = "!series_matrix_table_begin"
TABLE_END = "!series_matrix_table_end"


@dataclass(frozen=True)
class ExpressionMatrix:
    """Samples x genes expression values with ids and (optionally) class labels."""

    values: np.ndarray
    sample_ids: tuple[str, ...]
    gene_ids: tuple[str, ...]
    labels: tuple[str, ...] | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionError(f"expression values must be 2-D, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "gene_ids", tuple(self.gene_ids))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
        rows, cols = values.shape
        if rows != len(self.sample_ids) or cols != len(self.gene_ids):
            raise DimensionError(
                f"values {values.shape} vs {len(self.sample_ids)} sample ids x {len(self.gene_ids)} gene ids"
            )
        if self.labels is not None and len(self.labels) != rows:
            raise DimensionError(f"{len(self.labels)} labels for {rows} samples")
        if not np.all(np.isfinite(values)):
            raise ParseError("expression matrix contains non-finite values")

    @property
    def shape(self):
        return self.values.shape

    def subset(self, indices):
        indices = list(indices)
        return replace(
            self,
            values=self.values[indices],
            sample_ids=[self.sample_ids[i] for i in indices],
            labels=None if self.labels is None else [self.labels[i] for i in indices],
        )

    def with_labels(self, labels):
        return replace(self, labels=labels)

    def where_label(self, *classes):
        if self.labels is None:
            raise LabelingError(self.sample_ids)
        return self.subset(i for i, lab in enumerate(self.labels) if lab in classes)

    def relabel(self, mapping):
        """Map class tags through ``mapping``; tags not in the mapping are kept."""
        return self.with_labels([mapping.get(lab, lab) for lab in self.labels])


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _read_text(source) -> str:
    """Accept bytes, str content, a ``Path``, or a file object; transparently gunzips."""
    if isinstance(source, Path):
        source = source.read_bytes()
    elif hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        if source[:2] == b"\x1f\x8b":
            source = gzip.decompress(source)
        source = source.decode("utf-8")
    return source


def _cells(line):
    return [c.strip().strip('"') for c in line.rstrip("\r\n").split("\t")]


def _numeric_row(cells, lineno, col_offset=2):
    try:
        row = np.array(cells, dtype=float)
    except ValueError:
        for j, cell in enumerate(cells):
            try:
                float(cell)
            except ValueError:
                what = "empty cell" if cell == "" else f"non-numeric cell {cell!r}"
                raise ParseError(what, row=lineno, col=j + col_offset) from None
        raise
    if not np.all(np.isfinite(row)):
        j = int(np.flatnonzero(~np.isfinite(row))[0])
        raise ParseError(f"non-finite value {cells[j]!r}", row=lineno, col=j + col_offset)
    return row


def parse_series_matrix(source) -> ExpressionMatrix:
    """Parse a GEO series-matrix file into a samples x genes matrix.

    ``!``-prefixed lines outside the table are kept in ``metadata`` as
    ``key -> list of value lists`` (keys may repeat in GEO files).
    Line and column numbers in errors are 1-based file positions.
    """
    text = _read_text(source)
    lines = text.splitlines()
    metadata: dict[str, list[list[str]]] = {}
    begin = end = None
    for lineno, line in enumerate(lines, start=1):
        if line.startswith(TABLE_BEGIN):
            if begin is not None:
                raise FormatError(f"duplicate {TABLE_BEGIN}", line=lineno)
            begin = lineno
        elif line.startswith(TABLE_END):
            if begin is None:
                raise FormatError(f"{TABLE_END} before {TABLE_BEGIN}", line=lineno)
            end = lineno
            break
        elif begin is None and line.startswith("!"):
            cells = _cells(line)
            metadata.setdefault(cells[0][1:], []).append(cells[1:])
    if begin is None:
        raise FormatError(f"missing {TABLE_BEGIN} marker", line=len(lines))
    if end is None:
        raise FormatError(f"missing {TABLE_END} marker (table opened at line {begin})", line=len(lines))
    if end - begin < 2:
        raise FormatError("table has no header row", line=begin)

    header = _cells(lines[begin])
    sample_ids = header[1:]
    if not sample_ids:
        raise FormatError("table header lists no samples", line=begin + 1)
    gene_ids, rows = [], []
    for lineno in range(begin + 2, end):
        line = lines[lineno - 1]
        if not line.strip():
            continue
        cells = _cells(line)
        if len(cells) != len(header):
            raise FormatError(f"ragged row: {len(cells)} cells, header has {len(header)}", line=lineno)
        gene_ids.append(cells[0])
        rows.append(_numeric_row(cells[1:], lineno))
    if not rows:
        raise FormatError("table has no probe rows", line=end)
    return ExpressionMatrix(np.array(rows).T, sample_ids, gene_ids, metadata=metadata)


def parse_tsv_matrix(source, orientation="genes_in_rows") -> ExpressionMatrix:
    """Parse a plain tab-delimited matrix with one header row and one id column."""
    if orientation not in ("genes_in_rows", "samples_in_rows"):
        raise ConfigurationError(f"unknown orientation {orientation!r}")
    lines = [(i, ln) for i, ln in enumerate(_read_text(source).splitlines(), start=1) if ln.strip()]
    if len(lines) < 2:
        raise FormatError("matrix needs a header row and at least one data row", line=len(lines))
    header = _cells(lines[0][1])
    col_ids = header[1:]
    row_ids, rows = [], []
    for lineno, line in lines[1:]:
        cells = _cells(line)
        if len(cells) != len(header):
            raise FormatError(f"ragged row: {len(cells)} cells, header has {len(header)}", line=lineno)
        row_ids.append(cells[0])
        rows.append(_numeric_row(cells[1:], lineno))
    values = np.array(rows)
    if orientation == "genes_in_rows":
        return ExpressionMatrix(values.T, col_ids, row_ids)
    return ExpressionMatrix(values, row_ids, col_ids)


def _fmt(x):
    return repr(float(x))


def write_series_matrix(matrix: ExpressionMatrix, dest=None, metadata=None) -> str:
    """Serialize in series-matrix layout; floats use ``repr`` so parsing is lossless."""
    out = io.StringIO()
    meta = dict(matrix.metadata) if metadata is None else metadata
    for key, rows in meta.items():
        for vals in rows:
            out.write("\t".join([f"!{key}"] + [f'"{v}"' for v in vals]) + "\n")
    out.write(TABLE_BEGIN + "\n")
    out.write("\t".join(['"ID_REF"'] + [f'"{s}"' for s in matrix.sample_ids]) + "\n")
    for j, gene in enumerate(matrix.gene_ids):
        out.write("\t".join([f'"{gene}"'] + [_fmt(v) for v in matrix.values[:, j]]) + "\n")
    out.write(TABLE_END + "\n")
    text = out.getvalue()
    if dest is not None:
        Path(dest).write_text(text)
    return text


def write_tsv_matrix(matrix: ExpressionMatrix, dest=None, orientation="genes_in_rows") -> str:
    if orientation == "genes_in_rows":
        corner, cols, rows, values = "ID_REF", matrix.sample_ids, matrix.gene_ids, matrix.values.T
    else:
        corner, cols, rows, values = "sample", matrix.gene_ids, matrix.sample_ids, matrix.values
    lines = ["\t".join([corner, *cols])]
    lines += ["\t".join([rid, *map(_fmt, row)]) for rid, row in zip(rows, values)]
    text = "\n".join(lines) + "\n"
    if dest is not None:
        Path(dest).write_text(text)
    return text


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------

def parse_label_map(source) -> dict[str, str]:
    """Two-column TSV ``accession<TAB>class``; ``#`` lines are comments."""
    mapping = {}
    for lineno, line in enumerate(_read_text(source).splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cells = _cells(line)
        if len(cells) != 2:
            raise FormatError(f"label map rows need 2 columns, got {len(cells)}", line=lineno)
        accession, cls = cells
        if cls not in CLASSES:
            raise FormatError(f"unknown class {cls!r} (expected one of {', '.join(CLASSES)})", line=lineno)
        mapping[accession] = cls
    return mapping


def write_label_map(mapping, dest=None) -> str:
    text = "".join(f"{acc}\t{cls}\n" for acc, cls in mapping.items())
    if dest is not None:
        Path(dest).write_text(text)
    return text


def gse45584_labels() -> dict[str, str]:
    """Bundled accession -> class map for the 45 GSE45584 samples."""
    return parse_label_map(resources.files("exprgen").joinpath("data/gse45584_labels.tsv").read_bytes())


def attach_labels(matrix: ExpressionMatrix, label_map) -> ExpressionMatrix:
    missing = [s for s in matrix.sample_ids if s not in label_map]
    if missing:
        raise LabelingError(missing)
    return matrix.with_labels([label_map[s] for s in matrix.sample_ids])


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def augment_replicate(matrix: ExpressionMatrix, cls, times, jitter=0.0, rng=None) -> ExpressionMatrix:
    """Grow class ``cls`` to ``times`` copies of each of its samples.

    Copies are appended after the original rows with ``_augK`` id suffixes.
    ``jitter`` adds Gaussian noise of that standard deviation to the copies only.
    """
    if times < 1:
        raise ConfigurationError(f"augmentation factor must be >= 1, got {times}")
    if matrix.labels is None or cls not in matrix.labels:
        raise LabelingError([f"<no samples of class {cls!r}>"])
    src = [i for i, lab in enumerate(matrix.labels) if lab == cls]
    if times == 1:
        return matrix
    copies = np.repeat(matrix.values[src], times - 1, axis=0)
    if jitter > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        copies = copies + rng.normal(0.0, jitter, size=copies.shape)
    new_ids = [f"{matrix.sample_ids[i]}_aug{k}" for i in src for k in range(1, times)]
    return replace(
        matrix,
        values=np.vstack([matrix.values, copies]),
        sample_ids=matrix.sample_ids + tuple(new_ids),
        labels=matrix.labels + (cls,) * len(new_ids),
    )


def minmax_bounds(matrix: ExpressionMatrix):
    return matrix.values.min(axis=0), matrix.values.max(axis=0)


def minmax_scale(matrix: ExpressionMatrix, bounds=None) -> ExpressionMatrix:
    """Per-gene linear map onto [0, 1]; constant genes map to 0.

    With explicit ``bounds`` (from another matrix) the result is clipped to [0, 1].
    """
    lo, hi = minmax_bounds(matrix) if bounds is None else bounds
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (matrix.values - lo) / safe, 0.0)
    if bounds is not None:
        scaled = np.clip(scaled, 0.0, 1.0)
    return replace(matrix, values=scaled)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.5
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigurationError(f"test_fraction must be in (0, 1), got {self.test_fraction}")


def _n_test(n, fraction):
    # round half down: a tie sends the extra sample to train
    return math.ceil(n * fraction - 0.5)


def shuffle_split(matrix: ExpressionMatrix, spec: SplitSpec):
    """Deterministic shuffled split into ``(train, test)``."""
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        if matrix.labels is None:
            raise SplitError("stratified split needs labels")
        groups = {}
        for i, lab in enumerate(matrix.labels):
            groups.setdefault(lab, []).append(i)
    else:
        groups = {None: list(range(matrix.shape[0]))}
    train, test = [], []
    for lab in sorted(groups, key=str):
        idx = rng.permutation(groups[lab])
        k = _n_test(len(idx), spec.test_fraction)
        if k < 1 or k > len(idx) - 1:
            who = "the matrix" if lab is None else f"class {lab!r}"
            raise SplitError(
                f"cannot split {len(idx)} samples of {who} at test_fraction={spec.test_fraction}: "
                "each side needs at least one"
            )
        test.extend(idx[:k].tolist())
        train.extend(idx[k:].tolist())
    train = rng.permutation(train).tolist()
    test = rng.permutation(test).tolist()
    return matrix.subset(train), matrix.subset(test)
