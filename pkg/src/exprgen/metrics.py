"""Confusion counts, precision/recall/F1 reports and hyperparameter sweep tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def flipped(self):
        """Counts from the negative class's point of view."""
        return Confusion(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


def confusion(labels_true, labels_pred, positive=1) -> Confusion:
    t = np.asarray(labels_true)
    p = np.asarray(labels_pred)
    if t.shape != p.shape or t.ndim != 1:
        raise DimensionError(f"label vectors differ in shape: {t.shape} vs {p.shape}")
    values = set(np.unique(t).tolist()) | set(np.unique(p).tolist())
    if len(values) > 2:
        raise ConfigurationError(f"binary labels expected, got {sorted(values, key=str)}")
    t, p = t == positive, p == positive
    return Confusion(
        tp=int(np.sum(t & p)), fp=int(np.sum(~t & p)),
        fn=int(np.sum(t & ~p)), tn=int(np.sum(~t & ~p)),
    )


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def f1_score(precision, recall):
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def percent(x):
    """Integer percent, half rounded up (display only)."""
    return int(math.floor(100 * x + 0.5))


@dataclass(frozen=True)
class ClassMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    support: int
    zero_division: bool = False

    @classmethod
    def from_counts(cls, c: Confusion):
        p, zp = _ratio(c.tp, c.tp + c.fp)
        r, zr = _ratio(c.tp, c.tp + c.fn)
        return cls(c.tp, c.fp, c.fn, c.tn, p, r, f1_score(p, r), c.tp + c.fn, zp or zr)


@dataclass(frozen=True)
class EvalReport:
    per_class: dict
    precision: float
    recall: float
    f1: float
    averaging: str
    n_detected: int
    zero_division: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    def display(self):
        return {"precision": percent(self.precision), "recall": percent(self.recall), "f1": percent(self.f1)}

    def summary(self):
        d = self.display()
        return (f"precision {d['precision']}  recall {d['recall']}  f1 {d['f1']}  "
                f"({self.averaging} average over {self.n_detected} samples)")


def report(counts: Confusion, averaging="weighted", class_names=("negative", "positive")) -> EvalReport:
    """Per-class metrics for both classes plus their ``macro`` or support-``weighted`` average."""
    if averaging not in ("macro", "weighted"):
        raise ConfigurationError(f"unknown averaging mode {averaging!r}")
    neg_name, pos_name = class_names
    per_class = {
        pos_name: ClassMetrics.from_counts(counts),
        neg_name: ClassMetrics.from_counts(counts.flipped()),
    }
    rows = list(per_class.values())
    if averaging == "macro":
        weights = np.full(len(rows), 1.0 / len(rows))
    else:
        support = np.array([m.support for m in rows], dtype=float)
        weights = support / support.sum() if support.sum() else np.full(len(rows), 1.0 / len(rows))
    avg = {k: float(sum(w * getattr(m, k) for w, m in zip(weights, rows))) for k in ("precision", "recall", "f1")}
    return EvalReport(
        per_class=per_class, averaging=averaging, n_detected=counts.total,
        zero_division=any(m.zero_division for m in rows), **avg,
    )


def evaluate(labels_true, labels_pred, positive=1, averaging="weighted", class_names=("negative", "positive")):
    return report(confusion(labels_true, labels_pred, positive), averaging, class_names)


def f1_consistent_with_rounding(precision_pct, recall_pct, f1_pct):
    """Whether an integer-percent (P, R, F1) row can come from one underlying (P, R) pair.

    P and R are themselves rounded, so the true values lie in ``[x - 0.5, x + 0.5]``
    percent. F1 is increasing in both, hence its attainable range is spanned by the
    corners of that box; the row is consistent when that range meets F1's own
    rounding interval.
    """
    def corner(d):
        p = min(max(precision_pct + d, 0.0), 100.0) / 100
        r = min(max(recall_pct + d, 0.0), 100.0) / 100
        return 100 * f1_score(p, r)

    lo, hi = corner(-0.5), corner(0.5)
    return lo <= f1_pct + 0.5 and hi >= f1_pct - 0.5


def rounded_f1(precision_pct, recall_pct):
    """F1 percent computed directly from integer P and R percents."""
    return percent(f1_score(precision_pct / 100, recall_pct / 100))


@dataclass(frozen=True)
class SweepRow:
    param: float | str
    report: EvalReport


def sweep_table(runs) -> list[SweepRow]:
    """Order ``(value, EvalReport)`` pairs by hyperparameter value; values must be unique."""
    runs = list(runs)
    if not runs:
        raise ConfigurationError("sweep table needs at least one run")
    values = [v for v, _ in runs]
    dupes = sorted({v for v in values if values.count(v) > 1})
    if dupes:
        raise ConfigurationError(f"duplicate hyperparameter values in sweep: {dupes}")
    return [SweepRow(v, r) for v, r in sorted(runs, key=lambda vr: vr[0])]


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["param", "precision", "recall", "f1"])
    for row in rows:
        r = row.report
        param = row.param if isinstance(row.param, str) else repr(row.param)
        writer.writerow([param, repr(r.precision), repr(r.recall), repr(r.f1)])
    return buf.getvalue()


def report_csv(report_: EvalReport, param="") -> str:
    """Single-run report in the sweep CSV layout."""
    return sweep_csv([SweepRow(param, report_)])


def per_class_csv(report_: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "support"])
    for name, m in report_.per_class.items():
        writer.writerow([name, m.tp, m.fp, m.fn, m.tn, repr(m.precision), repr(m.recall), repr(m.f1), m.support])
    writer.writerow([f"average:{report_.averaging}", "", "", "", "", repr(report_.precision),
                     repr(report_.recall), repr(report_.f1), report_.n_detected])
    return buf.getvalue()
