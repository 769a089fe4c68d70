import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exprgen.errors import ConfigurationError, DimensionError
from exprgen.metrics import (
    Confusion, confusion, evaluate, f1_consistent_with_rounding, f1_score, per_class_csv,
    percent, report, report_csv, rounded_f1, sweep_csv, sweep_table,
)
from reported_tables import GAN_ALPHA_D, GAN_EPOCHS, RBM_SVM_ALPHA


def test_confusion_cases():
    y = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 0])
    c = confusion(y, y)
    assert c.fp == c.fn == 0
    c = confusion(y, 1 - y)
    assert c.tp == c.tn == 0
    assert confusion([1, 1, 0, 0], [1, 0, 1, 0]) == Confusion(tp=1, fp=1, fn=1, tn=1)


def test_confusion_errors():
    with pytest.raises(DimensionError):
        confusion([1, 0], [1])
    with pytest.raises(ConfigurationError):
        confusion([0, 1, 2], [0, 1, 1])


def test_positive_class_f1_display():
    # P = 0.5 needs tp == fp; R = 1 needs fn == 0
    r = report(Confusion(tp=5, fp=5, fn=0, tn=10))
    pos = r.per_class["positive"]
    assert (pos.precision, pos.recall) == (0.5, 1.0)
    assert pos.f1 == pytest.approx(2 / 3, abs=1e-12) and percent(pos.f1) == 67
    pos = report(Confusion(tp=1, fp=3, fn=0, tn=4)).per_class["positive"]
    assert pos.f1 == pytest.approx(0.4, abs=1e-12) and percent(pos.f1) == 40


def test_perfect_classifier():
    r = evaluate([1, 0, 1, 0], [1, 0, 1, 0])
    assert r.display() == {"precision": 100, "recall": 100, "f1": 100}


def test_zero_division_flag():
    r = evaluate([0, 0, 0], [0, 0, 0])
    assert r.zero_division
    assert r.per_class["positive"].precision == 0.0 and r.per_class["positive"].f1 == 0.0
    assert r.precision == 1.0  # all support sits in the negative class


def test_macro_vs_weighted():
    c = Confusion(tp=8, fp=2, fn=2, tn=28)
    macro, weighted = report(c, "macro"), report(c, "weighted")
    pos, neg = macro.per_class["positive"], macro.per_class["negative"]
    assert macro.precision == pytest.approx((pos.precision + neg.precision) / 2)
    assert weighted.precision == pytest.approx((10 * pos.precision + 30 * neg.precision) / 40)
    with pytest.raises(ConfigurationError):
        report(c, "micro")


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60), st.randoms())
def test_closed_form_and_permutation_invariance(pairs, rnd):
    t = [int(a) for a, _ in pairs]
    p = [int(b) for _, b in pairs]
    r = evaluate(t, p)
    for m in r.per_class.values():
        expect = 2 * m.tp / (2 * m.tp + m.fp + m.fn) if m.tp else 0.0
        assert abs(m.f1 - expect) <= 1e-12
        assert 0.0 <= m.precision <= 1.0 and 0.0 <= m.recall <= 1.0
    idx = list(range(len(pairs)))
    rnd.shuffle(idx)
    assert evaluate([t[i] for i in idx], [p[i] for i in idx]) == r


@pytest.mark.parametrize("value,p,r,f1", GAN_ALPHA_D + GAN_EPOCHS)
def test_reported_rows_consistent(value, p, r, f1):
    assert f1_consistent_with_rounding(p, r, f1)


def test_naive_rounding_examples():
    assert rounded_f1(50, 100) == 67
    assert rounded_f1(25, 100) == 40
    assert rounded_f1(45, 100) == 62


def test_inconsistent_row_detected():
    assert not f1_consistent_with_rounding(50, 100, 60)
    assert not f1_consistent_with_rounding(79, 65, 60)  # averaged scores need not satisfy the identity


def test_sweep_table_ordering_and_csv():
    runs = [(v, evaluate([1, 0, 1, 0], [1, 0, 0, 0])) for v, *_ in reversed(RBM_SVM_ALPHA)]
    rows = sweep_table(runs)
    assert [row.param for row in rows] == [0.0006, 0.0009, 0.001, 0.005, 0.01]
    text = sweep_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == "param,precision,recall,f1" and len(lines) == 6
    assert len(sweep_table(runs[:1])) == 1
    with pytest.raises(ConfigurationError):
        sweep_table(runs + runs[:1])
    with pytest.raises(ConfigurationError):
        sweep_table([])


def test_csv_full_precision():
    r = evaluate([1, 1, 1, 0, 0, 0], [1, 1, 0, 0, 0, 1])
    line = report_csv(r).split("\n")[1]
    assert float(line.split(",")[1]) == r.precision
    assert "average:weighted" in per_class_csv(r)


def test_f1_helper():
    assert f1_score(0.0, 0.0) == 0.0
    assert f1_score(1.0, 1.0) == 1.0
