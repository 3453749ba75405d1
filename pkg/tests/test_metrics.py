import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cuetraj.errors import DimensionError, ValidationError
from cuetraj.metrics import (
    ASWAEE_TIMES, MetricReport, ade, aswaee, aswaee_indices, corpus_report, degradation, fde,
    format_table, reports_to_csv,
)


def brute_ade(p, t):
    total = 0.0
    for (px, py), (tx, ty) in zip(p.tolist(), t.tolist()):
        total += math.sqrt((px - tx) ** 2 + (py - ty) ** 2)
    return total / len(p)


def brute_aswaee(p, t, fps, times):
    errs = []
    for s in times:
        i = int(math.floor(s * fps + 0.5)) - 1
        errs.append(math.sqrt((p[i][0] - t[i][0]) ** 2 + (p[i][1] - t[i][1]) ** 2))
    return sum(errs) / len(errs)


def test_ade_examples():
    t = np.zeros((2, 2))
    assert ade(t, t) == 0.0
    assert ade(t + [1.0, 0.0], t) == 1.0
    assert ade(np.array([[0.0, 0.0], [3.0, 4.0]]), t) == 2.5


def test_fde_examples():
    t = np.zeros((3, 2))
    p = t.copy()
    p[-1] = [3.0, 4.0]
    assert fde(t, t) == 0.0 and fde(p, t) == 5.0
    p[0] = [100.0, 100.0]
    assert fde(p, t) == 5.0


def test_aswaee_examples():
    assert aswaee_indices(25.0) == [10, 23, 36, 49, 62]
    t = np.zeros((63, 2))
    assert aswaee(t, t, 25.0) == 0.0
    p = np.random.default_rng(0).normal(size=(12, 2))
    assert aswaee(p, np.zeros((12, 2)), 2.5, times=(12 / 2.5,)) == fde(p, np.zeros((12, 2)))


def test_aswaee_out_of_range():
    with pytest.raises(ValidationError):
        aswaee(np.zeros((12, 2)), np.zeros((12, 2)), 25.0)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        ade(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        fde(np.zeros((0, 2)), np.zeros((0, 2)))


def test_against_brute_force_oracle():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        h = int(rng.integers(63, 80))
        p, t = rng.normal(size=(h, 2)) * 5, rng.normal(size=(h, 2)) * 5
        assert abs(ade(p, t) - brute_ade(p, t)) < 1e-12
        assert abs(fde(p, t) - math.dist(p[-1], t[-1])) < 1e-12
        assert abs(aswaee(p, t, 25.0) - brute_aswaee(p, t, 25.0, ASWAEE_TIMES)) < 1e-12


pairs = st.integers(1, 20).flatmap(lambda h: st.tuples(
    arrays(np.float64, (h, 2), elements=st.floats(-1e3, 1e3)),
    arrays(np.float64, (h, 2), elements=st.floats(-1e3, 1e3))))


@settings(max_examples=200)
@given(pairs, st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)))
def test_metric_properties(pt, shift):
    p, t = pt
    err = np.hypot(*(p - t).T)
    a = ade(p, t)
    assert err.min() - 1e-9 <= a <= err.max() + 1e-9
    assert fde(p, t) == err[-1]
    shift = np.array(shift)
    assert abs(ade(p + shift, t + shift) - a) <= 1e-9 * max(1.0, np.abs(p).max() + 1e3)
    assert a >= 0


def test_degradation_and_report():
    assert degradation(1.1, 1.0) == pytest.approx(10.0)
    preds = np.zeros((3, 12, 2))
    truths = np.ones((3, 12, 2))
    clean = corpus_report("clean", preds, truths, ["a", "b", "c"], fps=25.0)
    assert clean.aswaee is None  # 2.52 s does not fit 12 steps at 25 fps
    assert clean.ade == pytest.approx(math.sqrt(2))
    worse = corpus_report("masked", preds, truths * 2, fps=25.0).against(clean)
    assert worse.degradation["ade"] == pytest.approx(100.0)
    assert worse.reference == "clean"
    csv_text = reports_to_csv([clean, worse])
    assert csv_text.splitlines()[0].startswith("name,ade,fde")
    assert "masked" in format_table([clean, worse])


def test_corpus_metric_is_mean_of_scene_metrics():
    rng = np.random.default_rng(2)
    preds, truths = rng.normal(size=(5, 63, 2)), rng.normal(size=(5, 63, 2))
    rep = corpus_report("x", preds, truths, fps=25.0)
    assert rep.ade == pytest.approx(np.mean([ade(p, t) for p, t in zip(preds, truths)]), abs=1e-15)
    assert rep.aswaee == pytest.approx(
        np.mean([aswaee(p, t, 25.0) for p, t in zip(preds, truths)]), abs=1e-15)
    assert isinstance(rep, MetricReport) and rep.per_scene.shape == (5, 3)
