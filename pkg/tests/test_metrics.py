import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpmkit.metrics import (
    EvalReport, average_precision, deviation_rate, evaluate_records, mae, mean_average_precision,
    space_mae,
)
from tpmkit.tpm import PredictionRecord


def test_error_cases():
    with pytest.raises(ValueError):
        mae([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        mae([], [])
    with pytest.raises(ValueError):
        space_mae([(0, 0)], [(0, 0), (1, 1)])
    with pytest.raises(ValueError):
        deviation_rate(1.0, 2.0, 2.0)
    with pytest.raises(ValueError):
        average_precision([], [], 0)
    with pytest.raises(ValueError):
        average_precision([0.5, 0.2], [0, 0], 1)


def test_ap_ties_keep_input_order():
    assert average_precision([0.5, 0.5], [0, 1], 1) == 0.5
    assert average_precision([0.5, 0.5], [1, 0], 1) == 1.0


def test_ap_accepts_score_matrices():
    scores = np.array([[0.1, 0.9], [0.8, 0.2], [0.3, 0.7]])
    assert average_precision(scores, [0, 1, 1], 0) == pytest.approx(1 / 3)
    assert average_precision(scores, [0, 1, 1], 1) == pytest.approx((1 / 2 + 2 / 3) / 2)


def test_map_excludes_classes_without_positives():
    scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0]])
    m, per, excluded = mean_average_precision(scores, [0, 1], 3)
    assert m == 1.0 and set(per) == {0, 1} and excluded == [2]


@settings(max_examples=100)
@given(st.floats(-100, 100), st.floats(0.01, 50), st.floats(-100, 100), st.floats(1e-3, 1e3))
def test_deviation_rates_are_scale_invariant(cur, gap, pred_offset, c):
    truth, pred = cur + gap, cur + pred_offset
    a = deviation_rate(pred, cur, truth)
    b = deviation_rate(c * pred, c * cur, c * truth)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(-1000, 1000), st.integers(0, 2)), min_size=1, max_size=30))
def test_ap_invariant_under_monotone_maps(items):
    # a 0.01 grid keeps the maps below strictly increasing in floating point
    scores = np.array([s / 100 for s, _ in items])
    truths = np.array([t for _, t in items])
    if not np.any(truths == 1):
        truths[0] = 1
    base = average_precision(scores, truths, 1)
    assert 0.0 <= base <= 1.0
    for f in (lambda x: 3 * x + 7, np.exp, lambda x: np.arctan(x) ** 3):
        assert average_precision(f(scores), truths, 1) == base


def _records(rng, n=40, K=3):
    recs = []
    t = 0.0
    for i in range(n):
        gap = rng.exponential(1.0) + 1e-3
        dist = rng.dirichlet(np.ones(K))
        recs.append(PredictionRecord(
            f"s{i // 10}", i % 10, t, (0.0, 0.0), t + gap, int(rng.integers(0, K - 1)), (1.0, 1.0),
            predicted_time=t + rng.exponential(1.0), predicted_category=int(dist.argmax()),
            category_distribution=dist.tolist(), predicted_location=(1.5, 0.0),
        ))
        t += gap
    return recs


def test_mdr_is_plain_mean_of_rates(rng):
    recs = _records(rng)
    rep = evaluate_records(recs, ["a", "b", "c"])
    rates = np.array([deviation_rate(r.predicted_time, r.current_time, r.true_time) for r in recs])
    assert rep.mdr_as_written == pytest.approx(rates[:, 0].mean(), abs=1e-12)
    assert rep.mdr_error == pytest.approx(rates[:, 1].mean(), abs=1e-12)
    assert rep.time_mae == pytest.approx(1000 * np.mean([abs(r.predicted_time - r.true_time) for r in recs]))
    assert rep.space_mae == pytest.approx(np.hypot(0.5, 1.0))
    assert rep.excluded_classes == ["c"] and set(rep.per_class_ap) == {"a", "b"}


def test_missing_predictions_give_none(rng):
    recs = _records(rng)
    for r in recs:
        r.predicted_time = None
        r.predicted_location = None
    rep = evaluate_records(recs, ["a", "b", "c"])
    assert rep.time_mae is None and rep.mdr_error is None and rep.space_mae is None
    assert rep.map is not None
    with pytest.raises(ValueError):
        evaluate_records([], ["a"])


def test_json_and_csv_agree(rng):
    rep = evaluate_records(_records(rng), ["a", "b", "c"])
    as_json = json.loads(rep.to_json())
    header, row = list(csv.reader(io.StringIO(rep.to_csv())))
    flat = dict(zip(header, row))
    for key in EvalReport.FLAT_FIELDS:
        assert float(flat[key]) == as_json[key]
    for cls, ap in as_json["per_class_ap"].items():
        assert float(flat[f"ap[{cls}]"]) == ap
    assert as_json["headline"] == "mdr_error"


def test_report_fractions_are_in_range(rng):
    rep = evaluate_records(_records(rng), ["a", "b", "c"])
    assert rep.mdr_as_written >= 0 and rep.mdr_error >= 0
    assert all(0.0 <= v <= 1.0 for v in rep.per_class_ap.values()) and 0.0 <= rep.map <= 1.0
