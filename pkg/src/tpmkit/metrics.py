"""Evaluation metrics: absolute errors, deviation rates and average precision.

Two deviation rates are reported per transition:

* ``as_written``: ``|predicted - current| / (truth - current)``, where a
  perfect prediction scores 1;
* ``error``: ``|predicted - truth| / (truth - current)``, where a perfect
  prediction scores 0.  This is the headline number.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

MS_PER_SECOND = 1000.0


def mae(predicted: Sequence[float], truth: Sequence[float]) -> float:
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.abs(p - t)))


def space_mae(predicted, truth) -> float:
    """Mean Euclidean distance between predicted and true points."""
    p = np.asarray(predicted, dtype=float).reshape(-1, 2)
    t = np.asarray(truth, dtype=float).reshape(-1, 2)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.hypot(p[:, 0] - t[:, 0], p[:, 1] - t[:, 1])))


def deviation_rate(predicted_time: float, current_time: float, truth_time: float) -> tuple[float, float]:
    """(as-written rate, error rate) for one transition."""
    interval = truth_time - current_time
    if not interval > 0:
        raise ValueError("ground-truth interval must be positive")
    return abs(predicted_time - current_time) / interval, abs(predicted_time - truth_time) / interval


def average_precision(scores, truths, class_id: int) -> float:
    """Mean precision at each positive when events are ranked by score.

    ``scores`` is either (N,) scores for ``class_id`` or (N, K) class scores.
    Ties keep input order.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(truths)
    if s.ndim == 2:
        s = s[:, class_id]
    if s.size == 0:
        raise ValueError("empty input")
    if s.shape[0] != y.shape[0]:
        raise ValueError("scores and truths differ in length")
    pos = y == class_id
    if not pos.any():
        raise ValueError(f"class {class_id} has no positives; AP undefined")
    order = np.argsort(-s, kind="stable")
    hits = pos[order]
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, ranks.size + 1) / ranks
    return float(precision.mean())


def mean_average_precision(scores, truths, n_classes: int) -> tuple[float, dict, list]:
    """(mAP, per-class AP, classes excluded for lacking positives)."""
    y = np.asarray(truths)
    per_class = {}
    excluded = []
    for c in range(n_classes):
        if np.any(y == c):
            per_class[c] = average_precision(scores, y, c)
        else:
            excluded.append(c)
    if not per_class:
        raise ValueError("no class has a positive example")
    return float(np.mean(list(per_class.values()))), per_class, excluded


@dataclass
class EvalReport:
    n_transitions: int
    time_mae: Optional[float] = None  # milliseconds
    mdr_as_written: Optional[float] = None
    mdr_error: Optional[float] = None
    space_mae: Optional[float] = None
    map: Optional[float] = None
    per_class_ap: dict = field(default_factory=dict)
    excluded_classes: list = field(default_factory=list)
    headline: str = "mdr_error"

    FLAT_FIELDS = ("n_transitions", "time_mae", "mdr_as_written", "mdr_error", "space_mae", "map")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)

    def csv_fields(self) -> list:
        return list(self.FLAT_FIELDS) + [f"ap[{c}]" for c in self.per_class_ap]

    def csv_row(self) -> list:
        return [getattr(self, f) for f in self.FLAT_FIELDS] + list(self.per_class_ap.values())

    def to_csv(self) -> str:
        """Header plus one flat row; floats use repr so they round-trip exactly."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_fields())
        w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in self.csv_row()])
        return buf.getvalue()


def evaluate_records(records: Sequence, classes: Sequence[str]) -> EvalReport:
    """Aggregate per-transition prediction records into an :class:`EvalReport`.

    Metrics whose predictions are absent from the records (e.g. time for a
    Markov chain) are left as ``None``.
    """
    if not records:
        raise ValueError("no records to evaluate")
    report = EvalReport(n_transitions=len(records))
    if all(r.predicted_time is not None for r in records):
        pred = np.array([r.predicted_time for r in records])
        cur = np.array([r.current_time for r in records])
        tru = np.array([r.true_time for r in records])
        report.time_mae = mae(pred, tru) * MS_PER_SECOND
        rates = np.array([deviation_rate(p, c, t) for p, c, t in zip(pred, cur, tru)])
        report.mdr_as_written = float(rates[:, 0].mean())
        report.mdr_error = float(rates[:, 1].mean())
    if all(r.predicted_location is not None for r in records):
        report.space_mae = space_mae([r.predicted_location for r in records],
                                     [r.true_location for r in records])
    if all(r.category_distribution is not None for r in records):
        scores = np.array([r.category_distribution for r in records])
        truths = np.array([r.true_category for r in records])
        m, per, excl = mean_average_precision(scores, truths, len(classes))
        report.map = m
        report.per_class_ap = {classes[c]: v for c, v in per.items()}
        report.excluded_classes = [classes[c] for c in excl]
    return report
