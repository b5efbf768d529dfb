"""Teacher-forced prediction records for the non-neural predictors.

Every predictor emits the same :class:`~tpmkit.tpm.PredictionRecord` as the
neural model so one aggregation path scores them all.  Fields a predictor
does not produce stay ``None``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .classical import ClassicalModel, History, expected_next_time, fit_mle
from .core import Dataset, EventSequence
from .markov import MarkovTable, markov_scores, predict_markov
from .tpm import PredictionRecord


def _blank_records(seq: EventSequence) -> list[PredictionRecord]:
    times, cats, locs = seq.event_times, seq.categories, seq.locations
    return [
        PredictionRecord(seq.id, j, float(times[j]), tuple(map(float, locs[j])),
                         float(times[j + 1]), int(cats[j + 1]), tuple(map(float, locs[j + 1])))
        for j in range(len(times) - 1)
    ]


def sequence_history(seq: EventSequence) -> History:
    """Event times of ``seq`` observed from its first frame."""
    return History(tuple(float(t) for t in seq.event_times), origin=seq.origin)


def fit_classical(dataset: Dataset, family: str) -> ClassicalModel:
    return fit_mle([sequence_history(s) for s in dataset.sequences], family)


def classical_records(model: ClassicalModel, dataset: Dataset) -> list[PredictionRecord]:
    out = []
    for seq in dataset.sequences:
        hist = sequence_history(seq)
        for rec in _blank_records(seq):
            rec.predicted_time = expected_next_time(model, hist.prefix(rec.index + 1))
            out.append(rec)
    return out


def markov_records(table: MarkovTable, dataset: Dataset) -> list[PredictionRecord]:
    """Category and location predictions; tables are fitted on class indices."""
    labels = list(range(dataset.n_classes))
    out = []
    for seq in dataset.sequences:
        cats = [int(c) for c in seq.categories]
        for rec in _blank_records(seq):
            history = cats[: rec.index + 1]
            label, loc = predict_markov(table, history, rec.current_location)
            rec.predicted_category = int(label)
            rec.category_distribution = markov_scores(table, history, labels).tolist()
            rec.predicted_location = loc
            out.append(rec)
    return out


def oracle_records(dataset: Dataset) -> list[PredictionRecord]:
    """Ground truth injected as the prediction."""
    out = []
    for seq in dataset.sequences:
        for rec in _blank_records(seq):
            rec.predicted_time = rec.true_time
            rec.predicted_category = rec.true_category
            dist = np.zeros(dataset.n_classes)
            dist[rec.true_category] = 1.0
            rec.category_distribution = dist.tolist()
            rec.predicted_location = rec.true_location
            out.append(rec)
    return out


def merge_records(time_records: Sequence[PredictionRecord],
                  space_records: Sequence[PredictionRecord]) -> list[PredictionRecord]:
    """Time fields from one predictor, category and location from another."""
    merged = []
    for a, b in zip(time_records, space_records, strict=True):
        if (a.sequence_id, a.index) != (b.sequence_id, b.index):
            raise ValueError("record streams are not aligned")
        merged.append(PredictionRecord(
            a.sequence_id, a.index, a.current_time, a.current_location, a.true_time,
            a.true_category, a.true_location, a.predicted_time, b.predicted_category,
            b.category_distribution, b.predicted_location, a.time_density_samples,
        ))
    return merged


def majority_records(table: MarkovTable, dataset: Dataset) -> list[PredictionRecord]:
    """Order-0 predictions: the corpus majority class and its mean shift, whatever the history."""
    labels = list(range(dataset.n_classes))
    out = []
    for seq in dataset.sequences:
        for rec in _blank_records(seq):
            label, loc = predict_markov(table, (), rec.current_location)
            rec.predicted_category = int(label)
            rec.category_distribution = markov_scores(table, (), labels).tolist()
            rec.predicted_location = loc
            out.append(rec)
    return out
