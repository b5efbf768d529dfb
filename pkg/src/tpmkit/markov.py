"""k-order Markov chains over event categories with suffix backoff.

Every order from 0 to k is stored so a missing context can be shortened to
its most recent k-1, k-2, ... categories.  Order 0 is a majority vote over
all events in the corpus.  Each transition also accumulates the spatial
shift it carried, so a prediction moves the current location by the mean
shift observed for the chosen transition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Optional, Sequence

import numpy as np

from .core import EventSequence

TABLE_FORMAT = "tpmkit.markov"
TABLE_VERSION = 1


@dataclass
class Transitions:
    """Next-category counts and shift sums for one context."""

    counts: dict = field(default_factory=dict)
    shift_sums: dict = field(default_factory=dict)

    def add(self, label, shift) -> None:
        self.counts[label] = self.counts.get(label, 0) + 1
        acc = self.shift_sums.setdefault(label, np.zeros(2))
        acc += shift

    def best(self):
        top = max(self.counts.values())
        return min(lab for lab, c in self.counts.items() if c == top)

    def mean_shift(self, label) -> np.ndarray:
        return self.shift_sums[label] / self.counts[label]


@dataclass
class MarkovTable:
    k: int
    orders: dict  # order -> {context tuple -> Transitions}
    majority: Transitions  # order 0: all events, shifts into each category
    labels: list

    def counts(self, order: Optional[int] = None) -> dict:
        """Plain {context: {next: count}} view of one order (default k)."""
        order = self.k if order is None else order
        return {ctx: dict(tr.counts) for ctx, tr in self.orders[order].items()}

    def lookup(self, history: Sequence) -> tuple[int, Transitions]:
        """The longest stored suffix context of ``history`` and its transitions."""
        history = tuple(history)
        for order in range(min(self.k, len(history)), 0, -1):
            tr = self.orders[order].get(history[-order:])
            if tr is not None:
                return order, tr
        return 0, self.majority

    def to_dict(self) -> dict:
        def entries(tr: Transitions):
            return [{"label": lab, "count": tr.counts[lab], "shift_sum": tr.shift_sums[lab].tolist()}
                    for lab in sorted(tr.counts)]

        return {
            "format": TABLE_FORMAT,
            "version": TABLE_VERSION,
            "k": self.k,
            "labels": list(self.labels),
            "majority": entries(self.majority),
            "orders": {
                str(o): [{"context": list(ctx), "next": entries(tr)} for ctx, tr in sorted(tab.items())]
                for o, tab in self.orders.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MarkovTable":
        if data.get("format") != TABLE_FORMAT:
            raise ValueError(f"not a Markov table: format={data.get('format')!r}")
        if int(data.get("version", -1)) != TABLE_VERSION:
            raise ValueError(f"unsupported Markov table version {data.get('version')!r}")

        def transitions(items) -> Transitions:
            tr = Transitions()
            for e in items:
                tr.counts[e["label"]] = int(e["count"])
                tr.shift_sums[e["label"]] = np.asarray(e["shift_sum"], dtype=float)
            return tr

        orders = {
            int(o): {tuple(entry["context"]): transitions(entry["next"]) for entry in items}
            for o, items in data["orders"].items()
        }
        return cls(int(data["k"]), orders, transitions(data["majority"]), list(data["labels"]))

    def save(self, path, extra: Optional[dict] = None) -> None:
        d = self.to_dict()
        if extra:
            d["run"] = extra
        Path(path).write_text(json.dumps(d, indent=1))

    @classmethod
    def load(cls, path) -> "MarkovTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_labelled(seq) -> tuple[list, np.ndarray]:
    if isinstance(seq, EventSequence):
        return [int(c) for c in seq.categories], seq.locations
    if isinstance(seq, tuple) and len(seq) == 2 and not isinstance(seq[0], Hashable):
        labels, locs = seq
        return list(labels), np.asarray(locs, dtype=float).reshape(-1, 2)
    labels = list(seq)
    return labels, np.zeros((len(labels), 2))


def fit_markov(sequences: Sequence, k: int) -> MarkovTable:
    """Count k-gram -> next transitions (and all shorter orders) over ``sequences``.

    Each item is an :class:`EventSequence`, a ``(labels, locations)`` pair or
    a bare list of labels (shifts are then zero).  Transitions never cross
    sequence boundaries.
    """
    if not isinstance(k, int) or k < 1:
        raise ValueError("k must be an integer >= 1")
    sequences = list(sequences)
    orders = {o: {} for o in range(1, k + 1)}
    majority = Transitions()
    labels = set()
    n_events = 0
    for seq in sequences:
        cats, locs = _as_labelled(seq)
        if len(locs) != len(cats):
            raise ValueError("labels and locations differ in length")
        n_events += len(cats)
        labels.update(cats)
        for lab in cats:
            majority.counts[lab] = majority.counts.get(lab, 0) + 1
            majority.shift_sums.setdefault(lab, np.zeros(2))
        for j in range(1, len(cats)):
            shift = locs[j] - locs[j - 1]
            nxt = cats[j]
            majority.shift_sums[nxt] += shift
            for o in range(1, min(k, j) + 1):
                ctx = tuple(cats[j - o:j])
                orders[o].setdefault(ctx, Transitions()).add(nxt, shift)
    if n_events == 0:
        raise ValueError("empty corpus")
    # order-0 shift is the mean over transitions into each category
    into = {}
    for seq in sequences:
        cats, _ = _as_labelled(seq)
        for lab in cats[1:]:
            into[lab] = into.get(lab, 0) + 1
    for lab in majority.shift_sums:
        n = into.get(lab, 0)
        # stored as a sum over `count` events so mean_shift() stays uniform
        mean = majority.shift_sums[lab] / n if n else np.zeros(2)
        majority.shift_sums[lab] = mean * majority.counts[lab]
    return MarkovTable(k, orders, majority, sorted(labels))


def predict_markov(table: MarkovTable, history_categories: Sequence, current_location) -> tuple:
    """(next category, next location) using the longest matching context."""
    _, tr = table.lookup(history_categories)
    label = tr.best()
    loc = np.asarray(current_location, dtype=float) + tr.mean_shift(label)
    return label, (float(loc[0]), float(loc[1]))


def markov_scores(table: MarkovTable, history_categories: Sequence, labels: Sequence) -> np.ndarray:
    """Normalised next-category counts of the selected context, aligned to ``labels``."""
    _, tr = table.lookup(history_categories)
    total = sum(tr.counts.values())
    return np.array([tr.counts.get(lab, 0) / total for lab in labels], dtype=float)
