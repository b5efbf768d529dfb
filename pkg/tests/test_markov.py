from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpmkit.core import SynthConfig, generate_synthetic
from tpmkit.markov import MarkovTable, fit_markov, markov_scores, predict_markov

labels = st.sampled_from("ABCD")
corpora = st.lists(st.lists(labels, min_size=1, max_size=15), min_size=1, max_size=6)


def test_counting_examples():
    assert fit_markov([list("ABAB")], 1).counts() == {("A",): {"B": 2}, ("B",): {"A": 1}}
    assert fit_markov([list("ABC")], 2).counts() == {("A", "B"): {"C": 1}}


def test_mean_shift_example():
    table = fit_markov([(["A", "B", "A", "B"], [(0, 0), (1, 0), (0, 0), (3, 0)])], 1)
    assert table.orders[1][("A",)].mean_shift("B") == pytest.approx([2.0, 0.0])
    assert predict_markov(table, ["A"], (10.0, 5.0)) == ("B", (12.0, 5.0))


def test_prediction_examples():
    assert predict_markov(fit_markov([list("ABAB")], 1), ["B", "A"], (0, 0))[0] == "B"
    assert predict_markov(fit_markov([list("ABABA")], 1), ["X"], (0, 0))[0] == "A"


def test_transitions_do_not_cross_sequences():
    table = fit_markov([list("AB"), list("CD")], 1)
    assert ("B",) not in table.counts()


def test_ties_go_to_smallest_label():
    table = fit_markov([list("AC"), list("AB")], 1)
    assert predict_markov(table, ["A"], (0, 0))[0] == "B"


def test_order_zero_is_corpus_majority_with_mean_shift_into_it():
    table = fit_markov([(list("BAB"), [(0, 0), (1, 1), (4, 1)])], 2)
    label, loc = predict_markov(table, [], (0.0, 0.0))
    assert label == "B"
    assert loc == (3.0, 0.0)


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_markov([list("AB")], 0)
    with pytest.raises(ValueError):
        fit_markov([], 1)
    with pytest.raises(ValueError):
        fit_markov([(["A", "B"], [(0, 0)])], 1)


def test_scores_follow_the_selected_context():
    table = fit_markov([list("ABACAB")], 1)
    assert markov_scores(table, ["A"], list("ABC")) == pytest.approx([0.0, 2 / 3, 1 / 3])


def test_event_sequences_are_accepted():
    data = generate_synthetic(SynthConfig(n_sequences=5, seed=2))
    table = fit_markov(data.sequences, 3)
    assert set(table.labels) <= set(range(data.n_classes))
    seq = data.sequences[0]
    label, loc = predict_markov(table, list(seq.categories[:3]), seq.locations[2])
    assert label in table.labels and np.all(np.isfinite(loc))


def test_json_round_trip(tmp_path):
    table = fit_markov([(list("ABCAB"), np.arange(10.0).reshape(5, 2)), (list("CCA"), np.ones((3, 2)))], 2)
    table.save(tmp_path / "t.json", extra={"k": 2})
    back = MarkovTable.load(tmp_path / "t.json")
    assert back.to_dict() == table.to_dict()
    for hist in (["A"], ["C", "C"], ["Z"], []):
        assert predict_markov(back, hist, (1.0, 2.0)) == predict_markov(table, hist, (1.0, 2.0))
    with pytest.raises(ValueError):
        MarkovTable.from_dict({"format": "other"})


@settings(max_examples=60, deadline=None)
@given(corpora, st.integers(1, 4), st.lists(st.sampled_from("ABCDX"), max_size=6))
def test_prediction_always_resolves(corpus, k, history):
    table = fit_markov(corpus, k)
    label, loc = predict_markov(table, history, (0.0, 0.0))
    assert label in table.labels
    assert np.all(np.isfinite(loc))


@settings(max_examples=60, deadline=None)
@given(corpora, st.integers(1, 4), st.lists(labels, max_size=3))
def test_short_history_equals_backoff(corpus, k, history):
    table = fit_markov(corpus, k)
    order, tr = table.lookup(history)
    assert order <= min(k, len(history))
    if order:
        assert tuple(history[-order:]) in table.orders[order]
    # a longer query with the same suffix can only pick an equal or longer context
    longer_order, _ = table.lookup(["X"] * k + list(history))
    assert longer_order == order


@settings(max_examples=60, deadline=None)
@given(corpora, st.integers(1, 3))
def test_stored_contexts_reproduce_empirical_argmax(corpus, k):
    table = fit_markov(corpus, k)
    follows = {}
    for seq in corpus:
        for j in range(k, len(seq)):
            follows.setdefault(tuple(seq[j - k:j]), Counter())[seq[j]] += 1
    assert set(follows) == set(table.orders[k])
    for ctx, cnt in follows.items():
        top = max(cnt.values())
        assert predict_markov(table, list(ctx), (0, 0))[0] == min(l for l, c in cnt.items() if c == top)


@settings(max_examples=40, deadline=None)
@given(corpora)
def test_empty_history_gives_modal_category(corpus):
    table = fit_markov(corpus, 2)
    cnt = Counter(l for seq in corpus for l in seq)
    top = max(cnt.values())
    assert predict_markov(table, [], (0, 0))[0] == min(l for l, c in cnt.items() if c == top)
