import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpmkit import autodiff as ad
from tpmkit.autodiff import Tensor
from tpmkit.neural import (
    Adam, FrameEncoderParams, HierarchicalRNN, HierConfig, ParamStore, encode_frame, grad_check,
    hier_forward, lstm_step, make_lstm, pad_players, player_encodings, pool_players,
    select_players_closeness,
)


def _net(encoder="concat", input_dim=6, seed=0, **kw):
    store = ParamStore(seed)
    cfg = HierConfig(input_dim, feature_dim=5, lower_hidden=4, higher_hidden=3, encoder=encoder, **kw)
    return HierarchicalRNN(store, cfg), store


# -- autodiff -------------------------------------------------------------------


def test_tensor_basic_gradients():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    y = ad.tsum(ad.exp(x) * x + ad.log(x))
    y.backward()
    assert x.grad == pytest.approx(np.exp(x.data) * (1 + x.data) + 1 / x.data)


def test_exprel_is_smooth_through_zero():
    x = Tensor(np.array([-1e-12, 0.0, 1e-12, 0.5]), requires_grad=True)
    y = ad.exprel(x)
    assert y.data == pytest.approx([1.0, 1.0, 1.0, math.expm1(0.5) / 0.5])
    ad.tsum(y).backward()
    assert x.grad[:3] == pytest.approx([0.5, 0.5, 0.5], abs=1e-9)


def test_log_softmax_gradient_sums_to_zero():
    x = Tensor(np.array([[0.2, -1.0, 3.0]]), requires_grad=True)
    ad.log_softmax(x)[0, 1].backward()
    assert x.grad.sum() == pytest.approx(0.0, abs=1e-15)


# -- parameter store ------------------------------------------------------------


def test_param_store_rejects_duplicates():
    s = ParamStore(0)
    s.add("a", (2,))
    with pytest.raises(KeyError):
        s.add("a", (2,))


def test_param_store_set_keeps_shape():
    s = ParamStore(0)
    s.add("a", (2, 3))
    with pytest.raises(ValueError):
        s.set("a", np.zeros((3, 2)))


def test_param_store_round_trip(tmp_path):
    net, store = _net()
    path = tmp_path / "p.json"
    store.save(path)
    back = ParamStore.load(path)
    assert list(back) == list(store)
    for name in store:
        assert np.array_equal(back[name].data, store[name].data)


def test_param_store_rejects_foreign_checkpoints():
    with pytest.raises(ValueError):
        ParamStore.from_dict({"format": "other", "version": 1, "params": {}})
    with pytest.raises(ValueError):
        ParamStore.from_dict({"format": "tpmkit.params", "version": 99, "params": {}})


def test_initialisation_ranges():
    s = ParamStore(1)
    cell = make_lstm(s, "c", 6, 10)
    k = 1 / math.sqrt(16)
    assert np.abs(cell.wx.data).max() <= k and np.abs(cell.wh.data).max() <= k
    assert np.all(cell.b.data[10:20] == 1.0)
    assert np.all(cell.b.data[:10] == 0.0) and np.all(cell.b.data[20:] == 0.0)


# -- LSTM -----------------------------------------------------------------------


def test_lstm_all_zero_params_gives_zero_state():
    s = ParamStore(0)
    cell = make_lstm(s, "c", 3, 4, forget_bias=0.0)
    for p in (cell.wx, cell.wh, cell.b):
        p.data[...] = 0.0
    h, c = lstm_step(np.array([0.3, -2.0, 5.0]), (np.zeros(4), np.zeros(4)), cell)
    assert np.all(h.data == 0.0) and np.all(c.data == 0.0)


def test_lstm_forget_gate_saturation_keeps_cell():
    s = ParamStore(0)
    cell = make_lstm(s, "c", 2, 3, forget_bias=1e3)
    c0 = np.array([0.4, -0.7, 1.2])
    cell.b.data[:3] = -1e3  # input gate closed
    _, c = lstm_step(np.zeros(2), (np.zeros(3), c0), cell)
    assert c.data == pytest.approx(c0, abs=1e-12)


def test_lstm_dimension_mismatch():
    s = ParamStore(0)
    cell = make_lstm(s, "c", 2, 3)
    with pytest.raises(ValueError):
        lstm_step(np.zeros(3), (np.zeros(3), np.zeros(3)), cell)
    with pytest.raises(ValueError):
        lstm_step(np.zeros(2), (np.zeros(2), np.zeros(3)), cell)


def test_lstm_gradients_match_finite_differences(rng):
    s = ParamStore(4)
    cell = make_lstm(s, "c", 3, 4)
    x1, x2 = rng.normal(size=3), rng.normal(size=3)

    def loss(store):
        h, c = lstm_step(x1, (np.zeros(4), np.zeros(4)), cell)
        h, c = lstm_step(x2, (h, c), cell)
        return ad.tsum(h * h) + ad.tsum(c)

    assert grad_check(loss, s, eps=1e-6) < 1e-4


def test_lstm_outputs_finite_for_large_inputs():
    s = ParamStore(0)
    cell = make_lstm(s, "c", 2, 3)
    h, c = lstm_step(np.array([1e6, -1e6]), (np.zeros(3), np.zeros(3)), cell)
    assert np.all(np.isfinite(h.data)) and np.all(np.isfinite(c.data))


# -- frame encoder --------------------------------------------------------------


def _encoder(seed=0, n_players=4, F=6):
    s = ParamStore(seed)
    return FrameEncoderParams(s.add("w", (2, F)), s.add("b", (F,)), n_players)


def test_identical_players_pool_to_single_encoding():
    enc = _encoder(n_players=2)
    both = encode_frame([(1.5, -0.5), (1.5, -0.5)], enc)
    single = player_encodings(np.array([[1.5, -0.5]]), enc)
    assert np.array_equal(both.data, single.data[0])


def test_pooling_is_elementwise_max():
    assert np.array_equal(pool_players(np.array([[1.0, 2.0], [3.0, 0.0]])).data, [3.0, 2.0])


def test_pooling_gradient_flows_to_the_max():
    e = Tensor(np.array([[1.0, 2.0], [3.0, 0.0]]), requires_grad=True)
    ad.tsum(pool_players(e)).backward()
    assert np.array_equal(e.grad, [[0.0, 1.0], [1.0, 0.0]])


def test_encode_frame_rejects_empty():
    with pytest.raises(ValueError):
        encode_frame([], _encoder())


def test_encode_frame_zero_pads_missing_players():
    enc = _encoder(n_players=3)
    direct = encode_frame([(1.0, 2.0)], enc)
    padded = pool_players(player_encodings(np.array([[1.0, 2.0], [0.0, 0.0], [0.0, 0.0]]), enc))
    assert np.array_equal(direct.data, padded.data)
    with pytest.raises(ValueError):
        pad_players(np.zeros((5, 2)), 3)


def test_encode_frame_permutation_invariant_100_cases():
    rng = np.random.default_rng(0)
    enc = _encoder(n_players=6)
    for _ in range(100):
        n = rng.integers(1, 7)
        pos = rng.normal(scale=10.0, size=(n, 2))
        a = encode_frame(pos, enc).data
        b = encode_frame(pos[rng.permutation(n)], enc).data
        assert np.array_equal(a, b)


# -- player selection -----------------------------------------------------------


def test_selection_examples():
    assert select_players_closeness([(0, 0), (1, 1), (2, 2)], 4) == [0, 1, 2]
    assert select_players_closeness([(0, 0), (1, 0), (0, 1), (100, 100)], 3) == [0, 1, 2]
    assert select_players_closeness([(3, 3)] * 6, 4) == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        select_players_closeness([(0, 0)], 0)
    with pytest.raises(ValueError):
        select_players_closeness([], 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 9), st.integers(1, 8), st.integers(0, 10_000))
def test_selection_matches_networkx_closeness(n, n_p, seed):
    pos = np.random.default_rng(seed).uniform(0, 50, size=(n, 2))
    g = nx.complete_graph(n)
    for i in range(n):
        for j in range(i + 1, n):
            g[i][j]["d"] = float(np.hypot(*(pos[i] - pos[j])))
    cc = nx.closeness_centrality(g, distance="d")
    expected = sorted(sorted(range(n), key=lambda i: (-cc[i], i))[:n_p]) if n > n_p else list(range(n))
    assert select_players_closeness(pos, n_p) == expected


# -- hierarchical forward -------------------------------------------------------


def test_every_frame_an_event(rng):
    net, _ = _net()
    frames = rng.normal(size=(7, 6))
    hs = hier_forward(frames, list(range(7)), net)
    assert len(hs) == 7 and all(h.shape == (3,) for h in hs)


def test_empty_events_give_empty_output(rng):
    net, _ = _net()
    assert hier_forward(rng.normal(size=(4, 6)), [], net) == []


@pytest.mark.parametrize("bad", [[2, 2], [3, 1], [0, 9], [-1, 2]])
def test_invalid_event_indices(bad, rng):
    net, _ = _net()
    with pytest.raises(ValueError):
        net.forward(rng.normal(size=(5, 6)), bad)


@pytest.mark.parametrize("encoder", ["concat", "pooled"])
def test_causality_and_sensitivity(encoder, rng):
    net, _ = _net(encoder, input_dim=8, n_players=3)
    frames = rng.normal(size=(12, 8))
    events = [1, 4, 7, 10]
    base = hier_forward(frames, events, net)
    for j, fe in enumerate(events):
        for k in range(12):
            pert = frames.copy()
            pert[k] += 0.1
            out = hier_forward(pert, events, net)
            if k > fe:
                assert np.array_equal(out[j], base[j])
            else:
                assert np.max(np.abs(out[j] - base[j])) > 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 15), st.data())
def test_output_length_equals_event_count(n, data):
    idx = sorted(data.draw(st.sets(st.integers(0, n - 1), max_size=n)))
    net, _ = _net()
    frames = np.random.default_rng(n).normal(size=(n, 6))
    assert len(hier_forward(frames, idx, net)) == len(idx)


def test_batched_forward_matches_single_sequences(rng):
    net, _ = _net()
    a, b = rng.normal(size=(6, 6)), rng.normal(size=(9, 6))
    ea, eb = [0, 2, 5], [1, 3, 4, 8]
    T = 9
    prepared = np.zeros((T, 2, 6))
    prepared[:6, 0], prepared[:, 1] = a, b
    idx = np.array([[0, 1], [2, 3], [5, 4], [5, 8]])
    out = net.forward_batch(prepared, idx).data
    assert out[:3, 0] == pytest.approx(np.stack(hier_forward(a, ea, net)), abs=1e-14)
    assert out[:, 1] == pytest.approx(np.stack(hier_forward(b, eb, net)), abs=1e-14)


def test_forward_is_deterministic(rng):
    frames = rng.normal(size=(8, 6))
    outs = []
    for _ in range(2):
        net, store = _net(seed=11)
        y = ad.tsum(net.forward(frames, [2, 5, 7]))
        y.backward()
        outs.append((y.item(), {n: store[n].grad.copy() for n in store}))
    assert outs[0][0] == outs[1][0]
    assert all(np.array_equal(outs[0][1][n], outs[1][1][n]) for n in outs[0][1])


def test_attach_rebinds_existing_parameters(rng):
    net, store = _net()
    again = HierarchicalRNN.attach(ParamStore.from_dict(store.to_dict()), net.config)
    frames = rng.normal(size=(5, 6))
    assert np.array_equal(net.forward(frames, [1, 4]).data, again.forward(frames, [1, 4]).data)


def test_hierarchical_gradients(rng):
    net, store = _net("pooled", input_dim=6, n_players=2)
    frames = rng.normal(size=(6, 6))
    loss = lambda s: ad.tsum(ad.square(net.forward(frames, [1, 3, 5])))
    assert grad_check(loss, store, eps=1e-6, max_per_param=6) < 1e-4


# -- grad check and optimiser ---------------------------------------------------


def test_grad_check_on_square():
    s = ParamStore(0)
    s.add("x", (), value=3.0)
    err, (_, _, analytic, numeric) = grad_check(lambda st_: ad.square(st_["x"]), s, full_output=True)
    assert analytic == 6.0 and numeric == pytest.approx(6.0, abs=1e-8)
    assert err < 1e-9


def test_grad_check_detects_a_wrong_gradient():
    s = ParamStore(0)
    s.add("x", (), value=3.0)

    def wrong(store):
        x = store["x"]
        return ad._make(x.data ** 2, (x,), lambda g: x._accumulate(g * 5.0))

    assert grad_check(wrong, s) > 0.1


def test_adam_minimises_a_quadratic():
    s = ParamStore(0)
    x = s.add("x", (3,), value=[5.0, -4.0, 2.0])
    opt = Adam([x], lr=0.1)
    for _ in range(500):
        s.zero_grad()
        ad.tsum(ad.square(x - 1.0)).backward()
        opt.step()
    assert x.data == pytest.approx([1.0, 1.0, 1.0], abs=1e-3)


def test_adam_clips_the_gradient_norm():
    s = ParamStore(0)
    x = s.add("x", (2,), value=[0.0, 0.0])
    x.grad = np.array([300.0, 400.0])
    opt = Adam([x], lr=1.0, clip_norm=1.0)
    assert opt.step() == pytest.approx(500.0)
    assert opt.m[0] == pytest.approx(0.1 * np.array([0.6, 0.8]))
