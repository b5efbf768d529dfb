"""Recurrent building blocks: LSTM cells, frame encoders and the two-level RNN.

The lower LSTM reads every frame; at each event frame its hidden state is
passed up to the higher LSTM, which therefore steps once per event.  The
higher-level outputs ``h_j`` are what the prediction heads consume.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_FORMAT = "tpmkit.params"
CHECKPOINT_VERSION = 1


class ParamStore:
    """Named parameter arrays with a deterministic initialiser."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape, *, scale: Optional[float] = None, value=None) -> Tensor:
        """Register a parameter.  Uniform(-scale, scale) unless ``value`` is given."""
        if name in self._params:
            raise KeyError(f"parameter {name!r} registered twice")
        shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
        if value is not None:
            data = np.broadcast_to(np.asarray(value, dtype=float), shape).copy()
        else:
            if scale is None:
                fan_in = shape[0] if shape else 1
                scale = 1.0 / math.sqrt(max(fan_in, 1))
            data = self._rng.uniform(-scale, scale, size=shape)
        p = Tensor(data, requires_grad=True)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    @property
    def size(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def set(self, name: str, value) -> None:
        p = self._params[name]
        value = np.asarray(value, dtype=float)
        if value.shape != p.data.shape:
            raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.data.shape}")
        p.data = value.copy()

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "params": {
                name: {"shape": list(p.data.shape), "values": p.data.ravel().tolist()}
                for name, p in self._params.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParamStore":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a parameter checkpoint: format={data.get('format')!r}")
        if int(data.get("version", -1)) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
        store = cls(int(data.get("seed", 0)))
        for name, entry in data["params"].items():
            shape = tuple(entry["shape"])
            values = np.asarray(entry["values"], dtype=float).reshape(shape)
            store._params[name] = Tensor(values, requires_grad=True)
        return store

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ParamStore":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- LSTM ---------------------------------------------------------------------


@dataclass
class LstmCellParams:
    """Fused gate weights, gate order [input, forget, output, candidate]."""

    wx: Tensor  # (D, 4H)
    wh: Tensor  # (H, 4H)
    b: Tensor  # (4H,)

    @property
    def input_size(self) -> int:
        return self.wx.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.wh.shape[0]


def make_lstm(store: ParamStore, prefix: str, input_size: int, hidden_size: int,
              forget_bias: float = 1.0) -> LstmCellParams:
    k = 1.0 / math.sqrt(input_size + hidden_size)
    wx = store.add(f"{prefix}.wx", (input_size, 4 * hidden_size), scale=k)
    wh = store.add(f"{prefix}.wh", (hidden_size, 4 * hidden_size), scale=k)
    bias = np.zeros(4 * hidden_size)
    bias[hidden_size:2 * hidden_size] = forget_bias
    b = store.add(f"{prefix}.b", (4 * hidden_size,), value=bias)
    return LstmCellParams(wx, wh, b)


def _lstm_gates(z: Tensor, h_prev: Tensor, c_prev: Tensor, params: LstmCellParams):
    H = params.hidden_size
    z = z + h_prev @ params.wh
    gates = ad.sigmoid(z[..., : 3 * H])
    cand = ad.tanh(z[..., 3 * H:])
    i = gates[..., :H]
    f = gates[..., H:2 * H]
    o = gates[..., 2 * H:]
    c = f * c_prev + i * cand
    h = o * ad.tanh(c)
    return h, c


def lstm_step(x, state, params: LstmCellParams):
    """One LSTM update; ``x`` is (D,) or (B, D), ``state`` is ``(h, c)``."""
    x = ad.as_tensor(x)
    h_prev, c_prev = (ad.as_tensor(s) for s in state)
    if x.shape[-1] != params.input_size:
        raise ValueError(f"input has size {x.shape[-1]}, cell expects {params.input_size}")
    if h_prev.shape[-1] != params.hidden_size or c_prev.shape[-1] != params.hidden_size:
        raise ValueError("state size does not match the cell's hidden size")
    z = x @ params.wx + params.b
    return _lstm_gates(z, h_prev, c_prev, params)


def lstm_sequence(xs: Tensor, params: LstmCellParams, n_steps: Optional[int] = None) -> list:
    """Run a cell over the leading axis of ``xs`` (T, B, D) from a zero state."""
    T = xs.shape[0] if n_steps is None else n_steps
    batch_shape = xs.shape[1:-1]
    H = params.hidden_size
    h = Tensor(np.zeros(batch_shape + (H,)))
    c = Tensor(np.zeros(batch_shape + (H,)))
    z_all = xs[:T] @ params.wx + params.b  # input projection for all steps at once
    out = []
    for t in range(T):
        h, c = _lstm_gates(z_all[t], h, c, params)
        out.append(h)
    return out


# -- frame encoders -------------------------------------------------------------


@dataclass
class FrameEncoderParams:
    """Shared per-player perceptron followed by element-wise max pooling."""

    weight: Tensor  # (2, F)
    bias: Tensor  # (F,)
    n_players: int

    @property
    def feature_size(self) -> int:
        return self.weight.shape[1]


@dataclass
class ConcatEncoderParams:
    """Single perceptron over the whole concatenated frame vector."""

    weight: Tensor  # (D, F)
    bias: Tensor  # (F,)

    @property
    def feature_size(self) -> int:
        return self.weight.shape[1]


def player_encodings(coords, params: FrameEncoderParams) -> Tensor:
    """Per-player features tanh(W p + b) for coordinates shaped (..., P, 2)."""
    return ad.tanh(ad.as_tensor(coords) @ params.weight + params.bias)


def pool_players(encodings) -> Tensor:
    """Element-wise max over the player axis (second to last)."""
    return ad.tmax(encodings, axis=-2)


def pad_players(coords: np.ndarray, n_players: int) -> np.ndarray:
    """Zero-fill missing player slots up to ``n_players`` along axis -2."""
    coords = np.asarray(coords, dtype=float)
    missing = n_players - coords.shape[-2]
    if missing < 0:
        raise ValueError(f"{coords.shape[-2]} players exceed the cap of {n_players}")
    if missing == 0:
        return coords
    pad = [(0, 0)] * coords.ndim
    pad[-2] = (0, missing)
    return np.pad(coords, pad)


def encode_frame(player_coordinates, params: FrameEncoderParams) -> Tensor:
    """Feature vector of one frame from its players' (x, y) coordinates."""
    coords = np.asarray(player_coordinates, dtype=float).reshape(-1, 2)
    if coords.shape[0] == 0:
        raise ValueError("a frame needs at least one player")
    coords = pad_players(coords, params.n_players)
    return pool_players(player_encodings(coords, params))


def select_players_closeness(positions, n_p: int) -> list[int]:
    """Indices of the ``n_p`` most central players, in ascending index order.

    Centrality is closeness on the complete graph with Euclidean edge
    lengths, i.e. the reciprocal of the summed distance to all other
    players.  Ties go to the lower index.
    """
    if n_p < 1:
        raise ValueError("n_p must be at least 1")
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = pos.shape[0]
    if n == 0:
        raise ValueError("positions must be nonempty")
    if n <= n_p:
        return list(range(n))
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)).sum(1)
    with np.errstate(divide="ignore"):
        closeness = np.where(dist > 0, 1.0 / dist, np.inf)
    order = sorted(range(n), key=lambda i: (-closeness[i], i))
    return sorted(order[:n_p])


def select_and_pad(frame_vector, n_p: int) -> np.ndarray:
    """Turn a flat [x0, y0, x1, y1, ...] frame into an (n_p, 2) player array."""
    pos = np.asarray(frame_vector, dtype=float).reshape(-1, 2)
    keep = select_players_closeness(pos, n_p)
    return pad_players(pos[keep], n_p)


# -- hierarchical RNN -------------------------------------------------------------


@dataclass
class HierConfig:
    input_dim: int
    feature_dim: int = 32
    lower_hidden: int = 32
    higher_hidden: int = 32
    encoder: str = "concat"  # "concat" or "pooled"
    n_players: int = 4

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class HierarchicalState:
    lower_h: list
    higher_h: list
    event_frame_indices: list


class HierarchicalRNN:
    """Frame encoder + lower (per-frame) LSTM + higher (per-event) LSTM."""

    def __init__(self, store: ParamStore, config: HierConfig, prefix: str = "backbone"):
        self.config = config
        self.store = store
        F = config.feature_dim
        if config.encoder == "concat":
            self.encoder = ConcatEncoderParams(
                store.add(f"{prefix}.enc.w", (config.input_dim, F)),
                store.add(f"{prefix}.enc.b", (F,), value=0.0),
            )
        elif config.encoder == "pooled":
            if config.input_dim % 2:
                raise ValueError("pooled encoder needs (x, y) pairs per frame")
            self.encoder = FrameEncoderParams(
                store.add(f"{prefix}.enc.w", (2, F)),
                store.add(f"{prefix}.enc.b", (F,), value=0.0),
                config.n_players,
            )
        else:
            raise ValueError(f"unknown encoder {config.encoder!r}")
        self.lower = make_lstm(store, f"{prefix}.lower", F, config.lower_hidden)
        self.higher = make_lstm(store, f"{prefix}.higher", config.lower_hidden, config.higher_hidden)

    @classmethod
    def attach(cls, store: ParamStore, config: HierConfig, prefix: str = "backbone") -> "HierarchicalRNN":
        """Bind to parameters already present in ``store`` (e.g. after loading)."""
        self = cls.__new__(cls)
        self.config = config
        self.store = store
        if config.encoder == "concat":
            self.encoder = ConcatEncoderParams(store[f"{prefix}.enc.w"], store[f"{prefix}.enc.b"])
        else:
            self.encoder = FrameEncoderParams(store[f"{prefix}.enc.w"], store[f"{prefix}.enc.b"],
                                              config.n_players)
        self.lower = LstmCellParams(*(store[f"{prefix}.lower.{n}"] for n in ("wx", "wh", "b")))
        self.higher = LstmCellParams(*(store[f"{prefix}.higher.{n}"] for n in ("wx", "wh", "b")))
        return self

    def prepare(self, frames: np.ndarray) -> np.ndarray:
        """Arrange raw (already normalised) frame vectors for the encoder."""
        frames = np.asarray(frames, dtype=float)
        if self.config.encoder == "concat":
            return frames
        n_p = self.config.n_players
        lead = frames.shape[:-1]
        flat = frames.reshape(-1, frames.shape[-1])
        out = np.stack([select_and_pad(f, n_p) for f in flat]) if flat.size else np.zeros((0, n_p, 2))
        return out.reshape(lead + (n_p, 2))

    def encode(self, prepared) -> Tensor:
        if isinstance(self.encoder, ConcatEncoderParams):
            return ad.tanh(ad.as_tensor(prepared) @ self.encoder.weight + self.encoder.bias)
        return pool_players(player_encodings(prepared, self.encoder))

    def forward_batch(self, prepared: np.ndarray, event_idx: np.ndarray, *, keep_state: bool = False):
        """Batched forward over time-major padded inputs.

        ``prepared`` is (T, B, ...) and ``event_idx`` (J, B) holds event frame
        indices (padding entries may point anywhere valid).  Returns the
        higher-level outputs as a (J, B, H) tensor.
        """
        event_idx = np.asarray(event_idx, dtype=np.int64)
        J, B = event_idx.shape
        if J == 0:
            out = Tensor(np.zeros((0, B, self.config.higher_hidden)))
            return (out, HierarchicalState([], [], [])) if keep_state else out
        n_steps = int(event_idx.max()) + 1  # frames after the last event cannot matter
        feats = self.encode(prepared[:n_steps])
        lower = lstm_sequence(feats, self.lower)
        lower_all = ad.stack(lower, axis=0)  # (T, B, H_low)
        gathered = lower_all[event_idx, np.arange(B)[None, :]]  # (J, B, H_low)
        higher = lstm_sequence(gathered, self.higher)
        out = ad.stack(higher, axis=0)
        if keep_state:
            return out, HierarchicalState(lower, higher, event_idx.tolist())
        return out

    def forward(self, frames, event_frame_indices: Sequence[int]) -> Tensor:
        """Exact-length forward over one sequence; returns (j, H)."""
        idx = np.asarray(event_frame_indices, dtype=np.int64)
        frames = np.asarray(frames, dtype=float)
        if idx.size == 0:
            return Tensor(np.zeros((0, self.config.higher_hidden)))
        if np.any(np.diff(idx) <= 0):
            raise ValueError("event frame indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= frames.shape[0]:
            raise ValueError("event frame index out of range")
        prepared = self.prepare(frames)[:, None]
        out = self.forward_batch(prepared, idx[:, None])
        return out[:, 0]


def hier_forward(frames, event_frame_indices, net: HierarchicalRNN) -> list[np.ndarray]:
    """Higher-level hidden states h_j, one per event."""
    out = net.forward(frames, event_frame_indices)
    return [row.copy() for row in out.data]


# -- gradient check -----------------------------------------------------------------


def grad_check(
    loss: Callable[[ParamStore], Tensor],
    store: ParamStore,
    eps: float = 1e-6,
    *,
    names: Optional[Iterable[str]] = None,
    max_per_param: Optional[int] = None,
    floor: float = 1e-7,
    seed: int = 0,
    full_output: bool = False,
):
    """Largest relative gap between reverse-mode and central-difference gradients.

    The relative error of one coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps exactly-zero gradients from dividing by zero.
    """
    names = list(names) if names is not None else list(store)
    store.zero_grad()
    out = loss(store)
    out.backward()
    analytic = {n: (store[n].grad.copy() if store[n].grad is not None else np.zeros_like(store[n].data))
                for n in names}
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_at = None
    for name in names:
        p = store[name]
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            coords = rng.choice(flat.size, size=max_per_param, replace=False)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + eps
            up = loss(store).item()
            flat[k] = orig - eps
            down = loss(store).item()
            flat[k] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[name].reshape(-1)[k]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if rel > worst:
                worst, worst_at = rel, (name, int(k), float(a), float(numeric))
    store.zero_grad()
    return (worst, worst_at) if full_output else worst


# -- optimiser --------------------------------------------------------------------


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: Optional[float] = None, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> float:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm
