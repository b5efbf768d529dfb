"""Neural temporal point process over frame streams.

A hierarchical RNN summarises the frames up to event ``j`` into ``h_j``;
three heads read ``h_j`` and describe the next event:

* an intensity head for the waiting time, either
  A: ``lambda(t) = exp(v.h + w (t - t_j) + b)`` with ``w = exp(rho) > 0``, or
  B: ``lambda(t) = exp(w.h + b)`` (constant until the next event);
* a softmax category head;
* a diagonal Gaussian over the spatial shift with fixed widths.

Time is rescaled internally by a per-dataset ``time_scale``.  Rescaling is
folded into effective head parameters (``b - log s`` and ``w / s``), so
every public density, likelihood and prediction is in dataset time units.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import Dataset, EventSequence
from .neural import Adam, HierarchicalRNN, HierConfig, ParamStore
from .numerics import EULER_GAMMA, exp_integral_e1_scaled

MODEL_FORMAT = "tpmkit.model"
MODEL_VERSION = 1
MIN_INTERVAL = 1e-3


class TrainingDivergence(RuntimeError):
    pass


def _val(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)


# -- heads ---------------------------------------------------------------------


@dataclass
class IntensityHeadA:
    v: object
    rho: object
    b: object

    @property
    def w(self) -> float:
        return float(np.exp(_val(self.rho)))

    def exponent(self, h) -> float:
        return float(np.dot(_val(self.v), np.asarray(h, dtype=float)) + _val(self.b))


@dataclass
class IntensityHeadB:
    w: object
    b: object

    def exponent(self, h) -> float:
        return float(np.dot(_val(self.w), np.asarray(h, dtype=float)) + _val(self.b))


@dataclass
class CategoryHead:
    """Logits ``h @ weight + bias``; ``weight`` is stored (H, K)."""

    weight: object
    bias: object

    @property
    def n_classes(self) -> int:
        return int(_val(self.bias).shape[0])

    def logits(self, h) -> np.ndarray:
        return np.asarray(h, dtype=float) @ _val(self.weight) + _val(self.bias)

    def distribution(self, h) -> np.ndarray:
        return ad.softmax_np(self.logits(h))


@dataclass
class SpaceHead:
    """Mean shift ``h @ weight + bias`` (``weight`` stored (H, 2)) with fixed widths."""

    weight: object
    bias: object
    sigma_x: float = 2.0
    sigma_y: float = 2.0

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ValueError("space head widths must be positive")

    def mean(self, h) -> np.ndarray:
        return np.asarray(h, dtype=float) @ _val(self.weight) + _val(self.bias)

    @property
    def log_norm(self) -> float:
        return -math.log(2.0 * math.pi * self.sigma_x * self.sigma_y)


TimeHead = Union[IntensityHeadA, IntensityHeadB]


# -- per-term formulas -----------------------------------------------------------


def intensity_a(h_j, t: float, t_j: float, head: IntensityHeadA) -> float:
    if t < t_j:
        raise ValueError("intensity is defined for t >= t_j")
    log_rate = head.exponent(h_j) + head.w * (t - t_j)
    return math.exp(log_rate) if log_rate < 709.0 else math.inf


def intensity_b(h_j, head: IntensityHeadB) -> float:
    return math.exp(head.exponent(h_j))


def _time_ll_a(z, w, delta):
    # z + w d - (e^z / w)(e^{w d} - 1), written with exprel so w -> 0 is safe
    wd = w * delta
    if isinstance(z, Tensor) or isinstance(w, Tensor):
        return z + wd - ad.exp(z) * delta * ad.exprel(wd)
    wd = np.asarray(wd, dtype=float)
    small = np.abs(wd) < 1e-5
    safe = np.where(small, 1.0, wd)
    with np.errstate(over="ignore"):  # far tail: log-density is -inf
        rel = np.where(small, 1.0 + wd / 2.0 + wd * wd / 6.0, np.expm1(safe) / safe)
        return z + wd - np.exp(z) * delta * rel


def _time_ll_b(z, delta):
    if isinstance(z, Tensor):
        return z - ad.exp(z) * delta
    return z - np.exp(z) * delta


def time_log_likelihood(head: TimeHead, h_j, t_j: float, t_next) -> float:
    """log f*(t_next) given the history up to ``t_j`` (vectorised in ``t_next``)."""
    delta = np.asarray(t_next, dtype=float) - t_j
    if np.any(delta <= 0):
        raise ValueError("t_next must be after t_j")
    z = head.exponent(h_j)
    out = _time_ll_a(z, head.w, delta) if isinstance(head, IntensityHeadA) else _time_ll_b(z, delta)
    return float(out) if np.ndim(out) == 0 else out


def time_density(head: TimeHead, h_j, t_j: float, ts) -> np.ndarray:
    """f*(t) on a grid; zero at or before ``t_j``."""
    ts = np.asarray(ts, dtype=float)
    delta = np.maximum(ts - t_j, 0.0)
    z = head.exponent(h_j)
    ll = _time_ll_a(z, head.w, delta) if isinstance(head, IntensityHeadA) else _time_ll_b(z, delta)
    return np.where(ts >= t_j, np.exp(ll), 0.0)


def category_log_likelihood(head: CategoryHead, h_j, true_class: int) -> float:
    """log p_hat[true_class]: negative cross-entropy against the one-hot truth."""
    k = int(true_class)
    if not 0 <= k < head.n_classes:
        raise ValueError(f"class {k} outside [0, {head.n_classes})")
    logits = head.logits(h_j)
    m = logits.max()
    return float(logits[k] - m - math.log(np.exp(logits - m).sum()))


def space_log_likelihood(head: SpaceHead, h_j, shift) -> float:
    d = np.asarray(shift, dtype=float) - head.mean(h_j)
    if not np.all(np.isfinite(d)):
        raise ValueError("shift must be finite")
    return head.log_norm - 0.5 * ((d[0] / head.sigma_x) ** 2 + (d[1] / head.sigma_y) ** 2)


def expected_interval(head: TimeHead, h_j) -> float:
    """E[t_{j+1} - t_j] under the head's density."""
    z = head.exponent(h_j)
    if isinstance(head, IntensityHeadB):
        return math.exp(-z)
    w = head.w
    log_eta = z - math.log(w)
    if log_eta < -700.0:
        # e^eta E1(eta) -> -gamma - ln(eta) as eta -> 0
        return (-EULER_GAMMA - log_eta) / w
    return exp_integral_e1_scaled(math.exp(log_eta)) / w


# -- model --------------------------------------------------------------------


@dataclass
class TpmConfig:
    head: str = "B"
    feature_dim: int = 32
    lower_hidden: int = 32
    higher_hidden: int = 32
    encoder: str = "concat"
    n_players: int = 4
    sigma: tuple = (2.0, 2.0)
    epochs: int = 100
    lr: float = 0.01
    batch_size: Optional[int] = None
    clip_norm: Optional[float] = 10.0
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.sigma = tuple(float(s) for s in self.sigma)

    @classmethod
    def from_dict(cls, data) -> "TpmConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training config key(s): {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma"] = list(self.sigma)
        return d

    def validate(self) -> None:
        errs = []
        if self.head not in ("A", "B"):
            errs.append("head must be 'A' or 'B'")
        if self.encoder not in ("concat", "pooled"):
            errs.append("encoder must be 'concat' or 'pooled'")
        for name in ("feature_dim", "lower_hidden", "higher_hidden", "n_players"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                errs.append(f"{name} must be a positive integer")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            errs.append("epochs must be a nonnegative integer")
        if not self.lr > 0:
            errs.append("lr must be positive")
        if len(self.sigma) != 2 or min(self.sigma) <= 0:
            errs.append("sigma must be two positive numbers")
        if self.batch_size is not None and (not isinstance(self.batch_size, int) or self.batch_size < 1):
            errs.append("batch_size must be a positive integer or null")
        if errs:
            raise ValueError("; ".join(errs))


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, dataset: Dataset, pooled: bool) -> "Normalizer":
        feats = np.concatenate([s.features for s in dataset.sequences], axis=0)
        D = feats.shape[1]
        if pooled:
            xy = feats.reshape(-1, 2)
            mean = np.tile(xy.mean(axis=0), D // 2)
            std = np.tile(xy.std(axis=0), D // 2)
        else:
            mean, std = feats.mean(axis=0), feats.std(axis=0)
        return cls(mean, np.where(std > 1e-12, std, 1.0))

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


class TpmModel:
    """Backbone plus heads.  ``kind`` is "tpm" or "regression"."""

    def __init__(self, config: TpmConfig, input_dim: int, classes: Sequence[str], *,
                 kind: str = "tpm", time_scale: float = 1.0, normalizer: Optional[Normalizer] = None,
                 store: Optional[ParamStore] = None):
        if kind not in ("tpm", "regression"):
            raise ValueError(f"unknown model kind {kind!r}")
        if not time_scale > 0:
            raise ValueError("time_scale must be positive")
        self.config = config
        self.kind = kind
        self.classes = list(classes)
        self.input_dim = int(input_dim)
        self.time_scale = float(time_scale)
        self.normalizer = normalizer or Normalizer(np.zeros(input_dim), np.ones(input_dim))
        self.hier_config = HierConfig(input_dim, config.feature_dim, config.lower_hidden,
                                      config.higher_hidden, config.encoder, config.n_players)
        fresh = store is None
        self.store = store if store is not None else ParamStore(config.seed)
        s = self.store
        H = config.higher_hidden
        K = len(self.classes)
        if fresh:
            self.backbone = HierarchicalRNN(s, self.hier_config)
            if kind == "regression":
                s.add("reg.w", (H,))
                s.add("reg.b", (), value=1.0)
            else:
                if config.head == "A":
                    s.add("time.v", (H,))
                    s.add("time.rho", (), value=-2.0)
                else:
                    s.add("time.w", (H,))
                s.add("time.b", (), value=0.0)
                s.add("cat.w", (H, K))
                s.add("cat.b", (K,), value=0.0)
                s.add("space.w", (H, 2))
                s.add("space.b", (2,), value=0.0)
        else:
            self.backbone = HierarchicalRNN.attach(s, self.hier_config)
        if kind == "regression":
            self.time_head = None
            self.category_head = None
            self.space_head = None
        else:
            if config.head == "A":
                self.time_head = IntensityHeadA(s["time.v"], s["time.rho"], s["time.b"])
            else:
                self.time_head = IntensityHeadB(s["time.w"], s["time.b"])
            self.category_head = CategoryHead(s["cat.w"], s["cat.b"])
            self.space_head = SpaceHead(s["space.w"], s["space.b"], *config.sigma)

    @property
    def head(self) -> str:
        return self.config.head

    def effective_time_head(self) -> TimeHead:
        """The intensity head expressed in dataset time units."""
        log_s = math.log(self.time_scale)
        if isinstance(self.time_head, IntensityHeadA):
            return IntensityHeadA(self.time_head.v.data, float(self.time_head.rho.data) - log_s,
                                  float(self.time_head.b.data) - log_s)
        if isinstance(self.time_head, IntensityHeadB):
            return IntensityHeadB(self.time_head.w.data, float(self.time_head.b.data) - log_s)
        raise TypeError("regression models have no intensity head")

    def prepare(self, seq: EventSequence) -> np.ndarray:
        return self.backbone.prepare(self.normalizer(seq.features))

    def hidden_states(self, seq: EventSequence) -> np.ndarray:
        """h_j for every event of ``seq``, shape (J, H)."""
        out = self.backbone.forward_batch(self.prepare(seq)[:, None], seq.event_frames[:, None])
        return out.data[:, 0]

    # -- persistence -------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "input_dim": self.input_dim,
            "classes": self.classes,
            "time_scale": self.time_scale,
            "normalizer": {"mean": self.normalizer.mean.tolist(), "std": self.normalizer.std.tolist()},
            "params": self.store.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TpmModel":
        if data.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a model checkpoint: format={data.get('format')!r}")
        if int(data.get("version", -1)) != MODEL_VERSION:
            raise ValueError(f"unsupported model version {data.get('version')!r}")
        norm = Normalizer(np.asarray(data["normalizer"]["mean"], dtype=float),
                          np.asarray(data["normalizer"]["std"], dtype=float))
        return cls(TpmConfig.from_dict(data["config"]), data["input_dim"], data["classes"],
                   kind=data["kind"], time_scale=data["time_scale"], normalizer=norm,
                   store=ParamStore.from_dict(data["params"]))

    def save(self, path, extra: Optional[dict] = None) -> None:
        d = self.to_dict()
        if extra:
            d["run"] = extra
        Path(path).write_text(json.dumps(d))

    @classmethod
    def load(cls, path) -> "TpmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- batching -----------------------------------------------------------------


@dataclass
class _Batch:
    prepared: np.ndarray  # (T, B, ...)
    event_idx: np.ndarray  # (J, B)
    mask: np.ndarray  # (J-1, B) transition present
    delta: np.ndarray  # (J-1, B) in scaled units, 1 where masked
    next_cat: np.ndarray  # (J-1, B)
    shift: np.ndarray  # (J-1, B, 2)
    n_transitions: int


def _make_batch(model: TpmModel, seqs: Sequence[EventSequence], prepared: Sequence[np.ndarray]) -> _Batch:
    B = len(seqs)
    T = max(p.shape[0] for p in prepared)
    J = max(len(s.events) for s in seqs)
    tail = prepared[0].shape[1:]
    X = np.zeros((T, B) + tail)
    idx = np.zeros((J, B), dtype=np.int64)
    mask = np.zeros((max(J - 1, 0), B))
    delta = np.ones((max(J - 1, 0), B))
    cat = np.zeros((max(J - 1, 0), B), dtype=np.int64)
    shift = np.zeros((max(J - 1, 0), B, 2))
    for b, (s, p) in enumerate(zip(seqs, prepared)):
        X[: p.shape[0], b] = p
        fr = s.event_frames
        n = fr.size
        idx[:n, b] = fr
        idx[n:, b] = fr[-1]
        if n >= 2:
            mask[: n - 1, b] = 1.0
            delta[: n - 1, b] = np.diff(s.event_times) / model.time_scale
            cat[: n - 1, b] = s.categories[1:]
            shift[: n - 1, b] = np.diff(s.locations, axis=0)
    return _Batch(X, idx, mask, delta, cat, shift, int(mask.sum()))


def _batch_terms(model: TpmModel, batch: _Batch):
    """Masked per-transition log-likelihood tensors (time, category, space) in scaled units."""
    H = model.backbone.forward_batch(batch.prepared, batch.event_idx)
    Hj = H[: H.shape[0] - 1]
    s = model.store
    if model.config.head == "A":
        z = Hj @ s["time.v"] + s["time.b"]
        time_ll = _time_ll_a(z, ad.exp(s["time.rho"]), batch.delta)
    else:
        z = Hj @ s["time.w"] + s["time.b"]
        time_ll = _time_ll_b(z, batch.delta)
    logp = ad.log_softmax(Hj @ s["cat.w"] + s["cat.b"], axis=-1)
    onehot = np.zeros(logp.shape)
    np.put_along_axis(onehot, batch.next_cat[..., None], 1.0, axis=-1)
    cat_ll = ad.tsum(logp * onehot, axis=-1)
    mu = Hj @ s["space.w"] + s["space.b"]
    inv_var = 1.0 / np.square(np.asarray(model.config.sigma))
    diff = ad.add(batch.shift, ad.neg(mu))
    space_ll = ad.tsum(ad.square(diff) * inv_var, axis=-1) * -0.5
    return time_ll, cat_ll, space_ll


def batch_loss(model: TpmModel, batch: _Batch) -> Tensor:
    """Mean per-transition negative log-likelihood (regression: mean squared error)."""
    n = max(batch.n_transitions, 1)
    if model.kind == "regression":
        H = model.backbone.forward_batch(batch.prepared, batch.event_idx)
        Hj = H[: H.shape[0] - 1]
        pred = Hj @ model.store["reg.w"] + model.store["reg.b"]
        err = ad.square(ad.add(pred, -batch.delta))
        return ad.tsum(err * batch.mask) * (1.0 / n)
    time_ll, cat_ll, space_ll = _batch_terms(model, batch)
    total = ad.tsum((time_ll + cat_ll + space_ll) * batch.mask)
    return total * (-1.0 / n)


# -- likelihood of a sequence ------------------------------------------------------


def joint_nll(model: TpmModel, sequence: EventSequence, *, include_constants: bool = False) -> float:
    """Negative joint log-likelihood of all transitions of ``sequence``.

    Time is measured in dataset units.  By default the Gaussian
    normalising constant of the space term is dropped; with
    ``include_constants`` the result is exactly the negated sum of
    :func:`time_log_likelihood`, :func:`category_log_likelihood` and
    :func:`space_log_likelihood` over transitions.
    """
    if model.kind != "tpm":
        raise TypeError("joint_nll needs a TPM model")
    if len(sequence.events) < 1:
        raise ValueError("sequence has no events")
    hs = model.hidden_states(sequence)
    head = model.effective_time_head()
    times, cats, locs = sequence.event_times, sequence.categories, sequence.locations
    total = 0.0
    for j in range(len(times) - 1):
        h = hs[j]
        total += time_log_likelihood(head, h, times[j], times[j + 1])
        total += category_log_likelihood(model.category_head, h, cats[j + 1])
        sp = space_log_likelihood(model.space_head, h, locs[j + 1] - locs[j])
        total += sp if include_constants else sp - model.space_head.log_norm
    return -total


def joint_nll_tensor(model: TpmModel, sequence: EventSequence) -> Tensor:
    """Differentiable sum of per-transition NLL over one sequence (dataset time units)."""
    batch = _make_batch(model, [sequence], [model.prepare(sequence)])
    time_ll, cat_ll, space_ll = _batch_terms(model, batch)
    # scaled-unit density differs from the dataset-unit one by -log(time_scale)
    shift = batch.n_transitions * math.log(model.time_scale)
    return ad.tsum((time_ll + cat_ll + space_ll) * batch.mask) * -1.0 + shift


# -- training --------------------------------------------------------------------


@dataclass
class TrainingLog:
    epoch_loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    time_scale: float = 1.0
    kind: str = "tpm"

    def to_dict(self) -> dict:
        return asdict(self)


def _mean_interval(dataset: Dataset) -> float:
    gaps = np.concatenate([np.diff(s.event_times) for s in dataset.sequences])
    if gaps.size == 0:
        raise ValueError("dataset has no transitions to train on")
    return float(gaps.mean())


def train(dataset: Dataset, config: TpmConfig, *, kind: str = "tpm") -> tuple[TpmModel, TrainingLog]:
    """Fit a model by Adam on the mean per-transition loss; deterministic given ``config.seed``."""
    config.validate()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    model = TpmModel(
        config, dataset.feature_dim, dataset.classes, kind=kind,
        time_scale=_mean_interval(dataset),
        normalizer=Normalizer.fit(dataset, config.encoder == "pooled"),
    )
    prepared = [model.prepare(s) for s in dataset.sequences]
    seqs = dataset.sequences
    rng = np.random.default_rng(config.seed)
    bs = config.batch_size or len(seqs)
    full = _make_batch(model, seqs, prepared) if bs >= len(seqs) else None
    opt = Adam(list(model.store.values()), lr=config.lr, clip_norm=config.clip_norm,
               weight_decay=config.weight_decay)
    log = TrainingLog(time_scale=model.time_scale, kind=kind)
    for epoch in range(config.epochs):
        if full is not None:
            batches = [full]
        else:
            order = rng.permutation(len(seqs))
            batches = [_make_batch(model, [seqs[i] for i in order[k:k + bs]],
                                   [prepared[i] for i in order[k:k + bs]])
                       for k in range(0, len(seqs), bs)]
        total, count, norm = 0.0, 0, 0.0
        for batch in batches:
            if batch.n_transitions == 0:
                continue
            model.store.zero_grad()
            loss = batch_loss(model, batch)
            value = loss.item()
            if not math.isfinite(value):
                last = log.epoch_loss[-1] if log.epoch_loss else None
                raise TrainingDivergence(
                    f"loss became {value} at epoch {epoch} (last finite epoch loss {last}); "
                    f"try a smaller learning rate or clip_norm"
                )
            loss.backward()
            norm = opt.step()
            total += value * batch.n_transitions
            count += batch.n_transitions
        log.epoch_loss.append(total / max(count, 1))
        log.grad_norm.append(norm)
    model.store.zero_grad()
    return model, log


def train_regression_baseline(dataset: Dataset, config: TpmConfig) -> tuple[TpmModel, TrainingLog]:
    """Same backbone with a scalar interval head trained on squared error."""
    return train(dataset, config, kind="regression")


# -- prediction ----------------------------------------------------------------------


@dataclass
class PredictionRecord:
    sequence_id: str
    index: int
    current_time: float
    current_location: tuple
    true_time: float
    true_category: int
    true_location: tuple
    predicted_time: Optional[float] = None
    predicted_category: Optional[int] = None
    category_distribution: Optional[list] = None
    predicted_location: Optional[tuple] = None
    time_density_samples: Optional[list] = None

    def to_dict(self) -> dict:
        return asdict(self)


def predict_time(model, h_j, t_j: float) -> float:
    """Expected next event time given ``h_j``.

    ``model`` may be a :class:`TpmModel` or a bare intensity head.
    """
    if isinstance(model, TpmModel):
        if model.kind == "regression":
            pred = float(np.dot(model.store["reg.w"].data, h_j) + model.store["reg.b"].data)
            return t_j + max(model.time_scale * pred, MIN_INTERVAL)
        model = model.effective_time_head()
    return t_j + expected_interval(model, h_j)


def predict_category(model, h_j) -> tuple[int, np.ndarray]:
    head = model.category_head if isinstance(model, TpmModel) else model
    p = head.distribution(h_j)
    return int(np.argmax(p)), p


def predict_location(model, h_j, current) -> tuple:
    head = model.space_head if isinstance(model, TpmModel) else model
    mu = head.mean(h_j)
    return (float(current[0] + mu[0]), float(current[1] + mu[1]))


def density_grid(t_j: float, t_hat: float, n: int = 201) -> np.ndarray:
    """Export grid covering [t_j, t_j + 5 (t_hat - t_j)]."""
    return t_j + np.linspace(0.0, 5.0 * (t_hat - t_j), n)


def _records_from_hidden(model: TpmModel, seq: EventSequence, hs: np.ndarray,
                         density_points: int) -> list[PredictionRecord]:
    times, cats, locs = seq.event_times, seq.categories, seq.locations
    head = model.effective_time_head() if model.kind == "tpm" else None
    out = []
    for j in range(len(times) - 1):
        h = hs[j]
        rec = PredictionRecord(
            seq.id, j, float(times[j]), tuple(map(float, locs[j])),
            float(times[j + 1]), int(cats[j + 1]), tuple(map(float, locs[j + 1])),
        )
        rec.predicted_time = predict_time(model, h, float(times[j]))
        if model.kind == "tpm":
            k, p = predict_category(model, h)
            rec.predicted_category = k
            rec.category_distribution = p.tolist()
            rec.predicted_location = predict_location(model, h, locs[j])
            if density_points:
                grid = density_grid(float(times[j]), rec.predicted_time, density_points)
                dens = time_density(head, h, float(times[j]), grid)
                rec.time_density_samples = [[float(a), float(b)] for a, b in zip(grid, dens)]
        out.append(rec)
    return out


def evaluate_teacher_forced(model: TpmModel, sequence: EventSequence, *,
                            density_points: int = 0) -> list[PredictionRecord]:
    """Predict event j+1 from the true history through event j, for every transition."""
    if len(sequence.events) < 2:
        raise ValueError("need at least two events")
    return _records_from_hidden(model, sequence, model.hidden_states(sequence), density_points)


def predict_dataset(model: TpmModel, dataset: Dataset, *, batch_size: int = 64,
                    density_points: int = 0) -> list[PredictionRecord]:
    """Teacher-forced records for every sequence, batched, in input order."""
    if list(dataset.classes) != model.classes and model.kind == "tpm":
        raise ValueError(f"class mismatch: model {model.classes} vs dataset {list(dataset.classes)}")
    records = []
    seqs = [s for s in dataset.sequences if len(s.events) >= 2]
    for k in range(0, len(seqs), batch_size):
        chunk = seqs[k:k + batch_size]
        prepared = [model.prepare(s) for s in chunk]
        batch = _make_batch(model, chunk, prepared)
        H = model.backbone.forward_batch(batch.prepared, batch.event_idx).data
        for b, s in enumerate(chunk):
            records.extend(_records_from_hidden(model, s, H[: len(s.events), b], density_points))
    return records
