"""Event-sequence data model, dataset files, frame building and synthetic data.

Dataset files are JSON-lines, one sequence per line::

    {"id": "s0", "frames": [{"t": 0.0, "features": [x0, y0, ...]}, ...],
     "events": [{"frame": 3, "t": 0.6, "category": "pass", "x": 10.0, "y": 4.5}, ...]}

with a sidecar header ``<stem>.header.json`` holding the class table, units,
frame rate and (for generated data) the generator config and seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

DATASET_FORMAT = "tpmkit.dataset"
DATASET_VERSION = 1


class DatasetError(ValueError):
    """Raised by validation; ``errors`` lists every violation found."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        head = "; ".join(self.errors[:5])
        more = f" (+{len(self.errors) - 5} more)" if len(self.errors) > 5 else ""
        super().__init__(f"{len(self.errors)} dataset error(s): {head}{more}")


class ConfigError(ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class Frame:
    t: float
    features: tuple


@dataclass(frozen=True)
class Event:
    frame_index: int
    t: float
    category: int
    location: tuple


@dataclass
class EventSequence:
    """Dense frame stream with the sparse annotated events it contains.

    Frames are kept as arrays (``frame_times`` of shape (n,), ``features``
    of shape (n, D)); :attr:`frames` gives the per-frame view.
    """

    id: str
    frame_times: np.ndarray
    features: np.ndarray
    events: list
    source: str = ""

    @property
    def frames(self) -> list[Frame]:
        return [Frame(float(t), tuple(f)) for t, f in zip(self.frame_times, self.features)]

    @property
    def n_frames(self) -> int:
        return int(self.frame_times.shape[0])

    @property
    def event_times(self) -> np.ndarray:
        return np.array([e.t for e in self.events], dtype=float)

    @property
    def event_frames(self) -> np.ndarray:
        return np.array([e.frame_index for e in self.events], dtype=np.int64)

    @property
    def categories(self) -> np.ndarray:
        return np.array([e.category for e in self.events], dtype=np.int64)

    @property
    def locations(self) -> np.ndarray:
        return np.array([e.location for e in self.events], dtype=float).reshape(-1, 2)

    @property
    def origin(self) -> float:
        return float(self.frame_times[0])

    def truncated(self, n_events: int) -> "EventSequence":
        """The sequence cut right after its ``n_events``-th event frame."""
        last = self.events[n_events - 1].frame_index
        return EventSequence(self.id, self.frame_times[: last + 1], self.features[: last + 1],
                             list(self.events[:n_events]), self.source)


@dataclass
class Dataset:
    sequences: list
    classes: list
    time_unit: str = "s"
    distance_unit: str = "ft"
    frame_rate: float = 1.0
    metadata: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def feature_dim(self) -> int:
        return int(self.sequences[0].features.shape[1]) if self.sequences else 0

    def __len__(self) -> int:
        return len(self.sequences)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.sequences[i] for i in indices], list(self.classes), self.time_unit,
                       self.distance_unit, self.frame_rate, dict(self.metadata))

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        n = len(self.sequences)
        return self.subset(range(n_first)), self.subset(range(n_first, n))

    def header(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "classes": list(self.classes),
            "units": {"time": self.time_unit, "distance": self.distance_unit},
            "frame_rate": self.frame_rate,
            "feature_dim": self.feature_dim,
            "n_sequences": len(self.sequences),
            "metadata": self.metadata,
        }


# -- serialisation -----------------------------------------------------------------


def header_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".header.json")


def sequence_to_record(seq: EventSequence, classes: Sequence[str]) -> dict:
    return {
        "id": seq.id,
        "frames": [
            {"t": float(t), "features": [float(v) for v in f]}
            for t, f in zip(seq.frame_times, seq.features)
        ],
        "events": [
            {"frame": int(e.frame_index), "t": float(e.t), "category": classes[e.category],
             "x": float(e.location[0]), "y": float(e.location[1])}
            for e in seq.events
        ],
    }


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    lines = [json.dumps(sequence_to_record(s, dataset.classes), separators=(",", ":"))
             for s in dataset.sequences]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    header_path(path).write_text(json.dumps(dataset.header(), indent=2, sort_keys=True) + "\n")


def load_dataset(path, header: Optional[dict] = None) -> Dataset:
    path = Path(path)
    if header is None:
        hp = header_path(path)
        if not hp.exists():
            raise DatasetError([f"missing header file {hp}"])
        header = json.loads(hp.read_text())
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DatasetError([f"line {lineno}: invalid JSON ({exc.msg})"]) from exc
    return validate_dataset(records, header)


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_dataset(raw: Sequence[Mapping], header: Mapping) -> Dataset:
    """Check raw records against the dataset invariants.

    Every violation is collected (with sequence id and field) and reported
    together; nothing is accepted if any check fails.
    """
    errors: list[str] = []
    if header.get("format", DATASET_FORMAT) != DATASET_FORMAT:
        errors.append(f"header: format {header.get('format')!r} is not {DATASET_FORMAT!r}")
    if int(header.get("version", DATASET_VERSION)) != DATASET_VERSION:
        errors.append(f"header: unsupported version {header.get('version')!r}")
    classes = header.get("classes")
    if not isinstance(classes, list) or not classes or not all(isinstance(c, str) for c in classes):
        errors.append("header: classes must be a nonempty list of names")
        classes = []
    elif len(set(classes)) != len(classes):
        errors.append("header: class names must be unique")
    class_index = {c: i for i, c in enumerate(classes)}
    frame_rate = header.get("frame_rate", 1.0)
    if not _finite(frame_rate) or frame_rate <= 0:
        errors.append("header: frame_rate must be positive")
    units = header.get("units", {})

    seen_ids: set = set()
    dim = None
    sequences = []
    for pos, rec in enumerate(raw):
        sid = rec.get("id") if isinstance(rec, Mapping) else None
        label = f"sequence {sid!r}" if sid is not None else f"sequence #{pos}"
        if not isinstance(rec, Mapping):
            errors.append(f"{label}: record is not an object")
            continue
        if not isinstance(sid, str):
            errors.append(f"{label}: id must be a string")
        elif sid in seen_ids:
            errors.append(f"{label}: duplicate id")
        seen_ids.add(sid)

        frames = rec.get("frames")
        events = rec.get("events")
        if not isinstance(frames, list) or not frames:
            errors.append(f"{label}: frames must be a nonempty list")
            continue
        if not isinstance(events, list) or not events:
            errors.append(f"{label}: events must be a nonempty list")
            continue
        times = []
        feats = []
        ok = True
        for k, fr in enumerate(frames):
            t = fr.get("t") if isinstance(fr, Mapping) else None
            f = fr.get("features") if isinstance(fr, Mapping) else None
            if not _finite(t):
                errors.append(f"{label}: frames[{k}].t must be a finite number")
                ok = False
                continue
            if not isinstance(f, list) or not all(_finite(v) for v in f):
                errors.append(f"{label}: frames[{k}].features must be finite numbers")
                ok = False
                continue
            if dim is None:
                dim = len(f)
            elif len(f) != dim:
                errors.append(f"{label}: frames[{k}].features has dimension {len(f)}, expected {dim}")
                ok = False
            times.append(float(t))
            feats.append(f)
        if ok and any(b <= a for a, b in zip(times, times[1:])):
            errors.append(f"{label}: frame times must be strictly increasing")
            ok = False
        n = len(frames)
        evs = []
        prev_idx = -1
        for k, ev in enumerate(events):
            if not isinstance(ev, Mapping):
                errors.append(f"{label}: events[{k}] is not an object")
                ok = False
                continue
            idx, t, cat = ev.get("frame"), ev.get("t"), ev.get("category")
            x, y = ev.get("x"), ev.get("y")
            if not isinstance(idx, int) or isinstance(idx, bool) or not 0 <= idx < n:
                errors.append(f"{label}: events[{k}].frame {idx!r} outside [0, {n})")
                ok = False
                continue
            if idx <= prev_idx:
                errors.append(f"{label}: events[{k}].frame must be strictly increasing")
                ok = False
            prev_idx = idx
            if not _finite(t):
                errors.append(f"{label}: events[{k}].t must be a finite number")
                ok = False
            elif ok and idx < len(times) and abs(t - times[idx]) > 1e-9 * max(1.0, abs(t)):
                errors.append(f"{label}: events[{k}].t={t} differs from frame {idx} time {times[idx]}")
                ok = False
            if cat not in class_index:
                errors.append(f"{label}: events[{k}].category {cat!r} not in class table")
                ok = False
            if not (_finite(x) and _finite(y)):
                errors.append(f"{label}: events[{k}] location must be finite")
                ok = False
            if ok:
                evs.append(Event(idx, float(t), class_index[cat], (float(x), float(y))))
        if ok:
            sequences.append(EventSequence(
                sid, np.asarray(times, dtype=float),
                np.asarray(feats, dtype=float).reshape(n, dim or 0), evs,
                source=str(rec.get("source", "")),
            ))
    if errors:
        raise DatasetError(errors)
    return Dataset(
        sequences, list(classes),
        time_unit=units.get("time", "s"), distance_unit=units.get("distance", "ft"),
        frame_rate=float(frame_rate), metadata=dict(header.get("metadata", {})),
    )


# -- frames from trajectories -----------------------------------------------------------


def order_agents(positions: Mapping, reference=None, groups: Optional[Sequence[Sequence]] = None) -> list:
    """Agent ids in concatenation order.

    The reference agent (e.g. the ball) comes first if present; within each
    group the remaining agents are sorted by distance to the reference,
    nearest first, ties broken by agent id.  Without a reference, agents are
    ordered by id.
    """
    others = [a for a in positions if a != reference]
    if groups is None:
        groups = [others]
    order = [reference] if reference is not None and reference in positions else []
    ref = np.asarray(positions[reference], dtype=float) if order else None
    for group in groups:
        members = [a for a in group if a in positions and a != reference]
        if ref is None:
            members.sort()
        else:
            members.sort(key=lambda a: (float(np.hypot(*(np.asarray(positions[a], dtype=float) - ref))), a))
        order.extend(members)
    return order


def build_frames(
    trajectories: Mapping,
    frame_rate: float,
    *,
    reference=None,
    groups: Optional[Sequence[Sequence]] = None,
    t_start: Optional[float] = None,
    t_end: Optional[float] = None,
) -> list[Frame]:
    """Resample agent trajectories onto a fixed-rate frame grid.

    ``trajectories`` maps agent id to an array of rows ``(t, x, y)`` sorted
    by time.  Positions between samples are interpolated linearly; a frame
    outside an agent's sampled time range is an error.
    """
    if frame_rate <= 0:
        raise ValueError("frame_rate must be positive")
    if not trajectories:
        raise ValueError("no trajectories given")
    tracks = {a: np.asarray(tr, dtype=float).reshape(-1, 3) for a, tr in trajectories.items()}
    for a, tr in tracks.items():
        if tr.shape[0] == 0 or np.any(np.diff(tr[:, 0]) <= 0):
            raise ValueError(f"trajectory of agent {a!r} must have increasing sample times")
    lo = max(tr[0, 0] for tr in tracks.values()) if t_start is None else float(t_start)
    hi = min(tr[-1, 0] for tr in tracks.values()) if t_end is None else float(t_end)
    if hi < lo:
        raise ValueError("trajectories do not overlap in time")
    n = int(math.floor((hi - lo) * frame_rate + 1e-9)) + 1
    times = lo + np.arange(n) / frame_rate
    for a, tr in tracks.items():
        if times[0] < tr[0, 0] - 1e-12 or times[-1] > tr[-1, 0] + 1e-12:
            raise ValueError(f"frame times extrapolate beyond agent {a!r}'s samples")
    return _frames_at(times, tracks, reference, groups)


def _frames_at(times, tracks, reference, groups) -> list[Frame]:
    interp = {
        a: np.stack([np.interp(times, tr[:, 0], tr[:, 1]), np.interp(times, tr[:, 0], tr[:, 2])], axis=1)
        for a, tr in tracks.items()
    }
    frames = []
    for k, t in enumerate(times):
        pos = {a: interp[a][k] for a in tracks}
        feats = []
        for a in order_agents(pos, reference, groups):
            feats.extend(float(v) for v in pos[a])
        frames.append(Frame(float(t), tuple(feats)))
    return frames


# -- synthetic generator --------------------------------------------------------------


@dataclass
class CategorySpec:
    name: str
    rate: float
    shift: tuple = (0.0, 0.0)


@dataclass
class SynthConfig:
    """Regime-switching event generator standing in for tracking data.

    Each event's category sets the rate of the exponential wait until the
    next event and the mean of the spatial shift into events of that
    category.  Frames carry a ball (at the event location at event times,
    moving linearly in between) and players that gather around the location
    of the upcoming event.
    """

    n_sequences: int = 100
    categories: list = field(default_factory=lambda: [
        CategorySpec("fast", 4.0, (8.0, 0.0)),
        CategorySpec("slow", 0.5, (-6.0, 4.0)),
    ])
    transition: list = field(default_factory=lambda: [[0.7, 0.3], [0.3, 0.7]])
    initial: Optional[list] = None
    events_per_sequence: tuple = (6, 12)
    lead_in: float = 1.0
    shift_noise: float = 2.0
    frame_rate: float = 5.0
    feature_noise: float = 0.5
    n_players: int = 4
    player_spread: float = 3.0
    court: tuple = (94.0, 50.0)
    max_frames: Optional[int] = None
    seed: int = 0

    @classmethod
    def from_dict(cls, data: Mapping) -> "SynthConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError([f"unknown synth config key(s): {sorted(unknown)}"])
        if "categories" in data:
            cats = []
            for c in data["categories"]:
                if not isinstance(c, Mapping) or "name" not in c or "rate" not in c:
                    raise ConfigError(["each category needs a name and a rate"])
                cats.append(CategorySpec(str(c["name"]), c["rate"], tuple(c.get("shift", (0.0, 0.0)))))
            data["categories"] = cats
        for key in ("events_per_sequence", "court"):
            if key in data:
                data[key] = tuple(data[key])
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["categories"] = [{"name": c.name, "rate": c.rate, "shift": list(c.shift)} for c in self.categories]
        d["events_per_sequence"] = list(self.events_per_sequence)
        d["court"] = list(self.court)
        return d

    def validate(self) -> None:
        errs = []
        K = len(self.categories)
        if not isinstance(self.n_sequences, int) or self.n_sequences < 1:
            errs.append("n_sequences must be a positive integer")
        if K == 0:
            errs.append("at least one category is required")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            errs.append("category names must be unique")
        for c in self.categories:
            if not _finite(c.rate) or c.rate <= 0:
                errs.append(f"category {c.name!r}: rate must be positive")
            if len(c.shift) != 2 or not all(_finite(v) for v in c.shift):
                errs.append(f"category {c.name!r}: shift must be two finite numbers")
        T = np.asarray(self.transition, dtype=float) if self.transition is not None else None
        if T is None or T.shape != (K, K):
            errs.append(f"transition must be a {K}x{K} matrix")
        elif np.any(T < 0) or not np.allclose(T.sum(axis=1), 1.0, atol=1e-9):
            errs.append("transition rows must be nonnegative and sum to 1")
        if self.initial is not None:
            p = np.asarray(self.initial, dtype=float)
            if p.shape != (K,) or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
                errs.append("initial must be a probability vector over categories")
        lo, hi = self.events_per_sequence
        if not (isinstance(lo, int) and isinstance(hi, int) and 2 <= lo <= hi):
            errs.append("events_per_sequence must be integers with 2 <= min <= max")
        for name in ("lead_in", "shift_noise", "feature_noise", "player_spread"):
            v = getattr(self, name)
            if not _finite(v) or v < 0:
                errs.append(f"{name} must be a nonnegative number")
        if not _finite(self.frame_rate) or self.frame_rate <= 0:
            errs.append("frame_rate must be positive")
        if not isinstance(self.n_players, int) or self.n_players < 0:
            errs.append("n_players must be a nonnegative integer")
        if len(self.court) != 2 or not all(_finite(v) and v > 0 for v in self.court):
            errs.append("court must be two positive numbers")
        if self.max_frames is not None and (not isinstance(self.max_frames, int) or self.max_frames < 2):
            errs.append("max_frames must be an integer >= 2")
        if errs:
            raise ConfigError(errs)


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Sample a dataset from ``config``; identical seeds give identical data."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    K = len(config.categories)
    rates = np.array([c.rate for c in config.categories], dtype=float)
    shifts = np.array([c.shift for c in config.categories], dtype=float)
    trans = np.asarray(config.transition, dtype=float)
    init = np.full(K, 1.0 / K) if config.initial is None else np.asarray(config.initial, dtype=float)
    width, height = config.court
    lo_ev, hi_ev = config.events_per_sequence

    sequences = []
    for s in range(config.n_sequences):
        n_ev = int(rng.integers(lo_ev, hi_ev + 1))
        cats = [int(rng.choice(K, p=init))]
        locs = [np.array([rng.uniform(0.2, 0.8) * width, rng.uniform(0.2, 0.8) * height])]
        times = [float(config.lead_in)]
        for _ in range(n_ev - 1):
            wait = rng.exponential(1.0 / rates[cats[-1]])
            nxt = int(rng.choice(K, p=trans[cats[-1]]))
            shift = shifts[nxt] + rng.normal(0.0, config.shift_noise, size=2)
            loc = np.clip(locs[-1] + shift, [0.0, 0.0], [width, height])
            times.append(times[-1] + wait)
            cats.append(nxt)
            locs.append(loc)
        ev_times = np.asarray(times)
        ev_locs = np.asarray(locs)

        grid = np.arange(0.0, ev_times[-1], 1.0 / config.frame_rate)
        # drop grid frames that would collide with an event frame
        near = np.min(np.abs(grid[:, None] - ev_times[None, :]), axis=1) < 1e-9
        frame_times = np.union1d(grid[~near], ev_times)
        if config.max_frames is not None and frame_times.size > config.max_frames:
            keep_events = max(int(np.sum(ev_times <= frame_times[config.max_frames - 1])), 2)
            ev_times, ev_locs, cats = ev_times[:keep_events], ev_locs[:keep_events], cats[:keep_events]
            frame_times = frame_times[frame_times <= ev_times[-1]]
            if frame_times.size > config.max_frames:
                # two events must survive; drop the surplus grid frames instead
                fill = np.setdiff1d(frame_times, ev_times)[: config.max_frames - ev_times.size]
                frame_times = np.union1d(fill, ev_times)
        n_frames = frame_times.size

        ball = np.stack([np.interp(frame_times, ev_times, ev_locs[:, 0]),
                         np.interp(frame_times, ev_times, ev_locs[:, 1])], axis=1)
        ball += rng.normal(0.0, config.feature_noise, size=ball.shape)
        # upcoming event for every frame: first event strictly after it
        upcoming = np.minimum(np.searchsorted(ev_times, frame_times, side="right"), len(ev_times) - 1)
        offsets = rng.normal(0.0, config.player_spread, size=(len(ev_times), config.n_players, 2))
        players = ev_locs[upcoming][:, None, :] + offsets[upcoming]
        players += rng.normal(0.0, config.feature_noise, size=players.shape)
        bounds = np.array([width, height])
        ball = np.clip(ball, 0.0, bounds)
        players = np.clip(players, 0.0, bounds)

        feats = np.empty((n_frames, 2 * (config.n_players + 1)))
        for k in range(n_frames):
            pos = {"ball": ball[k]}
            pos.update({f"p{i:02d}": players[k, i] for i in range(config.n_players)})
            order = order_agents(pos, reference="ball")
            feats[k] = np.concatenate([pos[a] for a in order])
        frame_index = np.searchsorted(frame_times, ev_times)
        events = [Event(int(fi), float(frame_times[fi]), int(c), (float(x), float(y)))
                  for fi, c, (x, y) in zip(frame_index, cats, ev_locs)]
        sequences.append(EventSequence(f"syn{s:05d}", frame_times, feats, events, source="synthetic"))

    return Dataset(
        sequences,
        [c.name for c in config.categories],
        time_unit="s",
        distance_unit="ft",
        frame_rate=float(config.frame_rate),
        metadata={"generator": "synthetic", "config": config.to_dict(), "seed": config.seed},
    )
