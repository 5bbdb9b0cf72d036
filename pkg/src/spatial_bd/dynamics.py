"""Driving sequences and the forward recursion.

An :class:`EventHistory` is a deterministic, index-addressable i.i.d. stream
of arrivals ``(kind, location, tie_seed)`` over all integers. Event ``i`` is
generated from block ``i // block_size`` only, so deep negative indices can be
addressed directly; shifting the history by one index plays the role of the
stationary shift of the driving sequence.
"""
from __future__ import annotations

import csv
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels as K
from .configuration import Configuration
from .geometry import (
    LocationDensity,
    SpaceSpec,
    Uniform,
    as_point,
    check_density,
    density_from_dict,
    distances,
    sample_locations,
)
from .policies import PolicySpec, TieBreaker, kernel_args, select_target

BLOCK_SIZE = 1 << 16
PLUS = "+"
MINUS = "-"


@dataclass(frozen=True)
class Event:
    kind: str
    location: tuple[float, ...]
    tie_seed: int

    @property
    def is_plus(self) -> bool:
        return self.kind == PLUS

    @property
    def tie(self) -> TieBreaker:
        return TieBreaker(self.tie_seed)


@dataclass(frozen=True)
class StreamSpec:
    """Law of the driving sequence: P(plus) and the location density.

    Built from ``p_plus`` directly or from arrival rates via :meth:`from_rates`.
    """

    p_plus: float
    density: LocationDensity = field(default_factory=Uniform)
    seed: int = 0
    lambda_plus: Optional[float] = None
    lambda_minus: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.p_plus <= 1.0:
            raise ValueError(f"p_plus must lie in [0, 1], got {self.p_plus}")
        object.__setattr__(self, "seed", int(self.seed) & ((1 << 64) - 1))

    @classmethod
    def from_rates(cls, lambda_plus: float, lambda_minus: float, **kw) -> "StreamSpec":
        if lambda_plus <= 0 or lambda_minus <= 0:
            raise ValueError("arrival rates must be positive")
        return cls(lambda_plus / (lambda_plus + lambda_minus), lambda_plus=lambda_plus,
                   lambda_minus=lambda_minus, **kw)

    def with_seed(self, seed: int) -> "StreamSpec":
        return StreamSpec(self.p_plus, self.density, seed, self.lambda_plus, self.lambda_minus)

    def to_dict(self) -> dict:
        out = {"p_plus": self.p_plus, "density": self.density.to_dict(), "seed": self.seed}
        if self.lambda_plus is not None:
            out.update(lambda_plus=self.lambda_plus, lambda_minus=self.lambda_minus)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "StreamSpec":
        density = density_from_dict(data.get("density"))
        seed = int(data.get("seed", 0))
        if "lambda_plus" not in data and "lambda_minus" not in data:
            return cls(float(data["p_plus"]), density, seed)
        return cls.from_rates(float(data["lambda_plus"]), float(data["lambda_minus"]),
                              density=density, seed=seed)


class EventBlock(NamedTuple):
    kinds: np.ndarray  # int8, 1 = plus
    locations: np.ndarray  # (n, d) float64
    ties: np.ndarray  # uint64

    def __len__(self) -> int:
        return self.kinds.shape[0]


def _zigzag(b: int) -> int:
    return 2 * b if b >= 0 else -2 * b - 1


class EventHistory:
    """Lazily generated, cached i.i.d. event stream indexed by all integers."""

    def __init__(self, stream: StreamSpec, space: SpaceSpec, block_size: int = BLOCK_SIZE,
                 cache_blocks: int = 32, offset: int = 0):
        check_density(space, stream.density)
        self.stream = stream
        self.space = space
        self.block_size = int(block_size)
        self.offset = int(offset)
        self._cache_blocks = cache_blocks
        self._cache: OrderedDict[int, EventBlock] = OrderedDict()

    def shifted(self, k: int) -> "EventHistory":
        """The history seen from index k: ``shifted(k).event_at(i) == event_at(i + k)``."""
        view = EventHistory.__new__(EventHistory)
        view.__dict__.update(self.__dict__)
        view.offset = self.offset + int(k)
        return view

    def _block(self, b: int) -> EventBlock:
        blk = self._cache.get(b)
        if blk is not None:
            self._cache.move_to_end(b)
            return blk
        ss = np.random.SeedSequence(self.stream.seed, spawn_key=(_zigzag(b),))
        rng = np.random.default_rng(ss)
        n = self.block_size
        kinds = (rng.random(n) < self.stream.p_plus).astype(np.int8)
        locs = np.ascontiguousarray(sample_locations(self.space, self.stream.density, rng, n))
        ties = rng.integers(0, np.iinfo(np.uint64).max, size=n, dtype=np.uint64, endpoint=True)
        blk = EventBlock(kinds, locs, ties)
        self._cache[b] = blk
        if len(self._cache) > self._cache_blocks:
            self._cache.popitem(last=False)
        return blk

    def events(self, lo: int, hi: int) -> EventBlock:
        """Events with indices lo, ..., hi - 1 as contiguous arrays."""
        if hi < lo:
            raise ValueError("hi must be >= lo")
        lo += self.offset
        hi += self.offset
        B = self.block_size
        parts = []
        i = lo
        while i < hi:
            b = i // B
            start = i - b * B
            stop = min(hi - b * B, B)
            blk = self._block(b)
            parts.append((blk.kinds[start:stop], blk.locations[start:stop], blk.ties[start:stop]))
            i = (b + 1) * B
        if not parts:
            d = self.space.dim
            return EventBlock(np.zeros(0, np.int8), np.zeros((0, d)), np.zeros(0, np.uint64))
        if len(parts) == 1:
            k, l, t = parts[0]
            return EventBlock(k, np.ascontiguousarray(l), t)
        return EventBlock(*(np.ascontiguousarray(np.concatenate(c)) for c in zip(*parts)))

    def iter_blocks(self, lo: int, hi: int, max_len: Optional[int] = None):
        """Yield (start_index, EventBlock) chunks covering [lo, hi)."""
        step = max_len or self.block_size
        i = lo
        while i < hi:
            j = min(hi, i + step)
            yield i, self.events(i, j)
            i = j

    def event_at(self, index: int) -> Event:
        blk = self.events(index, index + 1)
        return Event(PLUS if blk.kinds[0] else MINUS,
                     tuple(float(v) for v in blk.locations[0]), int(blk.ties[0]))


def replica_seed(global_seed: int, k: int) -> int:
    """Stable 64-bit stream seed of replica k."""
    state = np.random.SeedSequence([int(global_seed) & ((1 << 64) - 1), int(k)]).generate_state(
        2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


# ----------------------------------------------------------------- stepping


def step(config: Configuration, event: Event, policy: PolicySpec, space: SpaceSpec) -> Configuration:
    """One application of the forward recursion."""
    if event.is_plus:
        return config.add_atom(as_point(space, event.location))
    target = select_target(policy, space, config, event.location, event.tie)
    if target is None:
        return config
    return config.remove_atom(target)


@dataclass(frozen=True)
class Region:
    """Counting region: ``ball`` (centre, r), ``box`` (lower, upper) or ``strip`` (delta).

    A strip is the set of points with at least one coordinate below ``delta``,
    a neighbourhood of the lower boundary.
    """

    kind: str
    center: tuple[float, ...] = ()
    r: float = 0.0
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()
    delta: float = 0.0
    name: str = ""

    @classmethod
    def ball(cls, center, r, name=""):
        return cls("ball", center=tuple(np.atleast_1d(center).astype(float)), r=float(r), name=name)

    @classmethod
    def box(cls, lower, upper, name=""):
        return cls("box", lower=tuple(np.atleast_1d(lower).astype(float)),
                   upper=tuple(np.atleast_1d(upper).astype(float)), name=name)

    @classmethod
    def strip(cls, delta, name=""):
        return cls("strip", delta=float(delta), name=name)

    @property
    def label(self) -> str:
        return self.name or self.kind

    def kernel_row(self, dim: int) -> tuple[int, np.ndarray]:
        par = np.zeros(2 * dim + 1)
        if self.kind == "ball":
            par[:dim] = self.center
            par[dim] = self.r
            return K.REGION_BALL, par
        if self.kind == "box":
            par[:dim] = self.lower
            par[dim:2 * dim] = self.upper
            return K.REGION_BOX, par
        if self.kind == "strip":
            par[0] = self.delta
            return K.REGION_STRIP, par
        raise ValueError(f"unknown region kind {self.kind!r}")

    def mask(self, points: np.ndarray, space: SpaceSpec) -> np.ndarray:
        """Membership of each row; same conventions as the compiled counters."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, space.dim)
        if self.kind == "ball":
            return distances(space, pts, np.asarray(self.center)) < self.r
        if self.kind == "box":
            return np.all((pts >= np.asarray(self.lower)) & (pts <= np.asarray(self.upper)), axis=1)
        if self.kind == "strip":
            return np.any(pts < self.delta, axis=1)
        raise ValueError(f"unknown region kind {self.kind!r}")

    def count(self, config: Configuration, space: SpaceSpec) -> int:
        if config.total_mass == 0:
            return 0
        return int(self.mask(config.points, space).sum())

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "ball":
            out.update(center=list(self.center), r=self.r)
        elif self.kind == "box":
            out.update(lower=list(self.lower), upper=list(self.upper))
        else:
            out.update(delta=self.delta)
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Region":
        kind = data["kind"]
        name = data.get("name", "")
        if kind == "ball":
            return cls.ball(data["center"], data["r"], name)
        if kind == "box":
            return cls.box(data["lower"], data["upper"], name)
        if kind == "strip":
            return cls.strip(data["delta"], name)
        raise ValueError(f"unknown region kind {kind!r}")


def _region_arrays(regions: Sequence[Region], dim: int):
    if not regions:
        return np.zeros(0, np.int64), np.zeros((0, 2 * dim + 1))
    rows = [r.kernel_row(dim) for r in regions]
    return (np.array([k for k, _ in rows], dtype=np.int64),
            np.ascontiguousarray(np.vstack([p for _, p in rows])))


class StepSummaries(NamedTuple):
    """Per-step records of a block of events."""

    indices: np.ndarray
    kinds: np.ndarray
    locations: np.ndarray
    masses: np.ndarray
    counts: np.ndarray  # (steps, n_regions)


class Observer:
    """Receives per-step summaries after every step of a forward run.

    Summaries are delivered in blocks for speed. Set ``snapshots = True`` to
    receive full configurations through :meth:`on_snapshot` instead (slow;
    one Python call per step).
    """

    snapshots = False

    def on_steps(self, summaries: StepSummaries) -> None:
        pass

    def on_snapshot(self, index: int, config: Configuration) -> None:
        pass


class CallbackObserver(Observer):
    """Adapts ``fn(index, mass, counts)`` to the observer protocol."""

    def __init__(self, fn: Callable[[int, int, np.ndarray], None]):
        self.fn = fn

    def on_steps(self, s: StepSummaries) -> None:
        for i in range(len(s.indices)):
            self.fn(int(s.indices[i]), int(s.masses[i]), s.counts[i])


class TrajectoryRecorder(Observer):
    """Keeps every step's summary in memory."""

    def __init__(self):
        self._parts: list[StepSummaries] = []

    def on_steps(self, s: StepSummaries) -> None:
        self._parts.append(s)

    @property
    def summaries(self) -> StepSummaries:
        if not self._parts:
            return StepSummaries(*(np.zeros(0) for _ in range(5)))
        return StepSummaries(*(np.concatenate(c) for c in zip(*self._parts)))


class CSVTrajectoryWriter(Observer):
    """Streams step summaries as CSV.

    Columns: step, kind, x0..x{d-1}, mass, then one column per region.
    """

    def __init__(self, fh, dim: int, region_labels: Sequence[str] = ()):
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(["step", "kind"] + [f"x{k}" for k in range(dim)] + ["mass"]
                             + list(region_labels))

    def on_steps(self, s: StepSummaries) -> None:
        for i in range(len(s.indices)):
            self.writer.writerow(
                [int(s.indices[i]), PLUS if s.kinds[i] else MINUS]
                + [repr(float(v)) for v in s.locations[i]]
                + [int(s.masses[i])] + [int(c) for c in s.counts[i]]
            )


class Engine:
    """Mutable working state driven by the compiled step kernel."""

    def __init__(self, policy: PolicySpec, space: SpaceSpec,
                 initial: Optional[Configuration] = None, regions: Sequence[Region] = ()):
        self.policy = policy
        self.space = space
        self.args = kernel_args(policy, space)
        self.regions = tuple(regions)
        self._reg_kind, self._reg_par = _region_arrays(self.regions, space.dim)
        init = initial if initial is not None else Configuration.empty(space.dim)
        if init.dim != space.dim:
            raise ValueError("initial configuration dimension does not match the space")
        self.n = init.total_mass
        self.pts = np.zeros((max(16, 2 * self.n), space.dim))
        self.pts[: self.n] = init.points
        self.counts = np.zeros(len(self.regions), dtype=np.int64)
        K.region_counts(self.pts, self.n, self._reg_kind, self._reg_par, space.periodic,
                        self.args.lengths, self.counts)

    def _reserve(self, extra: int) -> None:
        need = self.n + extra
        if need > self.pts.shape[0]:
            cap = max(need, 2 * self.pts.shape[0])
            grown = np.zeros((cap, self.space.dim))
            grown[: self.n] = self.pts[: self.n]
            self.pts = grown

    def run_block(self, block: EventBlock, record: bool = False):
        """Apply a block of events; returns (last_empty_position, masses, counts)."""
        m = len(block)
        self._reserve(int(block.kinds.sum()) if m else 0)
        if record:
            out_mass = np.empty(m, dtype=np.int64)
            out_counts = np.empty((m, len(self.regions)), dtype=np.int64)
        else:
            out_mass = np.zeros(0, dtype=np.int64)
            out_counts = np.zeros((0, len(self.regions)), dtype=np.int64)
        self.n, last_empty = K.run(self.pts, self.n, block.kinds, block.locations, block.ties,
                                   *self.args, self._reg_kind, self._reg_par, self.counts,
                                   out_mass, out_counts)
        return last_empty, out_mass, out_counts

    def run(self, history: EventHistory, start: int, n_events: int,
            observers: Sequence[Observer] = ()) -> int:
        """Run events start .. start + n_events - 1.

        Returns the last event index after which the configuration was
        empty, or None if it never was.
        """
        last_empty = None
        snap = [o for o in observers if o.snapshots]
        fast = [o for o in observers if not o.snapshots]
        for i0, blk in history.iter_blocks(start, start + n_events):
            if snap:
                for k in range(len(blk)):
                    sub = EventBlock(blk.kinds[k:k + 1], blk.locations[k:k + 1], blk.ties[k:k + 1])
                    le, masses, counts = self.run_block(sub, record=bool(fast))
                    if le >= 0:
                        last_empty = i0 + k
                    cfg = self.configuration()
                    for o in snap:
                        o.on_snapshot(i0 + k, cfg)
                    if fast:
                        s = StepSummaries(np.array([i0 + k]), sub.kinds, sub.locations,
                                          masses, counts)
                        for o in fast:
                            o.on_steps(s)
                continue
            le, masses, counts = self.run_block(blk, record=bool(fast))
            if le >= 0:
                last_empty = i0 + le
            if fast:
                s = StepSummaries(np.arange(i0, i0 + len(blk)), blk.kinds, blk.locations,
                                  masses, counts)
                for o in fast:
                    o.on_steps(s)
        return last_empty

    @property
    def mass(self) -> int:
        return self.n

    def configuration(self) -> Configuration:
        return Configuration(self.pts[: self.n].copy(), dim=self.space.dim)


def simulate_forward(
    initial: Configuration,
    n_events: int,
    history: EventHistory,
    start_index: int,
    policy: PolicySpec,
    space: SpaceSpec,
    observers: Sequence[Observer] = (),
    regions: Sequence[Region] = (),
) -> Configuration:
    """Apply the events ``start_index .. start_index + n_events - 1`` to ``initial``."""
    if n_events < 0:
        raise ValueError("n_events must be nonnegative")
    eng = Engine(policy, space, initial, regions)
    eng.run(history, start_index, n_events, observers)
    return eng.configuration()


def palm_time_average(values: Sequence[float], lambda_plus: float, lambda_minus: float,
                      rng: np.random.Generator) -> float:
    """Continuous-time average of a functional observed after each arrival.

    Each post-event value is held for an independent Exp(lambda_plus +
    lambda_minus) time; the result is the time-weighted mean.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty trajectory: total elapsed time is zero")
    if not np.all(np.isfinite(v)):
        raise ValueError("functional values must be finite")
    w = rng.exponential(1.0 / (lambda_plus + lambda_minus), size=v.size)
    # centring on the first value keeps a constant functional exact
    return float(v[0] + np.dot(w, v - v[0]) / w.sum())
