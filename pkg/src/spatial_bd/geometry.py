"""Compact state spaces, their metrics and location laws.

Three kinds of space are supported:

* ``torus``    -- product of circles R/L_i Z, Euclidean metric with wrap-around,
                  the only space with a group structure (translations).
* ``interval`` -- [0, T], kept distinct from a 1-d box because it has a boundary.
* ``box``      -- product of [0, L_i].

Points are plain float64 numpy arrays of shape (d,).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

PointLike = Union[float, Sequence[float], np.ndarray]

SPACE_KINDS = ("torus", "interval", "box")


@dataclass(frozen=True)
class SpaceSpec:
    kind: str
    lengths: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in SPACE_KINDS:
            raise ValueError(f"unknown space kind {self.kind!r}")
        lengths = tuple(float(v) for v in self.lengths)
        if len(lengths) < 1:
            raise ValueError("a space needs at least one dimension")
        if any(not np.isfinite(v) or v <= 0 for v in lengths):
            raise ValueError(f"lengths must be strictly positive, got {lengths}")
        if self.kind == "interval" and len(lengths) != 1:
            raise ValueError("an interval is one-dimensional")
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def torus(cls, *lengths: float) -> "SpaceSpec":
        return cls("torus", _flatten(lengths))

    @classmethod
    def interval(cls, length: float) -> "SpaceSpec":
        return cls("interval", (length,))

    @classmethod
    def box(cls, *lengths: float) -> "SpaceSpec":
        return cls("box", _flatten(lengths))

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def length_array(self) -> np.ndarray:
        return np.asarray(self.lengths, dtype=np.float64)

    def contains(self, x: PointLike) -> bool:
        p = as_point(self, x)
        upper = self.length_array
        if self.periodic:
            return bool(np.all((p >= 0) & (p < upper)))
        return bool(np.all((p >= 0) & (p <= upper)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lengths": list(self.lengths)}

    @classmethod
    def from_dict(cls, data: dict) -> "SpaceSpec":
        kind = data["kind"]
        if kind == "interval":
            length = data.get("length", data.get("lengths"))
            if isinstance(length, (list, tuple)):
                (length,) = length
            return cls.interval(length)
        return cls(kind, tuple(data["lengths"]))


def _flatten(lengths) -> tuple[float, ...]:
    if len(lengths) == 1 and isinstance(lengths[0], (list, tuple, np.ndarray)):
        return tuple(lengths[0])
    return tuple(lengths)


def as_point(space: SpaceSpec, x: PointLike) -> np.ndarray:
    """Coerce ``x`` to a float64 point of the space's dimension."""
    p = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if p.ndim != 1 or p.shape[0] != space.dim:
        raise ValueError(f"point of shape {p.shape} does not match a {space.dim}-d space")
    return p


# ---------------------------------------------------------------- densities


@dataclass(frozen=True)
class Uniform:
    """Normalized volume measure (Haar measure on the torus)."""

    def to_dict(self) -> dict:
        return {"kind": "uniform"}


@dataclass(frozen=True)
class PiecewiseConstant:
    """Density on an interval, constant on each segment between breakpoints.

    ``weights[k]`` is the (unnormalized) density level on
    ``[breakpoints[k], breakpoints[k+1])``.
    """

    breakpoints: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        w = tuple(float(v) for v in self.weights)
        if len(bp) < 2 or len(w) != len(bp) - 1:
            raise ValueError("need k+1 breakpoints for k weights")
        if bp[0] != 0.0 or any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must start at 0 and be strictly increasing")
        if any(v < 0 or not np.isfinite(v) for v in w) or sum(w) == 0:
            raise ValueError("weights must be nonnegative and not all zero")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "weights", w)

    @property
    def segment_masses(self) -> np.ndarray:
        widths = np.diff(self.breakpoints)
        mass = widths * np.asarray(self.weights)
        return mass / mass.sum()

    def pdf(self, x: float) -> float:
        widths = np.diff(self.breakpoints)
        norm = float(np.dot(widths, self.weights))
        k = int(np.searchsorted(self.breakpoints, x, side="right")) - 1
        k = min(max(k, 0), len(self.weights) - 1)
        return self.weights[k] / norm

    def to_dict(self) -> dict:
        return {
            "kind": "piecewise",
            "breakpoints": list(self.breakpoints),
            "weights": list(self.weights),
        }


LocationDensity = Union[Uniform, PiecewiseConstant]


def density_from_dict(data: dict | None) -> LocationDensity:
    if not data or data.get("kind", "uniform") == "uniform":
        return Uniform()
    if data["kind"] in ("piecewise", "piecewise_constant"):
        return PiecewiseConstant(tuple(data["breakpoints"]), tuple(data["weights"]))
    raise ValueError(f"unknown density kind {data['kind']!r}")


def check_density(space: SpaceSpec, density: LocationDensity) -> None:
    if isinstance(density, PiecewiseConstant):
        if space.kind != "interval":
            raise ValueError("piecewise-constant densities are only defined on an interval")
        if not np.isclose(density.breakpoints[-1], space.lengths[0]):
            raise ValueError("last breakpoint must equal the interval length")


def sample_locations(
    space: SpaceSpec, density: LocationDensity, rng: np.random.Generator, size: int
) -> np.ndarray:
    """Draw ``size`` i.i.d. locations, returned as a (size, d) array."""
    check_density(space, density)
    if isinstance(density, PiecewiseConstant):
        bp = np.asarray(density.breakpoints)
        cum = np.cumsum(density.segment_masses)
        cum[-1] = 1.0
        seg = np.searchsorted(cum, rng.random(size), side="right")
        seg = np.minimum(seg, len(density.weights) - 1)
        lo, hi = bp[seg], bp[seg + 1]
        return (lo + (hi - lo) * rng.random(size)).reshape(size, 1)
    return rng.random((size, space.dim)) * space.length_array


def sample_location(
    space: SpaceSpec, density: LocationDensity, rng: np.random.Generator
) -> np.ndarray:
    return sample_locations(space, density, rng, 1)[0]


# ------------------------------------------------------------------ metric


def distance(space: SpaceSpec, x: PointLike, y: PointLike) -> float:
    return float(distances(space, np.atleast_2d(as_point(space, y)), as_point(space, x))[0])


def distances(space: SpaceSpec, points: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Distances from ``x`` to each row of ``points``."""
    diff = np.abs(np.asarray(points, dtype=np.float64) - x)
    if space.periodic:
        diff = np.minimum(diff, space.length_array - diff)
    if diff.shape[1] == 1:
        return diff[:, 0]
    return np.sqrt(np.sum(diff * diff, axis=1))


def translate(space: SpaceSpec, x: PointLike, shift: PointLike) -> np.ndarray:
    """Group translation on the torus, coordinatewise addition modulo the lengths."""
    if not space.periodic:
        raise ValueError(f"translations need a group structure; {space.kind} has none")
    lengths = space.length_array
    out = np.mod(as_point(space, x) + as_point(space, shift), lengths)
    # np.mod can round up to the length itself for tiny negative sums
    out[out >= lengths] = 0.0
    return out


def leq_orthant(x: PointLike, y: PointLike) -> bool:
    """True iff y >= x coordinate by coordinate."""
    a = np.atleast_1d(np.asarray(x, dtype=np.float64))
    b = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(b >= a))


def forward_displacement(space: SpaceSpec, x: PointLike, y: PointLike) -> np.ndarray:
    """Coordinatewise forward (increasing) arc lengths from x to y on the torus."""
    if not space.periodic:
        raise ValueError("forward arcs are only defined on the torus")
    return np.mod(as_point(space, y) - as_point(space, x), space.length_array)
