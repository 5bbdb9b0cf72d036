"""Finite point configurations (atomic measures with integer multiplicities)."""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from typing import Iterable, Iterator, Optional

import numpy as np

from .geometry import PointLike, SpaceSpec, as_point, distances, forward_displacement


class Configuration:
    """Immutable multiset of points.

    Atoms are kept as rows of a lexicographically sorted, read-only
    (mass, d) array; an atom of multiplicity k appears as k identical rows.
    Every mutating operation returns a new configuration.
    """

    __slots__ = ("_pts",)

    def __init__(self, points: Iterable[PointLike] | np.ndarray = (), dim: Optional[int] = None):
        arr = np.asarray(points if not isinstance(points, Configuration) else points.points,
                         dtype=np.float64)
        if arr.size == 0:
            if dim is None:
                dim = arr.shape[1] if arr.ndim == 2 else 1
            arr = np.zeros((0, dim))
        elif arr.ndim == 1:
            # a flat sequence is a list of 1-d points
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ValueError(f"expected an (n, d) array of points, got shape {arr.shape}")
        if dim is not None and arr.shape[1] != dim:
            raise ValueError(f"points are {arr.shape[1]}-d, expected {dim}-d")
        arr = _lexsorted(arr)
        arr.setflags(write=False)
        self._pts = arr

    @classmethod
    def empty(cls, dim: int = 1) -> "Configuration":
        return cls(np.zeros((0, dim)))

    @classmethod
    def _from_sorted(cls, arr: np.ndarray) -> "Configuration":
        obj = cls.__new__(cls)
        arr.setflags(write=False)
        obj._pts = arr
        return obj

    # -- basic accessors

    @property
    def points(self) -> np.ndarray:
        return self._pts

    @property
    def dim(self) -> int:
        return self._pts.shape[1]

    @property
    def total_mass(self) -> int:
        return self._pts.shape[0]

    def __len__(self) -> int:
        return self.total_mass

    def __bool__(self) -> bool:
        return self.total_mass > 0

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self._pts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self._pts.shape == other._pts.shape and bool(np.array_equal(self._pts, other._pts))

    def __hash__(self) -> int:
        return hash((self._pts.shape, self._pts.tobytes()))

    def __repr__(self) -> str:
        body = ", ".join(
            (_fmt(p) if m == 1 else f"{_fmt(p)} x{m}") for p, m in self.atoms()
        )
        return f"Configuration({{{body}}})"

    def atoms(self) -> list[tuple[tuple[float, ...], int]]:
        """Distinct atoms with their multiplicities, in lexicographic order."""
        out: list[tuple[tuple[float, ...], int]] = []
        for row in self._pts:
            key = tuple(float(v) for v in row)
            if out and out[-1][0] == key:
                out[-1] = (key, out[-1][1] + 1)
            else:
                out.append((key, 1))
        return out

    def multiplicity(self, x: PointLike) -> int:
        p = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if self.total_mass == 0:
            return 0
        return int(np.sum(np.all(self._pts == p, axis=1)))

    # -- mutation (value semantics)

    def add_atom(self, x: PointLike) -> "Configuration":
        p = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if p.shape != (self.dim,):
            raise ValueError(f"point of shape {p.shape} does not fit a {self.dim}-d configuration")
        return Configuration(np.vstack([self._pts, p]))

    def remove_atom(self, x: PointLike) -> "Configuration":
        p = np.atleast_1d(np.asarray(x, dtype=np.float64))
        hits = np.flatnonzero(np.all(self._pts == p, axis=1)) if self.total_mass else []
        if len(hits) == 0:
            raise KeyError(f"no atom at {_fmt(p)} to remove")
        return Configuration._from_sorted(np.delete(self._pts, hits[0], axis=0))

    # -- queries

    def ball_atoms(self, space: SpaceSpec, x: PointLike, r: float) -> list[tuple[tuple[float, ...], int]]:
        """Atoms at distance strictly less than r from x, with multiplicities."""
        centre = as_point(space, x)
        if self.total_mass == 0:
            return []
        inside = distances(space, self._pts, centre) < r
        return Configuration._from_sorted(self._pts[inside].copy()).atoms()

    def count_in_ball(self, space: SpaceSpec, x: PointLike, r: float) -> int:
        if self.total_mass == 0:
            return 0
        return int(np.sum(distances(space, self._pts, as_point(space, x)) < r))

    def count_in_box(self, lower: PointLike, upper: PointLike) -> int:
        lo = np.atleast_1d(np.asarray(lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(upper, dtype=np.float64))
        if self.total_mass == 0:
            return 0
        return int(np.sum(np.all((self._pts >= lo) & (self._pts <= hi), axis=1)))

    def restrict(self, mask_fn) -> "Configuration":
        """Sub-configuration of atoms whose row satisfies ``mask_fn(points) -> bool array``."""
        if self.total_mass == 0:
            return self
        keep = np.asarray(mask_fn(self._pts), dtype=bool)
        return Configuration._from_sorted(self._pts[keep].copy())

    # -- serialization

    def to_records(self) -> list[dict]:
        return [
            {**{f"x{k}": v for k, v in enumerate(p)}, "multiplicity": m}
            for p, m in self.atoms()
        ]

    def to_csv(self, fh=None) -> str:
        """Write one row per distinct atom: x0..x{d-1}, multiplicity."""
        buf = io.StringIO() if fh is None else fh
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{k}" for k in range(self.dim)] + ["multiplicity"])
        for p, m in self.atoms():
            writer.writerow([repr(v) for v in p] + [m])
        return buf.getvalue() if fh is None else ""

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "atoms": self.to_records()})

    @classmethod
    def from_records(cls, records: Iterable[dict], dim: int) -> "Configuration":
        rows = []
        for rec in records:
            p = [float(rec[f"x{k}"]) for k in range(dim)]
            rows.extend([p] * int(rec.get("multiplicity", 1)))
        return cls(np.asarray(rows, dtype=np.float64).reshape(-1, dim), dim=dim)

    @classmethod
    def from_json(cls, text: str) -> "Configuration":
        data = json.loads(text)
        return cls.from_records(data["atoms"], data["dim"])

    @classmethod
    def from_csv(cls, text: str) -> "Configuration":
        """Inverse of :meth:`to_csv`; lines starting with '#' are skipped."""
        body = "".join(line for line in io.StringIO(text) if not line.startswith("#"))
        reader = csv.DictReader(io.StringIO(body))
        records = list(reader)
        dim = len(reader.fieldnames or []) - 1
        return cls.from_records(records, dim)


def _lexsorted(arr: np.ndarray) -> np.ndarray:
    if arr.shape[0] <= 1:
        return np.array(arr, dtype=np.float64, copy=True)
    order = np.lexsort(arr.T[::-1])
    return np.ascontiguousarray(arr[order])


def _fmt(p) -> str:
    vals = [f"{float(v):g}" for v in np.atleast_1d(p)]
    return vals[0] if len(vals) == 1 else "(" + ", ".join(vals) + ")"


def add_atom(config: Configuration, x: PointLike) -> Configuration:
    return config.add_atom(x)


def remove_atom(config: Configuration, x: PointLike) -> Configuration:
    return config.remove_atom(x)


def ball_atoms(config: Configuration, space: SpaceSpec, x: PointLike, r: float):
    return config.ball_atoms(space, x, r)


def is_dominated(P: Configuration, Q: Configuration) -> bool:
    """P << Q: every atom of P appears in Q with at least the same multiplicity."""
    if P.total_mass > Q.total_mass:
        return False
    cq = Counter(map(tuple, Q.points.tolist()))
    cp = Counter(map(tuple, P.points.tolist()))
    return all(cq[k] >= m for k, m in cp.items())


def has_point_in_orthant(
    config: Configuration,
    x: PointLike,
    space: Optional[SpaceSpec] = None,
    radius: Optional[float] = None,
) -> bool:
    """True iff some atom z satisfies z >= x coordinatewise, i.e. x lies outside
    the dead zone of ``config``.

    On the torus the orthant is replaced by the forward arc of length
    ``radius`` (the local one-sided neighbourhood); a radius is then required.
    """
    p = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if space is not None and space.periodic:
        if radius is None:
            raise ValueError("the torus has no orthant order; pass the one-sided radius")
        if config.total_mass == 0:
            return False
        fwd = np.array([forward_displacement(space, p, z) for z in config.points])
        return bool(np.any(np.sqrt(np.sum(fwd * fwd, axis=1)) < radius))
    if config.total_mass == 0:
        return False
    above = np.all(config.points >= p, axis=1)
    if radius is not None:
        d = np.sqrt(np.sum((config.points - p) ** 2, axis=1))
        above &= d < radius
    return bool(np.any(above))
