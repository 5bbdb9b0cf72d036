"""Kill rules: which atom a minus particle arriving at x removes.

=====  ==============================================================
LG     closest atom at distance < radius (local greedy)
LR     uniform atom at distance < radius (local random)
LO     closest atom z >= x at distance < radius (local one-sided)
GG     closest atom anywhere (global greedy)
GO     closest atom z >= x anywhere (global one-sided)
=====  ==============================================================

Ties among argmin atoms (distances within 1e-12) and the LR draw are
resolved with the event's :class:`TieBreaker`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels as K
from .configuration import Configuration, is_dominated
from .geometry import PointLike, SpaceSpec, as_point

POLICY_KINDS = ("LG", "LR", "LO", "GG", "GO")
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    radius: float = 1.0
    # breakpoints of a partition of the interval; when set, a minus only kills
    # atoms in its own cell (the no-cross-kill comparison dynamics)
    cells: Optional[tuple[float, ...]] = field(default=None)

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICY_KINDS}")
        object.__setattr__(self, "kind", kind)
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))
        if self.cells is not None:
            object.__setattr__(self, "cells", tuple(float(c) for c in self.cells))

    @property
    def is_local(self) -> bool:
        return self.kind in ("LG", "LR", "LO")

    @property
    def is_one_sided(self) -> bool:
        return self.kind in ("LO", "GO")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "radius": self.radius}
        if self.cells is not None:
            out["cells"] = list(self.cells)
        return out

    @classmethod
    def from_dict(cls, data: dict | str) -> "PolicySpec":
        if isinstance(data, str):
            return cls(data)
        cells = data.get("cells")
        return cls(data["kind"], float(data.get("radius", 1.0)),
                   tuple(cells) if cells is not None else None)


def compatibility_errors(policy: PolicySpec, space: SpaceSpec) -> list[str]:
    errs = []
    if policy.kind == "GO" and space.periodic:
        errs.append("GO needs a coordinatewise order; the torus only supports the local LO variant")
    if policy.kind == "LO" and space.periodic and policy.radius > min(space.lengths) / 2:
        errs.append("LO on the torus needs radius <= half the smallest side (forward arc)")
    if policy.cells is not None:
        if space.kind != "interval":
            errs.append("cell partitions are only defined on an interval")
        elif (policy.cells[0] != 0.0 or not np.isclose(policy.cells[-1], space.lengths[0])
              or any(b <= a for a, b in zip(policy.cells, policy.cells[1:]))):
            errs.append("cells must be increasing breakpoints from 0 to the interval length")
    return errs


def check_compatible(policy: PolicySpec, space: SpaceSpec) -> None:
    errs = compatibility_errors(policy, space)
    if errs:
        raise ValueError("; ".join(errs))


class KernelArgs(NamedTuple):
    periodic: bool
    lengths: np.ndarray
    policy: int
    radius: float
    cells: np.ndarray


def kernel_args(policy: PolicySpec, space: SpaceSpec) -> KernelArgs:
    check_compatible(policy, space)
    cells = np.asarray(policy.cells if policy.cells is not None else (), dtype=np.float64)
    return KernelArgs(space.periodic, space.length_array, K.POLICY_CODES[policy.kind],
                      policy.radius, cells)


@dataclass(frozen=True)
class TieBreaker:
    """Deterministic randomness attached to one event.

    ``uniform(k)`` is the k-th draw of a counter-based stream keyed by the
    seed. ``priority(z, copy)`` is the draw attached to copy ``copy`` of an
    atom at ``z``; the kill rule picks the admissible copy of least priority.
    """

    seed: int

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)

    def uniform(self, k: int = 0) -> float:
        return float(K.stream_uniform(np.uint64(self.seed), k))

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform(k) for k in range(n)])

    def priority(self, z: PointLike, copy: int = 0) -> float:
        bits = np.ascontiguousarray(np.atleast_1d(np.asarray(z, dtype=np.float64))).view(np.uint64)
        return float(K.priority(np.uint64(self.seed), bits, copy))


def _buffer(config: Configuration) -> np.ndarray:
    return np.ascontiguousarray(config.points, dtype=np.float64).copy()


def select_target(
    policy: PolicySpec,
    space: SpaceSpec,
    config: Configuration,
    x: PointLike,
    tie: TieBreaker,
) -> Optional[np.ndarray]:
    """Location of the atom a minus at ``x`` kills, or None when nothing is admissible."""
    args = kernel_args(policy, space)
    p = as_point(space, x)
    pts = _buffer(config)
    i = K.select_row(pts, pts.shape[0], p, np.uint64(tie.seed), *args)
    return None if i < 0 else pts[i].copy()


def coupled_select(
    policy: PolicySpec,
    space: SpaceSpec,
    P: Configuration,
    Q: Configuration,
    x: PointLike,
    tie: TieBreaker,
) -> tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """Joint kill for P << Q that keeps P << Q after both removals.

    Q's target is the least-priority admissible copy. When that copy is one
    of P's copies (P << Q, so P holds the lowest-ranked copies of each
    location) it is also P's least-priority admissible copy and both sides
    remove it; otherwise Q removes a copy P does not own and P removes its
    own natural target. Each side's marginal is exactly ``select_target``.
    """
    if not is_dominated(P, Q):
        raise ValueError("coupled_select requires P << Q")
    return (select_target(policy, space, P, x, tie), select_target(policy, space, Q, x, tie))


def admissible_atoms(
    policy: PolicySpec, space: SpaceSpec, config: Configuration, x: PointLike
) -> list[tuple[tuple[float, ...], int]]:
    """Atoms a minus at ``x`` could kill under ``policy``, ignoring the argmin."""
    args = kernel_args(policy, space)
    p = as_point(space, x)
    keep = [K.admissible_distance(*args, p, z) >= 0.0 for z in config.points]
    return Configuration._from_sorted(config.points[np.asarray(keep, dtype=bool)].copy()).atoms() \
        if config.total_mass else []
