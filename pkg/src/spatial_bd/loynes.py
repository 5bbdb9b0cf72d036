"""Backward (Loynes) iteration and stationary sampling.

``backward_iterate(n)`` runs the recursion from the empty configuration over
events -n .. -1 of a fixed history. The iterates increase with n for the
domination order, and their limit is the minimal stationary configuration.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Sequence


from . import _kernels as K
from .configuration import Configuration
from .dynamics import Engine, Event, EventHistory, Region, simulate_forward, step
from .geometry import SpaceSpec
from .policies import PolicySpec

DEFAULT_MAX_DEPTH = 1 << 20


class Certificate(str, enum.Enum):
    EMPTY_REGENERATION = "EmptyRegeneration"
    DOUBLING_FIXPOINT = "DoublingFixpoint"
    NOT_CONVERGED = "NotConverged"

    @property
    def exact(self) -> bool:
        return self is Certificate.EMPTY_REGENERATION


@dataclass(frozen=True)
class StationarySample:
    """Outcome of the doubling search.

    ``config`` is the backward iterate at ``depth_used`` (restricted to
    ``window`` when one was given). For an EmptyRegeneration certificate,
    ``at_index`` is the event index after which the run from ``-depth_used``
    was last empty; every iterate with depth in
    ``[-at_index - 1, depth_used]`` equals ``config``.
    """

    config: Configuration
    depth_used: int
    certificate: Certificate
    at_index: Optional[int] = None
    window: Optional[Region] = None
    full_mass: int = 0
    # whether the iterate at half the depth already matched; lets callers
    # compare the heuristic fixpoint test against emptiness certificates
    fixpoint_agrees: Optional[bool] = None

    @property
    def stable_from(self) -> Optional[int]:
        """Smallest depth known to give the same iterate, when certified by emptiness."""
        return None if self.at_index is None else -self.at_index - 1

    def to_dict(self) -> dict:
        out = {
            "depth_used": self.depth_used,
            "certificate": self.certificate.value,
            "heuristic": self.certificate is Certificate.DOUBLING_FIXPOINT,
            "full_mass": self.full_mass,
        }
        if self.fixpoint_agrees is not None:
            out["fixpoint_agrees"] = self.fixpoint_agrees
        if self.at_index is not None:
            out["at_index"] = self.at_index
        if self.window is not None:
            out["window"] = self.window.to_dict()
        return out


def backward_iterate(history: EventHistory, policy: PolicySpec, space: SpaceSpec,
                     n: int) -> Configuration:
    """Configuration after running events -n .. -1 from empty."""
    if n < 0:
        raise ValueError("depth must be nonnegative")
    return simulate_forward(Configuration.empty(space.dim), n, history, -n, policy, space)


def backward_iterates(history: EventHistory, policy: PolicySpec, space: SpaceSpec,
                      depths: Sequence[int]) -> list[Configuration]:
    return [backward_iterate(history, policy, space, n) for n in depths]


def _run_from_empty(history, policy, space, depth):
    eng = Engine(policy, space)
    last_empty = eng.run(history, -depth, depth)
    return eng, last_empty


def _restrict(config: Configuration, window: Optional[Region], space: SpaceSpec) -> Configuration:
    if window is None:
        return config
    return config.restrict(lambda pts: window.mask(pts, space))


def sample_minimal_stationary(
    history: EventHistory,
    policy: PolicySpec,
    space: SpaceSpec,
    max_depth: int = DEFAULT_MAX_DEPTH,
    window: Optional[Region] = None,
    accept_fixpoint: bool = True,
    min_depth: int = 1,
) -> StationarySample:
    """Doubling search for the minimal stationary configuration.

    Depths 1, 2, 4, ... up to ``max_depth`` are tried. At depth D the run from
    empty at -D is certified when it was empty after some event j with
    ``-j - 1 <= D / 2``. Otherwise, if ``accept_fixpoint``, a depth whose
    iterate (restricted to ``window``) equals the one at half the depth is
    returned as a heuristic fixpoint. No certificate is accepted below
    ``min_depth``.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if min_depth > max_depth:
        raise ValueError("min_depth exceeds max_depth")
    prev: Optional[Configuration] = None
    # depths below min_depth / 2 can neither certify nor serve as the
    # comparison iterate, so the doubling starts there
    depth = 1
    while 4 * depth <= min_depth:
        depth *= 2
    while True:
        eng, last_empty = _run_from_empty(history, policy, space, depth)
        full = eng.configuration()
        cur = _restrict(full, window, space)
        agrees = None if prev is None else prev == cur
        if depth >= min_depth:
            if last_empty is not None and 2 * (-last_empty - 1) <= depth:
                return StationarySample(cur, depth, Certificate.EMPTY_REGENERATION,
                                        last_empty, window, full.total_mass, agrees)
            if accept_fixpoint and agrees:
                return StationarySample(cur, depth, Certificate.DOUBLING_FIXPOINT, None,
                                        window, full.total_mass, agrees)
        if 2 * depth > max_depth:
            return StationarySample(cur, depth, Certificate.NOT_CONVERGED, None, window,
                                    full.total_mass, agrees)
        prev = cur
        depth *= 2


def fixed_point_residual(
    history: EventHistory,
    policy: PolicySpec,
    space: SpaceSpec,
    n: int,
    step_fn: Callable[[Configuration, Event, PolicySpec, SpaceSpec], Configuration] = step,
) -> bool:
    """Check that the depth-n iterate equals one step applied to the depth n-1
    iterate of the history shifted back by one event."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lhs = backward_iterate(history, policy, space, n)
    before = backward_iterate(history.shifted(-1), policy, space, n - 1)
    rhs = step_fn(before, history.event_at(-1), policy, space)
    return lhs == rhs


def coupling_time(
    initialA: Configuration,
    initialB: Configuration,
    history: EventHistory,
    start_index: int,
    policy: PolicySpec,
    space: SpaceSpec,
    max_events: int,
) -> Optional[int]:
    """Number of common events after which the two runs coincide, or None.

    Both runs see the same events and the same tie seeds, so when one
    configuration dominates the other the kills are the coupled ones.
    """
    if initialA == initialB:
        return 0
    a = Engine(policy, space, initialA)
    b = Engine(policy, space, initialB)
    args = a.args
    for i0, blk in history.iter_blocks(start_index, start_index + max_events):
        plus = int(blk.kinds.sum())
        a._reserve(plus)
        b._reserve(plus)
        a.n, b.n, k = K.run_until_equal(a.pts, a.n, b.pts, b.n, blk.kinds, blk.locations,
                                        blk.ties, *args)
        if k >= 0:
            return i0 + k + 1 - start_index
    return None
