"""Spatial birth-death simulator with a backward-coupling stationary sampler."""
from .configuration import Configuration, has_point_in_orthant, is_dominated
from .dynamics import (
    Engine,
    Event,
    EventHistory,
    Region,
    StreamSpec,
    palm_time_average,
    replica_seed,
    simulate_forward,
    step,
)
from .geometry import PiecewiseConstant, SpaceSpec, Uniform, distance, leq_orthant, translate
from .loynes import (
    Certificate,
    StationarySample,
    backward_iterate,
    coupling_time,
    fixed_point_residual,
    sample_minimal_stationary,
)
from .policies import PolicySpec, TieBreaker, coupled_select, select_target

__version__ = "0.1.0"

__all__ = [
    "Certificate", "Configuration", "Engine", "Event", "EventHistory", "PiecewiseConstant",
    "PolicySpec", "Region", "SpaceSpec", "StationarySample", "StreamSpec", "TieBreaker",
    "Uniform", "backward_iterate", "coupled_select", "coupling_time", "distance",
    "fixed_point_residual", "has_point_in_orthant", "is_dominated", "leq_orthant",
    "palm_time_average", "replica_seed", "sample_minimal_stationary", "select_target",
    "simulate_forward", "step", "translate",
]
