"""Signal controllers, addressable by registry name."""

from __future__ import annotations

from .attention import (AttentionRecord, GraphAttentionAgent,
                        UniformAttentionAgent, param_count)
from .base import Experience, ReplayBuffer, ReplayQAgent, SignalController, epsilon_greedy
from .classical import (FixedTimeController, MaxPressureController,
                        fixedtime_act, max_pressure_act)
from .mlp import ConcatObsAgent, LocalObsAgent

CONTROLLERS = {
    "fixedtime": FixedTimeController,
    "maxpressure": MaxPressureController,
    "attention": GraphAttentionAgent,
    "uniform": UniformAttentionAgent,
    "local": LocalObsAgent,
    "concat": ConcatObsAgent,
}


def make_controller(name: str, **overrides) -> SignalController:
    """Instantiate a controller by registry name.

    Overrides are filtered against the controller's own hyperparameters;
    unknown keys raise so configuration typos surface early.
    """
    if name not in CONTROLLERS:
        raise ValueError(
            f"unknown controller {name!r}; choose from {sorted(CONTROLLERS)}")
    cls = CONTROLLERS[name]
    valid = set(cls().get_params())
    unknown = set(overrides) - valid
    if unknown:
        raise ValueError(
            f"controller {name!r} does not accept {sorted(unknown)}; "
            f"valid keys: {sorted(valid)}")
    return cls(**overrides)


__all__ = [
    "AttentionRecord", "ConcatObsAgent", "CONTROLLERS", "Experience",
    "FixedTimeController", "GraphAttentionAgent", "LocalObsAgent",
    "MaxPressureController", "ReplayBuffer", "ReplayQAgent",
    "SignalController", "UniformAttentionAgent", "epsilon_greedy",
    "fixedtime_act", "make_controller", "max_pressure_act", "param_count",
]
