"""Multi-agent traffic-signal control toolkit.

Pieces: a road-network model (:mod:`siglearn.roadnet`), a deterministic
queue-based microsimulator (:mod:`siglearn.microsim`), a tiny autodiff
engine (:mod:`siglearn.autodiff`), signal controllers built on the
scikit-learn estimator protocol (:mod:`siglearn.agents`), named scenarios
(:mod:`siglearn.scenarios`), and an experiment harness with attention
studies (:mod:`siglearn.harness`).
"""

from .agents import (CONTROLLERS, ConcatObsAgent, FixedTimeController,
                     GraphAttentionAgent, LocalObsAgent, MaxPressureController,
                     SignalController, UniformAttentionAgent, make_controller,
                     param_count)
from .harness import RunReport, run_experiment, sweep
from .microsim import FlowEntry, FlowSpec, SimState, reset
from .roadnet import (RoadNetwork, build_grid, build_scope_table, load_network,
                      neighborhood_scope, observation_layout, save_network)
from .scenarios import Scenario, scenario_catalog

__version__ = "0.1.0"

__all__ = [
    "CONTROLLERS", "ConcatObsAgent", "FixedTimeController", "FlowEntry",
    "FlowSpec", "GraphAttentionAgent", "LocalObsAgent",
    "MaxPressureController", "RoadNetwork", "RunReport", "Scenario",
    "SignalController", "SimState", "UniformAttentionAgent", "build_grid",
    "build_scope_table", "load_network", "make_controller",
    "neighborhood_scope", "observation_layout", "param_count", "reset",
    "run_experiment", "save_network", "scenario_catalog", "sweep",
]
