"""Non-learning controllers: fixed-time plans and max-pressure greedy."""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from .. import microsim
from ..roadnet import RoadNetwork, turn_movement
from .base import SignalController

_OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}


def fixedtime_act(durations: Sequence[float], offset: float, clock: float) -> int:
    """Phase at ``clock`` for a cyclic plan shifted by ``offset``."""
    durations = list(durations)
    if not durations or any(d <= 0 for d in durations):
        raise ValueError("all phase durations must be > 0")
    cycle = float(sum(durations))
    pos = (clock + offset) % cycle
    acc = 0.0
    for phase, d in enumerate(durations):
        acc += d
        if pos < acc:
            return phase
    return len(durations) - 1


class FixedTimeController(SignalController):
    """Cycles through every phase for ``phase_s`` seconds each, with a
    per-intersection offset drawn uniformly in [0, cycle) from ``seed``."""

    def __init__(self, phase_s: Union[float, Sequence[float]] = 30.0, seed: int = 0):
        self.phase_s = phase_s
        self.seed = seed

    def setup(self, net: RoadNetwork, dt: int = 10) -> "FixedTimeController":
        super().setup(net, dt)
        rng = np.random.default_rng(self.seed)
        self.plans_ = {}
        for inter in net.intersections:
            if np.isscalar(self.phase_s):
                durations = [float(self.phase_s)] * len(inter.phase_set)
            else:
                durations = [float(d) for d in self.phase_s]
                if len(durations) != len(inter.phase_set):
                    raise ValueError(
                        f"plan has {len(durations)} durations but intersection "
                        f"{inter.id} has {len(inter.phase_set)} phases")
            offset = float(rng.uniform(0.0, sum(durations)))
            self.plans_[inter.id] = (durations, offset)
        return self

    def decide(self, sim: microsim.SimState) -> np.ndarray:
        return np.array(
            [fixedtime_act(*self.plans_[i.id], sim.clock)
             for i in self.net_.intersections], dtype=np.intp)


def downstream_lane(net: RoadNetwork, lane_id: int) -> Optional[int]:
    """Lane a vehicle continuing its movement would enter next; None when
    the movement leaves the network (sink side or missing link)."""
    lane = net.lane_by_id[lane_id]
    if not isinstance(lane.to_node, int):
        return None
    inter = lane.to_node
    approach = net.approach_direction(lane_id)
    for exit_side in ("N", "E", "S", "W"):
        if exit_side == approach:
            continue
        try:
            if turn_movement(approach, exit_side) != lane.movement:
                continue
        except ValueError:
            continue
        for nxt, link in net.adjacency.get(inter, {}).items():
            if net.heading_direction(nxt, inter) == exit_side:
                if isinstance(nxt, str):
                    return None  # sink: unlimited downstream, counts as 0
                for lid in link:
                    if net.lane_by_id[lid].movement == "through":
                        return lid
                return link[0]
    return None


def max_pressure_act(sim: microsim.SimState, intersection_id: int,
                     downstream: Optional[dict[int, Optional[int]]] = None) -> int:
    """Greedy phase choice: maximize summed (upstream stopped queue minus
    downstream lane occupancy) over the movements the phase serves; ties
    go to the smallest phase id.  Sinks count as zero occupancy."""
    net = sim.net
    inter = net.intersection_by_id[intersection_id]
    groups = net.approaches(intersection_id)
    lane_dir = {lid: d for d, lanes in groups.items() for lid in lanes}
    best_phase, best_pressure = 0, -np.inf
    for phase in inter.phase_set:
        pressure = 0.0
        for lid in inter.approach_lanes:
            lane = net.lane_by_id[lid]
            if lane.movement == "right":
                continue
            if not phase.serves(lane_dir[lid], lane.movement):
                continue
            down = (downstream[lid] if downstream is not None
                    else downstream_lane(net, lid))
            down_count = sim.lane_count(down) if down is not None else 0
            pressure += sim.queue_length(lid) - down_count
        if pressure > best_pressure:
            best_phase, best_pressure = phase.id, pressure
    return best_phase


class MaxPressureController(SignalController):
    """Applies :func:`max_pressure_act` every decision interval."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def setup(self, net: RoadNetwork, dt: int = 10) -> "MaxPressureController":
        super().setup(net, dt)
        self.downstream_ = {
            lid: downstream_lane(net, lid)
            for inter in net.intersections for lid in inter.approach_lanes
        }
        return self

    def decide(self, sim: microsim.SimState) -> np.ndarray:
        return np.array(
            [max_pressure_act(sim, i.id, self.downstream_)
             for i in self.net_.intersections], dtype=np.intp)
