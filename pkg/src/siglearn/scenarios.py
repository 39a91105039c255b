"""Named synthetic scenarios: grid geometry plus deterministic demand."""

from __future__ import annotations

from dataclasses import dataclass, field

from .microsim import FlowEntry, FlowSpec
from .roadnet import RoadNetwork, build_grid


@dataclass(frozen=True)
class Scenario:
    name: str
    rows: int
    cols: int
    flow: FlowSpec
    lane_length: float = 300.0
    lanes_per_direction: int = 3
    episode_s: int = 3600
    dt: int = 10

    def __post_init__(self):
        if self.episode_s % self.dt != 0:
            raise ValueError("episode length must be a multiple of dt")

    def build_network(self) -> RoadNetwork:
        return build_grid(self.rows, self.cols, self.lane_length,
                          self.lanes_per_direction)

    @property
    def steps_per_episode(self) -> int:
        return self.episode_s // self.dt


def grid_flow(rows: int, cols: int, we: float = 0.0, ew: float = 0.0,
              ns: float = 0.0, sn: float = 0.0, start: int = 0,
              end: int = 3600) -> list[FlowEntry]:
    """One straight-through entry per corridor and direction."""
    entries = []
    for r in range(rows):
        if we:
            entries.append(FlowEntry(f"b_w_{r}", f"b_e_{r}", we, start, end))
        if ew:
            entries.append(FlowEntry(f"b_e_{r}", f"b_w_{r}", ew, start, end))
    for c in range(cols):
        if ns:
            entries.append(FlowEntry(f"b_n_{c}", f"b_s_{c}", ns, start, end))
        if sn:
            entries.append(FlowEntry(f"b_s_{c}", f"b_n_{c}", sn, start, end))
    return entries


def ramp_entries(origin: str, destination: str, rate_from: float,
                 rate_to: float, start: int = 0, end: int = 3600,
                 segments: int = 12) -> list[FlowEntry]:
    """Piecewise-constant approximation of a linear rate ramp."""
    seg = (end - start) // segments
    out = []
    for i in range(segments):
        frac = (i + 0.5) / segments
        rate = rate_from + (rate_to - rate_from) * frac
        out.append(FlowEntry(origin, destination, rate,
                             start + i * seg, start + (i + 1) * seg))
    return out


def flow_rate_at(flow: FlowSpec, origin: str, destination: str, t: float) -> float:
    """Scheduled vehicles/hour on an origin-destination pair at time t."""
    return sum(e.rate_vph for e in flow.entries
               if e.origin == origin and e.destination == destination
               and e.start_s <= t < e.end_s)


def scenario_catalog() -> dict[str, Scenario]:
    """The named experiments.

    Bi-directional grids carry 300 veh/lane/h on the west-east axis and
    90 on the south-north axis; uni-directional grids keep only the
    west-to-east and north-to-south halves.  The flow-shift scenario lays
    light base traffic everywhere, then ramps the north-to-south feed of
    the center column up (120 -> 480 veh/h) while the west-to-east feed of
    the middle row ramps down (480 -> 120), crossing mid-episode.
    """
    catalog = {}

    catalog["Arterial1x3-Uni"] = Scenario(
        name="Arterial1x3-Uni", rows=1, cols=3,
        flow=FlowSpec(entries=grid_flow(1, 3, we=300.0)))

    catalog["Grid3x3-Bi"] = Scenario(
        name="Grid3x3-Bi", rows=3, cols=3,
        flow=FlowSpec(entries=grid_flow(3, 3, we=300.0, ew=300.0,
                                        ns=90.0, sn=90.0)))

    catalog["Grid6x6-Uni"] = Scenario(
        name="Grid6x6-Uni", rows=6, cols=6,
        flow=FlowSpec(entries=grid_flow(6, 6, we=300.0, ns=90.0)))

    catalog["Grid6x6-Bi"] = Scenario(
        name="Grid6x6-Bi", rows=6, cols=6,
        flow=FlowSpec(entries=grid_flow(6, 6, we=300.0, ew=300.0,
                                        ns=90.0, sn=90.0)))

    shift = grid_flow(3, 3, we=60.0, ew=60.0, ns=60.0, sn=60.0)
    shift += ramp_entries("b_n_1", "b_s_1", 120.0, 480.0)
    shift += ramp_entries("b_w_1", "b_e_1", 480.0, 120.0)
    catalog["Grid3x3-FlowShift"] = Scenario(
        name="Grid3x3-FlowShift", rows=3, cols=3, flow=FlowSpec(entries=shift))

    return catalog
