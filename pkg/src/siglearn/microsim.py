"""Deterministic discrete-time queue-based traffic microsimulator.

Lane dynamics are a point-queue model: a vehicle travels its lane at
free-flow speed, joins a FIFO queue at the stopline, and the queue head
discharges at the saturation rate whenever its movement has green.  Phase
changes insert a 3 s yellow plus 2 s all-red before the new green.  All
state evolution is deterministic given (network, flow, seed, actions).
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .roadnet import ObservationLayout, RoadNetwork, observation_layout

FREE_FLOW_SPEED = 10.0   # m/s
YELLOW_S = 3
ALL_RED_S = 2
SATURATION_VPS = 1       # vehicles per lane per second of green
VEHICLE_SPACE_M = 7.5    # storage footprint; lane capacity = floor(len / space)


@dataclass
class Vehicle:
    id: int
    origin: str
    depart_time: int
    destination: str
    route: list[int]
    enter_time: Optional[int] = None
    exit_time: Optional[int] = None


@dataclass(frozen=True)
class FlowEntry:
    origin: str
    destination: str
    rate_vph: float
    start_s: int = 0
    end_s: int = 3600


@dataclass
class FlowSpec:
    """Demand description: rate entries, explicit vehicles, or both."""

    entries: list[FlowEntry] = field(default_factory=list)
    vehicles: list[tuple[str, str, int]] = field(default_factory=list)

    def spawn_list(self) -> list[tuple[int, str, str]]:
        """Deterministic (depart_s, origin, destination) list.

        Rate entries spawn at uniform headways of 3600/rate seconds
        starting at ``start_s``; departures at or past ``end_s`` are cut.
        """
        spawns: list[tuple[int, int, str, str]] = []
        for order, e in enumerate(self.entries):
            if e.rate_vph < 0:
                raise ValueError(f"flow entry {order}: negative rate")
            if e.start_s > e.end_s:
                raise ValueError(f"flow entry {order}: start after end")
            if e.rate_vph == 0:
                continue
            headway = 3600.0 / e.rate_vph
            i = 0
            while True:
                t = e.start_s + i * headway
                if t >= e.end_s:
                    break
                spawns.append((int(math.floor(t)), order, e.origin, e.destination))
                i += 1
        base = len(self.entries)
        for j, (origin, destination, depart) in enumerate(self.vehicles):
            spawns.append((int(depart), base + j, origin, destination))
        spawns.sort(key=lambda s: (s[0], s[1]))
        return [(t, o, d) for t, _, o, d in spawns]


def flow_from_json_dict(data: dict) -> FlowSpec:
    if not isinstance(data, dict):
        raise ValueError("flow file: top level must be an object")
    spec = FlowSpec()
    for idx, entry in enumerate(data.get("entries", [])):
        where = f"entries[{idx}]"
        for key in ("origin", "destination", "rate_vph"):
            if key not in entry:
                raise ValueError(f"flow file: {where} missing key {key!r}")
        spec.entries.append(FlowEntry(
            origin=str(entry["origin"]),
            destination=str(entry["destination"]),
            rate_vph=float(entry["rate_vph"]),
            start_s=int(entry.get("start_s", 0)),
            end_s=int(entry.get("end_s", 3600)),
        ))
    for idx, entry in enumerate(data.get("vehicles", [])):
        where = f"vehicles[{idx}]"
        for key in ("origin", "destination", "depart_s"):
            if key not in entry:
                raise ValueError(f"flow file: {where} missing key {key!r}")
        spec.vehicles.append((str(entry["origin"]), str(entry["destination"]),
                              int(entry["depart_s"])))
    return spec


def load_flow(path) -> FlowSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return flow_from_json_dict(json.load(fh))


def flow_to_json_dict(spec: FlowSpec) -> dict:
    out: dict = {}
    if spec.entries:
        out["entries"] = [
            {"origin": e.origin, "destination": e.destination,
             "rate_vph": e.rate_vph, "start_s": e.start_s, "end_s": e.end_s}
            for e in spec.entries
        ]
    if spec.vehicles:
        out["vehicles"] = [
            {"origin": o, "destination": d, "depart_s": t}
            for o, d, t in spec.vehicles
        ]
    return out


class _Signal:
    __slots__ = ("phase", "state", "remaining")

    def __init__(self) -> None:
        self.phase = 0          # commanded phase (the incoming one during interim)
        self.state = "green"    # green | yellow | all_red
        self.remaining = 0


class SimState:
    """One running simulation; single-threaded, deterministic.

    Use :func:`reset` to construct.  ``step`` advances one decision
    interval and returns per-intersection rewards (negative stopped-queue
    sums).
    """

    def __init__(self, net: RoadNetwork, flow: FlowSpec, seed: int = 0):
        self.net = net
        self.flow = flow
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.layout: ObservationLayout = observation_layout(net)
        self.clock = 0

        self._route_cache: dict[tuple[str, str], list[int]] = {}
        schedule = []
        for depart, origin, destination in flow.spawn_list():
            route = self._route(origin, destination)
            schedule.append(Vehicle(len(schedule), origin, depart, destination,
                                    route))
        self.vehicles: list[Vehicle] = schedule
        self._spawn_pointer = 0

        self.lane_queues: dict[int, deque] = {l.id: deque() for l in net.lanes}
        self._capacity = {
            l.id: max(1, int(l.length // VEHICLE_SPACE_M)) for l in net.lanes
        }
        self._lane_length = {l.id: l.length for l in net.lanes}
        self._sink_lanes = [l.id for l in net.lanes if isinstance(l.to_node, str)]
        self.boundary_queues: dict[str, deque] = {}
        self._route_pos: dict[int, int] = {}
        self.exited = 0

        self.signals = {i.id: _Signal() for i in net.intersections}
        self._n_phases = {i.id: len(i.phase_set) for i in net.intersections}

        # per intersection: phase id -> non-right approach lanes served,
        # plus the permissive right-turn lanes that discharge regardless
        self._phase_lanes: dict[int, list[list[int]]] = {}
        self._right_lanes: dict[int, list[int]] = {}
        self._approach_lanes: dict[int, list[int]] = {}
        for inter in net.intersections:
            groups = net.approaches(inter.id)
            lane_dir = {lid: d for d, lanes in groups.items() for lid in lanes}
            ordered = [lid for d in ("N", "E", "S", "W") for lid in groups[d]]
            self._approach_lanes[inter.id] = ordered
            rights, per_phase = [], []
            for phase in inter.phase_set:
                served = [
                    lid for lid in ordered
                    if net.lane_by_id[lid].movement != "right"
                    and phase.serves(lane_dir[lid], net.lane_by_id[lid].movement)
                ]
                per_phase.append(served)
            for lid in ordered:
                if net.lane_by_id[lid].movement == "right":
                    rights.append(lid)
            self._phase_lanes[inter.id] = per_phase
            self._right_lanes[inter.id] = rights

    # -- routing ---------------------------------------------------------

    def _route(self, origin: str, destination: str) -> list[int]:
        key = (origin, destination)
        cached = self._route_cache.get(key)
        if cached is not None:
            return cached
        adj = self.net.adjacency
        if origin not in self.net.boundary_positions:
            raise ValueError(f"flow origin {origin!r} is not a boundary node")
        if destination not in self.net.boundary_positions:
            raise ValueError(f"flow destination {destination!r} is not a boundary node")
        # BFS over nodes; neighbor expansion ordered by connecting lane id
        # so equal-hop ties resolve deterministically
        prev: dict = {origin: None}
        todo = deque([origin])
        while todo and destination not in prev:
            cur = todo.popleft()
            for nxt, _lanes in sorted(adj.get(cur, {}).items(),
                                      key=lambda kv: kv[1][0]):
                if nxt not in prev:
                    prev[nxt] = cur
                    todo.append(nxt)
        if destination not in prev:
            raise ValueError(f"no route from {origin!r} to {destination!r}")
        path = [destination]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        path.reverse()

        lanes: list[int] = []
        for hop in range(len(path) - 1):
            a, b = path[hop], path[hop + 1]
            link = self.net.adjacency[a][b]
            if hop + 2 < len(path):
                approach = self.net.heading_direction(a, b)
                exit_side = self.net.heading_direction(path[hop + 2], b)
                from .roadnet import turn_movement
                needed = turn_movement(approach, exit_side)
            else:
                needed = "through"
            chosen = None
            for preferred in (needed, "through"):
                for lid in link:
                    if self.net.lane_by_id[lid].movement == preferred:
                        chosen = lid
                        break
                if chosen is not None:
                    break
            lanes.append(chosen if chosen is not None else link[0])
        self._route_cache[key] = lanes
        return lanes

    # -- queries ----------------------------------------------------------

    def lane_count(self, lane_id: int) -> int:
        """All vehicles on the lane (traveling plus queued)."""
        return len(self.lane_queues[lane_id])

    def queue_length(self, lane_id: int) -> int:
        """Vehicles stopped at the stopline (arrived, not yet discharged)."""
        q = self.lane_queues[lane_id]
        n = 0
        for _vid, arrival in q:
            if arrival <= self.clock:
                n += 1
            else:
                break
        return n

    def counts(self) -> dict[str, int]:
        spawned = self._spawn_pointer
        waiting = sum(len(q) for q in self.boundary_queues.values())
        on_lanes = sum(len(q) for q in self.lane_queues.values())
        return {
            "spawned": spawned,
            "in_network": waiting + on_lanes,
            "exited": self.exited,
        }

    def observe(self, intersection_id: int) -> np.ndarray:
        obs = np.zeros(self.layout.k, dtype=np.float64)
        obs[self.signals[intersection_id].phase] = 1.0
        slots = self.layout.lane_slots[intersection_id]
        base = self.layout.n_phases
        for j, lane_id in enumerate(slots):
            if lane_id is not None:
                obs[base + j] = len(self.lane_queues[lane_id])
        return obs

    def observe_all(self) -> np.ndarray:
        return np.stack([self.observe(i.id) for i in self.net.intersections])

    def average_travel_time(self) -> float:
        """Mean seconds between entering and leaving the area.

        Vehicles still inside contribute time-so-far; vehicles that never
        entered contribute nothing.  No vehicles at all gives 0.
        """
        total, n = 0.0, 0
        for v in self.vehicles[: self._spawn_pointer]:
            if v.enter_time is None:
                continue
            end = v.exit_time if v.exit_time is not None else self.clock
            total += end - v.enter_time
            n += 1
        return total / n if n else 0.0

    # -- dynamics ----------------------------------------------------------

    def step(self, actions: Union[dict, Sequence[int]], dt: int = 10) -> np.ndarray:
        """Advance ``dt`` seconds under the given per-intersection phases.

        Returns the per-intersection rewards, each the negative sum of
        stopped-vehicle counts over its approach lanes at the interval end.
        """
        if dt <= YELLOW_S + ALL_RED_S:
            raise ValueError(f"dt must exceed {YELLOW_S + ALL_RED_S} s, got {dt}")
        for inter in self.net.intersections:
            a = actions[inter.id]
            if not 0 <= a < self._n_phases[inter.id]:
                raise ValueError(
                    f"intersection {inter.id}: phase {a} outside "
                    f"[0, {self._n_phases[inter.id]})")
            sig = self.signals[inter.id]
            if a != sig.phase:
                sig.phase = a
                sig.state = "yellow"
                sig.remaining = YELLOW_S
        for _ in range(dt):
            self._tick()
        rewards = np.zeros(len(self.net.intersections), dtype=np.float64)
        for inter in self.net.intersections:
            rewards[inter.id] = -float(sum(
                self.queue_length(lid) for lid in self._approach_lanes[inter.id]))
        return rewards

    def _tick(self) -> None:
        t = self.clock
        for sig in self.signals.values():
            if sig.state != "green":
                sig.remaining -= 1
                if sig.remaining == 0:
                    if sig.state == "yellow":
                        sig.state = "all_red"
                        sig.remaining = ALL_RED_S
                    else:
                        sig.state = "green"
        self._spawn(t)
        self._enter(t)
        self._drain_sinks(t)
        self._discharge(t)
        self.clock = t + 1

    def _drain_sinks(self, t: int) -> None:
        """Vehicles leave the network the moment they reach the far end of
        a lane that terminates at a boundary; sinks never queue."""
        for lane_id in self._sink_lanes:
            q = self.lane_queues[lane_id]
            while q and q[0][1] <= t:
                vid, arrival = q.popleft()
                v = self.vehicles[vid]
                v.exit_time = arrival
                del self._route_pos[vid]
                self.exited += 1

    def _spawn(self, t: int) -> None:
        while (self._spawn_pointer < len(self.vehicles)
               and self.vehicles[self._spawn_pointer].depart_time <= t):
            v = self.vehicles[self._spawn_pointer]
            self.boundary_queues.setdefault(v.origin, deque()).append(v.id)
            self._spawn_pointer += 1

    def _enter(self, t: int) -> None:
        for origin in sorted(self.boundary_queues):
            q = self.boundary_queues[origin]
            if not q:
                continue
            vid = q[0]
            v = self.vehicles[vid]
            first = v.route[0]
            if len(self.lane_queues[first]) < self._capacity[first]:
                q.popleft()
                v.enter_time = t
                arrival = t + self._lane_length[first] / FREE_FLOW_SPEED
                self.lane_queues[first].append((vid, arrival))
                self._route_pos[vid] = 0

    def _discharge(self, t: int) -> None:
        for inter in self.net.intersections:
            sig = self.signals[inter.id]
            if sig.state == "green":
                served = self._phase_lanes[inter.id][sig.phase]
            else:
                served = ()
            for lane_id in served:
                self._discharge_lane(lane_id, t)
            for lane_id in self._right_lanes[inter.id]:
                self._discharge_lane(lane_id, t)

    def _discharge_lane(self, lane_id: int, t: int) -> None:
        q = self.lane_queues[lane_id]
        for _ in range(SATURATION_VPS):
            if not q:
                return
            vid, arrival = q[0]
            if arrival > t:
                return
            v = self.vehicles[vid]
            pos = self._route_pos[vid]
            if pos + 1 >= len(v.route):
                q.popleft()
                v.exit_time = t + 1
                del self._route_pos[vid]
                self.exited += 1
                continue
            nxt = v.route[pos + 1]
            if len(self.lane_queues[nxt]) >= self._capacity[nxt]:
                return  # receiving lane full; head stays put
            q.popleft()
            self._route_pos[vid] = pos + 1
            next_arrival = t + 1 + self._lane_length[nxt] / FREE_FLOW_SPEED
            self.lane_queues[nxt].append((vid, next_arrival))

    # -- export -----------------------------------------------------------

    def export_ledger_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["vehicle_id", "depart", "enter", "exit", "route_len"])
            for v in self.vehicles[: self._spawn_pointer]:
                w.writerow([
                    v.id, v.depart_time,
                    "" if v.enter_time is None else v.enter_time,
                    "" if v.exit_time is None else v.exit_time,
                    len(v.route),
                ])


def reset(net: RoadNetwork, flow: FlowSpec, seed: int = 0) -> SimState:
    """Fresh simulation: clock 0, empty lanes, all signals at phase 0 green."""
    return SimState(net, flow, seed)
