"""Road-network graph: intersections, directed lanes, signal phases, scopes.

Networks are built once (synthetic grids or loaded from JSON) and then
treated as immutable, so they can be shared read-only across workers.

Geometry conventions for grids: row 0 is the northern row, intersection
ids are row-major, and every approach is labelled by the compass side the
traffic comes from (``N`` traffic heads south into the intersection).
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Union

import numpy as np

NodeRef = Union[int, str]  # intersection id or boundary node name

DIRECTIONS = ("N", "E", "S", "W")
MOVEMENTS = ("left", "through", "right")

_OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}
_CLOCKWISE = {"N": "E", "E": "S", "S": "W", "W": "N"}
_COUNTERCW = {v: k for k, v in _CLOCKWISE.items()}


@dataclass(frozen=True)
class Phase:
    """A signal configuration; the pairs are (approach side, movement)."""

    id: int
    green_movements: frozenset

    def serves(self, direction: str, movement: str) -> bool:
        return (direction, movement) in self.green_movements


@dataclass
class Lane:
    id: int
    from_node: NodeRef
    to_node: NodeRef
    length: float
    movement: str


@dataclass
class Intersection:
    id: int
    position: tuple[float, float]
    approach_lanes: list[int] = field(default_factory=list)
    phase_set: list[Phase] = field(default_factory=list)
    neighbor_scope: Optional[list[int]] = None


class Scope(NamedTuple):
    """Ordered neighbor slots for one intersection; ``valid[j]`` is False
    for padding slots (repeats of self that must not receive attention)."""

    ids: tuple
    valid: tuple


def default_phase_set() -> list[Phase]:
    """Standard 4-phase plan for a 4-way intersection.

    Right turns are permissive (handled by the simulator) and never appear
    in a phase's green set.
    """
    plan = [
        {("N", "through"), ("S", "through")},
        {("N", "left"), ("S", "left")},
        {("E", "through"), ("W", "through")},
        {("E", "left"), ("W", "left")},
    ]
    return [Phase(i, frozenset(moves)) for i, moves in enumerate(plan)]


def _movements_for(q: int) -> list[str]:
    """Innermost lane turns left, outermost turns right, middle goes through."""
    if q == 1:
        return ["through"]
    if q == 2:
        return ["left", "through"]
    return ["left"] + ["through"] * (q - 2) + ["right"]


class RoadNetwork:
    """Immutable-after-construction graph of intersections and lanes."""

    def __init__(self, intersections: list[Intersection], lanes: list[Lane],
                 boundary_positions: dict[str, tuple[float, float]]):
        self.intersections = sorted(intersections, key=lambda i: i.id)
        self.lanes = sorted(lanes, key=lambda l: l.id)
        self.boundary_positions = dict(boundary_positions)
        self._index()
        self.validate()

    # -- derived indexes -------------------------------------------------

    def _index(self) -> None:
        self.lane_by_id = {l.id: l for l in self.lanes}
        self.intersection_by_id = {i.id: i for i in self.intersections}
        for inter in self.intersections:
            inter.approach_lanes = [l.id for l in self.lanes if l.to_node == inter.id]
        # adjacency: node -> {next node -> [lane ids on that link]}
        self.adjacency: dict[NodeRef, dict[NodeRef, list[int]]] = {}
        for lane in self.lanes:
            self.adjacency.setdefault(lane.from_node, {}).setdefault(
                lane.to_node, []).append(lane.id)
        for targets in self.adjacency.values():
            for ids in targets.values():
                ids.sort()

    def position_of(self, node: NodeRef) -> tuple[float, float]:
        if isinstance(node, int):
            return self.intersection_by_id[node].position
        return self.boundary_positions[node]

    def approach_direction(self, lane_id: int) -> str:
        """Compass side of ``lane.to_node`` that this lane arrives from."""
        lane = self.lane_by_id[lane_id]
        fx, fy = self.position_of(lane.from_node)
        tx, ty = self.position_of(lane.to_node)
        dx, dy = fx - tx, fy - ty
        if abs(dy) >= abs(dx):
            return "N" if dy > 0 else "S"
        return "E" if dx > 0 else "W"

    def heading_direction(self, from_node: NodeRef, to_node: NodeRef) -> str:
        """Compass side of ``from_node`` seen from ``to_node`` (approach side)."""
        fx, fy = self.position_of(from_node)
        tx, ty = self.position_of(to_node)
        dx, dy = fx - tx, fy - ty
        if abs(dy) >= abs(dx):
            return "N" if dy > 0 else "S"
        return "E" if dx > 0 else "W"

    def approaches(self, intersection_id: int) -> dict[str, list[int]]:
        """Approach lanes grouped by compass side, movement-ordered."""
        groups: dict[str, list[int]] = {d: [] for d in DIRECTIONS}
        for lane_id in self.intersection_by_id[intersection_id].approach_lanes:
            groups[self.approach_direction(lane_id)].append(lane_id)
        order = {m: i for i, m in enumerate(MOVEMENTS)}
        for d in groups:
            groups[d].sort(key=lambda lid: (order[self.lane_by_id[lid].movement], lid))
        return groups

    def neighbor_by_direction(self, intersection_id: int) -> dict[str, Optional[int]]:
        """Adjacent intersection on each compass side (None at boundaries)."""
        out: dict[str, Optional[int]] = {d: None for d in DIRECTIONS}
        for d, lanes in self.approaches(intersection_id).items():
            for lid in lanes:
                src = self.lane_by_id[lid].from_node
                if isinstance(src, int):
                    out[d] = src
                    break
        return out

    def intersection_adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {i.id: [] for i in self.intersections}
        for lane in self.lanes:
            if isinstance(lane.from_node, int) and isinstance(lane.to_node, int):
                if lane.to_node not in adj[lane.from_node]:
                    adj[lane.from_node].append(lane.to_node)
        for ids in adj.values():
            ids.sort()
        return adj

    # -- validation ------------------------------------------------------

    def validate(self) -> None:
        ids = [i.id for i in self.intersections]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate intersection ids")
        lane_ids = [l.id for l in self.lanes]
        if len(set(lane_ids)) != len(lane_ids):
            raise ValueError("duplicate lane ids")
        for lane in self.lanes:
            if lane.length <= 0:
                raise ValueError(f"lane {lane.id}: length must be > 0")
            if lane.movement not in MOVEMENTS:
                raise ValueError(f"lane {lane.id}: unknown movement {lane.movement!r}")
            for node in (lane.from_node, lane.to_node):
                if isinstance(node, int) and node not in self.intersection_by_id:
                    raise ValueError(f"lane {lane.id}: unknown intersection {node}")
                if isinstance(node, str) and node not in self.boundary_positions:
                    raise ValueError(f"lane {lane.id}: unknown boundary node {node!r}")
        for inter in self.intersections:
            if not inter.phase_set:
                raise ValueError(f"intersection {inter.id}: empty phase set")
            seen = set()
            for phase in inter.phase_set:
                if not phase.green_movements:
                    raise ValueError(f"intersection {inter.id}: phase {phase.id} "
                                     "has no green movements")
                if phase.green_movements in seen:
                    raise ValueError(f"intersection {inter.id}: duplicate phase "
                                     f"{phase.id}")
                seen.add(phase.green_movements)
        if len(self.intersections) > 1 and not self._weakly_connected():
            raise ValueError("network is not weakly connected")

    def _weakly_connected(self) -> bool:
        adj: dict[int, set[int]] = {i.id: set() for i in self.intersections}
        for lane in self.lanes:
            if isinstance(lane.from_node, int) and isinstance(lane.to_node, int):
                adj[lane.from_node].add(lane.to_node)
                adj[lane.to_node].add(lane.from_node)
        start = self.intersections[0].id
        seen = {start}
        todo = deque([start])
        while todo:
            for nxt in adj[todo.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        return len(seen) == len(self.intersections)


def build_grid(rows: int, cols: int, lane_length: float = 300.0,
               lanes_per_direction: int = 3,
               phases: Optional[list[Phase]] = None) -> RoadNetwork:
    """Synthetic rows x cols grid with boundary sources/sinks on every arm.

    Every pair of adjacent nodes is joined by one directed link per
    direction carrying ``lanes_per_direction`` lanes of ``lane_length``
    meters.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"grid must be at least 1x1, got {rows}x{cols}")
    if lanes_per_direction < 1:
        raise ValueError("lanes_per_direction must be >= 1")
    if lane_length <= 0:
        raise ValueError("lane_length must be > 0")

    phase_set = phases if phases is not None else default_phase_set()
    L = float(lane_length)

    def pos(r: int, c: int) -> tuple[float, float]:
        return (c * L, (rows - 1 - r) * L)

    intersections = [
        Intersection(id=r * cols + c, position=pos(r, c),
                     phase_set=list(phase_set))
        for r in range(rows) for c in range(cols)
    ]

    boundary_positions: dict[str, tuple[float, float]] = {}
    for c in range(cols):
        x, y = pos(0, c)
        boundary_positions[f"b_n_{c}"] = (x, y + L)
        x, y = pos(rows - 1, c)
        boundary_positions[f"b_s_{c}"] = (x, y - L)
    for r in range(rows):
        x, y = pos(r, 0)
        boundary_positions[f"b_w_{r}"] = (x - L, y)
        x, y = pos(r, cols - 1)
        boundary_positions[f"b_e_{r}"] = (x + L, y)

    # undirected adjacencies in a fixed order: west->east sweeps per row,
    # then north->south sweeps per column
    pairs: list[tuple[NodeRef, NodeRef]] = []
    for r in range(rows):
        chain: list[NodeRef] = [f"b_w_{r}"] + [r * cols + c for c in range(cols)]
        chain.append(f"b_e_{r}")
        pairs.extend(zip(chain, chain[1:]))
    for c in range(cols):
        chain = [f"b_n_{c}"] + [r * cols + c for r in range(rows)]
        chain.append(f"b_s_{c}")
        pairs.extend(zip(chain, chain[1:]))

    movements = _movements_for(lanes_per_direction)
    lanes: list[Lane] = []
    lane_id = 0
    for a, b in pairs:
        for from_node, to_node in ((a, b), (b, a)):
            for movement in movements:
                lanes.append(Lane(lane_id, from_node, to_node, L, movement))
                lane_id += 1

    return RoadNetwork(intersections, lanes, boundary_positions)


def turn_movement(approach_side: str, exit_side: str) -> str:
    """Movement a vehicle performs entering from one side and leaving by
    another (``N`` approach + ``E`` exit is a left turn, etc.)."""
    if exit_side == _OPPOSITE[approach_side]:
        return "through"
    if exit_side == _CLOCKWISE[approach_side]:
        return "left"
    if exit_side == _COUNTERCW[approach_side]:
        return "right"
    raise ValueError(f"U-turn from {approach_side} to {exit_side} not modeled")


def node_distances(net: RoadNetwork, source: int) -> dict[int, int]:
    """Hop counts from ``source`` over the intersection graph (BFS)."""
    adj = net.intersection_adjacency()
    dist = {source: 0}
    todo = deque([source])
    while todo:
        cur = todo.popleft()
        for nxt in adj[cur]:
            if nxt not in dist:
                dist[nxt] = dist[cur] + 1
                todo.append(nxt)
    return dist


def neighborhood_scope(net: RoadNetwork, intersection_id: int, size: int,
                       metric: str = "geo") -> Scope:
    """Self plus the ``size - 1`` nearest intersections, deterministically.

    Distance ties break toward the smaller id.  When the network has fewer
    than ``size`` intersections the tail is padded with invalid repeats of
    self.
    """
    if size < 1:
        raise ValueError("scope size must be >= 1")
    if metric not in ("geo", "node"):
        raise ValueError(f"unknown scope metric {metric!r}")

    if metric == "geo":
        x0, y0 = net.position_of(intersection_id)
        dist = {
            i.id: math.hypot(i.position[0] - x0, i.position[1] - y0)
            for i in net.intersections
        }
    else:
        dist = node_distances(net, intersection_id)

    others = sorted(
        (d, i) for i, d in dist.items() if i != intersection_id
    )[: size - 1]
    ids = [intersection_id] + [i for _, i in others]
    valid = [True] * len(ids)
    while len(ids) < size:
        ids.append(intersection_id)
        valid.append(False)
    return Scope(tuple(ids), tuple(valid))


@dataclass
class ScopeTable:
    """Neighbor slots for every intersection as dense arrays.

    ``ids[i, s]`` is the intersection occupying slot ``s`` of target ``i``
    and ``valid[i, s]`` is False for padding slots.
    """

    ids: np.ndarray
    valid: np.ndarray
    size: int
    metric: str

    def permuted(self, perms: np.ndarray) -> "ScopeTable":
        """Reorder every target's slots by ``perms[i]`` (same slots, new
        storage order); used to exercise order-independence."""
        rows = np.arange(self.ids.shape[0])[:, None]
        return ScopeTable(self.ids[rows, perms], self.valid[rows, perms],
                          self.size, self.metric)


def build_scope_table(net: RoadNetwork, size: int, metric: str = "geo") -> ScopeTable:
    n = len(net.intersections)
    ids = np.zeros((n, size), dtype=np.intp)
    valid = np.zeros((n, size), dtype=bool)
    for inter in net.intersections:
        scope = neighborhood_scope(net, inter.id, size, metric)
        ids[inter.id] = scope.ids
        valid[inter.id] = scope.valid
        inter.neighbor_scope = list(scope.ids)
    return ScopeTable(ids, valid, size, metric)


@dataclass
class ObservationLayout:
    """Fixed coordinate assignment for observation vectors.

    The first ``n_phases`` coordinates one-hot the commanded phase; the
    rest hold per-lane vehicle counts in canonical order (approaches N, E,
    S, W; within an approach left, through, right).  Missing approaches or
    lanes leave their coordinates permanently zero.
    """

    k: int
    n_phases: int
    lane_slots: dict[int, list[Optional[int]]]

    def lane_coordinate(self, intersection_id: int, lane_id: int) -> int:
        return self.n_phases + self.lane_slots[intersection_id].index(lane_id)

    def phase_coordinate(self, phase_id: int) -> int:
        if not 0 <= phase_id < self.n_phases:
            raise ValueError(f"phase {phase_id} outside [0, {self.n_phases})")
        return phase_id

    def assigned_coordinates(self, intersection_id: int) -> list[int]:
        coords = list(range(self.n_phases))
        for j, lane in enumerate(self.lane_slots[intersection_id]):
            if lane is not None:
                coords.append(self.n_phases + j)
        return coords


def observation_layout(net: RoadNetwork) -> ObservationLayout:
    """Uniform-k layout shared by every intersection in the network."""
    n_phases = max(len(i.phase_set) for i in net.intersections)
    per_dir = max(
        (len(lanes) for i in net.intersections
         for lanes in net.approaches(i.id).values()),
        default=0,
    )
    lane_slots: dict[int, list[Optional[int]]] = {}
    for inter in net.intersections:
        groups = net.approaches(inter.id)
        slots: list[Optional[int]] = []
        for d in DIRECTIONS:
            lanes = groups[d]
            slots.extend(lanes)
            slots.extend([None] * (per_dir - len(lanes)))
        lane_slots[inter.id] = slots
    return ObservationLayout(k=n_phases + 4 * per_dir, n_phases=n_phases,
                             lane_slots=lane_slots)


# -- JSON serialization -------------------------------------------------


def to_json_dict(net: RoadNetwork) -> dict:
    return {
        "intersections": [
            {
                "id": i.id,
                "x": i.position[0],
                "y": i.position[1],
                "phases": [[list(pair) for pair in sorted(p.green_movements)]
                           for p in i.phase_set],
            }
            for i in net.intersections
        ],
        "lanes": [
            {"id": l.id, "from": l.from_node, "to": l.to_node,
             "length": l.length, "movement": l.movement}
            for l in net.lanes
        ],
        "boundaries": [
            {"id": name, "x": x, "y": y}
            for name, (x, y) in sorted(net.boundary_positions.items())
        ],
    }


def save_network(net: RoadNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_json_dict(net), fh, indent=1, sort_keys=True)


class NetworkFormatError(ValueError):
    """Malformed network file; the message names the offending entry."""


def _require(cond: bool, where: str, message: str) -> None:
    if not cond:
        raise NetworkFormatError(f"{where}: {message}")


def from_json_dict(data: dict) -> RoadNetwork:
    _require(isinstance(data, dict), "$", "top level must be an object")
    for key in ("intersections", "lanes"):
        _require(key in data, "$", f"missing required key {key!r}")
        _require(isinstance(data[key], list), key, "must be a list")

    intersections = []
    for idx, entry in enumerate(data["intersections"]):
        where = f"intersections[{idx}]"
        _require(isinstance(entry, dict), where, "must be an object")
        for key in ("id", "x", "y", "phases"):
            _require(key in entry, where, f"missing key {key!r}")
        _require(isinstance(entry["id"], int), f"{where}.id", "must be an integer")
        phases = []
        _require(isinstance(entry["phases"], list) and entry["phases"],
                 f"{where}.phases", "must be a non-empty list")
        for p_idx, moves in enumerate(entry["phases"]):
            pw = f"{where}.phases[{p_idx}]"
            _require(isinstance(moves, list) and moves, pw, "must be a non-empty list")
            pairs = set()
            for m_idx, pair in enumerate(moves):
                mw = f"{pw}[{m_idx}]"
                _require(isinstance(pair, (list, tuple)) and len(pair) == 2,
                         mw, "must be a [direction, movement] pair")
                d, m = pair
                _require(d in DIRECTIONS, mw, f"unknown direction {d!r}")
                _require(m in MOVEMENTS, mw, f"unknown movement {m!r}")
                pairs.add((d, m))
            phases.append(Phase(p_idx, frozenset(pairs)))
        intersections.append(Intersection(
            id=entry["id"],
            position=(float(entry["x"]), float(entry["y"])),
            phase_set=phases,
        ))

    boundary_positions = {}
    for idx, entry in enumerate(data.get("boundaries", [])):
        where = f"boundaries[{idx}]"
        _require(isinstance(entry, dict), where, "must be an object")
        for key in ("id", "x", "y"):
            _require(key in entry, where, f"missing key {key!r}")
        boundary_positions[str(entry["id"])] = (float(entry["x"]), float(entry["y"]))

    lanes = []
    for idx, entry in enumerate(data["lanes"]):
        where = f"lanes[{idx}]"
        _require(isinstance(entry, dict), where, "must be an object")
        for key in ("id", "from", "to", "length", "movement"):
            _require(key in entry, where, f"missing key {key!r}")
        _require(isinstance(entry["length"], (int, float)) and entry["length"] > 0,
                 f"{where}.length", "must be > 0")
        _require(entry["movement"] in MOVEMENTS, f"{where}.movement",
                 f"unknown movement {entry['movement']!r}")
        lanes.append(Lane(
            id=int(entry["id"]),
            from_node=entry["from"],
            to_node=entry["to"],
            length=float(entry["length"]),
            movement=entry["movement"],
        ))

    try:
        return RoadNetwork(intersections, lanes, boundary_positions)
    except ValueError as exc:
        raise NetworkFormatError(str(exc)) from exc


def load_network(path) -> RoadNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkFormatError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return from_json_dict(data)
