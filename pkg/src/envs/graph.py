"""
Graph pickup-and-delivery environment: intersections are nodes, streets are
edges, and the taxi moves along the k-th outgoing street (sorted by target id).
"""
import hashlib
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from src.envs.base import (
    DROPOFF, MOVE, PICKUP, SUBGOAL_DROPOFF, SUBGOAL_PAX_IN_TAXI, StepResult, as_rng,
)
from src.utils.config import REWARD_DROPOFF, REWARD_ILLEGAL, REWARD_STEP, STEP_COST_SCALE
from src.utils.errors import ConfigurationError, ContractError, DataError

Node = Tuple[int, float, float]
Edge = Tuple[int, int, float, bool]


@dataclass(frozen=True)
class RoadGraph:
    nodes: Tuple[Node, ...]
    edges: Tuple[Edge, ...]
    out: Tuple[Tuple[Tuple[int, float], ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'nodes', tuple((int(i), float(x), float(y)) for i, x, y in self.nodes))
        object.__setattr__(self, 'edges', tuple((int(u), int(v), float(w), bool(d)) for u, v, w, d in self.edges))
        self.validate()
        best: List[Dict[int, float]] = [dict() for _ in self.nodes]
        for u, v, length, directed in self.edges:
            arcs = [(u, v)] if directed else [(u, v), (v, u)]
            for a, b in arcs:
                # parallel streets collapse to the shortest one
                if b not in best[a] or length < best[a][b]:
                    best[a][b] = length
        out = tuple(tuple(sorted(targets.items())) for targets in best)
        object.__setattr__(self, 'out', out)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def max_out_degree(self) -> int:
        return max((len(arcs) for arcs in self.out), default=0)

    def validate(self):
        ids = [node[0] for node in self.nodes]
        if ids != list(range(len(ids))):
            raise ConfigurationError("node ids must be dense 0..n-1 in order")
        n = len(ids)
        for u, v, length, _ in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise ConfigurationError(f"edge {u}->{v} references an unknown node")
            if not length > 0:
                raise ConfigurationError(f"edge {u}->{v} has non-positive length {length}")
        if n and not nx.is_weakly_connected(self.to_networkx()):
            raise ConfigurationError("road graph is not connected")

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(node[0] for node in self.nodes)
        for u, v, length, directed in self.edges:
            graph.add_edge(u, v, length=length)
            if not directed:
                graph.add_edge(v, u, length=length)
        return graph

    def position(self, node: int) -> Tuple[float, float]:
        return self.nodes[node][1], self.nodes[node][2]


@dataclass(frozen=True)
class GraphEnvConfig:
    reward_step: float = REWARD_STEP
    reward_dropoff: float = REWARD_DROPOFF
    reward_illegal: float = REWARD_ILLEGAL
    step_cost_scale: float = STEP_COST_SCALE
    max_steps_per_episode: Optional[int] = None

    def resolved(self, graph: RoadGraph) -> 'GraphEnvConfig':
        if self.max_steps_per_episode is None:
            return replace(self, max_steps_per_episode=2 * graph.n_nodes + 10)
        return self


class Phase(IntEnum):
    TO_PICKUP = 0
    TO_DROPOFF = 1


@dataclass(frozen=True)
class GraphEnvState:
    current_node: int
    phase: Phase
    pickup_node: int
    dropoff_node: int
    done: bool = False
    delivered: bool = False
    steps: int = field(default=0, compare=False)

    @property
    def target_node(self) -> int:
        return self.pickup_node if self.phase == Phase.TO_PICKUP else self.dropoff_node


def graph_reset(graph: RoadGraph, trip: Tuple[int, int], seed=None, start: Optional[int] = None) -> GraphEnvState:
    pickup, dropoff = int(trip[0]), int(trip[1])
    n = graph.n_nodes
    if not (0 <= pickup < n and 0 <= dropoff < n):
        raise ConfigurationError(f"trip {trip} references nodes outside 0..{n - 1}")
    if pickup == dropoff:
        raise ConfigurationError(f"trip pickup and dropoff must differ, got {pickup}")
    if start is None:
        start = int(as_rng(seed).integers(0, n))
    elif not 0 <= start < n:
        raise ConfigurationError(f"start node {start} outside 0..{n - 1}")
    return GraphEnvState(current_node=int(start), phase=Phase.TO_PICKUP, pickup_node=pickup, dropoff_node=dropoff)


def graph_step(state: GraphEnvState, action: int, graph: RoadGraph, config: GraphEnvConfig) -> StepResult:
    if state.done:
        raise ContractError("cannot step a finished episode; reset first")
    config = config.resolved(graph)
    max_degree = graph.max_out_degree
    if not 0 <= action < max_degree + 2:
        raise ContractError(f"action {action} outside the action space of size {max_degree + 2}")
    subgoal = None
    distance = 0.0

    if action < max_degree:
        arcs = graph.out[state.current_node]
        if action < len(arcs):
            target, length = arcs[action]
            next_state = replace(state, current_node=target)
            reward = -length * config.step_cost_scale
            distance = length
        else:
            next_state, reward = state, config.reward_step
    elif action == max_degree:
        if state.phase == Phase.TO_PICKUP and state.current_node == state.pickup_node:
            next_state = replace(state, phase=Phase.TO_DROPOFF)
            reward, subgoal = config.reward_step, SUBGOAL_PAX_IN_TAXI
        else:
            next_state, reward = state, config.reward_illegal
    elif action == max_degree + 1:
        if state.phase == Phase.TO_DROPOFF and state.current_node == state.dropoff_node:
            next_state = replace(state, done=True, delivered=True)
            reward, subgoal = config.reward_dropoff, SUBGOAL_DROPOFF
        else:
            next_state, reward = state, config.reward_illegal

    steps = state.steps + 1
    truncated = not next_state.done and steps >= config.max_steps_per_episode
    next_state = replace(next_state, steps=steps, done=next_state.done or truncated)
    return StepResult(next_state=next_state, reward=reward, done=next_state.done,
                      subgoal_achieved=subgoal, truncated=truncated, distance=distance)


class GraphEnv:
    kind = "graph"

    def __init__(self, graph: RoadGraph, config: Optional[GraphEnvConfig] = None, env_id: Optional[str] = None):
        self.graph = graph
        self.config = (config or GraphEnvConfig()).resolved(graph)
        self.env_id = env_id or f"graph{graph.n_nodes}"
        self.max_degree = graph.max_out_degree
        self.n_actions = self.max_degree + 2
        self.n_states = graph.n_nodes * graph.n_nodes
        self.pickup_action = self.max_degree
        self.dropoff_action = self.max_degree + 1

    def reset(self, rng, trip: Optional[Tuple[int, int]] = None, start: Optional[int] = None) -> GraphEnvState:
        rng = as_rng(rng)
        if trip is None:
            pickup, dropoff = rng.choice(self.graph.n_nodes, size=2, replace=False)
            trip = (int(pickup), int(dropoff))
        return graph_reset(self.graph, trip, rng, start=start)

    def initial_state(self, start: Tuple) -> GraphEnvState:
        """Evaluation start from (pickup, dropoff[, start]); without a start node the taxi waits at the pickup"""
        pickup, dropoff = int(start[0]), int(start[1])
        node = start[2] if len(start) > 2 and start[2] is not None else pickup
        return graph_reset(self.graph, (pickup, dropoff), start=int(node))

    def step(self, state: GraphEnvState, action: int) -> StepResult:
        return graph_step(state, action, self.graph, self.config)

    def state_key(self, state: GraphEnvState) -> int:
        return state.current_node * self.graph.n_nodes + state.target_node

    def legal_actions(self, state: GraphEnvState) -> List[int]:
        degree = len(self.graph.out[state.current_node])
        return list(range(degree)) + [self.pickup_action, self.dropoff_action]

    def action_kind(self, action: int) -> str:
        if action == self.pickup_action:
            return PICKUP
        if action == self.dropoff_action:
            return DROPOFF
        return MOVE

    def action_names(self) -> List[str]:
        return [f"move_{k}" for k in range(self.max_degree)] + ['pickup', 'dropoff']

    def features(self, state: GraphEnvState) -> Dict[str, int]:
        aboard = state.phase == Phase.TO_DROPOFF and not state.delivered
        return {
            'taxi_on_pax_loc': int(state.phase == Phase.TO_PICKUP and state.current_node == state.pickup_node),
            'taxi_on_dest': int(state.current_node == state.dropoff_node),
            'pax_in_taxi': int(aboard),
        }

    def goal_flags(self, state: GraphEnvState) -> Dict[str, int]:
        return {'pax_in_taxi_next': int(state.phase == Phase.TO_DROPOFF and not state.delivered),
                'dropoff_next': int(state.delivered)}

    def describe(self) -> dict:
        return {
            'kind': self.kind, 'env_id': self.env_id,
            'nodes': self.graph.n_nodes, 'edges': len(self.graph.edges),
            'max_out_degree': self.max_degree,
            'graph_sha256': hashlib.sha256(repr((self.graph.nodes, self.graph.edges)).encode()).hexdigest(),
            'reward_step': self.config.reward_step, 'reward_dropoff': self.config.reward_dropoff,
            'reward_illegal': self.config.reward_illegal, 'step_cost_scale': self.config.step_cost_scale,
            'max_steps_per_episode': self.config.max_steps_per_episode,
        }


def synthetic_road_graph(n_nodes: int, seed: int = 0, jitter: float = 0.3, shortcut_ratio: float = 0.1) -> RoadGraph:
    """Perturbed lattice filled row by row, plus a few seeded diagonal shortcuts.

    Every node below the first row links to the node above it and the first
    row is a chain, so the graph is connected for any n_nodes >= 2.
    """
    if n_nodes < 2:
        raise ConfigurationError("a road graph needs at least two nodes")
    rng = np.random.default_rng(seed)
    side = math.ceil(math.sqrt(n_nodes))
    nodes = []
    for i in range(n_nodes):
        r, c = divmod(i, side)
        dx, dy = rng.uniform(-jitter, jitter, size=2)
        nodes.append((i, c + float(dx), r + float(dy)))

    def length(u, v):
        return math.dist(nodes[u][1:], nodes[v][1:])

    pairs = []
    for i in range(n_nodes):
        r, c = divmod(i, side)
        if c + 1 < side and i + 1 < n_nodes:
            pairs.append((i, i + 1))
        if i + side < n_nodes:
            pairs.append((i, i + side))
    diagonals = [(i, i + side + 1) for i in range(n_nodes)
                 if (i % side) + 1 < side and i + side + 1 < n_nodes]
    n_shortcuts = int(round(shortcut_ratio * n_nodes))
    if diagonals and n_shortcuts:
        picks = rng.choice(len(diagonals), size=min(n_shortcuts, len(diagonals)), replace=False)
        pairs.extend(diagonals[k] for k in sorted(picks))
    edges = [(u, v, length(u, v), False) for u, v in pairs]
    return RoadGraph(nodes=tuple(nodes), edges=tuple(edges))


def random_trips(graph: RoadGraph, count: int, seed: int = 0) -> List[Tuple[int, int]]:
    rng = np.random.default_rng(seed)
    trips = []
    for _ in range(count):
        pickup, dropoff = rng.choice(graph.n_nodes, size=2, replace=False)
        trips.append((int(pickup), int(dropoff)))
    return trips


def load_graph(path) -> RoadGraph:
    """Read 'node <id> <x> <y>' lines followed by 'edge <u> <v> <length> [directed]' lines"""
    nodes, edges = [], []
    for raw in Path(path).read_text().splitlines():
        line = raw.split('#')[0].strip()
        if not line:
            continue
        kind, *values = line.split()
        try:
            if kind == 'node' and len(values) == 3:
                nodes.append((int(values[0]), float(values[1]), float(values[2])))
            elif kind == 'edge' and len(values) in (3, 4):
                directed = len(values) == 4 and values[3].lower() in ('directed', '1', 'true')
                edges.append((int(values[0]), int(values[1]), float(values[2]), directed))
            else:
                raise DataError(f"unrecognised graph line: {raw!r}")
        except ValueError as e:
            raise DataError(f"malformed graph line {raw!r}: {e}") from e
    nodes.sort()
    return RoadGraph(nodes=tuple(nodes), edges=tuple(edges))


def save_graph(graph: RoadGraph, path):
    lines = [f"node {i} {x!r} {y!r}" for i, x, y in graph.nodes]
    lines += [f"edge {u} {v} {w!r}" + (" directed" if d else "") for u, v, w, d in graph.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def load_trips(path) -> pd.DataFrame:
    """Trips CSV: header 'pickup,dropoff' (an optional 'start' column is honoured)"""
    try:
        trips = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise DataError(f"cannot read trips file {path}: {e}") from e
    missing = {'pickup', 'dropoff'} - set(trips.columns)
    if missing:
        raise DataError(f"trips file {path} lacks columns: {sorted(missing)}")
    return trips


def save_trips(trips: Sequence[Tuple[int, int]], path):
    pd.DataFrame(trips, columns=['pickup', 'dropoff']).to_csv(path, index=False)
