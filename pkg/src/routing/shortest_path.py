"""
Dijkstra and A* route oracles over grid and road-graph adjacency lists.

Both share one best-first search: a binary heap with lazy re-insertion, a
settled set, and (priority, node) ordering so ties go to the lower node id.
"""
import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

from src.envs.grid import IN_TAXI, MOVES, GridConfig
from src.envs.graph import RoadGraph
from src.utils.errors import ConfigurationError

Adjacency = Sequence[Sequence[Tuple[int, float]]]
Heuristic = Callable[[int, int], float]


@dataclass
class PathResult:
    distance: float
    path: List[int] = field(default_factory=list)
    expanded: int = 0
    elapsed: float = 0.0  # seconds

    @property
    def reachable(self) -> bool:
        return math.isfinite(self.distance)

    @property
    def steps(self) -> int:
        return max(len(self.path) - 1, 0)


def _zero(node: int, target: int) -> float:
    return 0.0


def _search(adj: Adjacency, source: int, target: int, heuristic: Heuristic) -> PathResult:
    n = len(adj)
    if not (0 <= source < n and 0 <= target < n):
        raise ConfigurationError(f"query {source}->{target} references nodes outside 0..{n - 1}")
    started = time.perf_counter()

    # priority, node, cost to reach, parent
    queue = [(heuristic(source, target), source, 0.0, -1)]
    enqueued = {source: 0.0}
    explored = {}
    while queue:
        _, node, cost, parent = heapq.heappop(queue)
        if node in explored:
            continue
        explored[node] = parent
        if node == target:
            path = [node]
            while explored[path[-1]] != -1:
                path.append(explored[path[-1]])
            path.reverse()
            return PathResult(cost, path, len(explored), time.perf_counter() - started)

        for neighbour, weight in adj[node]:
            if neighbour in explored:
                continue
            new_cost = cost + weight
            if neighbour in enqueued and enqueued[neighbour] <= new_cost:
                continue
            # a costlier entry may stay queued; the settled check skips it
            enqueued[neighbour] = new_cost
            heapq.heappush(queue, (new_cost + heuristic(neighbour, target), neighbour, new_cost, node))

    return PathResult(math.inf, [], len(explored), time.perf_counter() - started)


def dijkstra(adj: Adjacency, source: int, target: int) -> PathResult:
    return _search(adj, source, target, _zero)


def a_star(adj: Adjacency, source: int, target: int, heuristic: Heuristic) -> PathResult:
    return _search(adj, source, target, heuristic)


def grid_adjacency(config: GridConfig) -> List[List[Tuple[int, float]]]:
    """Cell id r*cols + c; unit-cost moves that stay in bounds and cross no wall"""
    adj = []
    for cell in range(config.n_cells):
        here = divmod(cell, config.cols)
        neighbours = []
        for dr, dc in MOVES.values():
            there = (here[0] + dr, here[1] + dc)
            if config.in_bounds(there) and not config.blocked(here, there):
                neighbours.append((there[0] * config.cols + there[1], 1.0))
        adj.append(sorted(neighbours))
    return adj


def graph_adjacency(graph: RoadGraph) -> List[List[Tuple[int, float]]]:
    return [list(arcs) for arcs in graph.out]


def manhattan_heuristic(config: GridConfig) -> Heuristic:
    cols = config.cols

    def h(node: int, target: int) -> float:
        (r1, c1), (r2, c2) = divmod(node, cols), divmod(target, cols)
        return float(abs(r1 - r2) + abs(c1 - c2))
    return h


def graph_heuristic(graph: RoadGraph) -> Heuristic:
    """Euclidean distance scaled by the smallest length / straight-line ratio over all arcs.

    Every arc then costs at least the scaled straight-line gap it closes, so
    the heuristic is consistent as well as admissible.
    """
    ratios = []
    for u, arcs in enumerate(graph.out):
        for v, length in arcs:
            gap = math.dist(graph.position(u), graph.position(v))
            if gap > 0:
                ratios.append(length / gap)
    scale = min(ratios, default=0.0)

    def h(node: int, target: int) -> float:
        return scale * math.dist(graph.position(node), graph.position(target))
    return h


def env_adjacency(env) -> Tuple[List[List[Tuple[int, float]]], Heuristic]:
    if env.kind == 'grid':
        return grid_adjacency(env.config), manhattan_heuristic(env.config)
    return graph_adjacency(env.graph), graph_heuristic(env.graph)


def optimal_tour(env, start: int, pickup: int, dropoff: int, algorithm: str = 'dijkstra') -> PathResult:
    """start -> pickup -> dropoff as two exact legs; node ids are cell ids on grids"""
    adj, heuristic = env_adjacency(env)
    if algorithm == 'astar':
        legs = [a_star(adj, start, pickup, heuristic), a_star(adj, pickup, dropoff, heuristic)]
    elif algorithm == 'dijkstra':
        legs = [dijkstra(adj, start, pickup), dijkstra(adj, pickup, dropoff)]
    else:
        raise ConfigurationError(f"unknown search algorithm {algorithm!r}")

    expanded = sum(leg.expanded for leg in legs)
    elapsed = sum(leg.elapsed for leg in legs)
    if not all(leg.reachable for leg in legs):
        return PathResult(math.inf, [], expanded, elapsed)
    return PathResult(legs[0].distance + legs[1].distance, legs[0].path + legs[1].path[1:], expanded, elapsed)


def tour_endpoints(env, state) -> Tuple[int, int, int]:
    """(start, pickup, dropoff) node ids for a fresh episode state"""
    if env.kind == 'grid':
        config = env.config
        if state.passenger_location == IN_TAXI:
            raise ConfigurationError("tour endpoints need the passenger waiting at a depot")

        def cell_id(cell):
            return cell[0] * config.cols + cell[1]
        return (cell_id(state.cell), cell_id(config.depots[state.passenger_location]),
                cell_id(config.depots[state.destination]))
    return state.current_node, state.pickup_node, state.dropoff_node


def state_tour(env, state, algorithm: str = 'dijkstra') -> PathResult:
    return optimal_tour(env, *tour_endpoints(env, state), algorithm=algorithm)


def optimal_episode_reward(env, state) -> Optional[float]:
    """Drop-off bonus plus the shortest tour's movement costs (20 - moves on the default grid)"""
    tour = state_tour(env, state)
    if not tour.reachable:
        return None
    config = env.config
    if env.kind == 'grid':
        return config.reward_dropoff + config.reward_step * tour.steps
    return config.reward_dropoff - config.step_cost_scale * tour.distance


def optimal_return(env, state) -> Optional[float]:
    """What a delivered shortest-tour episode actually collects: the pickup action costs one more step"""
    reward = optimal_episode_reward(env, state)
    return None if reward is None else reward + env.config.reward_step
