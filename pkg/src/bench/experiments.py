"""
Experiment harnesses behind the bench commands: the grid scaling study and the
road-graph route comparison against the exact oracle.
"""
import math
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.agents.learner import CausalPolicy, LearnerConfig, QLearningRun, rollout
from src.agents.qtable import QTable
from src.causal.bayesnet import DiscreteBayesNet, fit_cpds
from src.causal.inference import GoalSpec
from src.causal.sampler import random_walk
from src.causal.structure import TAXI_DISCOVERY, CausalDag, default_tabu, discover_structure
from src.envs.grid import GridEnv, default_taxi_config, grid_reset, make_grid_config
from src.routing.shortest_path import optimal_return, optimal_tour, state_tour
from src.utils.config import (
    CPD_SMOOTHING, DEFAULT_GOALS, GOAL_ADVANCE_MODE, SCALING_BN_WALK_STEPS, SCALING_EPISODE_CHUNK, SCALING_MAX_NODES,
    SCALING_TIME_BUDGET_S,
)
from src.utils.errors import ConfigurationError
from src.utils.logger import setup_logger

logger = setup_logger('experiments')

SEARCH_ALGORITHMS = ('dijkstra', 'astar')
LEARNING_ALGORITHMS = ('qcogni', 'qlearning')
SCALING_COLUMNS = ['size', 'nodes', 'algorithm', 'repeat', 'elapsed_s', 'criterion_met', 'note']
ROUTE_COLUMNS = ['trip_id', 'algorithm', 'distance', 'steps', 'elapsed_us', 'path']

EQUAL, LONGER, SHORTER, FAILED, INVALID = 'equal', 'longer', 'shorter', 'failed', 'invalid'


def taxi_reference_network(steps: int = SCALING_BN_WALK_STEPS, seed: int = 0) -> DiscreteBayesNet:
    """Core-tier network learned on the classic 5x5 map; it transfers to any grid size"""
    data = random_walk(GridEnv(default_taxi_config()), steps, seed)
    return fit_cpds(discover_structure(data, default_tabu(data.schema), TAXI_DISCOVERY), data)


def transfer_network(env, dag: CausalDag, steps: int, seed: int = 0,
                     smoothing: float = CPD_SMOOTHING) -> DiscreteBayesNet:
    """Keep a learned structure, refit its CPDs on a random walk of another env"""
    data = random_walk(env, steps, seed)
    missing = [name for name in dag.names if name not in data.columns]
    if missing:
        raise ConfigurationError(f"{env.env_id} walks lack the DAG columns {missing}")
    return fit_cpds(dag, data, smoothing)


def _train_to_criterion(env, start, target: float, policy: Optional[CausalPolicy], config: LearnerConfig,
                        chunk: int, budget_s: float) -> Tuple[float, bool]:
    run = QLearningRun(env, config, policy)
    started = time.perf_counter()
    while True:
        run.train(chunk)
        reward, _, _, delivered = rollout(env, run.qtable, env.initial_state(start), policy,
                                           goal_advance_mode=config.goal_advance_mode)
        elapsed = time.perf_counter() - started
        if delivered and reward >= target - 1e-9:
            return elapsed, True
        if elapsed >= budget_s:
            return elapsed, False


def bench_scaling(sizes: Sequence[int], algorithms: Sequence[str], repeats: int = 1, seed: int = 0,
                  bn: Optional[DiscreteBayesNet] = None, goals: Optional[GoalSpec] = None,
                  config: Optional[LearnerConfig] = None, max_nodes: int = SCALING_MAX_NODES,
                  budget_s: float = SCALING_TIME_BUDGET_S, chunk: int = SCALING_EPISODE_CHUNK) -> pd.DataFrame:
    """Time to an optimal tour on an n x n grid: query time for search, training-to-criterion for learners"""
    unknown = sorted(set(algorithms) - set(SEARCH_ALGORITHMS) - set(LEARNING_ALGORITHMS))
    if unknown:
        raise ConfigurationError(f"unknown algorithms: {unknown}")
    if repeats < 1:
        raise ConfigurationError("repeats must be positive")
    config = config or LearnerConfig()
    goals = goals or GoalSpec(DEFAULT_GOALS)
    if 'qcogni' in algorithms and bn is None:
        bn = taxi_reference_network(seed=seed)

    rows = []
    for size in sorted(set(sizes)):
        nodes = size * size
        if size < 2:
            raise ConfigurationError(f"grid size must be at least 2, got {size}")
        if nodes > max_nodes:
            note = f"skipped: {nodes} nodes exceeds max_nodes={max_nodes}"
            rows += [(size, nodes, a, r, math.nan, False, note) for a in algorithms for r in range(1, repeats + 1)]
            continue

        env = GridEnv(make_grid_config(size, size, seed=seed))
        start = grid_reset(env.config, seed)
        target = optimal_return(env, start)
        for algorithm in algorithms:
            for repeat in range(1, repeats + 1):
                note = ''
                if algorithm in SEARCH_ALGORITHMS:
                    tour = state_tour(env, start, algorithm)
                    elapsed, met = tour.elapsed, tour.reachable
                else:
                    policy = CausalPolicy(env, bn, goals, config.infer_threshold) if algorithm == 'qcogni' else None
                    run_config = LearnerConfig(**{**config.to_dict(), 'seed': seed + repeat})
                    elapsed, met = _train_to_criterion(env, start, target, policy, run_config, chunk, budget_s)
                    if not met:
                        note = f"criterion not met within {budget_s:g}s"
                logger.info(f"Scaling {size}x{size} {algorithm} repeat {repeat}: {elapsed:.4f}s met={met}")
                rows.append((size, nodes, algorithm, repeat, elapsed, met, note))

    frame = pd.DataFrame(rows, columns=SCALING_COLUMNS)
    return frame.sort_values(['size', 'algorithm', 'repeat'], kind='stable').reset_index(drop=True)


def _classify(distance: float, delivered: bool, oracle: float) -> str:
    if not delivered:
        return FAILED
    if abs(distance - oracle) <= 1e-9 * max(1.0, oracle):
        return EQUAL
    return LONGER if distance > oracle else SHORTER


def _policy_route(env, qtable: QTable, state, policy: Optional[CausalPolicy], goal_advance_mode: str):
    path = [state.current_node]

    def follow(_, __, outcome, ___, ____):
        if outcome.distance > 0:
            path.append(outcome.next_state.current_node)

    started = time.perf_counter()
    _, steps, distance, delivered = rollout(env, qtable, state, policy, on_step=follow,
                                          goal_advance_mode=goal_advance_mode)
    return distance, steps, (time.perf_counter() - started) * 1e6, path, delivered


def _route_row(trip_id, algorithm, distance, steps, elapsed_us, path) -> Dict:
    return {'trip_id': trip_id, 'algorithm': algorithm, 'distance': distance, 'steps': steps,
            'elapsed_us': round(elapsed_us, 1), 'path': '-'.join(map(str, path))}


def route_compare(env, trips: pd.DataFrame, qtable: QTable, bn: DiscreteBayesNet, goals: GoalSpec,
                  baseline: Optional[QTable] = None, infer_threshold: Optional[float] = None,
                  goal_advance_mode: str = GOAL_ADVANCE_MODE):
    """Greedy rollouts per trip against the Dijkstra tour; returns (routes, comparison, summary)"""
    threshold = LearnerConfig().infer_threshold if infer_threshold is None else infer_threshold
    policy = CausalPolicy(env, bn, goals, threshold)
    learners = [('qcogni', qtable, policy)] + ([('qlearning', baseline, None)] if baseline is not None else [])

    routes: List[Dict] = []
    comparison: List[Dict] = []
    for trip_id, trip in enumerate(trips.itertuples(index=False), start=1):
        pickup, dropoff = int(trip.pickup), int(trip.dropoff)
        start = getattr(trip, 'start', None)
        start = None if start is None or pd.isna(start) else int(start)
        row = {'trip_id': trip_id, 'pickup': pickup, 'dropoff': dropoff}
        try:
            state = env.initial_state((pickup, dropoff, start))
        except ConfigurationError as e:
            logger.warning(f"Trip {trip_id} is invalid: {e}")
            row.update({'dijkstra': math.nan, **{name: math.nan for name, _, _ in learners},
                        **{f"{name}_outcome": INVALID for name, _, _ in learners}})
            comparison.append(row)
            continue

        oracle = None
        for algorithm in SEARCH_ALGORITHMS:
            tour = optimal_tour(env, state.current_node, pickup, dropoff, algorithm)
            routes.append(_route_row(trip_id, algorithm, tour.distance, tour.steps, tour.elapsed * 1e6, tour.path))
            oracle = tour.distance if algorithm == 'dijkstra' else oracle
        row['dijkstra'] = oracle

        for name, table, learner_policy in learners:
            distance, steps, elapsed_us, path, delivered = _policy_route(
                env, table, state, learner_policy, goal_advance_mode)
            routes.append(_route_row(trip_id, name, distance if delivered else math.nan, steps, elapsed_us, path))
            row[name] = distance if delivered else math.nan
            row[f"{name}_outcome"] = _classify(distance, delivered, oracle)
        comparison.append(row)

    comparison = pd.DataFrame(comparison)
    summary = summarize_routes(comparison, [name for name, _, _ in learners])
    return pd.DataFrame(routes, columns=ROUTE_COLUMNS), comparison, summary


def summarize_routes(comparison: pd.DataFrame, learners: Sequence[str]) -> Dict:
    summary = {'trips': int(len(comparison))}
    for name in learners:
        outcomes = comparison[f"{name}_outcome"]
        valid = outcomes[outcomes != INVALID]
        counts = {label: int((valid == label).sum()) for label in (EQUAL, LONGER, SHORTER, FAILED)}
        total = len(valid)
        summary[name] = {
            'valid_trips': total,
            'invalid_trips': int((outcomes == INVALID).sum()),
            'counts': counts,
            'fractions': {label: (count / total if total else 0.0) for label, count in counts.items()},
        }
    return summary


def evaluation_starts(env, count: int, seed: int) -> list:
    """Seeded held-out starts: grid reset states or (pickup, dropoff, start) triples"""
    rng = np.random.default_rng(seed)
    if env.kind == 'grid':
        return [grid_reset(env.config, rng) for _ in range(count)]
    starts = []
    for _ in range(count):
        state = env.reset(rng)
        starts.append((state.pickup_node, state.dropoff_node, state.current_node))
    return starts
