"""End-to-end checks at full experiment scale; deselected unless run with -m slow."""
import numpy as np
import pandas as pd
import pytest

from src.agents.learner import LearnerConfig, evaluate_policy, qcogni_learn, vanilla_q_learn
from src.bench.cli import run
from src.bench.experiments import (
    EQUAL, SHORTER, bench_scaling, evaluation_starts, route_compare, transfer_network,
)
from src.causal.bayesnet import fit_cpds, query_probability
from src.causal.inference import GoalSpec, infer_max_prob
from src.causal.sampler import random_walk
from src.causal.structure import (
    TAXI_DISCOVERY, default_tabu, discover_structure, h_acyclicity, random_dag_weights, simulate_linear_sem,
    structural_hamming_distance,
)
from src.envs.graph import GraphEnv, random_trips, synthetic_road_graph
from src.envs.grid import GridConfig, GridEnv, default_taxi_config, make_grid_config
from src.routing.shortest_path import (
    a_star, dijkstra, graph_adjacency, graph_heuristic, grid_adjacency, manhattan_heuristic, optimal_return,
)
from src.utils.config import DEFAULT_GOALS, GRAPH_DISCOUNT, GRAPH_EPISODES, TAXI_WALK_STEPS
from tests.helpers import MatrixData, enumerate_posterior, make_bn, random_network

pytestmark = pytest.mark.slow

GOALS = GoalSpec(DEFAULT_GOALS)


@pytest.fixture(scope='module')
def taxi():
    return GridEnv(default_taxi_config(), env_id='taxi5')


@pytest.fixture(scope='module')
def taxi_walk(taxi):
    return random_walk(taxi, TAXI_WALK_STEPS, seed=0)


@pytest.fixture(scope='module')
def taxi_dag_discovered(taxi_walk):
    return discover_structure(taxi_walk, default_tabu(taxi_walk.schema), TAXI_DISCOVERY)


@pytest.fixture(scope='module')
def taxi_bn(taxi_dag_discovered, taxi_walk):
    return fit_cpds(taxi_dag_discovered, taxi_walk)


def test_structure_recovery_on_the_taxi_walk(taxi_dag_discovered):
    edges = {(u, v) for u, v, _ in taxi_dag_discovered.edges()}
    assert ('taxi_on_pax_loc', 'pax_in_taxi_next') in edges
    assert ('action_pickup', 'pax_in_taxi_next') in edges
    assert taxi_dag_discovered.violations() == []
    assert taxi_dag_discovered.is_acyclic()


def test_greedy_policy_is_optimal_after_training(taxi, taxi_bn):
    table, _ = qcogni_learn(taxi, taxi_bn, GOALS, LearnerConfig(episodes=1000, seed=0))
    starts = evaluation_starts(taxi, 100, 12345)
    report = evaluate_policy(taxi, table, starts, taxi_bn, GOALS)
    optimal = sum(row.reward == optimal_return(taxi, start) for row, start in zip(report.rows, starts))
    assert optimal >= 95


def test_qcogni_learns_faster_and_steadier(taxi, taxi_bn):
    config = LearnerConfig(episodes=1000, seed=0)
    _, causal = qcogni_learn(taxi, taxi_bn, GOALS, config)
    _, vanilla = vanilla_q_learn(taxi, config)
    causal_rewards, vanilla_rewards = causal.rewards(), vanilla.rewards()
    assert causal_rewards[:200].mean() > vanilla_rewards[:200].mean()
    assert causal_rewards[799:].std() < vanilla_rewards[799:].std()


def test_sem_recovery_sweep():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        W = random_dag_weights(6, 6, rng)
        dag = discover_structure(MatrixData(simulate_linear_sem(W, 1000, rng)))
        assert structural_hamming_distance(W, dag.weights) <= 2, f"seed {seed}"
        assert dag.h_value <= 1e-8
        assert h_acyclicity(dag.weights)[0] <= 1e-8


def test_inference_matches_enumeration_on_random_networks():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        base = random_network(rng, int(rng.integers(4, 13)))
        names = base.dag.names
        goal, actions = names[-1], names[:2]
        roles = ['action' if n in actions else 'goal' if n == goal else 'state' for n in names]
        bn = make_bn(names, roles, [(u, v) for u, v, _ in base.dag.edges()],
                     {n: base.cpds[n].table for n in names})
        states = names[2:-1]
        chosen = rng.choice(len(states), size=int(rng.integers(0, len(states) + 1)), replace=False)
        evidence = {states[int(k)]: int(rng.integers(2)) for k in chosen}

        result = query_probability(bn, goal, 1, evidence)
        assert result.probability == pytest.approx(enumerate_posterior(bn, goal, 1, evidence), abs=1e-9)
        inferred = infer_max_prob(bn, evidence, [0, 1], goal, lambda a: actions[a])
        for action, probability in inferred.per_action.items():
            clamped = {**evidence, **{node: int(node == actions[action]) for node in actions}}
            assert probability == pytest.approx(enumerate_posterior(bn, goal, 1, clamped), abs=1e-9)


def test_astar_agrees_with_dijkstra_on_a_thousand_instances():
    rng = np.random.default_rng(0)
    for k in range(500):
        if k % 50 == 0:
            size = int(rng.integers(5, 30))
            config = make_grid_config(size, size, seed=k) if k % 100 else GridConfig(
                rows=size, cols=size, depots=((0, 0), (size - 1, size - 1)))
            adj, h = grid_adjacency(config), manhattan_heuristic(config)
        source, target = (int(v) for v in rng.integers(0, config.n_cells, size=2))
        exact, guided = dijkstra(adj, source, target), a_star(adj, source, target, h)
        assert guided.distance == exact.distance
        assert guided.expanded <= exact.expanded
    for k in range(500):
        if k % 50 == 0:
            graph = synthetic_road_graph(int(rng.integers(16, 200)), seed=k)
            adj, h = graph_adjacency(graph), graph_heuristic(graph)
        source, target = (int(v) for v in rng.integers(0, graph.n_nodes, size=2))
        assert a_star(adj, source, target, h).distance == pytest.approx(dijkstra(adj, source, target).distance)


def test_route_comparison_on_a_desk_scale_graph(taxi_dag_discovered):
    graph = synthetic_road_graph(64, seed=0)
    env = GraphEnv(graph, env_id='graph64')
    bn = transfer_network(env, taxi_dag_discovered, 200_000, seed=0)
    config = LearnerConfig(episodes=GRAPH_EPISODES, discount=GRAPH_DISCOUNT, reward_adjustment='infer', seed=0)
    table, _ = qcogni_learn(env, bn, GOALS, config)
    trips = pd.DataFrame(random_trips(graph, 100, seed=1), columns=['pickup', 'dropoff'])
    _, comparison, summary = route_compare(env, trips, table, bn, GOALS)
    assert summary['qcogni']['fractions'][EQUAL] >= 0.85
    assert summary['qcogni']['counts'][SHORTER] == 0


def test_scaling_harness_orders_small_grids(taxi_bn):
    frame = bench_scaling([8, 16, 32, 64, 512], ['dijkstra', 'astar', 'qcogni'], bn=taxi_bn, budget_s=60.0)
    assert len(frame) == 5 * 3
    cell = frame.set_index(['size', 'algorithm'])
    assert cell.loc[(8, 'qcogni'), 'elapsed_s'] > cell.loc[(8, 'dijkstra'), 'elapsed_s']
    assert cell.loc[(512, 'dijkstra'), 'note'].startswith('skipped')


def test_pipeline_reruns_are_byte_identical(tmp_path):
    flags = ['pipeline', '--steps', '50000', '--episodes', '50', '--configs', '10']
    for name in ('first', 'second'):
        assert run(flags + ['--out-dir', str(tmp_path / name)]) == 0
    for artifact in ('walk.csv', 'dag.json', 'dag.dot', 'bn.json', 'train/qtable.csv', 'train/curve.csv',
                     'eval.csv'):
        assert (tmp_path / 'first' / artifact).read_bytes() == (tmp_path / 'second' / artifact).read_bytes()
