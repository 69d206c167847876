"""
Subcommand implementations. Each one loads its inputs first, so a bad input
fails before anything is written, then writes its artifact and a manifest.
"""
import json
import re
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from src.agents.learner import (
    LearnerConfig, evaluate_policy, qcogni_learn, trace_episode, vanilla_q_learn, write_trace,
)
from src.agents.qtable import load_qtable, save_curve, save_qtable
from src.bench.experiments import bench_scaling, evaluation_starts, route_compare
from src.bench.manifest import write_manifest
from src.causal.bayesnet import DiscreteBayesNet, bn_from_json, bn_to_json, fit_cpds
from src.causal.features import FeatureSchema
from src.causal.inference import GoalSpec
from src.causal.sampler import load_dataset, random_walk, save_dataset
from src.causal.structure import (
    TAXI_DISCOVERY, CausalDag, DiscoveryParams, TabuSpec, default_tabu, discover_structure, export_dag,
    import_dag, load_tabu,
)
from src.envs.graph import (
    GraphEnv, GraphEnvConfig, load_graph, load_trips, random_trips, save_graph, save_trips,
    synthetic_road_graph,
)
from src.envs.grid import GridEnv, default_taxi_config, load_map, make_grid_config
from src.routing.shortest_path import optimal_episode_reward, optimal_return, state_tour
from src.utils.config import GRAPH_DISCOUNT, GRAPH_EPISODES, GRAPH_WALK_STEPS, TAXI_WALK_STEPS
from src.utils.errors import DataError, UsageError
from src.utils.logger import print_status, setup_logger
from src.utils.paths import OUTPUT_DIR

logger = setup_logger('commands')


def _params(args) -> Dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ('func', 'config')}


def _out(path: Optional[str], default: str) -> Path:
    out = Path(path) if path else OUTPUT_DIR / default
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _read_text(path, what: str) -> str:
    if not path:
        raise UsageError(f"--{what} is required")
    try:
        return Path(path).read_text()
    except OSError as e:
        raise DataError(f"cannot read {what} file {path}: {e}") from e


def build_env(args):
    """--env taxi5 | gridRxC | graph (with --graph FILE) | graphN; --map FILE loads a grid map"""
    spec = (args.env or 'taxi5').lower()
    max_steps = getattr(args, 'max_steps', None)
    overrides = {'max_steps_per_episode': max_steps} if max_steps else {}
    if getattr(args, 'map', None):
        config = load_map(args.map)
        if overrides:
            config = replace(config, **overrides).validate()
        return GridEnv(config, env_id=Path(args.map).stem)
    if spec == 'taxi5':
        return GridEnv(default_taxi_config(**overrides), env_id='taxi5')
    grid = re.fullmatch(r'grid(\d+)x(\d+)', spec)
    if grid:
        rows, cols = int(grid.group(1)), int(grid.group(2))
        return GridEnv(make_grid_config(rows, cols, seed=args.map_seed, **overrides))
    graph_config = GraphEnvConfig(max_steps_per_episode=max_steps)
    if spec == 'graph':
        if not getattr(args, 'graph', None):
            raise UsageError("--env graph needs --graph FILE")
        return GraphEnv(load_graph(args.graph), graph_config, env_id=Path(args.graph).stem)
    synthetic = re.fullmatch(r'graph(\d+)', spec)
    if synthetic:
        return GraphEnv(synthetic_road_graph(int(synthetic.group(1)), seed=args.graph_seed), graph_config)
    raise UsageError(f"unknown environment {args.env!r}")


def _env_inputs(args) -> List:
    return [getattr(args, 'map', None), getattr(args, 'graph', None)]


def _goals(args) -> GoalSpec:
    return GoalSpec.parse(args.goals)


def load_bn(path) -> DiscreteBayesNet:
    return bn_from_json(_read_text(path, 'bn'))


def learner_config(args, env) -> LearnerConfig:
    """Graph envs default to distance-optimal settings: no discount, only infer steps p-scaled

    With no discount, scaling every step by p would price a move at roughly
    p * length with p near the smoothing floor away from the targets, so route
    lengths could not be told apart.
    """
    preset = args.learner_preset or ('graph' if env.kind == 'graph' else 'grid')
    base = LearnerConfig()
    if preset == 'graph':
        base = LearnerConfig(episodes=GRAPH_EPISODES, discount=GRAPH_DISCOUNT, reward_adjustment='infer')
    overrides = {
        'episodes': args.episodes, 'learning_rate': args.learning_rate, 'discount': args.discount,
        'epsilon': args.epsilon, 'epsilon_min': args.epsilon_min, 'epsilon_decay': args.epsilon_decay,
        'seed': args.seed, 'goal_advance_mode': args.goal_advance, 'infer_threshold': args.infer_threshold,
        'reward_adjustment': args.reward_adjustment,
    }
    values = {**base.to_dict(), **{k: v for k, v in overrides.items() if v is not None}}
    return LearnerConfig(**values).validate()


def discovery_params(args) -> DiscoveryParams:
    base = TAXI_DISCOVERY if args.solver_preset == 'taxi' else DiscoveryParams()
    values = {**base.to_dict()}
    for key, flag in (('l1_penalty', 'l1'), ('threshold', 'threshold'),
                      ('max_outer_iterations', 'max_iter'), ('h_tolerance', 'h_tol')):
        if getattr(args, flag) is not None:
            values[key] = getattr(args, flag)
    return DiscoveryParams(**values).validate()


def resolve_tabu(spec: str, schema: FeatureSchema) -> TabuSpec:
    if spec == 'default':
        return default_tabu(schema)
    if spec == 'none':
        return TabuSpec()
    return load_tabu(spec)


# --- sample -------------------------------------------------------------------

def run_sample(env, steps: int, seed: int, tier: str, reward_node: bool, out: Path):
    schema = FeatureSchema.for_env(env, tier=tier, include_reward=reward_node)
    data = random_walk(env, steps, seed, schema)
    save_dataset(data, out)
    return data


def cmd_sample(args):
    if args.steps is None or args.steps < 1:
        raise UsageError("--steps must be a positive integer")
    env = build_env(args)
    out = _out(args.out, 'walk.csv')
    data = run_sample(env, args.steps, args.seed, args.tier, args.reward_node, out)
    write_manifest(out, 'sample', _params(args), _env_inputs(args), {'seed': args.seed},
                   {'episodes': data.provenance.get('episodes'), 'visited_states': len(data.visited)})
    print_status(f"Wrote {len(data)} transitions to {out}", "SUCCESS")


# --- discover -----------------------------------------------------------------

def run_discover(data, tabu_spec: str, params: DiscoveryParams, out: Path, dot: Optional[Path] = None) -> CausalDag:
    dag = discover_structure(data, resolve_tabu(tabu_spec, data.schema), params)
    out.write_text(export_dag(dag, 'json'))
    if dot:
        dot.write_text(export_dag(dag, 'dot'))
    return dag


def cmd_discover(args):
    data = load_dataset(args.data) if args.data else None
    if data is None:
        raise UsageError("--data is required")
    params = discovery_params(args)
    out = _out(args.out, 'dag.json')
    dot = Path(args.dot) if args.dot else None
    dag = run_discover(data, args.tabu, params, out, dot)
    inputs = [args.data] + ([args.tabu] if args.tabu not in ('default', 'none') else [])
    write_manifest(out, 'discover', _params(args), inputs, extra={'h_value': dag.h_value, 'edges': len(dag.edges())})
    print_status(f"Discovered {len(dag.edges())} edges; DAG written to {out}", "SUCCESS")


# --- fit ----------------------------------------------------------------------

def run_fit(dag: CausalDag, data, smoothing: float, max_cardinality: int, out: Path) -> DiscreteBayesNet:
    missing = [name for name in dag.names if name not in data.columns]
    if missing:
        raise DataError(f"dataset lacks the DAG columns {missing}")
    bn = fit_cpds(dag, data, smoothing, max_cardinality)
    out.write_text(bn_to_json(bn))
    return bn


def cmd_fit(args):
    dag = import_dag(_read_text(args.dag, 'dag'), 'json')
    if not args.data:
        raise UsageError("--data is required")
    data = load_dataset(args.data)
    out = _out(args.out, 'bn.json')
    run_fit(dag, data, args.smoothing, args.max_cardinality, out)
    write_manifest(out, 'fit', _params(args), [args.dag, args.data])
    print_status(f"Fitted network written to {out}", "SUCCESS")


# --- train --------------------------------------------------------------------

def run_train(env, bn: Optional[DiscreteBayesNet], goals: GoalSpec, config: LearnerConfig, out_dir: Path):
    if bn is not None:
        table, curve = qcogni_learn(env, bn, goals, config)
    else:
        table, curve = vanilla_q_learn(env, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_qtable(table, out_dir / 'qtable.csv')
    save_curve(curve, out_dir / 'curve.csv')
    return table, curve


def cmd_train(args):
    env = build_env(args)
    bn = load_bn(args.bn) if args.algorithm == 'qcogni' else None
    config = learner_config(args, env)
    out_dir = Path(args.out_dir) if args.out_dir else OUTPUT_DIR / f"train_{env.env_id}_{args.algorithm}"
    table, curve = run_train(env, bn, _goals(args), config, out_dir)
    params = {**_params(args), 'resolved': config.to_dict()}
    for artifact in ('qtable.csv', 'curve.csv'):
        write_manifest(out_dir / artifact, 'train', params, _env_inputs(args) + [args.bn], {'seed': config.seed})
    print_status(f"Trained {config.episodes} episodes; last reward {curve.records[-1].total_reward:.2f}; "
                 f"outputs in {out_dir}", "SUCCESS")


# --- eval ---------------------------------------------------------------------

def _eval_starts(args, env) -> list:
    if env.kind == 'graph' and args.trips:
        trips = load_trips(args.trips)
        has_start = 'start' in trips.columns
        return [(int(t.pickup), int(t.dropoff), int(t.start) if has_start and not pd.isna(t.start) else None)
                for t in trips.itertuples(index=False)]
    return evaluation_starts(env, args.configs, args.eval_seed)


def run_eval(env, table, bn, goals, starts, infer_threshold: float, goal_advance_mode: str) -> pd.DataFrame:
    report = evaluate_policy(env, table, starts, bn, goals, infer_threshold, goal_advance_mode)
    frame = report.to_frame()
    optimal_rewards, optimal_returns, optimal_distances = [], [], []
    for start in starts:
        state = env.initial_state(start)
        optimal_rewards.append(optimal_episode_reward(env, state))
        optimal_returns.append(optimal_return(env, state))
        optimal_distances.append(state_tour(env, state).distance)
    frame['optimal_reward'] = optimal_rewards
    frame['optimal_return'] = optimal_returns
    frame['optimal_distance'] = optimal_distances
    return frame


def cmd_eval(args):
    table = load_qtable(args.qtable) if args.qtable else None
    if table is None:
        raise UsageError("--qtable is required")
    env = build_env(args)
    table.check_env(env)
    bn = load_bn(args.bn) if args.bn else None
    starts = _eval_starts(args, env)
    frame = run_eval(env, table, bn, _goals(args), starts, args.infer_threshold, args.goal_advance)
    out = _out(args.out, 'eval.csv')
    frame.to_csv(out, index=False, float_format='%.17g')
    write_manifest(out, 'eval', _params(args), _env_inputs(args) + [args.qtable, args.bn, args.trips],
                   {'eval_seed': args.eval_seed})
    optimal = (frame['reward'] >= frame['optimal_return'] - 1e-9).sum()
    print_status(f"{int(frame['success'].sum())}/{len(frame)} delivered, {int(optimal)} at optimal reward; "
                 f"written to {out}", "SUCCESS")


# --- trace --------------------------------------------------------------------

def cmd_trace(args):
    table = load_qtable(args.qtable) if args.qtable else None
    if table is None:
        raise UsageError("--qtable is required")
    env = build_env(args)
    table.check_env(env)
    bn = load_bn(args.bn)
    config = LearnerConfig(seed=args.seed, infer_threshold=args.infer_threshold)
    start = evaluation_starts(env, 1, args.seed)[0]
    records = trace_episode(env, table, bn, _goals(args), config, start=start, epsilon=args.epsilon)
    out = _out(args.out, 'trace.jsonl')
    write_trace(records, out)
    write_manifest(out, 'trace', _params(args), _env_inputs(args) + [args.qtable, args.bn], {'seed': args.seed})
    print_status(f"Traced {len(records)} steps to {out}", "SUCCESS")


# --- bench-scaling -----------------------------------------------------------

def _int_list(text: str, flag: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise UsageError(f"--{flag} must be a comma-separated list of integers")


def cmd_bench_scaling(args):
    sizes = _int_list(args.sizes, 'sizes')
    algorithms = [a.strip() for a in args.algorithms.split(',') if a.strip()]
    bn = load_bn(args.bn) if args.bn else None
    frame = bench_scaling(sizes, algorithms, args.repeats, args.seed, bn, _goals(args),
                          max_nodes=args.max_nodes, budget_s=args.budget, chunk=args.chunk)
    out = _out(args.out, 'scaling.csv')
    frame.to_csv(out, index=False)
    write_manifest(out, 'bench-scaling', _params(args), [args.bn], {'seed': args.seed})
    print_status(f"Scaling results ({len(frame)} rows) written to {out}", "SUCCESS")


# --- route-compare -----------------------------------------------------------

def cmd_route_compare(args):
    table = load_qtable(args.qtable) if args.qtable else None
    if table is None:
        raise UsageError("--qtable is required")
    baseline = load_qtable(args.baseline_qtable) if args.baseline_qtable else None
    bn = load_bn(args.bn)
    if not args.trips:
        raise UsageError("--trips is required")
    trips = load_trips(args.trips)
    env = build_env(args)
    if env.kind != 'graph':
        raise UsageError("route-compare needs a graph environment")
    table.check_env(env)
    if baseline is not None:
        baseline.check_env(env)

    routes, comparison, summary = route_compare(env, trips, table, bn, _goals(args), baseline,
                                                 args.infer_threshold, args.goal_advance)
    out = _out(args.out, 'routes.csv')
    comparison_path = out.with_name(out.stem + '_comparison.csv')
    summary_path = out.with_name(out.stem + '_summary.json')
    routes.to_csv(out, index=False, float_format='%.17g')
    comparison.to_csv(comparison_path, index=False, float_format='%.17g')
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    inputs = _env_inputs(args) + [args.trips, args.qtable, args.baseline_qtable, args.bn]
    for artifact in (out, comparison_path, summary_path):
        write_manifest(artifact, 'route-compare', _params(args), inputs)
    fractions = summary['qcogni']['fractions']
    print_status(f"Q-Cogni vs Dijkstra: equal {fractions['equal']:.0%}, longer {fractions['longer']:.0%}, "
                 f"failed {fractions['failed']:.0%}", "SUCCESS")


# --- make-graph ---------------------------------------------------------------

def cmd_make_graph(args):
    graph = synthetic_road_graph(args.nodes, seed=args.seed)
    out = _out(args.out, f"graph{args.nodes}.txt")
    save_graph(graph, out)
    trips_out = Path(args.trips_out) if args.trips_out else out.with_name(out.stem + '_trips.csv')
    save_trips(random_trips(graph, args.trips, seed=args.trip_seed), trips_out)
    for artifact in (out, trips_out):
        write_manifest(artifact, 'make-graph', _params(args), seeds={'seed': args.seed, 'trip_seed': args.trip_seed})
    print_status(f"Graph with {graph.n_nodes} nodes and {len(graph.edges)} edges written to {out}", "SUCCESS")


# --- pipeline -----------------------------------------------------------------

def cmd_pipeline(args):
    """sample -> discover (or --dag) -> fit -> train -> eval, one manifest per stage

    Graph envs without --dag take their structure from a walk of the classic
    taxi map and only refit the CPDs on the graph walk.
    """
    env = build_env(args)
    out_dir = Path(args.out_dir) if args.out_dir else OUTPUT_DIR / f"pipeline_{env.env_id}"
    out_dir.mkdir(parents=True, exist_ok=True)
    params = _params(args)
    env_inputs = _env_inputs(args)
    steps = args.steps or (GRAPH_WALK_STEPS if isinstance(env, GraphEnv) else TAXI_WALK_STEPS)

    walk = out_dir / 'walk.csv'
    data = run_sample(env, steps, args.seed, 'core', False, walk)
    write_manifest(walk, 'pipeline:sample', params, env_inputs, {'seed': args.seed})
    print_status(f"Sampled {len(data)} transitions", "INFO")

    dag_path = out_dir / 'dag.json'
    if args.dag:
        dag = import_dag(_read_text(args.dag, 'dag'), 'json')
        dag_path.write_text(export_dag(dag, 'json'))
        write_manifest(dag_path, 'pipeline:import-dag', params, [args.dag])
    elif isinstance(env, GraphEnv):
        taxi_walk = out_dir / 'taxi_walk.csv'
        taxi_env = GridEnv(default_taxi_config(), env_id='taxi5')
        taxi_data = run_sample(taxi_env, args.taxi_steps, args.seed, 'core', False, taxi_walk)
        write_manifest(taxi_walk, 'pipeline:sample-taxi', params, seeds={'seed': args.seed})
        dag = run_discover(taxi_data, args.tabu, discovery_params(args), dag_path, out_dir / 'dag.dot')
        write_manifest(dag_path, 'pipeline:discover-taxi', params, [taxi_walk])
    else:
        dag = run_discover(data, args.tabu, discovery_params(args), dag_path, out_dir / 'dag.dot')
        write_manifest(dag_path, 'pipeline:discover', params, [walk])
    print_status(f"Structure has {len(dag.edges())} edges", "INFO")

    bn_path = out_dir / 'bn.json'
    bn = run_fit(dag, data, args.smoothing, args.max_cardinality, bn_path)
    write_manifest(bn_path, 'pipeline:fit', params, [dag_path, walk])

    config = learner_config(args, env)
    train_dir = out_dir / 'train'
    table, curve = run_train(env, bn, _goals(args), config, train_dir)
    for artifact in ('qtable.csv', 'curve.csv'):
        write_manifest(train_dir / artifact, 'pipeline:train', {**params, 'resolved': config.to_dict()},
                       env_inputs + [bn_path], {'seed': config.seed})
    print_status(f"Trained {config.episodes} episodes", "INFO")

    starts = _eval_starts(args, env)
    frame = run_eval(env, table, bn, _goals(args), starts, config.infer_threshold, config.goal_advance_mode)
    eval_path = out_dir / 'eval.csv'
    frame.to_csv(eval_path, index=False, float_format='%.17g')
    write_manifest(eval_path, 'pipeline:eval', params, env_inputs + [train_dir / 'qtable.csv', bn_path, args.trips],
                   {'eval_seed': args.eval_seed})
    print_status(f"Pipeline finished: {int(frame['success'].sum())}/{len(frame)} delivered; outputs in {out_dir}",
                 "SUCCESS")
