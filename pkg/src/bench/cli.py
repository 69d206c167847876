"""
Command-line front end. Every flag may also come from a key=value config file
given with --config; flags on the command line win.
"""
import argparse
from pathlib import Path
from typing import Dict, List, Optional

from src.bench import commands
from src.utils.config import (
    CPD_SMOOTHING, DEFAULT_GOALS, GOAL_ADVANCE_MODE, GRAPH_NODES, GRAPH_TRIPS, INFER_THRESHOLD, LOG_LEVEL,
    MAX_CARDINALITY, SCALING_EPISODE_CHUNK, SCALING_MAX_NODES, SCALING_SIZES, SCALING_TIME_BUDGET_S, TAXI_WALK_STEPS,
)
from src.utils.errors import QCogniError, UsageError
from src.utils.logger import LOG_LEVELS, print_status, set_log_level, setup_logger

logger = setup_logger('cli')

GOALS = ','.join(DEFAULT_GOALS)


class ArgumentParser(argparse.ArgumentParser):
    """Usage problems become UsageError (exit 1) instead of argparse's exit 2"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def load_config_file(path) -> Dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}")
    for number, raw in enumerate(lines, start=1):
        line = raw.split('#')[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        if not sep:
            raise UsageError(f"{path}:{number}: expected key=value, got {raw!r}")
        values[key.strip().lstrip('-').replace('-', '_')] = value.strip()
    return values


def _env_args(parser):
    parser.add_argument('--env', default='taxi5', help="taxi5, gridRxC, graph (with --graph) or graphN")
    parser.add_argument('--map', help="grid map file (overrides --env)")
    parser.add_argument('--map-seed', type=int, default=0, help="wall seed for generated grids")
    parser.add_argument('--graph', help="road graph file for --env graph")
    parser.add_argument('--graph-seed', type=int, default=0, help="seed for synthetic graphs")
    parser.add_argument('--max-steps', type=int, help="step budget per episode")


def _goal_args(parser):
    parser.add_argument('--goals', default=GOALS, help="ordered sub-goal nodes, comma-separated")
    parser.add_argument('--infer-threshold', type=float, default=None,
                        help="least P(goal | do(a*)) for the inferred action to fire; 0 fires on any parent action")


def _solver_args(parser):
    parser.add_argument('--tabu', default='default', help="default, none or a tabu JSON file")
    parser.add_argument('--solver-preset', choices=['taxi', 'standard'], default='taxi')
    parser.add_argument('--l1', type=float)
    parser.add_argument('--threshold', type=float)
    parser.add_argument('--max-iter', type=int)
    parser.add_argument('--h-tol', type=float)


def _fit_args(parser):
    parser.add_argument('--smoothing', type=float, default=CPD_SMOOTHING)
    parser.add_argument('--max-cardinality', type=int, default=MAX_CARDINALITY)


def _learner_args(parser):
    parser.add_argument('--learner-preset', choices=['grid', 'graph'], help="defaults follow the env kind")
    parser.add_argument('--episodes', type=int)
    parser.add_argument('--learning-rate', type=float)
    parser.add_argument('--discount', type=float)
    parser.add_argument('--epsilon', type=float)
    parser.add_argument('--epsilon-min', type=float)
    parser.add_argument('--epsilon-decay', type=float)
    parser.add_argument('--goal-advance', choices=['literal', 'confirmed'])
    parser.add_argument('--reward-adjustment', choices=['all', 'infer'])


def _eval_args(parser):
    parser.add_argument('--trips', help="trips CSV (graph envs)")
    parser.add_argument('--configs', type=int, default=100, help="number of seeded evaluation starts")
    parser.add_argument('--eval-seed', type=int, default=12345)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='main.py', description="Causal-inference Q-learning toolkit")
    parser.add_argument('--config', help="key=value file supplying default flag values")
    parser.add_argument('--log-level', type=str.upper, choices=LOG_LEVELS, default=LOG_LEVEL)
    sub = parser.add_subparsers(dest='command', metavar='command')

    p = sub.add_parser('sample', help="random-walk dataset")
    _env_args(p)
    p.add_argument('--steps', type=int, default=TAXI_WALK_STEPS)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--tier', choices=['core', 'positional'], default='core')
    p.add_argument('--reward-node', action='store_true')
    p.add_argument('--out')
    p.set_defaults(func=commands.cmd_sample)

    p = sub.add_parser('discover', help="causal structure discovery")
    p.add_argument('--data')
    _solver_args(p)
    p.add_argument('--out')
    p.add_argument('--dot', help="also write a DOT rendering")
    p.set_defaults(func=commands.cmd_discover)

    p = sub.add_parser('fit', help="fit CPDs on a DAG")
    p.add_argument('--dag')
    p.add_argument('--data')
    _fit_args(p)
    p.add_argument('--out')
    p.set_defaults(func=commands.cmd_fit)

    p = sub.add_parser('train', help="train Q-Cogni or vanilla Q-learning")
    _env_args(p)
    p.add_argument('--algorithm', choices=['qcogni', 'qlearning'], default='qcogni')
    p.add_argument('--bn')
    _goal_args(p)
    _learner_args(p)
    p.add_argument('--seed', type=int)
    p.add_argument('--out-dir')
    p.set_defaults(func=commands.cmd_train)

    p = sub.add_parser('eval', help="greedy evaluation of a trained table")
    _env_args(p)
    p.add_argument('--qtable')
    p.add_argument('--bn')
    _goal_args(p)
    _eval_args(p)
    p.add_argument('--goal-advance', choices=['literal', 'confirmed'])
    p.add_argument('--out')
    p.set_defaults(func=commands.cmd_eval, infer_threshold=INFER_THRESHOLD, goal_advance=GOAL_ADVANCE_MODE)

    p = sub.add_parser('trace', help="decision trace of one episode")
    _env_args(p)
    p.add_argument('--qtable')
    p.add_argument('--bn')
    _goal_args(p)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--epsilon', type=float, default=0.0)
    p.add_argument('--out')
    p.set_defaults(func=commands.cmd_trace, infer_threshold=INFER_THRESHOLD)

    p = sub.add_parser('bench-scaling', help="time to an optimal tour vs grid size")
    p.add_argument('--sizes', default=','.join(map(str, SCALING_SIZES)))
    p.add_argument('--algorithms', default='dijkstra,astar,qcogni,qlearning')
    p.add_argument('--repeats', type=int, default=1)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--bn', help="core-tier network; learned on the 5x5 map when omitted")
    p.add_argument('--goals', default=GOALS)
    p.add_argument('--max-nodes', type=int, default=SCALING_MAX_NODES)
    p.add_argument('--budget', type=float, default=SCALING_TIME_BUDGET_S, help="seconds per learner cell")
    p.add_argument('--chunk', type=int, default=SCALING_EPISODE_CHUNK, help="episodes between criterion checks")
    p.add_argument('--out')
    p.set_defaults(func=commands.cmd_bench_scaling)

    p = sub.add_parser('route-compare', help="greedy routes vs the Dijkstra oracle on a road graph")
    _env_args(p)
    p.add_argument('--trips')
    p.add_argument('--qtable')
    p.add_argument('--baseline-qtable', help="vanilla Q-learning table (optional)")
    p.add_argument('--bn')
    _goal_args(p)
    p.add_argument('--goal-advance', choices=['literal', 'confirmed'])
    p.add_argument('--out')
    p.set_defaults(func=commands.cmd_route_compare, env='graph', infer_threshold=INFER_THRESHOLD,
                   goal_advance=GOAL_ADVANCE_MODE)

    p = sub.add_parser('make-graph', help="synthetic road graph and trips")
    p.add_argument('--nodes', type=int, default=GRAPH_NODES)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--trips', type=int, default=GRAPH_TRIPS)
    p.add_argument('--trip-seed', type=int, default=1)
    p.add_argument('--out')
    p.add_argument('--trips-out')
    p.set_defaults(func=commands.cmd_make_graph)

    p = sub.add_parser('pipeline', help="sample, discover, fit, train and evaluate in one go")
    _env_args(p)
    p.add_argument('--steps', type=int)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--dag', help="reuse this DAG instead of discovering one")
    p.add_argument('--taxi-steps', type=int, default=TAXI_WALK_STEPS,
                   help="taxi walk that supplies the structure for graph envs without --dag")
    _solver_args(p)
    _fit_args(p)
    _goal_args(p)
    _learner_args(p)
    _eval_args(p)
    p.add_argument('--out-dir')
    p.set_defaults(func=commands.cmd_pipeline)

    return parser


def _apply_config_file(parser: ArgumentParser, argv: List[str]):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument('--config')
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = load_config_file(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for subparser in [parser, *subparsers.choices.values()]:
        defaults = {}
        for action in subparser._actions:
            if action.dest not in values:
                continue
            value = values[action.dest]
            if isinstance(action, argparse._StoreTrueAction):
                value = value.lower() in ('1', 'true', 'yes', 'on')
            defaults[action.dest] = value  # string defaults go through the flag's type
        subparser.set_defaults(**defaults)


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        argv = list(argv or [])
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        set_log_level(args.log_level)
        if not getattr(args, 'func', None):
            parser.print_help()
            return 1
        args.func(args)
    except QCogniError as e:
        print_status(str(e), "ERROR")
        logger.debug(f"{type(e).__name__} exit {e.exit_code}")
        return e.exit_code
    except KeyboardInterrupt:
        print_status("Interrupted", "WARNING")
        return 130
    return 0
