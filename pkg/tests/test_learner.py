import json

import numpy as np
import pytest

from src.agents.learner import (
    CONFIRMED, EXPLOIT, EXPLORE, INFER, LITERAL, CausalPolicy, LearnerConfig, QLearningRun, StepDecision,
    _advance, evaluate_policy, qcogni_learn, trace_episode, vanilla_q_learn, write_trace,
)
from src.agents.qtable import QTable, load_qtable, save_qtable
from src.causal.inference import GoalSpec, infer_max_prob, state_evidence
from src.envs.grid import (
    IN_TAXI, EnvState, GridAction, GridConfig, GridEnv, all_reset_states, decode_state, default_taxi_config,
)
from src.routing.shortest_path import optimal_episode_reward, optimal_return
from src.utils.config import DEFAULT_GOALS
from src.utils.errors import ConfigurationError, DataError
from tests.helpers import taxi_network

GOALS = GoalSpec(DEFAULT_GOALS)


def two_cell_env(**overrides):
    """Two stacked cells, each a depot"""
    return GridEnv(GridConfig(rows=2, cols=1, depots=((0, 0), (1, 0)), **overrides), env_id='grid2x1')


def optimal_qtable(env):
    """Value iteration with no discount; terminal states are worth 0"""
    q = QTable.for_env(env)
    transitions = {}
    for key in range(env.n_states):
        state = decode_state(key, env.config)
        if state.done:
            continue
        for action in range(env.n_actions):
            result = env.step(state, action)
            transitions[key, action] = (result.reward, env.state_key(result.next_state), result.done)
    for _ in range(60):
        values = q.values.max(axis=1)
        for (key, action), (reward, nxt, done) in transitions.items():
            q.values[key, action] = reward + (0.0 if done else values[nxt])
    return q


def test_update_moves_toward_the_target():
    q = QTable(4, 6)
    assert q.update(0, GridAction.DROPOFF, 20 * 0.9 + 0.99 * 0.0, 0.1) == pytest.approx(1.8)
    assert q.update(0, GridAction.DROPOFF, 1.8, 0.1) == pytest.approx(1.8)


def test_delivery_update_scales_the_reward_by_p():
    env = two_cell_env(max_steps_per_episode=1000)
    bn = taxi_network(env, steps=5000)
    policy = CausalPolicy(env, bn, GOALS)
    run = QLearningRun(env, LearnerConfig(episodes=1, seed=0), policy)
    run.train()
    delivered = [EnvState(row, 0, IN_TAXI, row) for row in (0, 1)]
    touched = [s for s in delivered if run.qtable.values[env.state_key(s), GridAction.DROPOFF] != 0]
    assert len(touched) == 1
    p = policy.infer(touched[0], range(6), 1).probability
    # terminal step: no future value, one update at rate 0.1
    assert run.qtable.values[env.state_key(touched[0]), GridAction.DROPOFF] == pytest.approx(0.1 * 20 * p)


def test_two_cell_grid_converges_to_the_three_step_episode():
    env = two_cell_env()
    bn = taxi_network(env, steps=5000)
    table, curve = qcogni_learn(env, bn, GOALS, LearnerConfig(episodes=50, seed=1))
    assert len(curve) == 50
    starts = [EnvState(0, 0, 0, 1), EnvState(1, 0, 1, 0)]
    report = evaluate_policy(env, table, starts, bn, GOALS)
    for row in report.rows:
        assert (row.steps, row.reward, row.success) == (3, 18, True)


def test_vanilla_runs_are_reproducible(taxi_env):
    config = LearnerConfig(episodes=20, epsilon=0.0, epsilon_min=0.0, seed=3)
    first, first_curve = vanilla_q_learn(taxi_env, config)
    second, second_curve = vanilla_q_learn(taxi_env, config)
    assert np.array_equal(first.values, second.values)
    assert first_curve.to_frame().equals(second_curve.to_frame())
    starts = all_reset_states(taxi_env.config)[:10]
    assert evaluate_policy(taxi_env, first, starts).to_frame().equals(
        evaluate_policy(taxi_env, second, starts).to_frame())


def test_qcogni_runs_are_reproducible(taxi_env):
    bn = taxi_network(taxi_env, steps=5000)
    config = LearnerConfig(episodes=5, seed=9)
    first, first_curve = qcogni_learn(taxi_env, bn, GOALS, config)
    second, second_curve = qcogni_learn(taxi_env, bn, GOALS, config)
    assert np.array_equal(first.values, second.values)
    assert first_curve.to_frame().equals(second_curve.to_frame())


def test_epsilon_never_drops_below_the_floor(taxi_env):
    _, curve = vanilla_q_learn(taxi_env, LearnerConfig(episodes=30, epsilon=0.5, epsilon_min=0.2,
                                                       epsilon_decay=0.5, seed=0))
    epsilons = curve.to_frame()['epsilon']
    assert (epsilons >= 0.2).all()
    assert epsilons.iloc[-1] == 0.2


def test_epsilon_decays_only_on_learning_steps():
    env = two_cell_env(max_steps_per_episode=1000)
    bn = taxi_network(env, steps=5000)
    run = QLearningRun(env, LearnerConfig(episodes=1, epsilon_min=0.0, epsilon_decay=0.99, seed=4),
                       CausalPolicy(env, bn, GOALS))
    record = run.train().records[0]
    assert record.infer_count >= 1
    assert record.epsilon == pytest.approx(0.99 ** (record.steps - record.infer_count))


def test_infer_steps_act_on_parents_of_the_goal(taxi_env):
    bn = taxi_network(taxi_env)
    table = QTable.for_env(taxi_env)
    records = trace_episode(taxi_env, table, bn, GOALS, LearnerConfig(), start=EnvState(0, 0, 0, 1))
    assert records, "trace is empty"
    assert all(r['branch'] in (INFER, EXPLOIT) for r in records)
    assert all(len(r['per_action']) == 6 for r in records)
    for r in records:
        if r['branch'] == INFER:
            node = 'action_' + r['action'] if r['action'] in ('pickup', 'dropoff') else 'action_move'
            assert node in bn.dag.parents(r['goal'])


def test_first_trace_step_picks_up(taxi_env):
    bn = taxi_network(taxi_env)
    records = trace_episode(taxi_env, QTable.for_env(taxi_env), bn, GOALS, LearnerConfig(),
                            start=EnvState(0, 0, 0, 1))
    first = records[0]
    assert (first['branch'], first['action'], first['goal']) == (INFER, 'pickup', 'pax_in_taxi_next')
    policy = CausalPolicy(taxi_env, bn, GOALS)
    expected = infer_max_prob(bn, state_evidence(bn, taxi_env.features(EnvState(0, 0, 0, 1))),
                              range(6), 'pax_in_taxi_next', policy.action_node)
    assert first['p'] == pytest.approx(expected.probability)
    assert first['state'] == {'taxi_on_pax_loc': 1, 'taxi_on_dest': 0, 'pax_in_taxi': 0,
                              'taxi_row': 0, 'taxi_col': 0}
    assert records[1]['goal'] == 'dropoff_next'


def test_trace_file_is_json_lines(taxi_env, tmp_path):
    bn = taxi_network(taxi_env, steps=5000)
    records = trace_episode(taxi_env, QTable.for_env(taxi_env), bn, GOALS, LearnerConfig(),
                            start=EnvState(0, 0, 0, 1))
    path = write_trace(records, tmp_path / 'trace.jsonl')
    lines = path.read_text().splitlines()
    assert len(lines) == len(records)
    assert json.loads(lines[0])['step'] == 1


def test_optimal_table_earns_the_oracle_reward(taxi_env):
    table = optimal_qtable(taxi_env)
    # R to Y is four moves, plus the pickup step
    report = evaluate_policy(taxi_env, table, [EnvState(0, 0, 0, 2)])
    assert (report.rows[0].reward, report.rows[0].steps, report.rows[0].success) == (15, 6, True)
    starts = all_reset_states(taxi_env.config)
    report = evaluate_policy(taxi_env, table, starts)
    assert report.success_rate == 1.0
    assert optimal_episode_reward(taxi_env, EnvState(0, 0, 0, 2)) == 16
    assert [row.reward for row in report.rows] == [optimal_return(taxi_env, s) for s in starts]


def test_untrained_table_gives_a_deterministic_failure(taxi_env):
    table = QTable.for_env(taxi_env)
    first = evaluate_policy(taxi_env, table, [EnvState(2, 2, 0, 1)])
    second = evaluate_policy(taxi_env, table, [EnvState(2, 2, 0, 1)])
    assert first.to_frame().equals(second.to_frame())
    row = first.rows[0]
    # north until the top wall, then stuck
    assert (row.steps, row.reward, row.distance, row.success) == (100, -100, 2.0, False)
    assert first.success_rate == 0.0


def test_goal_index_advance():
    infer = StepDecision(GridAction.PICKUP, INFER, 0.9)
    explore = StepDecision(GridAction.PICKUP, EXPLORE, 0.9)
    assert _advance(0, infer, None, GOALS, LITERAL) == 1
    assert _advance(0, explore, 'pax_in_taxi', GOALS, LITERAL) == 0
    assert _advance(0, explore, 'pax_in_taxi', GOALS, CONFIRMED) == 1
    assert _advance(0, infer, None, GOALS, CONFIRMED) == 0
    assert _advance(1, infer, 'dropoff', GOALS, LITERAL) == 1
    assert _advance(0, infer, None, None, LITERAL) == 0


@pytest.mark.parametrize('overrides', [
    {'episodes': 0}, {'learning_rate': 0.0}, {'learning_rate': 1.5}, {'discount': 1.1},
    {'epsilon': 0.1, 'epsilon_min': 0.2}, {'epsilon_decay': 0.0}, {'goal_advance_mode': 'eager'},
    {'reward_adjustment': 'none'}, {'infer_threshold': 2.0},
])
def test_learner_config_validation(overrides):
    with pytest.raises(ConfigurationError):
        LearnerConfig(**overrides).validate()


def test_qtable_file_round_trip(taxi_env, tmp_path):
    table = QTable.for_env(taxi_env)
    table.values[:] = np.random.default_rng(0).normal(size=table.shape)
    loaded = load_qtable(save_qtable(table, tmp_path / 'q.csv'))
    assert np.array_equal(loaded.values, table.values)
    assert (loaded.env_id, loaded.config_hash) == (table.env_id, table.config_hash)
    loaded.check_env(taxi_env)


def test_qtable_rejects_another_environment(taxi_env):
    table = QTable.for_env(taxi_env)
    with pytest.raises(DataError):
        table.check_env(two_cell_env())
    with pytest.raises(DataError):
        table.check_env(GridEnv(default_taxi_config(reward_step=-2), env_id='taxi5'))


def test_malformed_qtable_file(tmp_path):
    with pytest.raises(DataError):
        load_qtable(tmp_path / 'missing.csv')
    path = tmp_path / 'bad.csv'
    path.write_text("# env_id=x\nstate,action,value\n0,0,1\n")
    with pytest.raises(DataError):
        load_qtable(path)


def test_curve_columns(taxi_env):
    _, curve = vanilla_q_learn(taxi_env, LearnerConfig(episodes=3, seed=0))
    frame = curve.to_frame()
    assert list(frame.columns) == ['episode', 'total_reward', 'steps', 'epsilon', 'infer_count']
    assert list(frame['episode']) == [1, 2, 3]
    assert (frame['infer_count'] == 0).all()


def test_goal_advance_mode_reaches_the_rollout(taxi_env):
    bn = taxi_network(taxi_env)
    table = optimal_qtable(taxi_env)
    start = EnvState(0, 0, 0, 1)
    goals = {}
    for mode in (LITERAL, CONFIRMED):
        # a threshold of 1 keeps the infer branch silent, so the table does the pickup
        config = LearnerConfig(infer_threshold=1.0, goal_advance_mode=mode)
        records = trace_episode(taxi_env, table, bn, GOALS, config, start=start)
        assert records[0]['action'] == 'pickup' and records[0]['branch'] == EXPLOIT
        goals[mode] = {r['goal'] for r in records[1:]}
    assert goals[LITERAL] == {'pax_in_taxi_next'}
    assert goals[CONFIRMED] == {'dropoff_next'}
    for mode in (LITERAL, CONFIRMED):
        report = evaluate_policy(taxi_env, table, [start], bn, GOALS, infer_threshold=1.0, goal_advance_mode=mode)
        assert report.rows[0].success


def test_smoothed_network_needs_the_infer_threshold(taxi_env):
    bn = taxi_network(taxi_env)
    away = EnvState(2, 2, 0, 1)
    literal = CausalPolicy(taxi_env, bn, GOALS, infer_threshold=0.0)
    result = literal.infer(away, range(6), 0)
    # the smoothing floor alone makes the pickup the most likely cause
    assert result.best_action == GridAction.PICKUP
    assert 0 < result.probability < 0.01
    assert literal.fires(result, 0)
    assert taxi_env.step(away, GridAction.PICKUP).reward == -10

    gated = CausalPolicy(taxi_env, bn, GOALS)
    assert not gated.fires(gated.infer(away, range(6), 0), 0)
    at_pax = gated.infer(EnvState(0, 0, 0, 1), range(6), 0)
    assert at_pax.best_action == GridAction.PICKUP
    assert gated.fires(at_pax, 0)


def test_unsmoothed_network_fires_only_where_the_pickup_works(taxi_env):
    bn = taxi_network(taxi_env, smoothing=0.0)
    literal = CausalPolicy(taxi_env, bn, GOALS, infer_threshold=0.0)
    assert not literal.fires(literal.infer(EnvState(2, 2, 0, 1), range(6), 0), 0)
    at_pax = literal.infer(EnvState(0, 0, 0, 1), range(6), 0)
    assert at_pax.best_action == GridAction.PICKUP
    assert at_pax.probability == pytest.approx(1.0)
    assert literal.fires(at_pax, 0)


@pytest.mark.parametrize('algorithm', ['qcogni', 'qlearning'])
def test_q_values_stay_within_the_discounted_reward_bound(taxi_env, algorithm):
    config = LearnerConfig(episodes=40, seed=2)
    if algorithm == 'qcogni':
        table, _ = qcogni_learn(taxi_env, taxi_network(taxi_env, steps=5000), GOALS, config)
    else:
        table, _ = vanilla_q_learn(taxi_env, config)
    bound = max(abs(taxi_env.config.reward_dropoff), abs(taxi_env.config.reward_illegal)) / (1 - config.discount)
    assert np.isfinite(table.values).all()
    assert np.abs(table.values).max() <= bound
