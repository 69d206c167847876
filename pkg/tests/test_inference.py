import numpy as np
import pytest

from src.causal.features import FeatureSchema, action_node
from src.causal.inference import GoalSpec, InferenceCache, infer_max_prob, state_evidence
from src.envs.grid import EnvState
from src.utils.errors import ConfigurationError, ContractError
from tests.helpers import enumerate_posterior, make_bn, taxi_network

GRID_ACTIONS = list(range(6))


def grid_action_node(action):
    return {4: 'action_pickup', 5: 'action_dropoff'}.get(action, 'action_move')


def pickup_network():
    return make_bn(['action_pickup', 'goal'], ['action', 'goal'], [('action_pickup', 'goal')], {
        'action_pickup': [0.5, 0.5],
        'goal': [[0.9, 0.1], [0.1, 0.9]],
    })


def test_picks_the_action_that_causes_the_goal():
    result = infer_max_prob(pickup_network(), {}, GRID_ACTIONS, 'goal', grid_action_node)
    assert result.best_action == 4
    assert result.probability == pytest.approx(0.9)
    assert result.per_action == pytest.approx({0: 0.1, 1: 0.1, 2: 0.1, 3: 0.1, 4: 0.9, 5: 0.1})
    assert not result.zero_evidence


def test_symmetric_network_breaks_ties_to_lowest_action():
    bn = make_bn(['action_move', 'action_pickup', 'goal'], ['action', 'action', 'goal'], [], {
        'action_move': [0.3, 0.7], 'action_pickup': [0.8, 0.2], 'goal': [0.6, 0.4],
    })
    result = infer_max_prob(bn, {}, GRID_ACTIONS, 'goal', grid_action_node)
    assert result.best_action == 0
    assert all(p == pytest.approx(0.4) for p in result.per_action.values())
    assert result.probability == pytest.approx(0.4)


def test_goal_must_be_a_goal_node():
    bn = pickup_network()
    with pytest.raises(ConfigurationError):
        infer_max_prob(bn, {}, GRID_ACTIONS, 'missing', grid_action_node)
    with pytest.raises(ConfigurationError):
        infer_max_prob(bn, {}, GRID_ACTIONS, 'action_pickup', grid_action_node)
    with pytest.raises(ContractError):
        infer_max_prob(bn, {}, [], 'goal', grid_action_node)


def test_all_zero_evidence_is_flagged():
    bn = make_bn(['s', 'action_pickup', 'goal'], ['state', 'action', 'goal'],
                 [('s', 'action_pickup'), ('action_pickup', 'goal')], {
                     's': [0.5, 0.5],
                     'action_pickup': [[0.5, 0.5], [1.0, 0.0]],
                     'goal': [[0.9, 0.1], [0.1, 0.9]],
                 })
    # with s=1 the pickup indicator is never set, so a pickup assignment is impossible
    result = infer_max_prob(bn, {'s': 1}, [4], 'goal', grid_action_node)
    assert result.zero_evidence
    assert (result.best_action, result.probability) == (4, 0.0)


def test_per_action_table_matches_enumeration():
    bn = make_bn(['s', 'action_move', 'action_pickup', 'goal'], ['state', 'action', 'action', 'goal'],
                 [('s', 'goal'), ('action_move', 'goal'), ('action_pickup', 'goal')], {
                     's': [0.6, 0.4],
                     'action_move': [0.4, 0.6],
                     'action_pickup': [0.7, 0.3],
                     # parents sorted: action_move, action_pickup, s
                     'goal': np.array([[[[0.9, 0.1], [0.8, 0.2]], [[0.3, 0.7], [0.05, 0.95]]],
                                       [[[0.7, 0.3], [0.6, 0.4]], [[0.5, 0.5], [0.4, 0.6]]]]),
                 })
    result = infer_max_prob(bn, {'s': 1}, GRID_ACTIONS, 'goal', grid_action_node)
    for action, probability in result.per_action.items():
        node = grid_action_node(action)
        evidence = {'s': 1, 'action_move': int(node == 'action_move'), 'action_pickup': int(node == 'action_pickup')}
        assert probability == pytest.approx(enumerate_posterior(bn, 'goal', 1, evidence), abs=1e-9)
    assert result.best_action == 4
    assert result.probability == pytest.approx(0.95)


def test_fitted_taxi_network_chooses_pickup(taxi_env):
    bn = taxi_network(taxi_env)
    schema = FeatureSchema()
    evidence = state_evidence(bn, taxi_env.features(EnvState(0, 0, 0, 1)))
    result = infer_max_prob(bn, evidence, GRID_ACTIONS, 'pax_in_taxi_next',
                            lambda a: action_node(taxi_env, a, schema))
    assert result.best_action == 4
    assert result.probability >= 0.95
    at_destination = state_evidence(bn, taxi_env.features(EnvState(0, 4, -1, 1)))
    result = infer_max_prob(bn, at_destination, GRID_ACTIONS, 'dropoff_next',
                            lambda a: action_node(taxi_env, a, schema))
    assert result.best_action == 5


def test_inference_is_deterministic_and_cached():
    bn = pickup_network()
    cache = InferenceCache(bn, grid_action_node)
    first = cache.infer({}, GRID_ACTIONS, 'goal')
    second = cache.infer({}, GRID_ACTIONS, 'goal')
    assert first == second == infer_max_prob(bn, {}, GRID_ACTIONS, 'goal', grid_action_node)
    assert cache.hits == 1
    assert len(cache) == 1


def test_state_evidence_needs_every_state_node(taxi_env):
    bn = taxi_network(taxi_env, steps=2000)
    with pytest.raises(ContractError):
        state_evidence(bn, {'taxi_on_pax_loc': 1})
    evidence = state_evidence(bn, taxi_env.features(EnvState(2, 2, 0, 1)))
    assert evidence == {'taxi_on_pax_loc': 0, 'taxi_on_dest': 0, 'pax_in_taxi': 0}


def test_goal_spec_validation(taxi_env):
    bn = taxi_network(taxi_env, steps=2000)
    goals = GoalSpec.parse("pax_in_taxi_next, dropoff_next")
    assert goals.validate(bn).goals == ('pax_in_taxi_next', 'dropoff_next')
    assert len(goals) == 2 and goals[1] == 'dropoff_next'
    for bad in ("", "pax_in_taxi_next,pax_in_taxi_next", "taxi_on_dest", "teleported"):
        with pytest.raises(ConfigurationError):
            GoalSpec.parse(bad).validate(bn)
