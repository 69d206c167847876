"""
Feature schema shared by structure discovery, CPD fitting and inference.

State and action nodes hold pre-transition values; goal nodes hold
post-transition indicators, so "pickup causes passenger-in-taxi" is read
across the transition boundary.
"""
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple

from src.envs.base import DROPOFF, MOVE, PICKUP, SUBGOAL_DROPOFF, SUBGOAL_PAX_IN_TAXI
from src.utils.errors import ContractError

STATE = "state"
ACTION = "action"
GOAL = "goal"
ROLES = (STATE, ACTION, GOAL)

CORE = "core"
POSITIONAL = "positional"

CORE_STATE_NODES = ('taxi_on_pax_loc', 'taxi_on_dest', 'pax_in_taxi')
POSITIONAL_NODES = ('taxi_row', 'taxi_col')
GOAL_NODES = ('pax_in_taxi_next', 'dropoff_next')
REWARD_NODE = 'reward_class'

ACTION_KIND_NODES = {MOVE: 'action_move', PICKUP: 'action_pickup', DROPOFF: 'action_dropoff'}

# environment sub-goal events -> goal node they set
SUBGOAL_NODES = {SUBGOAL_PAX_IN_TAXI: 'pax_in_taxi_next', SUBGOAL_DROPOFF: 'dropoff_next'}


class Column(NamedTuple):
    name: str
    role: str
    cardinality: int


@dataclass(frozen=True)
class FeatureSchema:
    tier: str = CORE
    rows: int = 0
    cols: int = 0
    include_reward: bool = False

    def __post_init__(self):
        if self.tier not in (CORE, POSITIONAL):
            raise ContractError(f"unknown schema tier {self.tier!r}")
        if self.tier == POSITIONAL and (self.rows < 1 or self.cols < 1):
            raise ContractError("positional tier needs the grid dimensions")

    @property
    def action_nodes(self) -> Tuple[str, ...]:
        if self.tier == POSITIONAL:
            return ('action_north', 'action_south', 'action_east', 'action_west',
                    'action_pickup', 'action_dropoff')
        return tuple(ACTION_KIND_NODES.values())

    def columns(self) -> List[Column]:
        columns = [Column(name, STATE, 2) for name in CORE_STATE_NODES]
        if self.tier == POSITIONAL:
            columns += [Column('taxi_row', STATE, self.rows), Column('taxi_col', STATE, self.cols)]
        columns += [Column(name, ACTION, 2) for name in self.action_nodes]
        columns += [Column(name, GOAL, 2) for name in GOAL_NODES]
        if self.include_reward:
            columns.append(Column(REWARD_NODE, GOAL, 3))
        return columns

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.columns()]

    @property
    def roles(self) -> Dict[str, str]:
        return {c.name: c.role for c in self.columns()}

    @property
    def cardinalities(self) -> Dict[str, int]:
        return {c.name: c.cardinality for c in self.columns()}

    def to_dict(self) -> dict:
        return {'tier': self.tier, 'rows': self.rows, 'cols': self.cols, 'include_reward': self.include_reward}

    @classmethod
    def from_dict(cls, data: dict) -> 'FeatureSchema':
        return cls(tier=data.get('tier', CORE), rows=data.get('rows', 0),
                   cols=data.get('cols', 0), include_reward=data.get('include_reward', False))

    @classmethod
    def for_env(cls, env, tier: str = CORE, include_reward: bool = False) -> 'FeatureSchema':
        if tier == POSITIONAL:
            if env.kind != 'grid':
                raise ContractError("the positional tier exists only for grid environments")
            return cls(tier=tier, rows=env.config.rows, cols=env.config.cols, include_reward=include_reward)
        return cls(tier=tier, include_reward=include_reward)


@dataclass
class TransitionRecord:
    values: Dict[str, int]
    reward: float = 0.0

    def as_row(self, schema: FeatureSchema) -> List[int]:
        return [self.values[name] for name in schema.names]


def action_node(env, action: int, schema: FeatureSchema) -> str:
    """Name of the action indicator set by `action` under this schema"""
    if schema.tier == POSITIONAL:
        return f"action_{env.action_names()[action]}"
    return ACTION_KIND_NODES[env.action_kind(action)]


def reward_class(env, reward: float) -> int:
    """0 = illegal action, 1 = ordinary step or move, 2 = successful drop-off"""
    if reward == env.config.reward_illegal:
        return 0
    if reward == env.config.reward_dropoff:
        return 2
    return 1


def extract_features(env, state, action: int, next_state, schema: FeatureSchema,
                     reward: Optional[float] = None) -> TransitionRecord:
    if schema.tier == POSITIONAL and env.kind != 'grid':
        raise ContractError("positional features requested for a non-grid environment")
    if not 0 <= action < env.n_actions:
        raise ContractError(f"action {action} outside 0..{env.n_actions - 1}")

    state_values = env.features(state)
    values = {name: state_values[name] for name in CORE_STATE_NODES}
    if schema.tier == POSITIONAL:
        values.update({name: state_values[name] for name in POSITIONAL_NODES})
    chosen = action_node(env, action, schema)
    values.update({name: int(name == chosen) for name in schema.action_nodes})
    values.update(env.goal_flags(next_state))
    if schema.include_reward:
        values[REWARD_NODE] = reward_class(env, reward or 0)
    return TransitionRecord(values=values, reward=reward if reward is not None else 0.0)
