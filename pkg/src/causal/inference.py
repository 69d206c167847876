"""
Causal action selection: the action that maximises the probability of the
current sub-goal given the clamped state, and that probability.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

from src.causal.bayesnet import DiscreteBayesNet, Evidence, query_probability
from src.causal.features import ACTION, GOAL, STATE
from src.utils.errors import ConfigurationError, ContractError


@dataclass(frozen=True)
class GoalSpec:
    goals: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, 'goals', tuple(self.goals))

    def __len__(self):
        return len(self.goals)

    def __getitem__(self, j: int) -> str:
        return self.goals[j]

    def validate(self, bn: DiscreteBayesNet):
        if not self.goals:
            raise ConfigurationError("the goal list is empty")
        if len(set(self.goals)) != len(self.goals):
            raise ConfigurationError(f"duplicate goals in {list(self.goals)}")
        roles = bn.roles
        for goal in self.goals:
            if goal not in roles:
                raise ConfigurationError(f"goal {goal!r} is not a node of the network")
            if roles[goal] != GOAL:
                raise ConfigurationError(f"goal {goal!r} has role {roles[goal]!r}, expected 'goal'")
        return self

    @classmethod
    def parse(cls, text: str) -> 'GoalSpec':
        return cls(tuple(g.strip() for g in text.split(',') if g.strip()))


@dataclass(frozen=True)
class InferenceResult:
    best_action: int
    probability: float
    per_action: Dict[int, float]
    zero_evidence: bool = False


def state_evidence(bn: DiscreteBayesNet, features: Dict[str, int]) -> Evidence:
    """Clamp every state-role node of the network; goal nodes stay free"""
    evidence = {}
    for name in bn.nodes_with_role(STATE):
        if name not in features:
            raise ContractError(f"state node {name!r} has no value in the environment features")
        evidence[name] = int(features[name])
    return evidence


def infer_max_prob(bn: DiscreteBayesNet, evidence: Evidence, actions: Sequence[int], goal: str,
                   action_node: Callable[[int], str]) -> InferenceResult:
    """P(goal=1 | state, a=1, other actions=0) for every action; strict improvement from p=0.

    `action_node` maps an environment action to its indicator node; several
    actions may share one node (every move shares `action_move`).
    """
    roles = bn.roles
    if goal not in roles:
        raise ConfigurationError(f"goal {goal!r} is not a node of the network")
    if roles[goal] != GOAL:
        raise ConfigurationError(f"goal {goal!r} has role {roles[goal]!r}, expected 'goal'")
    if not actions:
        raise ContractError("no actions to choose from")

    action_nodes = bn.nodes_with_role(ACTION)
    per_action: Dict[int, float] = {}
    by_node: Dict[str, Tuple[float, bool]] = {}
    best, p = actions[0], 0.0
    all_zero = True
    for action in actions:
        node = action_node(action)
        if node not in by_node:
            clamped = dict(evidence)
            clamped.update({name: int(name == node) for name in action_nodes})
            result = query_probability(bn, goal, 1, clamped)
            by_node[node] = (result.probability, result.zero_evidence)
        probability, zero = by_node[node]
        all_zero &= zero
        per_action[action] = probability
        if p < probability:
            best, p = action, probability
    return InferenceResult(best_action=best, probability=p, per_action=per_action, zero_evidence=all_zero)


class InferenceCache:
    """Memoises infer_max_prob; the function is pure in (evidence, actions, goal)"""

    def __init__(self, bn: DiscreteBayesNet, action_node: Callable[[int], str]):
        self.bn = bn
        self.action_node = action_node
        self._results: Dict[tuple, InferenceResult] = {}
        self.hits = 0

    def infer(self, evidence: Evidence, actions: Sequence[int], goal: str) -> InferenceResult:
        key = (tuple(sorted(evidence.items())), tuple(actions), goal)
        cached: Optional[InferenceResult] = self._results.get(key)
        if cached is not None:
            self.hits += 1
            return cached
        result = infer_max_prob(self.bn, evidence, actions, goal, self.action_node)
        self._results[key] = result
        return result

    def __len__(self):
        return len(self._results)
