"""
Q-Cogni learner: tabular Q-learning that asks the causal network for the
action most likely to reach the current sub-goal and takes it outright when
that action causes the sub-goal; otherwise it falls back to epsilon-greedy.
Updates scale the reward by the inferred goal probability.

The vanilla baseline is the same loop without the network (p fixed at 1).
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.agents.qtable import EpisodeRecord, QTable, TrainingCurve
from src.causal.bayesnet import DiscreteBayesNet
from src.causal.features import ACTION, POSITIONAL, SUBGOAL_NODES, FeatureSchema, action_node
from src.causal.inference import GoalSpec, InferenceCache, InferenceResult, state_evidence
from src.utils.config import (
    DEFAULT_GOALS, DISCOUNT, EPISODES, EPSILON_DECAY, EPSILON_MIN, EPSILON_START, GOAL_ADVANCE_MODE,
    INFER_THRESHOLD, LEARNING_RATE, PROGRESS_EVERY_EPISODES, REWARD_ADJUSTMENT,
)
from src.utils.errors import ConfigurationError, DataError
from src.utils.logger import setup_logger

logger = setup_logger('learner')

INFER = 'infer'
EXPLORE = 'explore'
EXPLOIT = 'exploit'

LITERAL = 'literal'
CONFIRMED = 'confirmed'


@dataclass(frozen=True)
class LearnerConfig:
    episodes: int = EPISODES
    learning_rate: float = LEARNING_RATE
    discount: float = DISCOUNT
    epsilon: float = EPSILON_START
    epsilon_min: float = EPSILON_MIN
    epsilon_decay: float = EPSILON_DECAY
    seed: int = 0
    goal_advance_mode: str = GOAL_ADVANCE_MODE
    infer_threshold: float = INFER_THRESHOLD
    reward_adjustment: str = REWARD_ADJUSTMENT   # 'all' scales every update by p, 'infer' only infer steps

    def validate(self):
        if self.episodes < 1:
            raise ConfigurationError(f"episodes must be positive, got {self.episodes}")
        if not 0 < self.learning_rate <= 1:
            raise ConfigurationError(f"learning_rate must lie in (0, 1], got {self.learning_rate}")
        if not 0 <= self.discount <= 1:
            raise ConfigurationError(f"discount must lie in [0, 1], got {self.discount}")
        if not 0 <= self.epsilon_min <= self.epsilon <= 1:
            raise ConfigurationError("need 0 <= epsilon_min <= epsilon <= 1")
        if not 0 < self.epsilon_decay <= 1:
            raise ConfigurationError(f"epsilon_decay must lie in (0, 1], got {self.epsilon_decay}")
        if self.goal_advance_mode not in (LITERAL, CONFIRMED):
            raise ConfigurationError(f"unknown goal_advance_mode {self.goal_advance_mode!r}")
        if self.reward_adjustment not in ('all', INFER):
            raise ConfigurationError(f"unknown reward_adjustment {self.reward_adjustment!r}")
        if not 0 <= self.infer_threshold <= 1:
            raise ConfigurationError("infer_threshold must lie in [0, 1]")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def schema_for_network(env, bn: DiscreteBayesNet) -> FeatureSchema:
    """Tier implied by the network's nodes, checked against what the environment can supply"""
    names = set(bn.domains)
    positional = bool(names & {'taxi_row', 'taxi_col', 'action_north', 'action_south',
                               'action_east', 'action_west'})
    schema = FeatureSchema.for_env(env, tier=POSITIONAL if positional else 'core')
    unknown = sorted(name for name in names if name not in schema.names and name != 'reward_class')
    if unknown:
        raise DataError(f"network nodes {unknown} are not features of env {env.env_id}")
    return schema


class CausalPolicy:
    """The network side of the learner: (a*, p) per state and sub-goal, plus the parent test"""

    def __init__(self, env, bn: DiscreteBayesNet, goals: GoalSpec, infer_threshold: float = INFER_THRESHOLD):
        self.env = env
        self.bn = bn
        self.goals = goals.validate(bn)
        self.schema = schema_for_network(env, bn)
        self.infer_threshold = infer_threshold
        self.parents = {goal: set(bn.dag.parents(goal)) for goal in goals.goals}
        action_nodes = set(bn.nodes_with_role(ACTION))
        for goal, parents in self.parents.items():
            if not parents & action_nodes:
                logger.warning(f"Goal {goal!r} has no action parent; the infer branch never fires for it")
        self.cache = InferenceCache(bn, self.action_node)

    def action_node(self, action: int) -> str:
        return action_node(self.env, action, self.schema)

    def infer(self, state, legal: Sequence[int], j: int) -> InferenceResult:
        evidence = state_evidence(self.bn, self.env.features(state))
        return self.cache.infer(evidence, legal, self.goals[j])

    def fires(self, result: InferenceResult, j: int) -> bool:
        """a* causes the current sub-goal with enough confidence"""
        return (self.action_node(result.best_action) in self.parents[self.goals[j]]
                and result.probability > 0
                and result.probability >= self.infer_threshold)


@dataclass
class StepDecision:
    action: int
    branch: str
    probability: float
    inference: Optional[InferenceResult] = None


def _decide(env, qtable: QTable, policy: Optional[CausalPolicy], state, j: int,
            epsilon: float, rng) -> StepDecision:
    key = env.state_key(state)
    legal = list(env.legal_actions(state))
    inference, p = None, 1.0
    if policy is not None:
        inference = policy.infer(state, legal, j)
        p = inference.probability
        if policy.fires(inference, j):
            return StepDecision(inference.best_action, INFER, p, inference)
    if epsilon > 0 and rng.random() < epsilon:
        return StepDecision(legal[int(rng.integers(len(legal)))], EXPLORE, p, inference)
    return StepDecision(qtable.greedy(key, legal), EXPLOIT, p, inference)


def _advance(j: int, decision: StepDecision, subgoal: Optional[str], goals: Optional[GoalSpec], mode: str) -> int:
    if goals is None:
        return j
    if mode == LITERAL:
        advanced = decision.branch == INFER
    else:
        advanced = subgoal is not None and SUBGOAL_NODES.get(subgoal) == goals[j]
    return min(j + 1, len(goals) - 1) if advanced else j


class QLearningRun:
    """One training run; `train` may be called repeatedly to continue it in chunks"""

    def __init__(self, env, config: LearnerConfig, policy: Optional[CausalPolicy] = None,
                 qtable: Optional[QTable] = None):
        self.env = env
        self.config = config.validate()
        self.policy = policy
        self.qtable = qtable or QTable.for_env(env)
        self.rng = np.random.default_rng(config.seed)
        self.epsilon = config.epsilon
        self.curve = TrainingCurve()

    @property
    def episodes_done(self) -> int:
        return len(self.curve)

    def train(self, episodes: Optional[int] = None) -> TrainingCurve:
        episodes = self.config.episodes if episodes is None else episodes
        label = 'Q-Cogni' if self.policy else 'Q-learning'
        for _ in range(episodes):
            record = self._episode(self.episodes_done + 1)
            self.curve.append(record)
            if record.episode % PROGRESS_EVERY_EPISODES == 0:
                logger.info(f"{label} episode {record.episode}: reward={record.total_reward:.2f} "
                            f"steps={record.steps} epsilon={self.epsilon:.3f}")
        return self.curve

    def _episode(self, index: int) -> EpisodeRecord:
        env, q, cfg, policy = self.env, self.qtable, self.config, self.policy
        goals = policy.goals if policy else None
        state = env.reset(self.rng)
        j, total, steps, infer_count = 0, 0.0, 0, 0

        while True:
            decision = _decide(env, q, policy, state, j, self.epsilon, self.rng)
            if decision.branch == INFER:
                infer_count += 1
            else:
                self.epsilon = max(cfg.epsilon_min, self.epsilon * cfg.epsilon_decay)

            outcome = env.step(state, decision.action)
            adjusted = policy is not None and (cfg.reward_adjustment == 'all' or decision.branch == INFER)
            reward = outcome.reward * decision.probability if adjusted else outcome.reward
            if outcome.done and not outcome.truncated:
                future = 0.0
            else:
                nxt = outcome.next_state
                future = q.best_value(env.state_key(nxt), env.legal_actions(nxt))
            q.update(env.state_key(state), decision.action, reward + cfg.discount * future, cfg.learning_rate)

            j = _advance(j, decision, outcome.subgoal_achieved, goals, cfg.goal_advance_mode)
            total += outcome.reward
            steps += 1
            state = outcome.next_state
            if outcome.done:
                break

        return EpisodeRecord(episode=index, total_reward=total, steps=steps,
                             epsilon=self.epsilon, infer_count=infer_count)


def qcogni_learn(env, bn: DiscreteBayesNet, goals: GoalSpec, config: LearnerConfig):
    policy = CausalPolicy(env, bn, goals, config.infer_threshold)
    run = QLearningRun(env, config, policy)
    run.train()
    return run.qtable, run.curve


def vanilla_q_learn(env, config: LearnerConfig):
    run = QLearningRun(env, config)
    run.train()
    return run.qtable, run.curve


@dataclass
class EvaluationRow:
    episode: int
    reward: float
    steps: int
    distance: float
    success: bool


@dataclass
class EvaluationReport:
    rows: List[EvaluationRow] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return sum(r.success for r in self.rows) / len(self.rows) if self.rows else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows],
                            columns=['episode', 'reward', 'steps', 'distance', 'success'])


def rollout(env, qtable: QTable, state, policy: Optional[CausalPolicy] = None,
            epsilon: float = 0.0, rng=None, on_step=None, goal_advance_mode: str = GOAL_ADVANCE_MODE):
    """Run one episode from `state`; returns (reward, steps, distance, delivered)"""
    rng = rng or np.random.default_rng(0)
    goals = policy.goals if policy else None
    j, total, steps, distance = 0, 0.0, 0, 0.0
    while True:
        decision = _decide(env, qtable, policy, state, j, epsilon, rng)
        outcome = env.step(state, decision.action)
        total += outcome.reward
        steps += 1
        distance += outcome.distance
        if on_step is not None:
            on_step(state, decision, outcome, total, j)
        j = _advance(j, decision, outcome.subgoal_achieved, goals, goal_advance_mode)
        state = outcome.next_state
        if outcome.done:
            return total, steps, distance, not outcome.truncated


def evaluate_policy(env, qtable: QTable, starts: Iterable[Any], bn: Optional[DiscreteBayesNet] = None,
                    goals: Optional[GoalSpec] = None, infer_threshold: float = INFER_THRESHOLD,
                    goal_advance_mode: str = GOAL_ADVANCE_MODE) -> EvaluationReport:
    """Greedy rollouts from fixed starts; a step-budget abort marks the episode failed"""
    policy = CausalPolicy(env, bn, goals or GoalSpec(DEFAULT_GOALS), infer_threshold) if bn else None
    report = EvaluationReport()
    for index, start in enumerate(starts, start=1):
        reward, steps, distance, success = rollout(env, qtable, env.initial_state(start), policy,
                                                   goal_advance_mode=goal_advance_mode)
        report.rows.append(EvaluationRow(index, reward, steps, distance, success))
    return report


def trace_episode(env, qtable: QTable, bn: DiscreteBayesNet, goals: GoalSpec, config: LearnerConfig,
                  start=None, epsilon: float = 0.0) -> List[Dict]:
    """One decision record per step with the full per-action probability table"""
    policy = CausalPolicy(env, bn, goals, config.infer_threshold)
    rng = np.random.default_rng(config.seed)
    state = env.initial_state(start) if start is not None else env.reset(rng)
    names = env.action_names()
    records = []

    def record(state, decision, outcome, cumulative, j):
        records.append({
            'step': len(records) + 1,
            'state': {k: int(v) for k, v in env.features(state).items()},
            'goal': goals[j],
            'branch': decision.branch,
            'action': names[decision.action],
            'p': decision.probability,
            'per_action': {names[a]: p for a, p in decision.inference.per_action.items()},
            'reward': outcome.reward,
            'cumulative_reward': cumulative,
        })

    rollout(env, qtable, state, policy, epsilon=epsilon, rng=rng, on_step=record,
            goal_advance_mode=config.goal_advance_mode)
    return records


def write_trace(records: List[Dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as handle:
        for entry in records:
            handle.write(json.dumps(entry, sort_keys=True) + "\n")
    return path
