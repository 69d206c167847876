"""
Random-walk data collection: the tabular dataset consumed by structure
discovery and CPD fitting.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, Optional, Set

import numpy as np
import pandas as pd

from src.causal.features import FeatureSchema, TransitionRecord, extract_features
from src.envs.base import as_rng
from src.utils.config import PROGRESS_EVERY_EPISODES
from src.utils.errors import ContractError, DataError
from src.utils.logger import setup_logger

logger = setup_logger('sampler')

REWARD_COLUMN = 'reward'


@dataclass
class Dataset:
    schema: FeatureSchema
    rows: np.ndarray          # (n, d) int64, columns in schema order
    rewards: np.ndarray       # (n,) float
    provenance: Dict = field(default_factory=dict)
    visited: Set[int] = field(default_factory=set, repr=False)

    def __len__(self):
        return len(self.rows)

    @property
    def columns(self):
        return self.schema.names

    def column(self, name: str) -> np.ndarray:
        try:
            return self.rows[:, self.columns.index(name)]
        except ValueError:
            raise DataError(f"dataset has no column {name!r}")

    def records(self) -> Iterator[TransitionRecord]:
        names = self.columns
        for row, reward in zip(self.rows, self.rewards):
            yield TransitionRecord(values=dict(zip(names, map(int, row))), reward=float(reward))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows, columns=self.columns)
        frame[REWARD_COLUMN] = self.rewards
        return frame

    def validate(self):
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.columns):
            raise DataError(f"dataset has {self.rows.shape} values for {len(self.columns)} schema columns")
        for j, (name, _, cardinality) in enumerate(self.schema.columns()):
            values = self.rows[:, j]
            if len(values) and (values.min() < 0 or values.max() >= cardinality):
                raise DataError(f"column {name!r} leaves its domain 0..{cardinality - 1}")
        return self


def random_walk(env, steps: int, seed=None, schema: Optional[FeatureSchema] = None) -> Dataset:
    """Uniform random actions, resetting whenever an episode ends; exactly `steps` records"""
    if steps < 1:
        raise ContractError(f"a walk needs at least one step, got {steps}")
    schema = schema or FeatureSchema.for_env(env)
    rng = as_rng(seed)
    names = schema.names
    rows = np.zeros((steps, len(names)), dtype=np.int64)
    rewards = np.zeros(steps, dtype=float)
    visited = set()
    episodes = 0

    state = env.reset(rng)
    for t in range(steps):
        visited.add(env.state_key(state))
        action = int(rng.integers(0, env.n_actions))
        result = env.step(state, action)
        record = extract_features(env, state, action, result.next_state, schema, result.reward)
        rows[t] = record.as_row(schema)
        rewards[t] = result.reward
        if result.done:
            visited.add(env.state_key(result.next_state))
            episodes += 1
            if episodes % PROGRESS_EVERY_EPISODES == 0:
                logger.info(f"Walk progress: {t + 1}/{steps} steps, {episodes} episodes")
            state = env.reset(rng)
        else:
            state = result.next_state

    provenance = {'env_id': env.env_id, 'steps': steps, 'seed': seed if isinstance(seed, int) else None,
                  'episodes': episodes}
    return Dataset(schema=schema, rows=rows, rewards=rewards, provenance=provenance, visited=visited)


def state_coverage(env, dataset: Dataset, reachable: Optional[Set[int]] = None) -> float:
    """Fraction of the reachable state keys the walk visited"""
    if reachable is None:
        reachable = set(range(env.n_states))
    if not reachable:
        return 0.0
    return len(dataset.visited & reachable) / len(reachable)


def _meta_path(path: Path) -> Path:
    return path.with_suffix('.meta.json')


def save_dataset(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset.to_frame().to_csv(path, index=False)
    meta = {'schema': dataset.schema.to_dict(), **dataset.provenance}
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file {path} does not exist")
    meta_path = _meta_path(path)
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        schema = FeatureSchema.from_dict(meta.pop('schema', {}))
    else:
        meta, schema = {}, None

    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read dataset {path}: {e}") from e
    if frame.empty:
        raise DataError(f"dataset {path} has no rows")

    if schema is None:
        schema = _infer_schema(frame)
    missing = [name for name in schema.names if name not in frame.columns]
    if missing:
        raise DataError(f"dataset {path} lacks schema columns: {missing}")

    rewards = frame[REWARD_COLUMN].to_numpy(dtype=float) if REWARD_COLUMN in frame else np.zeros(len(frame))
    rows = frame[schema.names].to_numpy(dtype=np.int64)
    return Dataset(schema=schema, rows=rows, rewards=rewards, provenance=meta).validate()


def _infer_schema(frame: pd.DataFrame) -> FeatureSchema:
    """Schema for a CSV without its sidecar, read off the header"""
    include_reward = 'reward_class' in frame.columns
    if 'taxi_row' in frame.columns:
        return FeatureSchema(tier='positional', rows=int(frame['taxi_row'].max()) + 1,
                             cols=int(frame['taxi_col'].max()) + 1, include_reward=include_reward)
    return FeatureSchema(include_reward=include_reward)
