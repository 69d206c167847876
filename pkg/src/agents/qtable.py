"""
Dense Q-table and the CSV formats for tables and training curves.
"""
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from src.utils.errors import DataError

HEADER_PREFIX = '# '


def env_hash(env) -> str:
    """SHA-256 of the environment description; ties a table to the env it was trained on"""
    text = json.dumps(env.describe(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


class QTable:
    """Q(s, a) over (state key, action index); unvisited entries stay 0"""

    def __init__(self, n_states: int, n_actions: int, env_id: str = '', config_hash: str = '',
                 values: Optional[np.ndarray] = None):
        self.values = np.zeros((n_states, n_actions)) if values is None else values
        self.env_id = env_id
        self.config_hash = config_hash

    @classmethod
    def for_env(cls, env) -> 'QTable':
        return cls(env.n_states, env.n_actions, env.env_id, env_hash(env))

    @property
    def shape(self):
        return self.values.shape

    def greedy(self, key: int, legal: Sequence[int]) -> int:
        """argmax over legal actions, lowest index on ties"""
        legal = list(legal)
        row = self.values[key, legal]
        return legal[int(np.argmax(row))]

    def best_value(self, key: int, legal: Sequence[int]) -> float:
        return float(self.values[key, list(legal)].max())

    def update(self, key: int, action: int, target: float, learning_rate: float) -> float:
        current = self.values[key, action]
        self.values[key, action] = current + learning_rate * (target - current)
        return self.values[key, action]

    def check_env(self, env):
        if self.shape != (env.n_states, env.n_actions):
            raise DataError(f"Q-table shape {self.shape} does not fit env {env.env_id} "
                            f"({env.n_states} states x {env.n_actions} actions)")
        if self.config_hash and self.config_hash != env_hash(env):
            raise DataError(f"Q-table was trained on a different configuration than env {env.env_id}")


def save_qtable(table: QTable, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_states, n_actions = table.shape
    states, actions = np.divmod(np.arange(n_states * n_actions), n_actions)
    frame = pd.DataFrame({'state': states, 'action': actions, 'value': table.values.ravel()})
    with open(path, 'w', newline='') as handle:
        handle.write(f"{HEADER_PREFIX}env_id={table.env_id}\n")
        handle.write(f"{HEADER_PREFIX}config_hash={table.config_hash}\n")
        handle.write(f"{HEADER_PREFIX}n_states={n_states}\n")
        handle.write(f"{HEADER_PREFIX}n_actions={n_actions}\n")
        frame.to_csv(handle, index=False, float_format='%.17g')
    return path


def load_qtable(path) -> QTable:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Q-table file {path} does not exist")
    header = {}
    with open(path) as handle:
        for line in handle:
            if not line.startswith(HEADER_PREFIX):
                break
            key, _, value = line[len(HEADER_PREFIX):].strip().partition('=')
            header[key] = value
    try:
        n_states, n_actions = int(header['n_states']), int(header['n_actions'])
        frame = pd.read_csv(path, comment='#', float_precision='round_trip')
        values = np.zeros((n_states, n_actions))
        values[frame['state'].to_numpy(), frame['action'].to_numpy()] = frame['value'].to_numpy(dtype=float)
    except (KeyError, ValueError, IndexError, pd.errors.ParserError) as e:
        raise DataError(f"malformed Q-table file {path}: {e}") from e
    if not np.isfinite(values).all():
        raise DataError(f"Q-table file {path} holds non-finite values")
    return QTable(n_states, n_actions, header.get('env_id', ''), header.get('config_hash', ''), values)


@dataclass
class EpisodeRecord:
    episode: int
    total_reward: float
    steps: int
    epsilon: float
    infer_count: int


@dataclass
class TrainingCurve:
    records: List[EpisodeRecord] = field(default_factory=list)

    def append(self, record: EpisodeRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def rewards(self) -> np.ndarray:
        return np.array([r.total_reward for r in self.records], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) for r in self.records],
                            columns=['episode', 'total_reward', 'steps', 'epsilon', 'infer_count'])


def save_curve(curve: TrainingCurve, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    curve.to_frame().to_csv(path, index=False, float_format='%.17g')
    return path
