"""
Pieces shared by the grid and graph environments.
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Protocol, Sequence

import numpy as np

MOVE = "move"
PICKUP = "pickup"
DROPOFF = "dropoff"

SUBGOAL_PAX_IN_TAXI = "pax_in_taxi"
SUBGOAL_DROPOFF = "dropoff"


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed, None or an existing Generator"""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class StepResult:
    next_state: Any
    reward: float
    done: bool
    subgoal_achieved: Optional[str] = None
    truncated: bool = False  # step budget ran out
    distance: float = 0.0    # route length covered by this step


class Environment(Protocol):
    """What the sampler, the learners and the evaluators need from an environment."""

    kind: str
    env_id: str
    n_actions: int
    n_states: int

    def reset(self, rng: np.random.Generator) -> Any: ...

    def initial_state(self, start: Any) -> Any: ...

    def step(self, state: Any, action: int) -> StepResult: ...

    def state_key(self, state: Any) -> int: ...

    def legal_actions(self, state: Any) -> Sequence[int]: ...

    def action_kind(self, action: int) -> str: ...

    def action_names(self) -> List[str]: ...

    def features(self, state: Any) -> Dict[str, int]: ...

    def goal_flags(self, state: Any) -> Dict[str, int]: ...
