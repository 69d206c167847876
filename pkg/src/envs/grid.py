"""
Grid pickup-and-delivery environment: a parametric n x m generalisation of the
classic 5x5 taxi map with configurable depots and interior walls.
"""
from collections import deque
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from src.envs.base import (
    DROPOFF, MOVE, PICKUP, SUBGOAL_DROPOFF, SUBGOAL_PAX_IN_TAXI, StepResult, as_rng,
)
from src.utils.config import (
    REWARD_DROPOFF, REWARD_ILLEGAL, REWARD_STEP, WALL_CELLS_PER_SEGMENT, WALL_SEGMENT_LENGTH,
)
from src.utils.errors import ConfigurationError, ContractError, DataError

IN_TAXI = -1

Cell = Tuple[int, int]
Wall = Tuple[Cell, Cell]


class GridAction(IntEnum):
    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3
    PICKUP = 4
    DROPOFF = 5


MOVES = {
    GridAction.NORTH: (-1, 0),
    GridAction.SOUTH: (1, 0),
    GridAction.EAST: (0, 1),
    GridAction.WEST: (0, -1),
}


def make_wall(a: Cell, b: Cell) -> Wall:
    """Walls are unordered; store the pair sorted"""
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class GridConfig:
    rows: int
    cols: int
    depots: Tuple[Cell, ...]
    walls: FrozenSet[Wall] = frozenset()
    reward_step: int = REWARD_STEP
    reward_dropoff: int = REWARD_DROPOFF
    reward_illegal: int = REWARD_ILLEGAL
    max_steps_per_episode: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'depots', tuple(tuple(d) for d in self.depots))
        object.__setattr__(self, 'walls', frozenset(make_wall(tuple(a), tuple(b)) for a, b in self.walls))
        if self.max_steps_per_episode is None:
            object.__setattr__(self, 'max_steps_per_episode', 10 * (self.rows + self.cols))

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def n_depots(self) -> int:
        return len(self.depots)

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.rows and 0 <= cell[1] < self.cols

    def blocked(self, a: Cell, b: Cell) -> bool:
        return make_wall(a, b) in self.walls

    def validate(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigurationError(f"grid must have positive dimensions, got {self.rows}x{self.cols}")
        if len(self.depots) < 2:
            raise ConfigurationError("grid needs at least two depots")
        if len(set(self.depots)) != len(self.depots):
            raise ConfigurationError(f"depots must be distinct: {self.depots}")
        for depot in self.depots:
            if not self.in_bounds(depot):
                raise ConfigurationError(f"depot {depot} lies outside the {self.rows}x{self.cols} grid")
        for a, b in self.walls:
            if not (self.in_bounds(a) and self.in_bounds(b)):
                raise ConfigurationError(f"wall {a}-{b} leaves the grid")
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                raise ConfigurationError(f"wall {a}-{b} does not separate adjacent cells")
        if self.max_steps_per_episode < 1:
            raise ConfigurationError("max_steps_per_episode must be positive")
        return self


@dataclass(frozen=True)
class EnvState:
    taxi_row: int
    taxi_col: int
    passenger_location: int  # depot index or IN_TAXI
    destination: int
    done: bool = False
    steps: int = field(default=0, compare=False)

    @property
    def cell(self) -> Cell:
        return (self.taxi_row, self.taxi_col)

    @property
    def delivered(self) -> bool:
        return self.passenger_location == self.destination


def default_taxi_config(**overrides) -> GridConfig:
    """The classic 5x5 map: depots R, G, Y, B and its six interior wall segments"""
    walls = [
        ((0, 1), (0, 2)), ((1, 1), (1, 2)),
        ((3, 0), (3, 1)), ((4, 0), (4, 1)),
        ((3, 2), (3, 3)), ((4, 2), (4, 3)),
    ]
    config = GridConfig(rows=5, cols=5, depots=((0, 0), (0, 4), (4, 0), (4, 3)), walls=frozenset(walls))
    return replace(config, **overrides).validate() if overrides else config.validate()


def make_grid_config(rows: int, cols: int, seed: int = 0, **overrides) -> GridConfig:
    """Corner depots plus floor(n*m/25) seeded vertical wall segments.

    A segment is skipped when it would wall off a whole column boundary, so
    every generated grid stays connected.
    """
    corners = [(0, 0), (0, cols - 1), (rows - 1, 0), (rows - 1, cols - 1)]
    depots = tuple(dict.fromkeys(corners))
    rng = np.random.default_rng(seed)
    walls = set()
    if cols >= 2:
        open_rows = {c: rows for c in range(cols - 1)}
        for _ in range((rows * cols) // WALL_CELLS_PER_SEGMENT):
            c = int(rng.integers(0, cols - 1))
            r0 = int(rng.integers(0, rows))
            segment = [make_wall((r, c), (r, c + 1)) for r in range(r0, min(rows, r0 + WALL_SEGMENT_LENGTH))]
            fresh = [w for w in segment if w not in walls]
            if open_rows[c] - len(fresh) < 1:
                continue
            walls.update(fresh)
            open_rows[c] -= len(fresh)
    config = GridConfig(rows=rows, cols=cols, depots=depots, walls=frozenset(walls), **overrides)
    return config.validate()


def grid_reset(config: GridConfig, seed=None) -> EnvState:
    config.validate()
    rng = as_rng(seed)
    cell = int(rng.integers(0, config.n_cells))
    passenger, destination = rng.choice(config.n_depots, size=2, replace=False)
    return EnvState(
        taxi_row=cell // config.cols,
        taxi_col=cell % config.cols,
        passenger_location=int(passenger),
        destination=int(destination),
    )


def _transition(state: EnvState, action: int, config: GridConfig) -> Tuple[EnvState, int, Optional[str], bool]:
    """Transition without the step budget: (next_state, reward, subgoal, moved)"""
    action = GridAction(action)
    if action in MOVES:
        dr, dc = MOVES[action]
        target = (state.taxi_row + dr, state.taxi_col + dc)
        if not config.in_bounds(target) or config.blocked(state.cell, target):
            return state, config.reward_step, None, False
        return replace(state, taxi_row=target[0], taxi_col=target[1]), config.reward_step, None, True

    if action == GridAction.PICKUP:
        at_passenger = (
            state.passenger_location != IN_TAXI
            and not state.delivered
            and config.depots[state.passenger_location] == state.cell
        )
        if at_passenger:
            return replace(state, passenger_location=IN_TAXI), config.reward_step, SUBGOAL_PAX_IN_TAXI, False
        return state, config.reward_illegal, None, False

    at_destination = state.passenger_location == IN_TAXI and config.depots[state.destination] == state.cell
    if at_destination:
        delivered = replace(state, passenger_location=state.destination, done=True)
        return delivered, config.reward_dropoff, SUBGOAL_DROPOFF, False
    return state, config.reward_illegal, None, False


def grid_step(state: EnvState, action: int, config: GridConfig) -> StepResult:
    if state.done:
        raise ContractError("cannot step a finished episode; reset first")
    next_state, reward, subgoal, moved = _transition(state, action, config)
    steps = state.steps + 1
    truncated = not next_state.done and steps >= config.max_steps_per_episode
    next_state = replace(next_state, steps=steps, done=next_state.done or truncated)
    return StepResult(
        next_state=next_state,
        reward=reward,
        done=next_state.done,
        subgoal_achieved=subgoal,
        truncated=truncated,
        distance=1.0 if moved else 0.0,
    )


def encode_state(state: EnvState, config: GridConfig) -> int:
    """Mixed-radix code over (cell, passenger incl. in-taxi, destination)"""
    n_depots = config.n_depots
    passenger = n_depots if state.passenger_location == IN_TAXI else state.passenger_location
    cell = state.taxi_row * config.cols + state.taxi_col
    return (cell * (n_depots + 1) + passenger) * n_depots + state.destination


def decode_state(index: int, config: GridConfig) -> EnvState:
    n_depots = config.n_depots
    destination = index % n_depots
    index //= n_depots
    passenger = index % (n_depots + 1)
    cell = index // (n_depots + 1)
    state = EnvState(
        taxi_row=cell // config.cols,
        taxi_col=cell % config.cols,
        passenger_location=IN_TAXI if passenger == n_depots else passenger,
        destination=destination,
    )
    return replace(state, done=state.delivered)


def state_count(config: GridConfig) -> int:
    return config.n_cells * (config.n_depots + 1) * config.n_depots


def all_reset_states(config: GridConfig) -> List[EnvState]:
    """Support of the reset distribution: every cell x ordered pair of distinct depots"""
    states = []
    for cell in range(config.n_cells):
        for passenger in range(config.n_depots):
            for destination in range(config.n_depots):
                if passenger != destination:
                    states.append(EnvState(cell // config.cols, cell % config.cols, passenger, destination))
    return states


def reachable_states(config: GridConfig) -> set:
    """Codes of every state reachable from some reset state (terminal states included)"""
    frontier = deque(all_reset_states(config))
    seen = {encode_state(s, config) for s in frontier}
    while frontier:
        state = frontier.popleft()
        if state.done:
            continue
        for action in GridAction:
            next_state, _, _, _ = _transition(state, action, config)
            code = encode_state(next_state, config)
            if code not in seen:
                seen.add(code)
                frontier.append(next_state)
    return seen


def grid_features(state: EnvState, config: GridConfig) -> Dict[str, int]:
    """Pre-transition state features (core tier plus the grid's positional tier)"""
    aboard = state.passenger_location == IN_TAXI
    on_passenger = (not aboard and not state.delivered
                    and config.depots[state.passenger_location] == state.cell)
    return {
        'taxi_on_pax_loc': int(on_passenger),
        'taxi_on_dest': int(config.depots[state.destination] == state.cell),
        'pax_in_taxi': int(aboard),
        'taxi_row': state.taxi_row,
        'taxi_col': state.taxi_col,
    }


class GridEnv:
    kind = "grid"
    n_actions = len(GridAction)

    def __init__(self, config: GridConfig, env_id: Optional[str] = None):
        self.config = config.validate()
        self.env_id = env_id or f"grid{config.rows}x{config.cols}"
        self.n_states = state_count(config)

    def reset(self, rng) -> EnvState:
        return grid_reset(self.config, rng)

    def initial_state(self, start: EnvState) -> EnvState:
        """Evaluation start from a fixed reset state"""
        if not self.config.in_bounds(start.cell):
            raise ConfigurationError(f"start cell {start.cell} lies outside the grid")
        if start.passenger_location == IN_TAXI or start.passenger_location == start.destination:
            raise ConfigurationError("an episode must start with the passenger waiting at a depot")
        return replace(start, done=False, steps=0)

    def step(self, state: EnvState, action: int) -> StepResult:
        return grid_step(state, action, self.config)

    def state_key(self, state: EnvState) -> int:
        return encode_state(state, self.config)

    def legal_actions(self, state: EnvState) -> range:
        return range(self.n_actions)

    def action_kind(self, action: int) -> str:
        if action == GridAction.PICKUP:
            return PICKUP
        if action == GridAction.DROPOFF:
            return DROPOFF
        return MOVE

    def action_names(self) -> List[str]:
        return [a.name.lower() for a in GridAction]

    def features(self, state: EnvState) -> Dict[str, int]:
        return grid_features(state, self.config)

    def goal_flags(self, state: EnvState) -> Dict[str, int]:
        return {'pax_in_taxi_next': int(state.passenger_location == IN_TAXI),
                'dropoff_next': int(state.delivered)}

    def describe(self) -> dict:
        return {
            'kind': self.kind, 'env_id': self.env_id,
            'rows': self.config.rows, 'cols': self.config.cols,
            'depots': [list(d) for d in self.config.depots],
            'walls': sorted([list(map(list, w)) for w in self.config.walls]),
            'reward_step': self.config.reward_step, 'reward_dropoff': self.config.reward_dropoff,
            'reward_illegal': self.config.reward_illegal,
            'max_steps_per_episode': self.config.max_steps_per_episode,
        }


def load_map(path) -> GridConfig:
    """Read a map file: 'rows cols', then 'depot r c' and 'wall r1 c1 r2 c2' lines"""
    lines = [line.split('#')[0].strip() for line in Path(path).read_text().splitlines()]
    lines = [line for line in lines if line]
    if not lines:
        raise DataError(f"map file {path} is empty")
    try:
        rows, cols = map(int, lines[0].split())
        depots, walls = [], []
        for line in lines[1:]:
            kind, *values = line.split()
            numbers = list(map(int, values))
            if kind == 'depot' and len(numbers) == 2:
                depots.append(tuple(numbers))
            elif kind == 'wall' and len(numbers) == 4:
                walls.append(((numbers[0], numbers[1]), (numbers[2], numbers[3])))
            else:
                raise DataError(f"unrecognised map line: {line!r}")
    except ValueError as e:
        raise DataError(f"malformed map file {path}: {e}") from e
    return GridConfig(rows=rows, cols=cols, depots=tuple(depots), walls=frozenset(walls)).validate()


def save_map(config: GridConfig, path):
    lines = [f"{config.rows} {config.cols}"]
    lines += [f"depot {r} {c}" for r, c in config.depots]
    lines += [f"wall {a[0]} {a[1]} {b[0]} {b[1]}" for a, b in sorted(config.walls)]
    Path(path).write_text("\n".join(lines) + "\n")
