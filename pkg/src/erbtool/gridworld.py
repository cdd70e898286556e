"""Landmark-localization gridworld with per-environment context features.

An agent moves one cell at a time along the grid axes and is rewarded by how
much closer (in Euclidean distance) it gets to a hidden landmark. The
observation is ``onehot(position) (x) context``: the position selects a block
of the feature vector and a unit-norm context vector, fixed per environment,
fills that block. Two environments therefore overlap at a position exactly
as much as their context vectors do.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

AXIS_NAMES = "xyz"


@dataclass(frozen=True)
class EnvSpec:
    landmark: tuple[int, ...]
    context_seed: int
    grid_size: int = 16
    dims: int = 2
    context_dim: int = 8
    terminal_radius: float = 1.0
    max_steps: int = 64
    name: str = "env"

    def __post_init__(self):
        object.__setattr__(self, "landmark", tuple(int(c) for c in self.landmark))
        if self.dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")
        if self.grid_size < 1:
            raise ValueError("grid_size must be positive")
        if len(self.landmark) != self.dims or not all(0 <= c < self.grid_size for c in self.landmark):
            raise ValueError(f"landmark {self.landmark} outside the {self.dims}-D grid of size {self.grid_size}")
        if self.context_dim < 1:
            raise ValueError("context_dim must be >= 1")
        if self.terminal_radius < 0:
            raise ValueError("terminal_radius must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0 <= self.context_seed < 2**64:
            raise ValueError("context_seed must be an unsigned 64-bit integer")

    @property
    def num_actions(self) -> int:
        return 2 * self.dims

    @property
    def obs_dim(self) -> int:
        return self.grid_size**self.dims * self.context_dim


@dataclass(frozen=True)
class EnvState:
    position: tuple[int, ...]
    steps: int = 0
    done: bool = False


def action_names(dims: int) -> list[str]:
    """Action ids in order: x++, x--, y++, y--[, z++, z--]."""
    return [f"{AXIS_NAMES[i]}{s}" for i in range(dims) for s in ("++", "--")]


@lru_cache(maxsize=1024)
def context_vector(spec: EnvSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.context_seed)
    v = rng.standard_normal(spec.context_dim)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def flat_index(spec: EnvSpec, position) -> int:
    idx = 0
    for c in position:
        idx = idx * spec.grid_size + c
    return idx


@lru_cache(maxsize=8192)
def _observation(spec: EnvSpec, position: tuple[int, ...]) -> np.ndarray:
    out = np.zeros(spec.obs_dim)
    start = flat_index(spec, position) * spec.context_dim
    out[start : start + spec.context_dim] = context_vector(spec)
    out.setflags(write=False)
    return out


def observe(spec: EnvSpec, state: EnvState) -> np.ndarray:
    """Feature vector for the state; cached and read-only."""
    return _observation(spec, state.position)


def distance(spec: EnvSpec, position) -> float:
    return math.dist(position, spec.landmark)


def step(spec: EnvSpec, state: EnvState, action: int) -> tuple[EnvState, float, bool]:
    """Move one cell (clamped at the border); reward is the distance gained."""
    if state.done:
        raise RuntimeError("cannot step an episode that is done")
    if not 0 <= action < spec.num_actions:
        raise ValueError(f"invalid action {action}")
    axis, sign = divmod(action, 2)
    pos = list(state.position)
    pos[axis] = min(spec.grid_size - 1, max(0, pos[axis] + (1 if sign == 0 else -1)))
    pos = tuple(pos)
    before = distance(spec, state.position)
    after = distance(spec, pos)
    steps = state.steps + 1
    terminal = after <= spec.terminal_radius or steps >= spec.max_steps
    return EnvState(pos, steps, terminal), before - after, terminal


@lru_cache(maxsize=1024)
def _start_cells(spec: EnvSpec) -> tuple[tuple[int, ...], ...]:
    cells = itertools.product(range(spec.grid_size), repeat=spec.dims)
    return tuple(c for c in cells if distance(spec, c) > spec.terminal_radius)


def reset(spec: EnvSpec, episode_seed: int) -> EnvState:
    """Uniformly random start cell farther than the terminal radius."""
    cells = _start_cells(spec)
    if not cells:
        raise ValueError(
            f"no start cell farther than terminal_radius={spec.terminal_radius} from the landmark"
        )
    rng = np.random.default_rng(episode_seed)
    return EnvState(cells[int(rng.integers(len(cells)))], 0, False)


def make_env_sequence(
    base_seed: int,
    count: int,
    grid_size: int = 16,
    dims: int = 2,
    context_dim: int = 8,
    terminal_radius: float = 1.0,
    max_steps: int | None = None,
) -> list[EnvSpec]:
    """`count` environments with distinct landmarks and context seeds.

    Landmarks are only allowed to repeat once every cell is taken.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if max_steps is None:
        max_steps = 4 * grid_size
    rng = np.random.default_rng(base_seed)
    cells = grid_size**dims
    landmarks: set = set()
    seeds: set = set()
    specs = []
    for i in range(count):
        while True:
            landmark = tuple(int(c) for c in rng.integers(0, grid_size, size=dims))
            cseed = int(rng.integers(0, 2**63))
            fresh = landmark not in landmarks or len(landmarks) >= cells
            if fresh and cseed not in seeds:
                break
        landmarks.add(landmark)
        seeds.add(cseed)
        specs.append(
            EnvSpec(
                landmark=landmark,
                context_seed=cseed,
                grid_size=grid_size,
                dims=dims,
                context_dim=context_dim,
                terminal_radius=terminal_radius,
                max_steps=max_steps,
                name=f"env{i + 1:02d}",
            )
        )
    return specs
