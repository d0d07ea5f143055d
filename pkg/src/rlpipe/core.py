"""Core abstractions: RNG streams, spaces, transitions, datasets, policies.

Everything downstream (environments, metrics, tuning, pipelines) builds on the
types in this module.  All randomness in the library flows through
:class:`RngStream` so that any run is reproducible from a single root seed.
"""
from __future__ import annotations

import copy as _copy
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np


class DatasetFormatError(ValueError):
    """Raised when a serialized dataset violates the trajectory invariants."""


class RunawayEpisodeError(RuntimeError):
    """Raised when an episode fails to terminate within the step budget."""


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Hash-derived random stream addressed by (root_seed, path).

    Streams are never split sequentially: a child stream is derived by
    extending the integer path, so the draws of a stream depend only on the
    root seed and its path, not on how many siblings were created before it.

    Args:
        root_seed: non-negative root seed shared by the whole run.
        path: tuple of non-negative integers addressing this stream.
    """

    root_seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.root_seed, (int, np.integer)) or self.root_seed < 0:
            raise ValueError(f"root_seed must be a non-negative int, got {self.root_seed!r}")
        path = tuple(int(i) for i in self.path)
        if any(i < 0 for i in path):
            raise ValueError(f"path entries must be non-negative, got {path}")
        object.__setattr__(self, "root_seed", int(self.root_seed))
        object.__setattr__(self, "path", path)

    def child(self, *indices: int) -> "RngStream":
        """Derive a sub-stream by appending integer indices to the path."""
        return RngStream(self.root_seed, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; same (seed, path) -> same draws."""
        seq = np.random.SeedSequence(entropy=self.root_seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng: Union[RngStream, np.random.Generator]) -> np.random.Generator:
    """Normalize an RngStream or Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


# ---------------------------------------------------------------------------
# Spaces
# ---------------------------------------------------------------------------


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Box:
    """Axis-aligned continuous space [low, high] per dimension."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self) -> None:
        low = _frozen_array(np.atleast_1d(self.low))
        high = _frozen_array(np.atleast_1d(self.high))
        if low.ndim != 1 or low.shape != high.shape:
            raise ValueError("low and high must be 1-d arrays of equal length")
        if low.size == 0:
            raise ValueError("Box must have at least one dimension")
        if np.any(low > high):
            raise ValueError("Box requires low <= high componentwise")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return self.low.size

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.low, self.high)

    def sample(self, rng) -> np.ndarray:
        g = as_generator(rng)
        return g.uniform(self.low, self.high)

    def sample_batch(self, n: int, rng) -> np.ndarray:
        g = as_generator(rng)
        return g.uniform(self.low, self.high, size=(n, self.dim))


@dataclass(frozen=True)
class Discrete:
    """Finite space {0, ..., n-1}, encoded as one-element real vectors."""

    n: int

    def __post_init__(self) -> None:
        if int(self.n) < 1:
            raise ValueError(f"Discrete space needs n >= 1, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dim(self) -> int:
        return 1

    def sample(self, rng) -> np.ndarray:
        g = as_generator(rng)
        return np.array([float(g.integers(self.n))])

    def sample_batch(self, n: int, rng) -> np.ndarray:
        g = as_generator(rng)
        return g.integers(self.n, size=(n, 1)).astype(float)


Space = Union[Box, Discrete]


def space_contains(space: Space, x) -> bool:
    """Membership check for a point encoded as a 1-d vector.

    Raises ValueError on dimension mismatch rather than returning False, so
    malformed inputs are surfaced instead of silently rejected.
    """
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1 or arr.size != space.dim:
        raise ValueError(f"point of dim {arr.size} checked against space of dim {space.dim}")
    if isinstance(space, Box):
        return bool(np.all(arr >= space.low) and np.all(arr <= space.high))
    if isinstance(space, Discrete):
        v = arr[0]
        return bool(v == math.floor(v) and 0 <= v < space.n)
    raise TypeError(f"unknown space type {type(space).__name__}")


# ---------------------------------------------------------------------------
# Transitions and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Transition:
    """Single (s, a, r, s') step; `last` marks the end of a trajectory."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    absorbing: bool = False
    last: bool = False

    def __post_init__(self) -> None:
        state = _frozen_array(np.atleast_1d(self.state))
        action = _frozen_array(np.atleast_1d(self.action))
        next_state = _frozen_array(np.atleast_1d(self.next_state))
        if state.shape != next_state.shape:
            raise ValueError("state and next_state must share a shape")
        object.__setattr__(self, "state", state)
        object.__setattr__(self, "action", action)
        object.__setattr__(self, "next_state", next_state)
        object.__setattr__(self, "reward", float(self.reward))
        object.__setattr__(self, "absorbing", bool(self.absorbing))
        object.__setattr__(self, "last", bool(self.last))

    def __eq__(self, other) -> bool:
        # value equality with NaN == NaN, so JSONL round-trips compare equal
        if not isinstance(other, Transition):
            return NotImplemented
        rewards_equal = (self.reward == other.reward
                         or (math.isnan(self.reward) and math.isnan(other.reward)))
        return (rewards_equal
                and self.absorbing == other.absorbing
                and self.last == other.last
                and np.array_equal(self.state, other.state, equal_nan=True)
                and np.array_equal(self.action, other.action, equal_nan=True)
                and np.array_equal(self.next_state, other.next_state, equal_nan=True))


@dataclass(frozen=True)
class Dataset:
    """Ordered batch of transitions grouped into whole trajectories.

    trajectory_offsets[i] is the index of the first transition of trajectory
    i; boundaries must line up with the `last` flags of the transitions.
    """

    transitions: tuple[Transition, ...]
    trajectory_offsets: tuple[int, ...]

    def __post_init__(self) -> None:
        transitions = tuple(self.transitions)
        offsets = tuple(int(i) for i in self.trajectory_offsets)
        if len(transitions) == 0:
            raise ValueError("Dataset must contain at least one transition")
        if len(offsets) == 0 or offsets[0] != 0:
            raise ValueError("trajectory_offsets must start at 0")
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ValueError("trajectory_offsets must be strictly increasing")
        if offsets[-1] >= len(transitions):
            raise ValueError("trajectory_offsets exceed transition count")
        ends = set(offsets[1:]) | {len(transitions)}
        for i, tr in enumerate(transitions):
            if tr.last != (i + 1 in ends):
                raise ValueError(f"last flag at index {i} does not match trajectory boundaries")
        sdim = transitions[0].state.size
        adim = transitions[0].action.size
        for tr in transitions:
            if tr.state.size != sdim or tr.action.size != adim:
                raise ValueError("all transitions must share state/action dims")
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "trajectory_offsets", offsets)

    @staticmethod
    def from_trajectories(trajectories: Iterable[Sequence[Transition]]) -> "Dataset":
        """Build a dataset from non-empty trajectories, fixing last flags."""
        transitions: list[Transition] = []
        offsets: list[int] = []
        for traj in trajectories:
            traj = list(traj)
            if not traj:
                raise ValueError("trajectories must be non-empty")
            offsets.append(len(transitions))
            for j, tr in enumerate(traj):
                want_last = j == len(traj) - 1
                if tr.last != want_last:
                    tr = Transition(tr.state, tr.action, tr.reward, tr.next_state,
                                    tr.absorbing, want_last)
                transitions.append(tr)
        return Dataset(tuple(transitions), tuple(offsets))

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def n_trajectories(self) -> int:
        return len(self.trajectory_offsets)

    @property
    def state_dim(self) -> int:
        return self.transitions[0].state.size

    @property
    def action_dim(self) -> int:
        return self.transitions[0].action.size

    def trajectory(self, i: int) -> tuple[Transition, ...]:
        start = self.trajectory_offsets[i]
        end = (self.trajectory_offsets[i + 1]
               if i + 1 < len(self.trajectory_offsets) else len(self.transitions))
        return self.transitions[start:end]

    def states(self) -> np.ndarray:
        return np.stack([t.state for t in self.transitions])

    def actions(self) -> np.ndarray:
        return np.stack([t.action for t in self.transitions])

    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions])

    def next_states(self) -> np.ndarray:
        return np.stack([t.next_state for t in self.transitions])

    def absorbing_flags(self) -> np.ndarray:
        return np.array([t.absorbing for t in self.transitions], dtype=bool)


def split_trajectories(d: Dataset) -> list[tuple[Transition, ...]]:
    """Partition a dataset into its trajectories; concatenation round-trips."""
    return [d.trajectory(i) for i in range(d.n_trajectories)]


def dataset_bootstrap(d: Dataset, rng) -> Dataset:
    """Resample whole trajectories with replacement (same trajectory count).

    Every output trajectory is one of the input trajectories copied intact,
    preserving internal order; used to give tuner agents independent views of
    an offline dataset.
    """
    g = as_generator(rng)
    idx = g.integers(0, d.n_trajectories, size=d.n_trajectories)
    return Dataset.from_trajectories([d.trajectory(int(i)) for i in idx])


# --- JSONL round trip -------------------------------------------------------


def _vector_to_json(v: np.ndarray) -> list:
    return [None if math.isnan(x) else float(x) for x in v.tolist()]


def _vector_from_json(v, line_no: int) -> np.ndarray:
    if not isinstance(v, list):
        raise DatasetFormatError(f"line {line_no}: expected a list of numbers")
    return np.array([math.nan if x is None else float(x) for x in v])


def write_dataset_jsonl(d: Dataset, path) -> None:
    """Write one transition per line; missing values encoded as null."""
    with open(path, "w") as fh:
        for ep in range(d.n_trajectories):
            for t, tr in enumerate(d.trajectory(ep)):
                rec = {
                    "episode": ep,
                    "t": t,
                    "s": _vector_to_json(tr.state),
                    "a": _vector_to_json(tr.action),
                    "r": None if math.isnan(tr.reward) else tr.reward,
                    "s_next": _vector_to_json(tr.next_state),
                    "absorbing": tr.absorbing,
                    "last": tr.last,
                }
                fh.write(json.dumps(rec) + "\n")


def read_dataset_jsonl(path) -> Dataset:
    """Read a JSONL dataset, rejecting episode/t ordering violations."""
    required = {"episode", "t", "s", "a", "r", "s_next", "absorbing", "last"}
    trajectories: list[list[Transition]] = []
    prev_episode = None
    prev_t = None
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {line_no}: invalid JSON: {exc}") from exc
            if not required.issubset(rec):
                missing = sorted(required - set(rec))
                raise DatasetFormatError(f"line {line_no}: missing keys {missing}")
            episode, t = rec["episode"], rec["t"]
            if prev_episode is None:
                if t != 0:
                    raise DatasetFormatError(f"line {line_no}: first step of an episode must have t=0")
                trajectories.append([])
            elif episode == prev_episode:
                if t != prev_t + 1:
                    raise DatasetFormatError(f"line {line_no}: t must advance by 1 within an episode")
                if trajectories[-1][-1].last:
                    raise DatasetFormatError(f"line {line_no}: transition after last flag in episode {episode}")
            else:
                if episode < prev_episode:
                    raise DatasetFormatError(f"line {line_no}: episode ids must be non-decreasing")
                if not trajectories[-1][-1].last:
                    raise DatasetFormatError(f"line {line_no}: episode {prev_episode} ended without last flag")
                if t != 0:
                    raise DatasetFormatError(f"line {line_no}: first step of an episode must have t=0")
                trajectories.append([])
            reward = math.nan if rec["r"] is None else float(rec["r"])
            trajectories[-1].append(Transition(
                _vector_from_json(rec["s"], line_no),
                _vector_from_json(rec["a"], line_no),
                reward,
                _vector_from_json(rec["s_next"], line_no),
                bool(rec["absorbing"]),
                bool(rec["last"]),
            ))
            prev_episode, prev_t = episode, t
    if not trajectories:
        raise DatasetFormatError("dataset file contains no transitions")
    if not trajectories[-1][-1].last:
        raise DatasetFormatError(f"episode {prev_episode} ended without last flag")
    return Dataset.from_trajectories(trajectories)


# ---------------------------------------------------------------------------
# MDP spec and environment interface
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MdpSpec:
    """Static description of an MDP: spaces, discount, horizon (None = infinite)."""

    state_space: Space
    action_space: Space
    gamma: float
    horizon: int | None

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.horizon is None:
            if self.gamma >= 1.0:
                raise ValueError("infinite horizon requires gamma < 1")
        elif int(self.horizon) < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        else:
            object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "gamma", float(self.gamma))


class Environment(ABC):
    """Forward-model MDP handle.

    Dynamics are expressed functionally: `step` maps (internal state, action)
    to (next internal state, reward, absorbing) and `observe` maps internal
    states to the observations policies act on (identity for plain
    environments, a feature map for wrapped ones).  Instances are
    single-threaded; concurrent rollouts must use `copy`.
    """

    spec: MdpSpec

    @abstractmethod
    def sample_initial(self, rng) -> np.ndarray:
        """Draw one initial internal state."""

    @abstractmethod
    def step(self, state: np.ndarray, action: np.ndarray, rng):
        """Advance one step; returns (next_state, reward, absorbing)."""

    def sample_initial_batch(self, n: int, rng) -> np.ndarray:
        g = as_generator(rng)
        return np.stack([self.sample_initial(g) for _ in range(n)])

    def step_batch(self, states: np.ndarray, actions: np.ndarray, rng):
        """Row-wise step; default loops, concrete envs vectorize."""
        g = as_generator(rng)
        nexts, rewards, absorbing = [], [], []
        for s, a in zip(states, actions):
            ns, r, done = self.step(s, a, g)
            nexts.append(ns)
            rewards.append(r)
            absorbing.append(done)
        return np.stack(nexts), np.array(rewards), np.array(absorbing, dtype=bool)

    def observe(self, state: np.ndarray) -> np.ndarray:
        return state

    def observe_batch(self, states: np.ndarray) -> np.ndarray:
        return states

    def copy(self) -> "Environment":
        """Independent deep copy; stepping the copy never mutates the original."""
        return _copy.deepcopy(self)


def environment_copy(env: Environment) -> Environment:
    return env.copy()


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class Policy(ABC):
    """State -> action rule; sampled actions always lie in the action space."""

    action_space: Space
    deterministic: bool = False

    @abstractmethod
    def act(self, obs: np.ndarray, rng, t: int = 0) -> np.ndarray:
        """Sample (or compute) one action for one observation."""

    def act_batch(self, obs: np.ndarray, rng, t: int = 0) -> np.ndarray:
        g = as_generator(rng)
        return np.stack([self.act(o, g, t) for o in obs])


class RandomUniformPolicy(Policy):
    """Uniform random actions over the action space; the exploration baseline."""

    deterministic = False

    def __init__(self, action_space: Space):
        self.action_space = action_space

    def act(self, obs, rng, t: int = 0) -> np.ndarray:
        return self.action_space.sample(rng)

    def act_batch(self, obs, rng, t: int = 0) -> np.ndarray:
        return self.action_space.sample_batch(len(obs), rng)


# ---------------------------------------------------------------------------
# Hyperparameter spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CategoricalEntry:
    """Unordered finite domain."""

    name: str
    values: tuple

    def __post_init__(self) -> None:
        values = tuple(self.values)
        if len(values) == 0:
            raise ValueError(f"categorical entry {self.name!r} needs at least one value")
        if len(set(values)) != len(values):
            raise ValueError(f"categorical entry {self.name!r} has duplicate values")
        object.__setattr__(self, "values", values)

    def contains(self, v) -> bool:
        return v in self.values


@dataclass(frozen=True)
class IntRangeEntry:
    """Integer interval [lo, hi], both ends inclusive."""

    name: str
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if int(self.lo) > int(self.hi):
            raise ValueError(f"int entry {self.name!r} needs lo <= hi")
        object.__setattr__(self, "lo", int(self.lo))
        object.__setattr__(self, "hi", int(self.hi))

    def contains(self, v) -> bool:
        return isinstance(v, (int, np.integer)) and self.lo <= int(v) <= self.hi


@dataclass(frozen=True)
class RealRangeEntry:
    """Real interval [lo, hi]; scale 'log' samples and mutates in log space."""

    name: str
    lo: float
    hi: float
    scale: str = "linear"

    def __post_init__(self) -> None:
        if self.scale not in ("linear", "log"):
            raise ValueError(f"real entry {self.name!r}: scale must be 'linear' or 'log'")
        lo, hi = float(self.lo), float(self.hi)
        if lo > hi:
            raise ValueError(f"real entry {self.name!r} needs lo <= hi")
        if self.scale == "log" and lo <= 0:
            raise ValueError(f"real entry {self.name!r}: log scale requires lo > 0")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, v) -> bool:
        return isinstance(v, (float, int, np.floating, np.integer)) and self.lo <= float(v) <= self.hi


SpaceEntry = Union[CategoricalEntry, IntRangeEntry, RealRangeEntry]


@dataclass(frozen=True)
class HyperparamSpace:
    """Named product of categorical / integer / real domains."""

    entries: tuple[SpaceEntry, ...]

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        if len(entries) == 0:
            raise ValueError("HyperparamSpace must have at least one entry")
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate entry names in {names}")
        object.__setattr__(self, "entries", entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    def entry(self, name: str) -> SpaceEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)


def sample_assignment(space: HyperparamSpace, rng) -> dict:
    """Uniform draw over the product space (log entries uniform in log space)."""
    g = as_generator(rng)
    values: dict = {}
    for e in space.entries:
        if isinstance(e, CategoricalEntry):
            values[e.name] = e.values[int(g.integers(len(e.values)))]
        elif isinstance(e, IntRangeEntry):
            values[e.name] = int(g.integers(e.lo, e.hi + 1))
        elif isinstance(e, RealRangeEntry):
            if e.scale == "log":
                values[e.name] = float(np.exp(g.uniform(np.log(e.lo), np.log(e.hi))))
            else:
                values[e.name] = float(g.uniform(e.lo, e.hi))
        else:
            raise TypeError(f"unknown entry type {type(e).__name__}")
    return values


def validate_assignment(space: HyperparamSpace, values: dict) -> None:
    """Check an assignment names exactly the space's entries, all in-domain."""
    if set(values) != set(space.names):
        raise ValueError(f"assignment names {sorted(values)} != space names {sorted(space.names)}")
    for e in space.entries:
        if not e.contains(values[e.name]):
            raise ValueError(f"value {values[e.name]!r} outside domain of entry {e.name!r}")
