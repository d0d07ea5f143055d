"""Feature-engineering units: mutual-information feature selection and the
environment/dataset transforms that apply a selection consistently on both
sides of a pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Box, Dataset, Environment, MdpSpec, Transition
from ..metrics import knn_mutual_information


@dataclass(frozen=True)
class FeatureTransform:
    """Selection (and optional z-scoring) of state dimensions.

    Applied identically to environment observations and dataset states, so
    policies trained on transformed data run unchanged on the transformed
    environment.  Reward shaping is the identity hook.
    """

    indices: tuple[int, ...]
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self) -> None:
        indices = tuple(int(i) for i in self.indices)
        if len(indices) == 0:
            raise ValueError("at least one feature index required")
        if len(set(indices)) != len(indices):
            raise ValueError(f"duplicate feature indices {indices}")
        if any(i < 0 for i in indices):
            raise ValueError(f"negative feature index in {indices}")
        object.__setattr__(self, "indices", indices)
        if (self.mean is None) != (self.std is None):
            raise ValueError("mean and std must be provided together")
        if self.mean is not None:
            mean = np.asarray(self.mean, dtype=float)
            std = np.asarray(self.std, dtype=float)
            if mean.shape != (len(indices),) or std.shape != (len(indices),):
                raise ValueError("mean/std must match the selected dimension count")
            if np.any(std <= 0):
                raise ValueError("standardization stds must be positive")
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "std", std)

    def apply_states(self, states: np.ndarray) -> np.ndarray:
        x = np.asarray(states, dtype=float)[:, list(self.indices)]
        if self.mean is not None:
            x = (x - self.mean) / self.std
        return x

    def apply_state(self, state: np.ndarray) -> np.ndarray:
        return self.apply_states(np.atleast_1d(state)[None, :])[0]

    def apply_reward(self, r: float) -> float:
        return r

    def transform_space(self, space: Box) -> Box:
        if not isinstance(space, Box):
            raise TypeError("feature selection needs a Box state space")
        if max(self.indices) >= space.dim:
            raise ValueError(f"index {max(self.indices)} outside state dim {space.dim}")
        low = space.low[list(self.indices)].copy()
        high = space.high[list(self.indices)].copy()
        if self.mean is not None:
            low = (low - self.mean) / self.std
            high = (high - self.mean) / self.std
        return Box(low, high)

    def apply_dataset(self, d: Dataset) -> Dataset:
        states = self.apply_states(d.states())
        nexts = self.apply_states(d.next_states())
        transitions = tuple(
            Transition(states[i], tr.action, self.apply_reward(tr.reward), nexts[i],
                       tr.absorbing, tr.last)
            for i, tr in enumerate(d.transitions)
        )
        return Dataset(transitions, d.trajectory_offsets)


def feature_subset_mi(d: Dataset, indices, k: int = 5) -> float:
    """Objective for a candidate subset: MI([s_sel, a], [s'_sel, r])."""
    idx = sorted(int(i) for i in indices)
    x = np.concatenate([d.states()[:, idx], d.actions()], axis=1)
    y = np.concatenate([d.next_states()[:, idx], d.rewards()[:, None]], axis=1)
    return knn_mutual_information(x, y, k).value


def fe_forward_mi_select(d: Dataset, n_features: int, k: int = 5) -> tuple[int, ...]:
    """Greedy forward selection of state features by the MI objective.

    Each round adds the candidate maximizing feature_subset_mi of the grown
    set (ties -> lowest index).  Returns the selected indices, sorted.
    """
    dim = d.state_dim
    if not 1 <= n_features <= dim:
        raise ValueError(f"n_features must be in [1, {dim}], got {n_features}")
    selected: list[int] = []
    remaining = list(range(dim))
    for _ in range(n_features):
        best_c, best_mi = None, -np.inf
        for c in remaining:
            mi = feature_subset_mi(d, selected + [c], k)
            if mi > best_mi:
                best_c, best_mi = c, mi
        selected.append(best_c)
        remaining.remove(best_c)
    return tuple(sorted(selected))


def make_feature_transform(d: Dataset, indices, standardize: bool = False) -> FeatureTransform:
    """Build the transform for selected indices; stats come from the dataset.

    Constant features get std 1 so standardization stays well defined.
    """
    indices = tuple(int(i) for i in indices)
    if not standardize:
        return FeatureTransform(indices)
    cols = d.states()[:, list(indices)]
    mean = cols.mean(axis=0)
    std = cols.std(axis=0)
    std[std == 0.0] = 1.0
    return FeatureTransform(indices, mean, std)


class TransformedEnvironment(Environment):
    """Environment whose observations pass through a FeatureTransform.

    The full internal state and dynamics stay those of the base environment;
    only what policies see changes.
    """

    def __init__(self, base: Environment, transform: FeatureTransform):
        self.base = base
        self.transform = transform
        self.spec = MdpSpec(
            transform.transform_space(base.spec.state_space),
            base.spec.action_space,
            base.spec.gamma,
            base.spec.horizon,
        )

    def sample_initial(self, rng):
        return self.base.sample_initial(rng)

    def sample_initial_batch(self, n, rng):
        return self.base.sample_initial_batch(n, rng)

    def step(self, state, action, rng):
        return self.base.step(state, action, rng)

    def step_batch(self, states, actions, rng):
        return self.base.step_batch(states, actions, rng)

    def observe(self, state):
        return self.transform.apply_state(self.base.observe(state))

    def observe_batch(self, states):
        return self.transform.apply_states(self.base.observe_batch(states))


def fe_engineer_environment(env: Environment, transform: FeatureTransform) -> TransformedEnvironment:
    """Wrap an environment so policies see the transformed observations."""
    return TransformedEnvironment(env, transform)
