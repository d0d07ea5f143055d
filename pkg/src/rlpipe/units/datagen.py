"""Data-generation units: collect exploration datasets from an environment."""
from __future__ import annotations

from ..core import Dataset, Environment, RandomUniformPolicy
from ..metrics import rollout_dataset


def dg_random_uniform(env: Environment, n_episodes: int, rng) -> Dataset:
    """Roll out a uniform random policy; the plain exploration baseline."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    policy = RandomUniformPolicy(env.spec.action_space)
    return rollout_dataset(env, policy, n_episodes, rng)
