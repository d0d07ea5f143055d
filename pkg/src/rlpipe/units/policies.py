"""Concrete policy classes and their JSON serialization.

Three serializable families cover every policy a pipeline can emit: tabular
greedy (finite MDPs), linear-Gaussian (continuous control), and grid-greedy
over a Q model (batch value-based learners).  Round-tripping through JSON
preserves parameters bitwise, so a reloaded policy evaluates identically
under the same seed.
"""
from __future__ import annotations

import math

import numpy as np

from ..core import Box, Discrete, Policy, Space, as_generator
from .regressors import QModel, model_from_json


class TabularGreedyPolicy(Policy):
    """Greedy policy over a (n_states, n_actions) Q table; ties -> lowest index."""

    deterministic = True

    def __init__(self, q_table):
        self.q = np.asarray(q_table, dtype=float)
        if self.q.ndim != 2:
            raise ValueError(f"q_table must be 2-d, got shape {self.q.shape}")
        self.action_space = Discrete(self.q.shape[1])

    def act(self, obs, rng, t: int = 0) -> np.ndarray:
        s = int(np.atleast_1d(obs)[0])
        return np.array([float(np.argmax(self.q[s]))])

    def act_batch(self, obs, rng, t: int = 0) -> np.ndarray:
        s = np.asarray(obs)[:, 0].astype(int)
        return np.argmax(self.q[s], axis=1).astype(float)[:, None]


class LinearGaussianPolicy(Policy):
    """a = clip(K s + sigma * z), z ~ N(0, I); parameters are (K, log sigma)."""

    def __init__(self, gain, log_std: float, action_space: Box):
        self.gain = np.asarray(gain, dtype=float)
        if self.gain.ndim != 2:
            raise ValueError(f"gain must be 2-d, got shape {self.gain.shape}")
        if self.gain.shape[0] != action_space.dim:
            raise ValueError("gain rows must match the action dimension")
        self.log_std = float(log_std)
        self.action_space = action_space

    @property
    def std(self) -> float:
        return math.exp(self.log_std)

    @property
    def deterministic(self) -> bool:
        return self.std == 0.0

    def sample_raw(self, obs_batch: np.ndarray, g) -> np.ndarray:
        """Pre-clip Gaussian draw; kept separate so learners can use the density."""
        z = g.standard_normal((len(obs_batch), self.gain.shape[0]))
        return obs_batch @ self.gain.T + self.std * z

    def act(self, obs, rng, t: int = 0) -> np.ndarray:
        return self.act_batch(np.atleast_1d(obs)[None, :], rng, t)[0]

    def act_batch(self, obs, rng, t: int = 0) -> np.ndarray:
        g = as_generator(rng)
        return self.action_space.clip(self.sample_raw(np.asarray(obs, dtype=float), g))


class GridGreedyQPolicy(Policy):
    """Greedy argmax of a Q model over a finite action grid; ties -> lowest row."""

    deterministic = True

    def __init__(self, model: QModel, action_grid, action_space: Space | None = None):
        self.model = model
        self.action_grid = np.asarray(action_grid, dtype=float)
        if self.action_grid.ndim != 2 or len(self.action_grid) == 0:
            raise ValueError("action_grid must be a non-empty (G, m) array")
        self.action_space = action_space

    def q_values(self, obs_batch: np.ndarray) -> np.ndarray:
        """(G, N) model values for every grid action at every observation."""
        obs_batch = np.asarray(obs_batch, dtype=float)
        rows = []
        for a in self.action_grid:
            actions = np.tile(a, (len(obs_batch), 1))
            rows.append(self.model.predict(obs_batch, actions))
        return np.stack(rows)

    def act(self, obs, rng, t: int = 0) -> np.ndarray:
        return self.act_batch(np.atleast_1d(obs)[None, :], rng, t)[0]

    def act_batch(self, obs, rng, t: int = 0) -> np.ndarray:
        q = self.q_values(obs)
        return self.action_grid[np.argmax(q, axis=0)]


class ConstantActionPolicy(Policy):
    """Always plays the same (clipped) action; a plain baseline unit."""

    deterministic = True

    def __init__(self, value, action_space: Space):
        self.action_space = action_space
        v = np.atleast_1d(np.asarray(value, dtype=float))
        if v.size == 1 and action_space.dim > 1:
            v = np.full(action_space.dim, float(v[0]))
        if v.size != action_space.dim:
            raise ValueError(f"value dim {v.size} != action dim {action_space.dim}")
        if isinstance(action_space, Box):
            v = action_space.clip(v)
        else:
            v = np.array([float(min(max(round(v[0]), 0), action_space.n - 1))])
        self.value = v

    def act(self, obs, rng, t: int = 0) -> np.ndarray:
        return self.value.copy()

    def act_batch(self, obs, rng, t: int = 0) -> np.ndarray:
        return np.tile(self.value, (len(obs), 1))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def policy_to_json(policy: Policy) -> dict:
    """Serialize a policy to the documented JSON shape."""
    if isinstance(policy, TabularGreedyPolicy):
        return {"class": "tabular", "parameters": {"q": policy.q.tolist()}}
    if isinstance(policy, LinearGaussianPolicy):
        return {
            "class": "linear_gaussian",
            "parameters": {
                "gain": policy.gain.tolist(),
                "log_std": policy.log_std,
                "low": policy.action_space.low.tolist(),
                "high": policy.action_space.high.tolist(),
            },
        }
    if isinstance(policy, GridGreedyQPolicy):
        return {
            "class": "grid_greedy_q",
            "parameters": {"model": policy.model.to_json_dict()},
            "action_grid": policy.action_grid.tolist(),
        }
    raise TypeError(f"policy class {type(policy).__name__} has no JSON form")


def policy_from_json(d: dict) -> Policy:
    cls = d.get("class")
    params = d.get("parameters", {})
    if cls == "tabular":
        return TabularGreedyPolicy(np.array(params["q"], dtype=float))
    if cls == "linear_gaussian":
        space = Box(np.array(params["low"], dtype=float), np.array(params["high"], dtype=float))
        return LinearGaussianPolicy(np.array(params["gain"], dtype=float), params["log_std"], space)
    if cls == "grid_greedy_q":
        model = model_from_json(params["model"])
        return GridGreedyQPolicy(model, np.array(d["action_grid"], dtype=float))
    raise ValueError(f"unknown policy class {cls!r}")
