"""Policy-generation units: FQI, LSPI, tabular Q-learning, and GPOMDP.

The batch methods (FQI, LSPI) consume a Dataset and return greedy policies
over a finite action grid; the online methods (Q-learning, GPOMDP) interact
with an environment through the usual rollout machinery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import Box, Dataset, Discrete, Environment, Space, as_generator
from .policies import (
    GridGreedyQPolicy,
    LinearGaussianPolicy,
    TabularGreedyPolicy,
)
from .regressors import LinearQModel, make_regressor


class GpomdpDivergedError(RuntimeError):
    """Raised when policy parameters blow past the magnitude guard."""

    def __init__(self, epoch: int, magnitude: float):
        super().__init__(
            f"policy parameters diverged at epoch {epoch} (max magnitude {magnitude:.3g})")
        self.epoch = epoch
        self.magnitude = magnitude


def action_grid_for(space: Space, points_per_dim: int = 8, max_points: int = 64) -> np.ndarray:
    """Finite action grid: the action set for Discrete, a capped lattice for Box."""
    if isinstance(space, Discrete):
        return np.arange(space.n, dtype=float)[:, None]
    if isinstance(space, Box):
        m = space.dim
        pts = points_per_dim
        while pts > 2 and pts ** m > max_points:
            pts -= 1
        axes = [np.linspace(space.low[i], space.high[i], pts) for i in range(m)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([ax.ravel() for ax in mesh], axis=1)
    raise TypeError(f"unknown space type {type(space).__name__}")


# ---------------------------------------------------------------------------
# Fitted Q iteration
# ---------------------------------------------------------------------------


def pg_fqi(dataset: Dataset, gamma: float, action_grid, rng,
           regressor: str = "extra_trees", n_iterations: int = 10,
           k: int = 5, n_estimators: int = 50, min_samples_split: int = 10) -> GridGreedyQPolicy:
    """Fitted Q iteration from a fixed batch.

    Starting from Q_0 = 0, each iteration fits a fresh regressor on targets
    r + gamma * (1 - absorbing) * max_{a' in grid} Q_{i-1}(s', a'), then the
    greedy policy over the grid is returned (argmax ties -> lowest grid row).
    """
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    g = as_generator(rng)
    grid = np.asarray(action_grid, dtype=float)
    s = dataset.states()
    a = dataset.actions()
    r = dataset.rewards()
    sn = dataset.next_states()
    cont = 1.0 - dataset.absorbing_flags().astype(float)
    model = None
    for _ in range(n_iterations):
        if model is None:
            targets = r.copy()
        else:
            q_next = np.stack([
                model.predict(sn, np.tile(row, (len(sn), 1))) for row in grid
            ])
            targets = r + gamma * cont * q_next.max(axis=0)
        model = make_regressor(regressor, k=k, n_estimators=n_estimators,
                               min_samples_split=min_samples_split)
        model.fit(s, a, targets, g)
    return GridGreedyQPolicy(model, grid)


# ---------------------------------------------------------------------------
# Least-squares policy iteration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OneHotBasis:
    """Indicator feature per (state, action) cell; for finite MDPs."""

    n_states: int
    n_actions: int

    @property
    def dim(self) -> int:
        return self.n_states * self.n_actions

    def features(self, states: np.ndarray, action_idx: np.ndarray) -> np.ndarray:
        s = np.asarray(states)[:, 0].astype(int)
        a = np.asarray(action_idx, dtype=int)
        phi = np.zeros((len(s), self.dim))
        phi[np.arange(len(s)), s * self.n_actions + a] = 1.0
        return phi

    def to_json_dict(self) -> dict:
        return {"kind": "one_hot", "n_states": self.n_states, "n_actions": self.n_actions}


@dataclass(frozen=True)
class AffineBasis:
    """Per-action block of [s, 1]; linear-in-state Q for continuous states."""

    state_dim: int
    n_actions: int

    @property
    def dim(self) -> int:
        return (self.state_dim + 1) * self.n_actions

    def features(self, states: np.ndarray, action_idx: np.ndarray) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        a = np.asarray(action_idx, dtype=int)
        block = self.state_dim + 1
        phi = np.zeros((len(s), self.dim))
        cols = a[:, None] * block + np.arange(self.state_dim)[None, :]
        np.put_along_axis(phi, cols, s, axis=1)
        phi[np.arange(len(s)), a * block + self.state_dim] = 1.0
        return phi

    def to_json_dict(self) -> dict:
        return {"kind": "affine", "state_dim": self.state_dim, "n_actions": self.n_actions}


def basis_from_json(d: dict):
    kind = d.get("kind")
    if kind == "one_hot":
        return OneHotBasis(int(d["n_states"]), int(d["n_actions"]))
    if kind == "affine":
        return AffineBasis(int(d["state_dim"]), int(d["n_actions"]))
    raise ValueError(f"unknown basis kind {kind!r}")


def pg_lspi(dataset: Dataset, gamma: float, action_grid, basis,
            n_iterations: int = 20, ridge: float = 1e-6) -> GridGreedyQPolicy:
    """LSPI: alternate LSTD-Q solves with greedy improvement.

    Each solve computes w = (Phi^T (Phi - gamma Phi'_pi) + ridge I)^{-1} Phi^T r,
    where Phi'_pi evaluates the current greedy policy at the next states
    (zeroed on absorbing transitions).  Stops after n_iterations or as soon as
    the greedy action choice on the dataset's next states stops changing.
    """
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    grid = np.asarray(action_grid, dtype=float)
    n_grid = len(grid)
    s = dataset.states()
    sn = dataset.next_states()
    r = dataset.rewards()
    absorb = dataset.absorbing_flags()
    model = LinearQModel(basis, grid)
    a_idx = model._action_index(dataset.actions())
    phi = basis.features(s, a_idx)
    dim = phi.shape[1]
    w = np.zeros(dim)

    def greedy_next(weights: np.ndarray) -> np.ndarray:
        q = np.stack([basis.features(sn, np.full(len(sn), j, dtype=int)) @ weights
                      for j in range(n_grid)])
        return np.argmax(q, axis=0)

    prev_pi = greedy_next(w)
    for _ in range(n_iterations):
        phi_next = basis.features(sn, prev_pi)
        phi_next[absorb] = 0.0
        a_mat = phi.T @ (phi - gamma * phi_next) + ridge * np.eye(dim)
        w = np.linalg.solve(a_mat, phi.T @ r)
        pi = greedy_next(w)
        if np.array_equal(pi, prev_pi):
            break
        prev_pi = pi
    model.weights = w
    return GridGreedyQPolicy(model, grid)


# ---------------------------------------------------------------------------
# Tabular Q-learning
# ---------------------------------------------------------------------------


def pg_q_learning(env: Environment, rng, n_episodes: int = 1000,
                  learning_rate: float = 0.1, epsilon: float = 0.1) -> TabularGreedyPolicy:
    """Online tabular Q-learning with epsilon-greedy behavior.

    Requires Discrete state and action spaces.  Returns the greedy policy of
    the learned table (argmax ties -> lowest action index).
    """
    state_space, action_space = env.spec.state_space, env.spec.action_space
    if not isinstance(state_space, Discrete) or not isinstance(action_space, Discrete):
        raise TypeError("q_learning needs Discrete state and action spaces")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    g = as_generator(rng)
    gamma = env.spec.gamma
    horizon = env.spec.horizon if env.spec.horizon is not None else 10_000
    q = np.zeros((state_space.n, action_space.n))
    for _ in range(n_episodes):
        state = env.sample_initial(g)
        for _t in range(horizon):
            s = int(state[0])
            if g.random() < epsilon:
                a = int(g.integers(action_space.n))
            else:
                a = int(np.argmax(q[s]))
            nxt, reward, absorbing = env.step(state, np.array([float(a)]), g)
            target = reward if absorbing else reward + gamma * float(q[int(nxt[0])].max())
            q[s, a] += learning_rate * (target - q[s, a])
            state = nxt
            if absorbing:
                break
    return TabularGreedyPolicy(q)


# ---------------------------------------------------------------------------
# GPOMDP policy gradient
# ---------------------------------------------------------------------------


def _collect_linear_gaussian(env: Environment, gain: np.ndarray, std: float,
                             n_episodes: int, g):
    """Batched rollouts of a = clip(K obs + std z); keeps the pre-clip actions.

    Returns (obs, raw_actions, rewards, alive_mask) arrays of shape (T, N, .);
    all episodes are stepped in lockstep for a full finite horizon, dead rows
    masked out after absorbing.
    """
    horizon = env.spec.horizon
    if horizon is None:
        raise ValueError("gpomdp requires a finite horizon")
    m = gain.shape[0]
    states = np.array(env.sample_initial_batch(n_episodes, g), dtype=float)
    alive = np.ones(n_episodes, dtype=bool)
    obs_dim = env.observe_batch(states).shape[1]
    obs_hist = np.zeros((horizon, n_episodes, obs_dim))
    act_hist = np.zeros((horizon, n_episodes, m))
    rew_hist = np.zeros((horizon, n_episodes))
    mask = np.zeros((horizon, n_episodes), dtype=bool)
    for t in range(horizon):
        mask[t] = alive
        obs = env.observe_batch(states)
        z = g.standard_normal((n_episodes, m))
        raw = obs @ gain.T + std * z
        exec_a = env.spec.action_space.clip(raw)
        nxt, rewards, absorbing = env.step_batch(states, exec_a, g)
        obs_hist[t] = obs
        act_hist[t] = raw
        rew_hist[t] = np.where(alive, rewards, 0.0)
        states = nxt
        alive = alive & ~absorbing
    return obs_hist, act_hist, rew_hist, mask


def gpomdp_gradient(env: Environment, gain, log_std: float, n_episodes: int, rng,
                    baseline: str = "mean"):
    """One GPOMDP gradient estimate for the linear-Gaussian policy (K, log std).

    g_hat = mean_n sum_t (sum_{k<=t} grad log pi(a_k|s_k)) * gamma^t (r_t - b_t)
    with b_t the per-timestep mean reward across episodes when baseline is
    'mean' and 0 when 'none'.  Returns (grad_gain, grad_log_std).
    """
    if baseline not in ("mean", "none"):
        raise ValueError("baseline must be 'mean' or 'none'")
    gain = np.asarray(gain, dtype=float)
    g = as_generator(rng)
    std = math.exp(float(log_std))
    m = gain.shape[0]
    obs, raw, rew, mask = _collect_linear_gaussian(env, gain, std, n_episodes, g)
    horizon, n = rew.shape
    fmask = mask.astype(float)
    delta = (raw - np.einsum("tnj,ij->tni", obs, gain)) * fmask[:, :, None]
    score_gain = delta[:, :, :, None] * obs[:, :, None, :] / (std ** 2)
    score_ls = ((delta ** 2).sum(axis=2) / (std ** 2) - m) * fmask
    cum_gain = np.cumsum(score_gain, axis=0)
    cum_ls = np.cumsum(score_ls, axis=0)
    if baseline == "mean":
        counts = np.maximum(fmask.sum(axis=1), 1.0)
        b = (rew * fmask).sum(axis=1) / counts
    else:
        b = np.zeros(horizon)
    gammas = env.spec.gamma ** np.arange(horizon)
    weights = gammas[:, None] * (rew - b[:, None]) * fmask
    grad_gain = np.einsum("tn,tnij->ij", weights, cum_gain) / n
    grad_ls = float((weights * cum_ls).sum() / n)
    return grad_gain, grad_ls


def pg_gpomdp(env: Environment, rng, learning_rate: float = 0.05, n_epochs: int = 10,
              n_episodes_per_fit: int = 10, init_std: float = 1.0,
              baseline: str = "mean", max_magnitude: float = 1e6) -> LinearGaussianPolicy:
    """Gradient-ascent training of a linear-Gaussian policy from K = 0.

    Each epoch collects n_episodes_per_fit episodes and takes one ascent step
    on (K, log std).  Raises GpomdpDivergedError when any parameter magnitude
    exceeds max_magnitude, so tuners can treat runaway settings as failures.
    """
    if not isinstance(env.spec.action_space, Box):
        raise TypeError("gpomdp needs a Box action space")
    if init_std <= 0:
        raise ValueError("init_std must be positive")
    if n_epochs < 1 or n_episodes_per_fit < 1:
        raise ValueError("n_epochs and n_episodes_per_fit must be >= 1")
    g = as_generator(rng)
    n = env.spec.state_space.dim
    m = env.spec.action_space.dim
    gain = np.zeros((m, n))
    log_std = math.log(init_std)
    for epoch in range(n_epochs):
        grad_gain, grad_ls = gpomdp_gradient(env, gain, log_std, n_episodes_per_fit,
                                             g, baseline=baseline)
        gain = gain + learning_rate * grad_gain
        log_std = log_std + learning_rate * grad_ls
        magnitude = max(float(np.abs(gain).max()), abs(log_std))
        if not math.isfinite(magnitude) or magnitude > max_magnitude:
            raise GpomdpDivergedError(epoch, magnitude)
    return LinearGaussianPolicy(gain, log_std, env.spec.action_space)
