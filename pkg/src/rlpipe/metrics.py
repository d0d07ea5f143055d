"""Performance indexes: Monte-Carlo returns, k-NN entropy, k-NN mutual information.

The information estimators use exact brute-force neighbor search (chunked so
memory stays bounded) and compute pairwise differences directly, which keeps
entropy exactly translation invariant in floating point.  Per-point terms are
accumulated with math.fsum so estimates do not depend on sample order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .core import (
    Dataset,
    Environment,
    Policy,
    RunawayEpisodeError,
    Transition,
    as_generator,
)

RETURN_KINDS = ("discounted", "total", "average")

_DISTANCE_FLOOR = 1e-12
_CHUNK_ELEMENTS = 2_000_000  # rows per chunk chosen so chunk * n stays near this


# ---------------------------------------------------------------------------
# Rollouts and Monte-Carlo return estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReturnEstimate:
    """Monte-Carlo return summary over a batch of episodes."""

    mean: float
    std: float
    n_episodes: int
    kind: str


@dataclass
class RolloutBatch:
    discounted: np.ndarray
    total: np.ndarray
    lengths: np.ndarray
    trajectories: list[list[Transition]] | None


def rollout_batch(env: Environment, policy: Policy, n_episodes: int, rng,
                  record: bool = False, max_steps: int = 10_000) -> RolloutBatch:
    """Run episodes in lockstep, one batched env step per time index.

    Finite-horizon episodes are truncated at the horizon (last flag set,
    absorbing left untouched).  For infinite-horizon environments an episode
    still running after max_steps raises RunawayEpisodeError.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    g = as_generator(rng)
    horizon = env.spec.horizon
    cap = horizon if horizon is not None else int(max_steps)
    states = np.array(env.sample_initial_batch(n_episodes, g), dtype=float)
    active = np.arange(n_episodes)
    discounted = np.zeros(n_episodes)
    total = np.zeros(n_episodes)
    lengths = np.zeros(n_episodes, dtype=int)
    trajectories: list[list[Transition]] | None = (
        [[] for _ in range(n_episodes)] if record else None
    )
    disc = 1.0
    gamma = env.spec.gamma
    for t in range(cap):
        if active.size == 0:
            break
        obs = env.observe_batch(states[active])
        actions = policy.act_batch(obs, g, t)
        nxt, rewards, absorbing = env.step_batch(states[active], actions, g)
        discounted[active] += disc * rewards
        total[active] += rewards
        lengths[active] += 1
        last = absorbing.copy()
        if horizon is not None and t == horizon - 1:
            last[:] = True
        if record:
            next_obs = env.observe_batch(nxt)
            for row, ep in enumerate(active):
                trajectories[ep].append(Transition(
                    obs[row], actions[row], float(rewards[row]), next_obs[row],
                    bool(absorbing[row]), bool(last[row])))
        states[active] = nxt
        active = active[~last]
        disc *= gamma
    if active.size > 0:
        raise RunawayEpisodeError(
            f"{active.size} episode(s) still running after {cap} steps")
    return RolloutBatch(discounted, total, lengths, trajectories)


def rollout_dataset(env: Environment, policy: Policy, n_episodes: int, rng,
                    max_steps: int = 10_000) -> Dataset:
    """Collect n_episodes trajectories under a policy as a Dataset."""
    batch = rollout_batch(env, policy, n_episodes, rng, record=True, max_steps=max_steps)
    return Dataset.from_trajectories(batch.trajectories)


def evaluate_policy(env: Environment, policy: Policy, n_episodes: int,
                    kind: str, rng, max_steps: int = 10_000) -> ReturnEstimate:
    """Monte-Carlo return estimate; kind is discounted, total, or average."""
    if kind not in RETURN_KINDS:
        raise ValueError(f"kind must be one of {RETURN_KINDS}, got {kind!r}")
    batch = rollout_batch(env, policy, n_episodes, rng, record=False, max_steps=max_steps)
    if kind == "discounted":
        values = batch.discounted
    elif kind == "total":
        values = batch.total
    else:
        values = batch.total / batch.lengths
    return ReturnEstimate(float(values.mean()), float(values.std()), n_episodes, kind)


# ---------------------------------------------------------------------------
# k-NN entropy (Euclidean metric)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    k: int
    n_samples: int


def _as_points(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be a non-empty (n, d) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _chunk_rows(n: int) -> int:
    return max(1, _CHUNK_ELEMENTS // max(n, 1))


def _kth_nn_distance_sq_euclidean(x: np.ndarray, k: int) -> np.ndarray:
    """Squared distance to the k-th nearest neighbor (self excluded), brute force."""
    n = x.shape[0]
    out = np.empty(n)
    step = _chunk_rows(n)
    for i0 in range(0, n, step):
        i1 = min(i0 + step, n)
        diff = x[i0:i1, None, :] - x[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        sq[np.arange(i1 - i0), np.arange(i0, i1)] = np.inf
        out[i0:i1] = np.partition(sq, k - 1, axis=1)[:, k - 1]
    return out


def knn_entropy(points, k: int) -> EntropyEstimate:
    """Kozachenko-Leonenko differential entropy estimate in nats.

    H_hat = (d/n) sum_i ln rho_k(i) + ln V_d + psi(n) - psi(k)
    with rho_k the Euclidean distance to the k-th nearest neighbor and V_d the
    unit-ball volume.  Zero distances are floored at 1e-12 before the log.

    Args:
        points: (n, d) sample array (or length-n vector, treated as d=1).
        k: neighbor order, 1 <= k <= n - 1.
    """
    x = _as_points(points, "points")
    n, d = x.shape
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must satisfy 1 <= k <= n-1, got k={k}, n={n}")
    rho = np.sqrt(_kth_nn_distance_sq_euclidean(x, k))
    rho = np.maximum(rho, _DISTANCE_FLOOR)
    log_vd = (d / 2.0) * math.log(math.pi) - float(gammaln(d / 2.0 + 1.0))
    log_sum = math.fsum(np.log(rho))
    value = (d / n) * log_sum + log_vd + float(digamma(n)) - float(digamma(k))
    return EntropyEstimate(value, k, n)


# ---------------------------------------------------------------------------
# k-NN mutual information (Chebyshev metric on the joint space)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MiEstimate:
    """MI estimate in nats; raw keeps the possibly-negative uncorrected value."""

    value: float
    raw: float
    k: int
    n_samples: int


def knn_mutual_information(x, y, k: int) -> MiEstimate:
    """Kraskov-style MI estimate between paired samples, in nats.

    Uses the max metric on the joint space:
    I_hat = psi(k) + psi(n) - mean_i[psi(n_x(i)+1) + psi(n_y(i)+1)]
    where n_x(i) counts marginal points strictly within the joint k-NN radius.
    A constant marginal is degenerate and yields 0 rather than an error.  The
    returned value is clamped at 0; `raw` keeps the unclamped estimate.
    """
    xa = _as_points(x, "x")
    ya = _as_points(y, "y")
    n = xa.shape[0]
    if ya.shape[0] != n:
        raise ValueError(f"x and y must pair up, got {n} vs {ya.shape[0]} rows")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must satisfy 1 <= k <= n-1, got k={k}, n={n}")
    if np.all(xa == xa[0]) or np.all(ya == ya[0]):
        return MiEstimate(0.0, 0.0, k, n)

    step = _chunk_rows(n)
    eps = np.empty(n)
    for i0 in range(0, n, step):
        i1 = min(i0 + step, n)
        dx = np.abs(xa[i0:i1, None, :] - xa[None, :, :]).max(axis=2)
        dy = np.abs(ya[i0:i1, None, :] - ya[None, :, :]).max(axis=2)
        joint = np.maximum(dx, dy)
        joint[np.arange(i1 - i0), np.arange(i0, i1)] = np.inf
        eps[i0:i1] = np.partition(joint, k - 1, axis=1)[:, k - 1]

    nx = np.empty(n, dtype=int)
    ny = np.empty(n, dtype=int)
    for i0 in range(0, n, step):
        i1 = min(i0 + step, n)
        rows = np.arange(i1 - i0)
        dx = np.abs(xa[i0:i1, None, :] - xa[None, :, :]).max(axis=2)
        dx[rows, np.arange(i0, i1)] = np.inf
        nx[i0:i1] = (dx < eps[i0:i1, None]).sum(axis=1)
        dy = np.abs(ya[i0:i1, None, :] - ya[None, :, :]).max(axis=2)
        dy[rows, np.arange(i0, i1)] = np.inf
        ny[i0:i1] = (dy < eps[i0:i1, None]).sum(axis=1)

    mean_psi = (math.fsum(digamma(nx + 1)) + math.fsum(digamma(ny + 1))) / n
    raw = float(digamma(k)) + float(digamma(n)) - mean_psi
    return MiEstimate(max(raw, 0.0), raw, k, n)


def dataset_state_action_entropy(d: Dataset, k: int = 5) -> EntropyEstimate:
    """Entropy of the (state, action) sample of a dataset; exploration index."""
    points = np.concatenate([d.states(), d.actions()], axis=1)
    return knn_entropy(points, k)
