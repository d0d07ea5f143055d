"""Concrete environments and their analytic oracles.

Ships a clipped linear-quadratic-Gaussian regulator with its finite-horizon
Riccati solution and tabular MDPs with exact value iteration, so learned
policies can be checked against closed-form optima at desk scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Box,
    Discrete,
    Environment,
    MdpSpec,
    Policy,
    as_generator,
)


class RiccatiError(RuntimeError):
    """Raised when the Riccati recursion hits a singular gain solve."""


# ---------------------------------------------------------------------------
# Linear-quadratic-Gaussian regulator with clipping
# ---------------------------------------------------------------------------


def _check_symmetric_psd(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not np.allclose(m, m.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(m)
    if np.min(eigs) < -1e-9:
        raise ValueError(f"{name} must be positive semidefinite (min eig {np.min(eigs):.3g})")
    return m


class LqgEnv(Environment):
    """Discrete-time LQG with states and actions clipped to a box.

    Dynamics s' = clip(A s + B clip(a) + eps), eps ~ N(0, noise_std^2), and
    reward r = -s^T Q s - clip(a)^T R clip(a).  Episodes run a fixed finite
    horizon; initial states are uniform on [init_low, init_high].
    """

    def __init__(self, a, b, q, r, noise_std, bound, gamma, horizon,
                 init_low=None, init_high=None):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        n, m = self.b.shape
        if self.a.shape != (n, n):
            raise ValueError(f"A must be ({n},{n}) to match B {self.b.shape}")
        self.q = _check_symmetric_psd(q, "Q")
        self.r = _check_symmetric_psd(r, "R")
        if self.q.shape != (n, n) or self.r.shape != (m, m):
            raise ValueError("Q/R shapes must match state/action dims")
        noise_std = np.asarray(noise_std, dtype=float)
        if noise_std.ndim == 1:
            noise_std = np.diag(noise_std)
        if noise_std.shape != (n, n) or not np.allclose(noise_std, np.diag(np.diag(noise_std))):
            raise ValueError("noise_std must be a diagonal (n, n) matrix")
        if np.any(np.diag(noise_std) < 0):
            raise ValueError("noise stds must be non-negative")
        self.noise_std = np.diag(noise_std).copy()
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        self.bound = float(bound)
        self.init_low = np.full(n, -2.0) if init_low is None else np.asarray(init_low, dtype=float)
        self.init_high = np.full(n, 2.0) if init_high is None else np.asarray(init_high, dtype=float)
        if np.any(self.init_low < -self.bound) or np.any(self.init_high > self.bound):
            raise ValueError("initial-state box must lie inside the clip bound")
        self.spec = MdpSpec(
            state_space=Box(np.full(n, -self.bound), np.full(n, self.bound)),
            action_space=Box(np.full(m, -self.bound), np.full(m, self.bound)),
            gamma=gamma,
            horizon=horizon,
        )

    @property
    def state_dim(self) -> int:
        return self.b.shape[0]

    @property
    def action_dim(self) -> int:
        return self.b.shape[1]

    def sample_initial(self, rng) -> np.ndarray:
        g = as_generator(rng)
        return g.uniform(self.init_low, self.init_high)

    def sample_initial_batch(self, n: int, rng) -> np.ndarray:
        g = as_generator(rng)
        return g.uniform(self.init_low, self.init_high, size=(n, self.state_dim))

    def step(self, state, action, rng):
        ns, r, done = self.step_batch(state[None, :], np.atleast_1d(action)[None, :], rng)
        return ns[0], float(r[0]), bool(done[0])

    def step_batch(self, states, actions, rng):
        g = as_generator(rng)
        s = np.clip(states, -self.bound, self.bound)
        a = np.clip(actions, -self.bound, self.bound)
        eps = g.standard_normal(s.shape) * self.noise_std
        nxt = np.clip(s @ self.a.T + a @ self.b.T + eps, -self.bound, self.bound)
        rewards = -np.einsum("ij,jk,ik->i", s, self.q, s) - np.einsum("ij,jk,ik->i", a, self.r, a)
        return nxt, rewards, np.zeros(len(s), dtype=bool)


def lqg_step(env: LqgEnv, s, a, rng):
    """One clipped LQG step; returns (next_state, reward)."""
    ns, r, _ = env.step(np.asarray(s, dtype=float), np.asarray(a, dtype=float), rng)
    return ns, r


def default_lqg(gamma: float = 0.9, horizon: int = 15) -> LqgEnv:
    """Two-state, three-action clipped LQG benchmark instance."""
    return LqgEnv(
        a=np.eye(2),
        b=np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
        q=0.7 * np.eye(2),
        r=0.3 * np.eye(3),
        noise_std=0.1 * np.eye(2),
        bound=3.5,
        gamma=gamma,
        horizon=horizon,
    )


# --- Riccati solution -------------------------------------------------------


@dataclass(frozen=True)
class RiccatiSolution:
    """Finite-horizon solution: gains[t], cost matrices cost_to_go[t], noise offsets."""

    gains: tuple[np.ndarray, ...]          # K_0 .. K_{T-1}
    cost_to_go: tuple[np.ndarray, ...]     # P_0 .. P_T
    noise_offsets: tuple[float, ...]       # c_0 .. c_T
    gamma: float


def riccati_solve(env: LqgEnv) -> RiccatiSolution:
    """Backward Riccati recursion for the finite-horizon discounted LQG.

    Ignores clipping; with P_T = 0:
        K_t = -gamma (R + gamma B^T P_{t+1} B)^{-1} B^T P_{t+1} A
        P_t = Q + gamma A^T P_{t+1} (A + B K_t)
        c_t = gamma (trace(P_{t+1} Sigma) + c_{t+1}),  Sigma = noise_std^2
    The expected return of the unclipped optimal policy from s_0 is
    -s_0^T P_0 s_0 - c_0.
    """
    horizon = env.spec.horizon
    if horizon is None:
        raise ValueError("riccati_solve requires a finite horizon")
    a, b, q, r, gamma = env.a, env.b, env.q, env.r, env.spec.gamma
    sigma = np.diag(env.noise_std ** 2)
    n = env.state_dim
    p = np.zeros((n, n))
    c = 0.0
    gains: list[np.ndarray] = []
    ps = [p]
    cs = [c]
    for t in reversed(range(horizon)):
        lhs = r + gamma * b.T @ p @ b
        try:
            k = -gamma * np.linalg.solve(lhs, b.T @ p @ a)
        except np.linalg.LinAlgError as exc:
            raise RiccatiError(f"singular gain solve at step {t}") from exc
        c = gamma * (float(np.trace(p @ sigma)) + c)
        p = q + gamma * a.T @ p @ (a + b @ k)
        gains.append(k)
        ps.append(p)
        cs.append(c)
    gains.reverse()
    ps.reverse()
    cs.reverse()
    return RiccatiSolution(tuple(gains), tuple(ps), tuple(cs), gamma)


def riccati_expected_return(sol: RiccatiSolution, s0: np.ndarray) -> float:
    """Closed-form expected return of the unclipped optimal policy from s0."""
    s0 = np.asarray(s0, dtype=float)
    return float(-(s0 @ sol.cost_to_go[0] @ s0) - sol.noise_offsets[0])


def riccati_expected_return_uniform(sol: RiccatiSolution, low, high) -> float:
    """Expected return with s0 ~ Uniform[low, high] averaged analytically."""
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    mean = (low + high) / 2.0
    var = (high - low) ** 2 / 12.0
    p0 = sol.cost_to_go[0]
    quad = float(mean @ p0 @ mean) + float(np.sum(np.diag(p0) * var))
    return -quad - sol.noise_offsets[0]


class TimeVaryingLinearPolicy(Policy):
    """Deterministic policy a_t = clip(K_t s_t); past the last gain it reuses it."""

    deterministic = True

    def __init__(self, gains, action_space: Box):
        self.gains = tuple(np.asarray(k, dtype=float) for k in gains)
        if not self.gains:
            raise ValueError("need at least one gain matrix")
        self.action_space = action_space

    def _gain(self, t: int) -> np.ndarray:
        return self.gains[min(t, len(self.gains) - 1)]

    def act(self, obs, rng, t: int = 0) -> np.ndarray:
        return self.action_space.clip(self._gain(t) @ obs)

    def act_batch(self, obs, rng, t: int = 0) -> np.ndarray:
        return self.action_space.clip(obs @ self._gain(t).T)


def riccati_policy(env: LqgEnv, sol: RiccatiSolution | None = None) -> TimeVaryingLinearPolicy:
    """Clipped time-indexed optimal policy from the Riccati gains."""
    if sol is None:
        sol = riccati_solve(env)
    return TimeVaryingLinearPolicy(sol.gains, env.spec.action_space)


# ---------------------------------------------------------------------------
# Finite MDPs
# ---------------------------------------------------------------------------


class FiniteMdp(Environment):
    """Tabular MDP: transition tensor P[s, a, s'], reward table R[s, a].

    States and actions are exposed as one-element vectors so datasets keep a
    uniform vector encoding across environment families.
    """

    def __init__(self, p, r, gamma, horizon, mu0=None):
        self.p = np.asarray(p, dtype=float)
        self.r = np.asarray(r, dtype=float)
        if self.p.ndim != 3 or self.p.shape[0] != self.p.shape[2]:
            raise ValueError(f"P must have shape (n_states, n_actions, n_states), got {self.p.shape}")
        ns, na, _ = self.p.shape
        if self.r.shape != (ns, na):
            raise ValueError(f"R must have shape ({ns},{na}), got {self.r.shape}")
        if np.any(self.p < 0) or np.any(np.abs(self.p.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("transition rows must be distributions summing to 1")
        self.mu0 = np.full(ns, 1.0 / ns) if mu0 is None else np.asarray(mu0, dtype=float)
        if self.mu0.shape != (ns,) or np.any(self.mu0 < 0) or abs(self.mu0.sum() - 1.0) > 1e-12:
            raise ValueError("mu0 must be a distribution over states")
        self._cum_p = np.cumsum(self.p, axis=2)
        self._cum_mu0 = np.cumsum(self.mu0)
        self.spec = MdpSpec(Discrete(ns), Discrete(na), gamma, horizon)

    @property
    def n_states(self) -> int:
        return self.p.shape[0]

    @property
    def n_actions(self) -> int:
        return self.p.shape[1]

    def sample_initial(self, rng) -> np.ndarray:
        g = as_generator(rng)
        s = int(np.searchsorted(self._cum_mu0, g.random(), side="right"))
        return np.array([float(min(s, self.n_states - 1))])

    def sample_initial_batch(self, n: int, rng) -> np.ndarray:
        g = as_generator(rng)
        s = np.searchsorted(self._cum_mu0, g.random(n), side="right")
        return np.minimum(s, self.n_states - 1).astype(float)[:, None]

    def step(self, state, action, rng):
        ns, r, done = self.step_batch(np.atleast_1d(state)[None, :],
                                      np.atleast_1d(action)[None, :], rng)
        return ns[0], float(r[0]), bool(done[0])

    def step_batch(self, states, actions, rng):
        g = as_generator(rng)
        s = states[:, 0].astype(int)
        a = actions[:, 0].astype(int)
        if np.any(s < 0) or np.any(s >= self.n_states):
            raise ValueError("state index out of range")
        if np.any(a < 0) or np.any(a >= self.n_actions):
            raise ValueError("action index out of range")
        u = g.random(len(s))
        nxt = np.empty(len(s), dtype=int)
        for i in range(len(s)):
            nxt[i] = np.searchsorted(self._cum_p[s[i], a[i]], u[i], side="right")
        nxt = np.minimum(nxt, self.n_states - 1)
        rewards = self.r[s, a]
        return nxt.astype(float)[:, None], rewards.copy(), np.zeros(len(s), dtype=bool)


def finite_step(mdp: FiniteMdp, s: int, a: int, rng):
    """One tabular step from integer indices; returns (next_state, reward)."""
    ns, r, _ = mdp.step(np.array([float(s)]), np.array([float(a)]), rng)
    return int(ns[0]), float(r)


def value_iteration(mdp: FiniteMdp, n_iterations: int) -> np.ndarray:
    """Exact Q backups from Q_0 = 0; returns the (n_states, n_actions) table.

    Q_{k+1}(s, a) = R(s, a) + gamma * sum_s' P(s'|s, a) max_a' Q_k(s', a')
    """
    if n_iterations < 0:
        raise ValueError("n_iterations must be >= 0")
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(n_iterations):
        v = q.max(axis=1)
        q = mdp.r + mdp.spec.gamma * np.einsum("san,n->sa", mdp.p, v)
    return q


def chain_mdp(n_states: int = 2, gamma: float = 0.5, horizon: int = 10) -> FiniteMdp:
    """Deterministic chain: action 0 advances (reward 0), action 1 stays.

    Staying in the terminal state yields reward 1; everything else 0.  Episodes
    start in state 0.
    """
    if n_states < 2:
        raise ValueError("chain needs at least 2 states")
    p = np.zeros((n_states, 2, n_states))
    r = np.zeros((n_states, 2))
    for s in range(n_states):
        p[s, 0, min(s + 1, n_states - 1)] = 1.0
        p[s, 1, s] = 1.0
    r[n_states - 1, 1] = 1.0
    mu0 = np.zeros(n_states)
    mu0[0] = 1.0
    return FiniteMdp(p, r, gamma, horizon, mu0)
