"""Policy-evaluation unit: Monte-Carlo return estimation."""
from __future__ import annotations

from ..core import Environment, Policy
from ..metrics import ReturnEstimate, evaluate_policy


def pe_monte_carlo(env: Environment, policy: Policy, n_episodes: int,
                   kind: str, rng) -> ReturnEstimate:
    """Evaluate a policy by Monte-Carlo rollouts; thin wrapper kept as a unit."""
    return evaluate_policy(env, policy, n_episodes, kind, rng)
