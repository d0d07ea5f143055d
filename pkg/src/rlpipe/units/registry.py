"""Algorithm registry: every unit implementation the framework can run.

Each entry declares the stage it serves, the pipeline kinds it supports, its
full hyperparameter surface with defaults, and a run callable with signature
(ctx, params, stream) -> StageOutput.  Defaults of None mark settings that
are inferred from the context (gamma, action grids) or must be set by the
caller.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core import Box, Discrete, RandomUniformPolicy, RngStream
from ..framework import StageContext, StageKind, StageOutput
from ..metrics import rollout_dataset
from .datagen import dg_random_uniform
from .evaluation import pe_monte_carlo
from .features import (
    fe_engineer_environment,
    fe_forward_mi_select,
    make_feature_transform,
)
from .policies import ConstantActionPolicy
from .policygen import (
    AffineBasis,
    OneHotBasis,
    action_grid_for,
    pg_fqi,
    pg_gpomdp,
    pg_lspi,
    pg_q_learning,
)
from .prep import dp_1nn_impute, dp_mean_impute


@dataclass(frozen=True)
class Algorithm:
    name: str
    stage: StageKind
    kinds: frozenset[str]
    defaults: dict = field(default_factory=dict)
    run: Callable[[StageContext, dict, RngStream], StageOutput] = None


def _require_env(ctx: StageContext, name: str):
    if ctx.env is None:
        raise ValueError(f"{name} needs an environment in context")
    return ctx.env


def _require_dataset(ctx: StageContext, name: str):
    if ctx.dataset is None:
        raise ValueError(f"{name} needs a dataset in context")
    return ctx.dataset


def _resolve_gamma(ctx: StageContext, params: dict, name: str) -> float:
    if params["gamma"] is not None:
        return float(params["gamma"])
    if ctx.env is not None:
        return ctx.env.spec.gamma
    raise ValueError(f"{name} needs gamma (no environment in context to infer it from)")


def _resolve_action_grid(ctx: StageContext, params: dict, name: str) -> np.ndarray:
    if params["action_grid"] is not None:
        grid = np.asarray(params["action_grid"], dtype=float)
        if grid.ndim == 1:
            grid = grid[:, None]
        return grid
    env = _require_env(ctx, f"{name} (to derive an action grid)")
    return action_grid_for(env.spec.action_space, int(params["points_per_dim"]))


def _run_random_uniform(ctx, params, stream):
    env = _require_env(ctx, "random_uniform")
    data = dg_random_uniform(env, int(params["n_episodes"]), stream)
    return StageOutput(dataset=data, info={"n_transitions": len(data.transitions)})


def _run_mean_impute(ctx, params, stream):
    return StageOutput(dataset=dp_mean_impute(_require_dataset(ctx, "mean_impute")))


def _run_nn_impute(ctx, params, stream):
    return StageOutput(dataset=dp_1nn_impute(_require_dataset(ctx, "nn_impute")))


def _run_mi_forward_select(ctx, params, stream):
    env = _require_env(ctx, "mi_forward_select")
    if params["n_features"] is None:
        raise ValueError("mi_forward_select needs n_features")
    if ctx.pipeline_kind == "offline":
        selection_data = _require_dataset(ctx, "mi_forward_select")
    else:
        policy = RandomUniformPolicy(env.spec.action_space)
        selection_data = rollout_dataset(env, policy, int(params["internal_episodes"]),
                                         stream.child(0))
    indices = fe_forward_mi_select(selection_data, int(params["n_features"]),
                                   int(params["k"]))
    transform = make_feature_transform(selection_data, indices,
                                       standardize=bool(params["standardize"]))
    out_env = fe_engineer_environment(env, transform)
    out_dataset = None
    if ctx.pipeline_kind == "offline":
        out_dataset = transform.apply_dataset(ctx.dataset)
    return StageOutput(env=out_env, dataset=out_dataset,
                       info={"selected_features": [int(i) for i in indices]})


def _run_fqi(ctx, params, stream):
    data = _require_dataset(ctx, "fqi")
    gamma = _resolve_gamma(ctx, params, "fqi")
    grid = _resolve_action_grid(ctx, params, "fqi")
    policy = pg_fqi(
        data, gamma, grid, stream,
        regressor=params["regressor"],
        n_iterations=int(params["n_iterations"]),
        k=int(params["k"]),
        n_estimators=int(params["n_estimators"]),
        min_samples_split=int(params["min_samples_split"]),
    )
    if ctx.env is not None:
        policy.action_space = ctx.env.spec.action_space
    return StageOutput(policy=policy)


def _run_lspi(ctx, params, stream):
    data = _require_dataset(ctx, "lspi")
    env = _require_env(ctx, "lspi")
    gamma = _resolve_gamma(ctx, params, "lspi")
    grid = _resolve_action_grid(ctx, params, "lspi")
    if params["basis"] == "one_hot":
        if not isinstance(env.spec.state_space, Discrete):
            raise ValueError("one_hot basis needs a discrete state space")
        basis = OneHotBasis(env.spec.state_space.n, grid.shape[0])
    elif params["basis"] == "affine":
        basis = AffineBasis(data.state_dim, grid.shape[0])
    else:
        raise ValueError(f"unknown lspi basis {params['basis']!r}")
    policy = pg_lspi(data, gamma, grid, basis,
                     n_iterations=int(params["n_iterations"]),
                     ridge=float(params["ridge"]))
    policy.action_space = env.spec.action_space
    return StageOutput(policy=policy)


def _run_q_learning(ctx, params, stream):
    env = _require_env(ctx, "q_learning")
    policy = pg_q_learning(env, stream,
                           n_episodes=int(params["n_episodes"]),
                           learning_rate=float(params["learning_rate"]),
                           epsilon=float(params["epsilon"]))
    return StageOutput(policy=policy)


def _run_gpomdp(ctx, params, stream):
    env = _require_env(ctx, "gpomdp")
    policy = pg_gpomdp(env, stream,
                       learning_rate=float(params["learning_rate"]),
                       n_epochs=int(params["n_epochs"]),
                       n_episodes_per_fit=int(params["n_episodes_per_fit"]),
                       init_std=float(params["init_std"]),
                       baseline=params["baseline"])
    return StageOutput(policy=policy)


def _run_constant(ctx, params, stream):
    env = _require_env(ctx, "constant")
    policy = ConstantActionPolicy(float(params["value"]), env.spec.action_space)
    return StageOutput(policy=policy)


def _run_monte_carlo(ctx, params, stream):
    env = _require_env(ctx, "monte_carlo")
    if ctx.policy is None:
        raise ValueError("monte_carlo needs a policy in context")
    kind = params["kind"] if params["kind"] is not None else ctx.eval_kind
    est = pe_monte_carlo(env, ctx.policy, int(params["n_episodes"]), kind, stream)
    return StageOutput(scalar=est)


DEFAULT_REGISTRY: dict[str, Algorithm] = {
    a.name: a
    for a in (
        Algorithm(
            "random_uniform", StageKind.DATA_GENERATION, frozenset({"offline"}),
            {"n_episodes": 25}, _run_random_uniform),
        Algorithm(
            "mean_impute", StageKind.DATA_PREPARATION, frozenset({"offline"}),
            {}, _run_mean_impute),
        Algorithm(
            "nn_impute", StageKind.DATA_PREPARATION, frozenset({"offline"}),
            {}, _run_nn_impute),
        Algorithm(
            "mi_forward_select", StageKind.FEATURE_ENGINEERING,
            frozenset({"online", "offline"}),
            {"n_features": None, "k": 5, "standardize": False, "internal_episodes": 50},
            _run_mi_forward_select),
        Algorithm(
            "fqi", StageKind.POLICY_GENERATION, frozenset({"offline"}),
            {"regressor": "extra_trees", "n_iterations": 10, "k": 5,
             "n_estimators": 50, "min_samples_split": 10, "gamma": None,
             "action_grid": None, "points_per_dim": 8},
            _run_fqi),
        Algorithm(
            "lspi", StageKind.POLICY_GENERATION, frozenset({"offline"}),
            {"basis": "one_hot", "n_iterations": 20, "ridge": 1e-6, "gamma": None,
             "action_grid": None, "points_per_dim": 8},
            _run_lspi),
        Algorithm(
            "q_learning", StageKind.POLICY_GENERATION, frozenset({"online"}),
            {"n_episodes": 1000, "learning_rate": 0.1, "epsilon": 0.1},
            _run_q_learning),
        Algorithm(
            "gpomdp", StageKind.POLICY_GENERATION, frozenset({"online"}),
            {"learning_rate": 0.05, "n_epochs": 10, "n_episodes_per_fit": 10,
             "init_std": 1.0, "baseline": "mean"},
            _run_gpomdp),
        Algorithm(
            "constant", StageKind.POLICY_GENERATION, frozenset({"online", "offline"}),
            {"value": 0.0}, _run_constant),
        Algorithm(
            "monte_carlo", StageKind.POLICY_EVALUATION, frozenset({"online", "offline"}),
            {"n_episodes": 100, "kind": None}, _run_monte_carlo),
    )
}
