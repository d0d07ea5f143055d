"""Unit implementations grouped by stage."""
from .datagen import dg_random_uniform
from .evaluation import pe_monte_carlo
from .features import (
    FeatureTransform,
    TransformedEnvironment,
    fe_engineer_environment,
    fe_forward_mi_select,
    feature_subset_mi,
    make_feature_transform,
)
from .policies import (
    ConstantActionPolicy,
    GridGreedyQPolicy,
    LinearGaussianPolicy,
    TabularGreedyPolicy,
    policy_from_json,
    policy_to_json,
)
from .policygen import (
    AffineBasis,
    GpomdpDivergedError,
    OneHotBasis,
    action_grid_for,
    basis_from_json,
    gpomdp_gradient,
    pg_fqi,
    pg_gpomdp,
    pg_lspi,
    pg_q_learning,
)
from .prep import ImputationError, dp_1nn_impute, dp_mean_impute
from .regressors import (
    ExtraTreesRegressor,
    KnnRegressor,
    LinearQModel,
    QModel,
    TabularMeanRegressor,
    make_regressor,
    model_from_json,
)
from .registry import DEFAULT_REGISTRY, Algorithm

__all__ = [
    "Algorithm",
    "AffineBasis",
    "ConstantActionPolicy",
    "DEFAULT_REGISTRY",
    "ExtraTreesRegressor",
    "FeatureTransform",
    "GpomdpDivergedError",
    "GridGreedyQPolicy",
    "ImputationError",
    "KnnRegressor",
    "LinearGaussianPolicy",
    "LinearQModel",
    "OneHotBasis",
    "QModel",
    "TabularGreedyPolicy",
    "TabularMeanRegressor",
    "TransformedEnvironment",
    "action_grid_for",
    "basis_from_json",
    "dg_random_uniform",
    "dp_1nn_impute",
    "dp_mean_impute",
    "fe_engineer_environment",
    "fe_forward_mi_select",
    "feature_subset_mi",
    "gpomdp_gradient",
    "make_feature_transform",
    "make_regressor",
    "model_from_json",
    "pe_monte_carlo",
    "pg_fqi",
    "pg_gpomdp",
    "pg_lspi",
    "pg_q_learning",
    "policy_from_json",
    "policy_to_json",
]
