"""rlpipe: composable RL pipelines with per-stage hyperparameter tuning.

Pipelines chain data generation, preparation, feature engineering, policy
generation, and policy evaluation stages.  Any stage except preparation and
evaluation can be tuned against its performance index (dataset entropy,
feature mutual information, or estimated return) with an elitist genetic
search, and automatic units extend the search across algorithm choices.
"""
from .core import (
    Box,
    CategoricalEntry,
    Dataset,
    DatasetFormatError,
    Discrete,
    Environment,
    HyperparamSpace,
    IntRangeEntry,
    MdpSpec,
    Policy,
    RandomUniformPolicy,
    RealRangeEntry,
    RngStream,
    RunawayEpisodeError,
    Transition,
    dataset_bootstrap,
    read_dataset_jsonl,
    sample_assignment,
    validate_assignment,
    write_dataset_jsonl,
)
from .envs import (
    FiniteMdp,
    LqgEnv,
    RiccatiSolution,
    chain_mdp,
    default_lqg,
    riccati_expected_return,
    riccati_expected_return_uniform,
    riccati_policy,
    riccati_solve,
    value_iteration,
)
from .framework import (
    AutomaticResolutionError,
    AutomaticTrace,
    AutomaticUnit,
    FixedUnit,
    Pipeline,
    PipelineValidationError,
    RunResult,
    Stage,
    StageContext,
    StageKind,
    StageOutput,
    StageReport,
    SlotType,
    TunableUnit,
    resolve_automatic,
    run_pipeline,
    run_result_to_json,
    tune_unit,
    validate_pipeline,
)
from .metrics import (
    EntropyEstimate,
    MiEstimate,
    ReturnEstimate,
    dataset_state_action_entropy,
    evaluate_policy,
    knn_entropy,
    knn_mutual_information,
    rollout_batch,
    rollout_dataset,
)
from .tuner import (
    GeneticConfig,
    TuningFailedError,
    TuningTrace,
    genetic_tune,
    random_search_tune,
)

__version__ = "0.1.0"

__all__ = [
    "AutomaticResolutionError",
    "AutomaticTrace",
    "AutomaticUnit",
    "Box",
    "CategoricalEntry",
    "Dataset",
    "DatasetFormatError",
    "Discrete",
    "EntropyEstimate",
    "Environment",
    "FiniteMdp",
    "FixedUnit",
    "GeneticConfig",
    "HyperparamSpace",
    "IntRangeEntry",
    "LqgEnv",
    "MdpSpec",
    "MiEstimate",
    "Pipeline",
    "PipelineValidationError",
    "Policy",
    "RandomUniformPolicy",
    "RealRangeEntry",
    "ReturnEstimate",
    "RiccatiSolution",
    "RngStream",
    "RunResult",
    "RunawayEpisodeError",
    "SlotType",
    "Stage",
    "StageContext",
    "StageKind",
    "StageOutput",
    "StageReport",
    "Transition",
    "TunableUnit",
    "TuningFailedError",
    "TuningTrace",
    "chain_mdp",
    "dataset_bootstrap",
    "dataset_state_action_entropy",
    "default_lqg",
    "evaluate_policy",
    "genetic_tune",
    "knn_entropy",
    "knn_mutual_information",
    "random_search_tune",
    "read_dataset_jsonl",
    "resolve_automatic",
    "riccati_expected_return",
    "riccati_expected_return_uniform",
    "riccati_policy",
    "riccati_solve",
    "rollout_batch",
    "rollout_dataset",
    "run_pipeline",
    "run_result_to_json",
    "sample_assignment",
    "tune_unit",
    "validate_assignment",
    "validate_pipeline",
    "value_iteration",
    "write_dataset_jsonl",
]
