"""Pipeline framework: stages, units, validation, tuning, and execution.

A pipeline is an ordered list of stages, each filled by a unit.  Fixed units
run an algorithm with given hyperparameters; tunable units search their
hyperparameter space against the stage's performance index; automatic units
tune several tunable candidates and keep the one whose tuned configuration
re-evaluates best.  Slot chaining follows the canonical wiring: environments
pass through data-side stages alongside the dataset, and the policy produced
by policy generation feeds policy evaluation.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

from .core import (
    Dataset,
    Environment,
    HyperparamSpace,
    Policy,
    RngStream,
    dataset_bootstrap,
    validate_assignment,
)
from .metrics import (
    RETURN_KINDS,
    ReturnEstimate,
    dataset_state_action_entropy,
    evaluate_policy,
)
from .tuner import (
    GeneticConfig,
    TuningFailedError,
    TuningTrace,
    _evaluate_member,
    genetic_tune,
    random_search_tune,
)

# Sub-stream labels hung off each stage's RngStream.
_STREAM_TUNE = 0
_STREAM_EXECUTE = 1
_STREAM_REEVAL = 1  # child off the automatic-unit stream, sibling of tuning
_STREAM_FE_INTERNAL = 4  # off the tune stream; tuner owns labels 0..3


class SlotType(str, Enum):
    ENVIRONMENT = "environment"
    DATASET = "dataset"
    POLICY = "policy"
    SCALAR = "scalar"


class StageKind(str, Enum):
    DATA_GENERATION = "data_generation"
    DATA_PREPARATION = "data_preparation"
    FEATURE_ENGINEERING = "feature_engineering"
    POLICY_GENERATION = "policy_generation"
    POLICY_EVALUATION = "policy_evaluation"


_CANONICAL_ORDER = {
    "online": (StageKind.FEATURE_ENGINEERING, StageKind.POLICY_GENERATION,
               StageKind.POLICY_EVALUATION),
    "offline": (StageKind.DATA_GENERATION, StageKind.DATA_PREPARATION,
                StageKind.FEATURE_ENGINEERING, StageKind.POLICY_GENERATION,
                StageKind.POLICY_EVALUATION),
}

# Performance indexes accepted per stage kind.
_STAGE_OBJECTIVES = {
    StageKind.DATA_GENERATION: ("entropy",),
    StageKind.FEATURE_ENGINEERING: ("mi", "mi_per_feature"),
    StageKind.POLICY_GENERATION: RETURN_KINDS,
    StageKind.POLICY_EVALUATION: RETURN_KINDS,
}


class PipelineValidationError(ValueError):
    """Invalid pipeline structure; carries the full diagnostics list."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)


class AutomaticResolutionError(RuntimeError):
    """Raised when every candidate of an automatic unit failed."""

    def __init__(self, message: str, trace: "AutomaticTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class FixedUnit:
    """Run one algorithm with explicit hyperparameters."""

    algorithm: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TunableUnit:
    """Search a hyperparameter space for one algorithm.

    base_params are fixed settings merged under the tuned values; objective
    names the stage's performance index; fitness_episodes sets the Monte-Carlo
    budget per fitness evaluation for policy-side stages.
    """

    algorithm: str
    space: HyperparamSpace
    tuner: dict = field(default_factory=dict)
    objective: str = "discounted"
    base_params: dict = field(default_factory=dict)
    fitness_episodes: int = 100

    def __post_init__(self) -> None:
        # accept a bare sequence of entries as the space
        if not isinstance(self.space, HyperparamSpace):
            object.__setattr__(self, "space", HyperparamSpace(tuple(self.space)))


@dataclass(frozen=True)
class AutomaticUnit:
    """Pick the best of several tunable candidates after tuning each.

    If objective is set it overrides the candidates' own objectives for the
    final re-evaluation, which otherwise reuses each candidate's index.
    """

    subunits: tuple[TunableUnit, ...]
    objective: str | None = None

    def __post_init__(self) -> None:
        subunits = tuple(self.subunits)
        if len(subunits) == 0:
            raise ValueError("automatic unit needs at least one candidate")
        object.__setattr__(self, "subunits", subunits)


Unit = Union[FixedUnit, TunableUnit, AutomaticUnit]


@dataclass(frozen=True)
class Stage:
    kind: StageKind
    unit: Unit


@dataclass(frozen=True)
class Pipeline:
    kind: str
    stages: tuple[Stage, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))


@dataclass
class StageContext:
    """Live slots and evaluation settings threaded through stage execution."""

    pipeline_kind: str
    env: Environment | None = None
    dataset: Dataset | None = None
    policy: Policy | None = None
    eval_kind: str = "discounted"


@dataclass
class StageOutput:
    """Slots produced by one algorithm run; None leaves a slot untouched."""

    env: Environment | None = None
    dataset: Dataset | None = None
    policy: Policy | None = None
    scalar: ReturnEstimate | None = None
    info: dict = field(default_factory=dict)


@dataclass
class StageReport:
    stage: StageKind
    unit_variant: str
    algorithm: str
    params: dict
    trace: Union[TuningTrace, "AutomaticTrace", None] = None
    info: dict = field(default_factory=dict)


@dataclass
class RunResult:
    final_policy: Policy | None
    evaluation: ReturnEstimate | None
    per_stage: list[StageReport]
    final_dataset: Dataset | None = None


@dataclass(frozen=True)
class SubunitResolution:
    algorithm: str
    best_params: dict | None
    trace: TuningTrace | None
    reevaluated: float
    failed: bool


@dataclass(frozen=True)
class AutomaticTrace:
    """Per-candidate tuning traces plus the re-evaluation that chose a winner."""

    subunits: tuple[SubunitResolution, ...]
    chosen: int

    def to_json_dict(self) -> dict:
        return {
            "kind": "automatic",
            "chosen": self.chosen,
            "subunits": [
                {
                    "algorithm": s.algorithm,
                    "best_params": s.best_params,
                    "reevaluated": None if math.isinf(s.reevaluated) else s.reevaluated,
                    "failed": s.failed,
                    "trace": s.trace.to_json_dict() if s.trace is not None else None,
                }
                for s in self.subunits
            ],
        }


def _default_registry():
    from .units.registry import DEFAULT_REGISTRY

    return DEFAULT_REGISTRY


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _stage_requires(kind: StageKind, pipeline_kind: str) -> tuple[SlotType, ...]:
    if kind == StageKind.DATA_GENERATION:
        return (SlotType.ENVIRONMENT,)
    if kind == StageKind.DATA_PREPARATION:
        return (SlotType.DATASET,)
    if kind == StageKind.FEATURE_ENGINEERING:
        if pipeline_kind == "online":
            return (SlotType.ENVIRONMENT,)
        return (SlotType.ENVIRONMENT, SlotType.DATASET)
    if kind == StageKind.POLICY_GENERATION:
        if pipeline_kind == "online":
            return (SlotType.ENVIRONMENT,)
        return (SlotType.DATASET,)
    if kind == StageKind.POLICY_EVALUATION:
        return (SlotType.ENVIRONMENT, SlotType.POLICY)
    raise ValueError(kind)


def _stage_produces(kind: StageKind, pipeline_kind: str) -> tuple[SlotType, ...]:
    if kind == StageKind.DATA_GENERATION:
        return (SlotType.DATASET,)
    if kind == StageKind.DATA_PREPARATION:
        return (SlotType.DATASET,)
    if kind == StageKind.FEATURE_ENGINEERING:
        if pipeline_kind == "online":
            return (SlotType.ENVIRONMENT,)
        return (SlotType.ENVIRONMENT, SlotType.DATASET)
    if kind == StageKind.POLICY_GENERATION:
        return (SlotType.POLICY,)
    if kind == StageKind.POLICY_EVALUATION:
        return (SlotType.SCALAR,)
    raise ValueError(kind)


def _unit_param_names(unit: Unit) -> list[tuple[str, dict, list[str]]]:
    """(algorithm, fixed params, tuned names) triples for every algorithm run."""
    if isinstance(unit, FixedUnit):
        return [(unit.algorithm, unit.params, [])]
    if isinstance(unit, TunableUnit):
        return [(unit.algorithm, unit.base_params, list(unit.space.names))]
    return [t for sub in unit.subunits for t in _unit_param_names(sub)]


def validate_pipeline(p: Pipeline, inputs=(SlotType.ENVIRONMENT,), registry=None) -> list[str]:
    """Structural checks; returns a list of diagnostics (empty when valid)."""
    diagnostics: list[str] = []
    if p.kind not in _CANONICAL_ORDER:
        return [f"pipeline kind must be 'online' or 'offline', got {p.kind!r}"]
    canonical = _CANONICAL_ORDER[p.kind]
    if registry is None:
        registry = _default_registry()

    # stage admissibility and canonical order
    last_pos = -1
    seen: set[StageKind] = set()
    for st in p.stages:
        if st.kind not in canonical:
            diagnostics.append(f"stage {st.kind.value} not allowed in {p.kind} pipeline")
            continue
        if st.kind in seen:
            diagnostics.append(f"duplicate stage {st.kind.value}")
            continue
        pos = canonical.index(st.kind)
        if pos < last_pos:
            diagnostics.append(
                f"stage {st.kind.value} cannot follow stage {canonical[last_pos].value}")
        last_pos = max(last_pos, pos)
        seen.add(st.kind)
    if StageKind.POLICY_GENERATION not in seen:
        diagnostics.append("pipeline must contain a policy_generation stage")

    # unit admissibility per stage
    for st in p.stages:
        if st.kind == StageKind.POLICY_EVALUATION and not isinstance(st.unit, FixedUnit):
            diagnostics.append("policy_evaluation admits only fixed units")
        if st.kind == StageKind.DATA_PREPARATION and not isinstance(st.unit, FixedUnit):
            diagnostics.append("data_preparation has no performance index; use a fixed unit")
        for sub in (st.unit.subunits if isinstance(st.unit, AutomaticUnit) else
                    [st.unit] if isinstance(st.unit, TunableUnit) else []):
            allowed = _STAGE_OBJECTIVES.get(st.kind, ())
            if sub.objective not in allowed:
                diagnostics.append(
                    f"objective {sub.objective!r} not valid for {st.kind.value} "
                    f"(expected one of {list(allowed)})")

    # algorithms exist, serve the right stage, and name known hyperparameters
    for st in p.stages:
        for algo_id, fixed, tuned in _unit_param_names(st.unit):
            algo = registry.get(algo_id)
            if algo is None:
                diagnostics.append(f"unknown algorithm {algo_id!r}")
                continue
            if algo.stage != st.kind:
                diagnostics.append(
                    f"algorithm {algo_id} serves {algo.stage.value}, not {st.kind.value}")
            if p.kind not in algo.kinds:
                diagnostics.append(f"algorithm {algo_id} is not available in {p.kind} pipelines")
            for name in list(fixed) + tuned:
                if name not in algo.defaults:
                    diagnostics.append(f"unknown hyperparameter {name!r} for algorithm {algo_id}")

    # slot chaining from the declared inputs
    live = set(inputs)
    for st in p.stages:
        if st.kind not in canonical or st.kind not in seen:
            continue
        for slot in _stage_requires(st.kind, p.kind):
            if slot not in live:
                diagnostics.append(f"{st.kind.value} requires {slot.value}")
        live.update(_stage_produces(st.kind, p.kind))
    return diagnostics


# ---------------------------------------------------------------------------
# Tuning
# ---------------------------------------------------------------------------


def _merge_params(algo, base_params: dict, values: dict) -> dict:
    merged = dict(algo.defaults)
    for src in (base_params, values):
        for k, v in src.items():
            if k not in algo.defaults:
                raise ValueError(f"unknown hyperparameter {k!r} for algorithm {algo.name}")
            merged[k] = v
    return merged


def _make_fitness(stage_kind: StageKind, unit: TunableUnit, ctx: StageContext,
                  registry, tune_stream: RngStream):
    """Build the stage's index as fitness(assignment, stream) -> (mean, std)."""
    algo = registry[unit.algorithm]

    if stage_kind == StageKind.POLICY_GENERATION:
        if unit.objective not in RETURN_KINDS:
            raise ValueError(f"objective {unit.objective!r} invalid for policy generation")
        if ctx.pipeline_kind == "online":
            if ctx.env is None:
                raise ValueError("online policy tuning needs an environment")

            def fitness(h: dict, stream: RngStream):
                env_copy = ctx.env.copy()
                sub_ctx = dataclasses.replace(ctx, env=env_copy)
                out = algo.run(sub_ctx, _merge_params(algo, unit.base_params, h),
                               stream.child(0))
                return evaluate_policy(env_copy, out.policy, unit.fitness_episodes,
                                       unit.objective, stream.child(1))
        else:
            if ctx.dataset is None:
                raise ValueError("offline policy tuning needs a dataset")
            if ctx.env is None:
                raise ValueError("offline policy tuning needs an evaluation environment")

            def fitness(h: dict, stream: RngStream):
                boot = dataset_bootstrap(ctx.dataset, stream.child(0))
                sub_ctx = dataclasses.replace(ctx, dataset=boot, env=ctx.env.copy())
                out = algo.run(sub_ctx, _merge_params(algo, unit.base_params, h),
                               stream.child(1))
                return evaluate_policy(ctx.env.copy(), out.policy, unit.fitness_episodes,
                                       unit.objective, stream.child(2))

        return fitness

    if stage_kind == StageKind.DATA_GENERATION:
        if unit.objective != "entropy":
            raise ValueError(f"objective {unit.objective!r} invalid for data generation")
        if ctx.env is None:
            raise ValueError("data-generation tuning needs an environment")

        def fitness(h: dict, stream: RngStream):
            sub_ctx = dataclasses.replace(ctx, env=ctx.env.copy())
            out = algo.run(sub_ctx, _merge_params(algo, unit.base_params, h), stream.child(0))
            return dataset_state_action_entropy(out.dataset, k=5).value

        return fitness

    if stage_kind == StageKind.FEATURE_ENGINEERING:
        from .units.features import fe_forward_mi_select, feature_subset_mi

        if unit.objective not in ("mi", "mi_per_feature"):
            raise ValueError(f"objective {unit.objective!r} invalid for feature engineering")
        if unit.algorithm != "mi_forward_select":
            raise ValueError(f"tuning is not supported for algorithm {unit.algorithm!r}")
        if ctx.pipeline_kind == "offline":
            internal = ctx.dataset
        else:
            # one shared selection dataset per tune call, not one per member
            from .core import RandomUniformPolicy
            from .metrics import rollout_dataset

            episodes = int(_merge_params(algo, unit.base_params, {})["internal_episodes"])
            internal = rollout_dataset(ctx.env, RandomUniformPolicy(ctx.env.spec.action_space),
                                       episodes, tune_stream.child(_STREAM_FE_INTERNAL))
        if internal is None:
            raise ValueError("feature-engineering tuning needs a dataset")

        def fitness(h: dict, stream: RngStream):
            merged = _merge_params(algo, unit.base_params, h)
            indices = fe_forward_mi_select(internal, int(merged["n_features"]),
                                           int(merged["k"]))
            value = feature_subset_mi(internal, indices, int(merged["k"]))
            if unit.objective == "mi_per_feature":
                value /= len(indices)
            return value

        return fitness

    raise ValueError(f"stage {stage_kind.value} has no tunable performance index")


def _run_tuner(unit: TunableUnit, fitness, stream: RngStream):
    cfg = dict(unit.tuner)
    tuner_type = cfg.pop("type", "genetic")
    if tuner_type == "genetic":
        return genetic_tune(unit.space, fitness, GeneticConfig(**cfg), stream)
    if tuner_type == "random_search":
        budget = cfg.pop("budget")
        if cfg:
            raise ValueError(f"unknown random_search options {sorted(cfg)}")
        return random_search_tune(unit.space, fitness, budget, stream)
    raise ValueError(f"unknown tuner type {tuner_type!r}")


def tune_unit(unit: TunableUnit, stage_kind: StageKind, ctx: StageContext,
              stream: RngStream, registry=None, fitness=None):
    """Tune one unit against the stage's index; returns (best values, trace).

    A custom fitness callable can replace the stage index (useful for custom
    objectives); it receives (assignment, RngStream) like the built-in one.
    """
    if registry is None:
        registry = _default_registry()
    if fitness is None:
        fitness = _make_fitness(stage_kind, unit, ctx, registry, stream)
    best, trace = _run_tuner(unit, fitness, stream)
    validate_assignment(unit.space, best)
    return best, trace


def resolve_automatic(unit: AutomaticUnit, stage_kind: StageKind, ctx: StageContext,
                      stream: RngStream, registry=None):
    """Tune every candidate, re-evaluate each winner on a fresh sub-stream,
    and keep the candidate with the highest re-evaluated index (ties -> lowest
    candidate position).  Returns (chosen index, best params, AutomaticTrace).
    """
    if registry is None:
        registry = _default_registry()
    resolutions: list[SubunitResolution] = []
    for j, sub in enumerate(unit.subunits):
        if unit.objective is not None:
            sub = dataclasses.replace(sub, objective=unit.objective)
        try:
            best, trace = tune_unit(sub, stage_kind, ctx, stream.child(_STREAM_TUNE, j),
                                    registry=registry)
        except TuningFailedError as exc:
            resolutions.append(SubunitResolution(sub.algorithm, None, exc.trace,
                                                 -math.inf, True))
            continue
        fitness = _make_fitness(stage_kind, sub, ctx, registry,
                                stream.child(_STREAM_TUNE, j))
        member = _evaluate_member(fitness, True, best, stream.child(_STREAM_REEVAL, j))
        resolutions.append(SubunitResolution(sub.algorithm, best, trace,
                                             member.fitness_mean, member.failed))
    chosen = 0
    for j in range(1, len(resolutions)):
        if resolutions[j].reevaluated > resolutions[chosen].reevaluated:
            chosen = j
    trace = AutomaticTrace(tuple(resolutions), chosen)
    if all(r.failed for r in resolutions):
        raise AutomaticResolutionError("every automatic candidate failed", trace)
    return chosen, dict(resolutions[chosen].best_params), trace


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _apply_output(ctx: StageContext, kind: StageKind, out: StageOutput) -> None:
    for slot in _stage_produces(kind, ctx.pipeline_kind):
        produced = {
            SlotType.ENVIRONMENT: out.env,
            SlotType.DATASET: out.dataset,
            SlotType.POLICY: out.policy,
            SlotType.SCALAR: out.scalar,
        }[slot]
        if produced is None:
            raise RuntimeError(f"{kind.value} did not produce its {slot.value} slot")
    if out.env is not None:
        ctx.env = out.env
    if out.dataset is not None:
        ctx.dataset = out.dataset
    if out.policy is not None:
        ctx.policy = out.policy


def run_pipeline(p: Pipeline, env: Environment | None = None,
                 dataset: Dataset | None = None, rng: RngStream | None = None,
                 registry=None, eval_kind: str = "discounted") -> RunResult:
    """Validate and execute a pipeline end to end.

    Tunable and automatic units are resolved to fixed configurations first,
    then the stage executes on its own rng sub-stream, so re-running a
    resolved configuration as a fixed unit reproduces the output exactly.
    """
    if registry is None:
        registry = _default_registry()
    inputs = set()
    if env is not None:
        inputs.add(SlotType.ENVIRONMENT)
    if dataset is not None:
        inputs.add(SlotType.DATASET)
    diagnostics = validate_pipeline(p, inputs, registry)
    if diagnostics:
        raise PipelineValidationError(diagnostics)
    if rng is None:
        rng = RngStream(p.seed)
    ctx = StageContext(pipeline_kind=p.kind, env=env, dataset=dataset, eval_kind=eval_kind)
    reports: list[StageReport] = []
    evaluation: ReturnEstimate | None = None
    for i, st in enumerate(p.stages):
        stage_stream = rng.child(i)
        if isinstance(st.unit, FixedUnit):
            variant, algo_id, chosen, trace = "fixed", st.unit.algorithm, dict(st.unit.params), None
        elif isinstance(st.unit, TunableUnit):
            best, trace = tune_unit(st.unit, st.kind, ctx, stage_stream.child(_STREAM_TUNE),
                                    registry=registry)
            variant, algo_id = "tunable", st.unit.algorithm
            chosen = {**st.unit.base_params, **best}
        else:
            idx, best, trace = resolve_automatic(st.unit, st.kind, ctx,
                                                 stage_stream.child(_STREAM_TUNE),
                                                 registry=registry)
            sub = st.unit.subunits[idx]
            variant, algo_id = "automatic", sub.algorithm
            chosen = {**sub.base_params, **best}
        algo = registry[algo_id]
        out = algo.run(ctx, _merge_params(algo, {}, chosen), stage_stream.child(_STREAM_EXECUTE))
        _apply_output(ctx, st.kind, out)
        if st.kind == StageKind.POLICY_EVALUATION:
            evaluation = out.scalar
        reports.append(StageReport(st.kind, variant, algo_id, chosen, trace, dict(out.info)))
    return RunResult(final_policy=ctx.policy, evaluation=evaluation, per_stage=reports,
                     final_dataset=ctx.dataset)


def run_result_to_json(result: RunResult, run_id: str, seed: int, pipeline_kind: str,
                       trace_refs: dict[int, str] | None = None) -> dict:
    """Serializable summary of a run; trace_refs maps stage index -> file name."""
    trace_refs = trace_refs or {}
    stages = []
    for i, report in enumerate(result.per_stage):
        stages.append({
            "kind": report.stage.value,
            "unit_variant": report.unit_variant,
            "algorithm": report.algorithm,
            "chosen_hyperparams": report.params,
            "trace_ref": trace_refs.get(i),
            "info": report.info,
        })
    evaluation = None
    if result.evaluation is not None:
        evaluation = {
            "mean": result.evaluation.mean,
            "std": result.evaluation.std,
            "n_episodes": result.evaluation.n_episodes,
            "kind": result.evaluation.kind,
        }
    return {
        "run_id": run_id,
        "seed": seed,
        "pipeline_kind": pipeline_kind,
        "stages": stages,
        "evaluation": evaluation,
    }
