"""Command-line interface.

Three subcommands: `run` executes a pipeline described by a YAML config and
writes its artifacts to a directory, `oracle` prints the analytic solution of
a config's environment (Riccati gains for the clipped LQG, the exact Q table
for finite chains), and `report` turns a finished run directory into CSV and
text summaries.

Exit codes: 0 on success, 2 for configuration or validation problems, 3 for
runtime failures (diverged or failed tuning, broken datasets mid-run).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from .core import (
    CategoricalEntry,
    DatasetFormatError,
    HyperparamSpace,
    IntRangeEntry,
    RealRangeEntry,
    read_dataset_jsonl,
    write_dataset_jsonl,
)
from .envs import (
    FiniteMdp,
    LqgEnv,
    chain_mdp,
    default_lqg,
    riccati_expected_return_uniform,
    riccati_solve,
    value_iteration,
)
from .framework import (
    AutomaticResolutionError,
    AutomaticUnit,
    FixedUnit,
    Pipeline,
    PipelineValidationError,
    Stage,
    StageKind,
    TunableUnit,
    run_pipeline,
    run_result_to_json,
)
from .tuner import TuningFailedError
from .units.policies import policy_to_json

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

CONFIG_VERSION = 1

_TUNER_KEYS = {
    "genetic": {"n_generations", "n_agents", "mutation_prob", "factor_low",
                "factor_high", "tournament_size"},
    "random_search": {"budget"},
}


class ConfigError(ValueError):
    """Malformed configuration; maps to exit code 2."""


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Config parsing (strict: unknown keys are rejected everywhere)
# ---------------------------------------------------------------------------


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _require(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"missing key {key!r} in {where}")
    return d[key]


def _build_environment(cfg):
    _check_keys(cfg, {"name", "params"}, "environment")
    name = _require(cfg, "name", "environment")
    params = cfg.get("params") or {}
    if name == "lqg":
        _check_keys(params, {"gamma", "horizon"}, "environment.params")
        return default_lqg(**params)
    if name == "chain":
        _check_keys(params, {"n_states", "gamma", "horizon"}, "environment.params")
        return chain_mdp(**params)
    raise ConfigError(f"unknown environment {name!r} (expected 'lqg' or 'chain')")


def _parse_space(d: dict, where: str) -> HyperparamSpace:
    if not isinstance(d, dict) or not d:
        raise ConfigError(f"{where} must be a non-empty mapping of entry specs")
    entries = []
    for name, spec in d.items():
        here = f"{where}.{name}"
        kind = _require(spec, "type", here)
        if kind == "categorical":
            _check_keys(spec, {"type", "values"}, here)
            entries.append(CategoricalEntry(name, tuple(_require(spec, "values", here))))
        elif kind == "int":
            _check_keys(spec, {"type", "low", "high"}, here)
            entries.append(IntRangeEntry(name, _require(spec, "low", here),
                                         _require(spec, "high", here)))
        elif kind == "real":
            _check_keys(spec, {"type", "low", "high", "log"}, here)
            scale = "log" if spec.get("log", False) else "linear"
            entries.append(RealRangeEntry(name, _require(spec, "low", here),
                                          _require(spec, "high", here), scale))
        else:
            raise ConfigError(f"unknown entry type {kind!r} in {here}")
    try:
        return HyperparamSpace(tuple(entries))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_tuner(d, where: str) -> dict:
    if d is None:
        return {}
    _check_keys(d, {"type"} | set().union(*_TUNER_KEYS.values()), where)
    tuner_type = d.get("type", "genetic")
    if tuner_type not in _TUNER_KEYS:
        raise ConfigError(f"unknown tuner type {tuner_type!r} in {where}")
    _check_keys(d, {"type"} | _TUNER_KEYS[tuner_type], where)
    return dict(d)


def _parse_tunable(d: dict, where: str, extra_keys: set[str] = frozenset()) -> TunableUnit:
    allowed = {"algorithm", "params", "space", "tuner", "objective",
               "fitness_episodes"} | extra_keys
    _check_keys(d, allowed, where)
    kwargs = {}
    if "objective" in d:
        kwargs["objective"] = d["objective"]
    if "fitness_episodes" in d:
        kwargs["fitness_episodes"] = int(d["fitness_episodes"])
    return TunableUnit(
        algorithm=_require(d, "algorithm", where),
        space=_parse_space(_require(d, "space", where), f"{where}.space"),
        tuner=_parse_tuner(d.get("tuner"), f"{where}.tuner"),
        base_params=dict(d.get("params") or {}),
        **kwargs,
    )


def _parse_stage(d: dict, index: int) -> Stage:
    where = f"stages[{index}]"
    kind_name = _require(d, "kind", where)
    try:
        kind = StageKind(kind_name)
    except ValueError:
        raise ConfigError(f"unknown stage kind {kind_name!r} in {where}") from None
    variant = _require(d, "unit", where)
    if variant == "fixed":
        _check_keys(d, {"kind", "unit", "algorithm", "params"}, where)
        unit = FixedUnit(_require(d, "algorithm", where), dict(d.get("params") or {}))
    elif variant == "tunable":
        unit = _parse_tunable(d, where, extra_keys={"kind", "unit"})
    elif variant == "automatic":
        _check_keys(d, {"kind", "unit", "candidates", "objective"}, where)
        candidates = _require(d, "candidates", where)
        if not isinstance(candidates, list) or not candidates:
            raise ConfigError(f"{where}.candidates must be a non-empty list")
        subunits = tuple(
            _parse_tunable(c, f"{where}.candidates[{j}]") for j, c in enumerate(candidates))
        unit = AutomaticUnit(subunits, objective=d.get("objective"))
    else:
        raise ConfigError(
            f"unit must be 'fixed', 'tunable', or 'automatic' in {where}, got {variant!r}")
    return Stage(kind, unit)


@dataclasses.dataclass
class ConfigBundle:
    pipeline_kind: str
    eval_kind: str
    stages: tuple[Stage, ...]
    env: object | None
    dataset_path: str | None
    seed: int


def parse_config(raw: dict) -> ConfigBundle:
    _check_keys(raw, {"version", "pipeline", "environment", "dataset", "stages", "seed"},
                "config")
    version = _require(raw, "version", "config")
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
    pipe_cfg = _require(raw, "pipeline", "config")
    _check_keys(pipe_cfg, {"kind", "eval_kind"}, "pipeline")
    kind = _require(pipe_cfg, "kind", "pipeline")
    if kind not in ("online", "offline"):
        raise ConfigError(f"pipeline.kind must be 'online' or 'offline', got {kind!r}")
    stages_cfg = _require(raw, "stages", "config")
    if not isinstance(stages_cfg, list) or not stages_cfg:
        raise ConfigError("stages must be a non-empty list")
    stages = tuple(_parse_stage(s, i) for i, s in enumerate(stages_cfg))
    env = _build_environment(raw["environment"]) if raw.get("environment") else None
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return ConfigBundle(
        pipeline_kind=kind,
        eval_kind=pipe_cfg.get("eval_kind", "discounted"),
        stages=stages,
        env=env,
        dataset_path=raw.get("dataset"),
        seed=seed,
    )


def _apply_override(cfg, expr: str) -> None:
    """Apply one --set dotted.path=value override onto the raw config tree."""
    path, sep, value = expr.partition("=")
    if not sep or not path:
        raise ConfigError(f"--set needs KEY=VALUE, got {expr!r}")
    keys = path.split(".")
    node = cfg
    try:
        for key in keys[:-1]:
            node = node[int(key)] if isinstance(node, list) else node[key]
        leaf = keys[-1]
        if isinstance(node, list):
            node[int(leaf)] = yaml.safe_load(value)
        elif isinstance(node, dict):
            node[leaf] = yaml.safe_load(value)
        else:
            raise ConfigError(f"--set path {path!r} hits a scalar before its end")
    except (KeyError, IndexError, ValueError, TypeError) as exc:
        raise ConfigError(f"--set path {path!r} does not fit the config: {exc}") from exc


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _load_yaml(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping in {path}")
    return raw


def cmd_run(args) -> int:
    raw = _load_yaml(args.config)
    for expr in args.overrides:
        _apply_override(raw, expr)
    bundle = parse_config(raw)
    seed = args.seed if args.seed is not None else bundle.seed
    pipeline = Pipeline(bundle.pipeline_kind, bundle.stages, seed=seed)
    dataset = None
    if bundle.dataset_path is not None:
        dataset = read_dataset_jsonl(bundle.dataset_path)

    result = run_pipeline(pipeline, env=bundle.env, dataset=dataset,
                          eval_kind=bundle.eval_kind)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_text = _canonical_json(raw)
    run_id = hashlib.sha256((config_text + f"seed={seed}").encode()).hexdigest()[:16]

    written: list[Path] = []
    config_path = out_dir / "config.json"
    _write_text(config_path, config_text)
    written.append(config_path)

    trace_refs: dict[int, str] = {}
    for i, report in enumerate(result.per_stage):
        if report.trace is None:
            continue
        name = f"trace_stage{i}.json"
        trace_path = out_dir / name
        _write_text(trace_path, _canonical_json(report.trace.to_json_dict()))
        trace_refs[i] = name
        written.append(trace_path)

    result_path = out_dir / "result.json"
    _write_text(result_path,
                _canonical_json(run_result_to_json(result, run_id, seed,
                                                   pipeline.kind, trace_refs)))
    written.append(result_path)

    if result.final_policy is not None:
        try:
            policy_doc = policy_to_json(result.final_policy)
        except TypeError:
            policy_doc = None
        if policy_doc is not None:
            policy_path = out_dir / "policy.json"
            _write_text(policy_path, _canonical_json(policy_doc))
            written.append(policy_path)

    if result.final_dataset is not None:
        dataset_path = out_dir / "dataset.jsonl"
        write_dataset_jsonl(result.final_dataset, dataset_path)
        written.append(dataset_path)

    manifest = {"run_id": run_id, "files": {p.name: _sha256(p) for p in written}}
    _write_text(out_dir / "manifest.json", _canonical_json(manifest))

    if result.evaluation is not None:
        print(f"run {run_id}: {result.evaluation.kind} return "
              f"{result.evaluation.mean:.6g} +/- {result.evaluation.std:.6g} "
              f"({result.evaluation.n_episodes} episodes)")
    else:
        print(f"run {run_id}: finished (no evaluation stage)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def _oracle_document(env) -> dict:
    if isinstance(env, LqgEnv):
        sol = riccati_solve(env)
        expected = riccati_expected_return_uniform(sol, env.init_low, env.init_high)
        return {
            "kind": "lqg",
            "gamma": env.spec.gamma,
            "horizon": env.spec.horizon,
            "gains": [k.tolist() for k in sol.gains],
            "expected_return": expected,
        }
    if isinstance(env, FiniteMdp):
        if env.spec.horizon is not None:
            n_iterations = env.spec.horizon
        else:
            # geometric tail below 1e-12 of the reward scale
            n_iterations = min(100_000, int(math.log(1e-12) / math.log(env.spec.gamma)) + 1)
        q = value_iteration(env, n_iterations)
        return {
            "kind": "finite",
            "gamma": env.spec.gamma,
            "horizon": env.spec.horizon,
            "n_iterations": n_iterations,
            "q": q.tolist(),
        }
    raise ConfigError(f"no analytic oracle for environment {type(env).__name__}")


def cmd_oracle(args) -> int:
    raw = _load_yaml(args.config)
    env_cfg = raw.get("environment")
    if env_cfg is None:
        raise ConfigError("config has no environment section")
    env = _build_environment(env_cfg)
    text = _canonical_json(_oracle_document(env))
    if args.out:
        _write_text(Path(args.out), text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _write_trace_csvs(trace: dict, out_dir: Path, prefix: str) -> list[str]:
    best_rows = [(g["index"], g["members"][g["best_index"]]["fitness_mean"])
                 for g in trace["generations"]]
    best_path = out_dir / f"{prefix}_best_fitness.csv"
    with open(best_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "best_fitness"])
        writer.writerows(best_rows)
    params_path = out_dir / f"{prefix}_params.csv"
    with open(params_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "agent", "param_name", "value", "fitness"])
        for g in trace["generations"]:
            for j, m in enumerate(g["members"]):
                for name, value in sorted(m["h"].items()):
                    writer.writerow([g["index"], j, name, value, m["fitness_mean"]])
    return [best_path.name, params_path.name]


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    result_path = run_dir / "result.json"
    if not result_path.exists():
        raise ConfigError(f"no result.json in {run_dir}")
    result = json.loads(result_path.read_text(encoding="utf-8"))

    lines = [f"run {result['run_id']} (seed {result['seed']}, "
             f"{result['pipeline_kind']} pipeline)"]
    produced: list[str] = []
    for i, stage in enumerate(result["stages"]):
        params = ", ".join(f"{k}={v}" for k, v in sorted(stage["chosen_hyperparams"].items()))
        lines.append(f"  stage {i} {stage['kind']}: {stage['algorithm']} "
                     f"[{stage['unit_variant']}] {params}")
        ref = stage.get("trace_ref")
        if not ref:
            continue
        trace = json.loads((run_dir / ref).read_text(encoding="utf-8"))
        if trace.get("kind") == "automatic":
            lines.append(f"    automatic choice: candidate {trace['chosen']}")
            for j, sub in enumerate(trace["subunits"]):
                status = "failed" if sub["failed"] else f"reeval {sub['reevaluated']:.6g}"
                lines.append(f"    candidate {j} {sub['algorithm']}: {status}")
                if sub["trace"] is not None:
                    produced += _write_trace_csvs(sub["trace"], run_dir,
                                                  f"stage{i}_candidate{j}")
        else:
            best = trace["best_overall"]
            lines.append(f"    tuned best fitness {best['fitness']:.6g} at {best['h']}")
            produced += _write_trace_csvs(trace, run_dir, f"stage{i}")
    ev = result.get("evaluation")
    if ev is not None:
        lines.append(f"  evaluation: {ev['kind']} return {ev['mean']:.6g} "
                     f"+/- {ev['std']:.6g} over {ev['n_episodes']} episodes")
    if produced:
        lines.append("wrote " + ", ".join(produced))
    text = "\n".join(lines) + "\n"
    _write_text(run_dir / "summary.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rlpipe", description="Run and inspect tunable RL pipelines.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a pipeline config")
    run_p.add_argument("--config", required=True, help="YAML pipeline config")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config's seed")
    run_p.add_argument("--out", required=True, help="output directory for artifacts")
    run_p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override a config entry by dotted path (repeatable)")
    run_p.set_defaults(func=cmd_run)

    oracle_p = sub.add_parser("oracle", help="print the environment's analytic solution")
    oracle_p.add_argument("--config", required=True, help="YAML pipeline config")
    oracle_p.add_argument("--out", default=None, help="also write the JSON here")
    oracle_p.set_defaults(func=cmd_oracle)

    report_p = sub.add_parser("report", help="summarize a finished run directory")
    report_p.add_argument("--run", required=True, help="directory written by `rlpipe run`")
    report_p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PipelineValidationError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TuningFailedError, AutomaticResolutionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
