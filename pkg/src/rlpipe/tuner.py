"""Hyperparameter tuners: elitist genetic search and a random-search baseline.

The genetic tuner keeps the population size fixed, copies the generation best
into the next generation unmutated, fills the remaining slots by tournament
selection, and mutates only those newcomers.  Every evaluation (the elite
included, so its fitness is re-measured each generation) is recorded in a
TuningTrace for later reporting.
"""
from __future__ import annotations

import inspect
import math
from dataclasses import dataclass

import numpy as np

from .core import HyperparamSpace, RngStream, as_generator, sample_assignment
from .core import CategoricalEntry, IntRangeEntry, RealRangeEntry

# RngStream path labels used inside a single tune call.
_PATH_INIT = 0
_PATH_FITNESS = 1
_PATH_MUTATE = 2
_PATH_TOURNAMENT = 3


class TuningFailedError(RuntimeError):
    """Raised when every fitness evaluation failed; carries the trace."""

    def __init__(self, message: str, trace: "TuningTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class GeneticConfig:
    n_generations: int = 50
    n_agents: int = 20
    mutation_prob: float = 0.5
    factor_low: float = 0.8
    factor_high: float = 1.2
    tournament_size: int = 3

    def __post_init__(self) -> None:
        if self.n_generations < 1:
            raise ValueError("n_generations must be >= 1")
        if self.n_agents < 2:
            raise ValueError("n_agents must be >= 2 (elite plus newcomers)")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must be in [0, 1]")
        if not 0 < self.factor_low <= self.factor_high:
            raise ValueError("mutation factors must satisfy 0 < low <= high")
        if not 1 <= self.tournament_size <= self.n_agents:
            raise ValueError("tournament_size must be in [1, n_agents]")

    def to_dict(self) -> dict:
        return {
            "type": "genetic",
            "n_generations": self.n_generations,
            "n_agents": self.n_agents,
            "mutation_prob": self.mutation_prob,
            "factor_low": self.factor_low,
            "factor_high": self.factor_high,
            "tournament_size": self.tournament_size,
        }


@dataclass(frozen=True)
class TraceMember:
    assignment: dict
    fitness_mean: float
    fitness_std: float
    failed: bool = False


@dataclass(frozen=True)
class TraceGeneration:
    index: int
    members: tuple[TraceMember, ...]
    best_index: int


@dataclass(frozen=True)
class TuningTrace:
    """Complete record of a tuning run: every agent of every generation."""

    config: dict
    generations: tuple[TraceGeneration, ...]
    best_assignment: dict
    best_fitness: float

    def best_per_generation(self) -> list[float]:
        return [g.members[g.best_index].fitness_mean for g in self.generations]

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "generations": [
                {
                    "index": g.index,
                    "members": [
                        {
                            "h": m.assignment,
                            "fitness_mean": m.fitness_mean,
                            "fitness_std": m.fitness_std,
                            "failed": m.failed,
                        }
                        for m in g.members
                    ],
                    "best_index": g.best_index,
                }
                for g in self.generations
            ],
            "best_overall": {"h": self.best_assignment, "fitness": self.best_fitness},
        }

    @staticmethod
    def from_json_dict(d: dict) -> "TuningTrace":
        gens = tuple(
            TraceGeneration(
                g["index"],
                tuple(TraceMember(m["h"], m["fitness_mean"], m["fitness_std"], m["failed"])
                      for m in g["members"]),
                g["best_index"],
            )
            for g in d["generations"]
        )
        return TuningTrace(d["config"], gens, d["best_overall"]["h"], d["best_overall"]["fitness"])


# ---------------------------------------------------------------------------
# Fitness plumbing
# ---------------------------------------------------------------------------


def _accepts_rng(fitness) -> bool:
    try:
        params = inspect.signature(fitness).parameters
    except (TypeError, ValueError):
        return True
    if any(p.kind == inspect.Parameter.VAR_POSITIONAL for p in params.values()):
        return True
    positional = [p for p in params.values()
                  if p.kind in (inspect.Parameter.POSITIONAL_ONLY,
                                inspect.Parameter.POSITIONAL_OR_KEYWORD)]
    return len(positional) >= 2


def _evaluate_member(fitness, pass_rng: bool, assignment: dict, stream: RngStream) -> TraceMember:
    """Run one fitness evaluation; errors and NaNs become failed members at -inf."""
    try:
        out = fitness(assignment, stream) if pass_rng else fitness(assignment)
        if hasattr(out, "mean") and hasattr(out, "std") and not isinstance(out, np.ndarray):
            mean, std = float(out.mean), float(out.std)
        elif isinstance(out, (tuple, list)):
            mean, std = float(out[0]), float(out[1])
        else:
            mean, std = float(out), 0.0
    except Exception:
        return TraceMember(assignment, -math.inf, 0.0, failed=True)
    if math.isnan(mean):
        return TraceMember(assignment, -math.inf, 0.0, failed=True)
    return TraceMember(assignment, mean, std, failed=False)


def _argmax_lowest(values) -> int:
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


# ---------------------------------------------------------------------------
# Genetic operators
# ---------------------------------------------------------------------------


def mutate(assignment: dict, space: HyperparamSpace, cfg: GeneticConfig, rng) -> dict:
    """Mutate each entry independently with probability cfg.mutation_prob.

    Categorical and integer entries resample uniformly over their full domain;
    linear real entries multiply by u ~ U[factor_low, factor_high] and clamp;
    log-scale real entries apply the same factor rule to log(value).
    """
    g = as_generator(rng)
    out: dict = {}
    for e in space.entries:
        v = assignment[e.name]
        if g.random() >= cfg.mutation_prob:
            out[e.name] = v
            continue
        if isinstance(e, CategoricalEntry):
            out[e.name] = e.values[int(g.integers(len(e.values)))]
        elif isinstance(e, IntRangeEntry):
            out[e.name] = int(g.integers(e.lo, e.hi + 1))
        elif isinstance(e, RealRangeEntry):
            u = float(g.uniform(cfg.factor_low, cfg.factor_high))
            if e.scale == "log":
                nv = math.exp(math.log(v) * u)
            else:
                nv = v * u
            out[e.name] = float(min(max(nv, e.lo), e.hi))
        else:
            raise TypeError(f"unknown entry type {type(e).__name__}")
    return out


def tournament_select(members, size: int, rng) -> dict:
    """Best-of-subset selection over (assignment, fitness) pairs.

    Draws `size` distinct member indices uniformly and returns the assignment
    with maximal fitness among them; ties go to the lowest index.
    """
    members = list(members)
    n = len(members)
    if not 1 <= size <= n:
        raise ValueError(f"tournament size must be in [1, {n}], got {size}")
    g = as_generator(rng)
    idx = sorted(int(i) for i in g.choice(n, size=size, replace=False))
    best = idx[0]
    for i in idx[1:]:
        if members[i][1] > members[best][1]:
            best = i
    return members[best][0]


# ---------------------------------------------------------------------------
# Tuners
# ---------------------------------------------------------------------------


def _finish_trace(config: dict, generations: list[TraceGeneration]) -> TuningTrace:
    best_gen, best_member = 0, 0
    best_fit = -math.inf
    for g in generations:
        for j, m in enumerate(g.members):
            if m.fitness_mean > best_fit:
                best_fit = m.fitness_mean
                best_gen, best_member = g.index, j
    best = generations[best_gen].members[best_member]
    return TuningTrace(config, tuple(generations), best.assignment, best.fitness_mean)


def genetic_tune(space: HyperparamSpace, fitness, cfg: GeneticConfig, rng: RngStream):
    """Run the elitist genetic search; returns (best assignment, TuningTrace).

    fitness is called as fitness(assignment, rng_stream) when it accepts two
    arguments (each member gets its own (generation, agent) sub-stream), or as
    fitness(assignment) otherwise.  It may return a scalar, a (mean, std)
    pair, or any object with mean/std attributes.  Evaluations that raise or
    return NaN are recorded as failed members with fitness -inf.
    """
    pass_rng = _accepts_rng(fitness)
    init_g = rng.child(_PATH_INIT).generator()
    population = [sample_assignment(space, init_g) for _ in range(cfg.n_agents)]
    generations: list[TraceGeneration] = []
    for gen in range(cfg.n_generations):
        members = tuple(
            _evaluate_member(fitness, pass_rng, h, rng.child(_PATH_FITNESS, gen, j))
            for j, h in enumerate(population)
        )
        best_idx = _argmax_lowest([m.fitness_mean for m in members])
        generations.append(TraceGeneration(gen, members, best_idx))
        if gen == cfg.n_generations - 1:
            break
        elite = population[best_idx]
        pairs = [(m.assignment, m.fitness_mean) for m in members]
        tour_g = rng.child(_PATH_TOURNAMENT, gen).generator()
        newcomers = [tournament_select(pairs, cfg.tournament_size, tour_g)
                     for _ in range(cfg.n_agents - 1)]
        mut_g = rng.child(_PATH_MUTATE, gen).generator()
        population = [elite] + [mutate(h, space, cfg, mut_g) for h in newcomers]
    trace = _finish_trace(cfg.to_dict(), generations)
    if all(m.failed for g in trace.generations for m in g.members):
        raise TuningFailedError("every fitness evaluation failed", trace)
    return trace.best_assignment, trace


def random_search_tune(space: HyperparamSpace, fitness, budget: int, rng: RngStream):
    """Uniform random search over the space; returns (best assignment, trace)."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    pass_rng = _accepts_rng(fitness)
    g = rng.child(_PATH_INIT).generator()
    samples = [sample_assignment(space, g) for _ in range(budget)]
    members = tuple(
        _evaluate_member(fitness, pass_rng, h, rng.child(_PATH_FITNESS, 0, j))
        for j, h in enumerate(samples)
    )
    best_idx = _argmax_lowest([m.fitness_mean for m in members])
    generations = [TraceGeneration(0, members, best_idx)]
    trace = _finish_trace({"type": "random_search", "budget": budget}, generations)
    if all(m.failed for m in members):
        raise TuningFailedError("every fitness evaluation failed", trace)
    return trace.best_assignment, trace
