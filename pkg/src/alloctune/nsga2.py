"""NSGA-II over mixed discrete/continuous allocator genotypes.

Implements the published algorithm directly: fast non-dominated sorting,
crowding distance, crowded-comparison binary tournaments, simulated binary
crossover and polynomial mutation, and elitist mu+lambda environmental
selection.  Integer genes are recombined in value space and rounded
half-to-even; log2-scaled genes are recombined in exponent space so
byte-valued knobs explore multiplicatively; categorical and boolean genes
use uniform exchange and resampling.

Randomness comes from derived streams keyed by (root seed, generation,
operator, index), so campaigns replay identically regardless of evaluation
parallelism and resume cleanly from any generation boundary.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from alloctune.params import (
    BOOLEAN,
    CATEGORICAL,
    CONTINUOUS,
    INTEGER,
    Genotype,
    ParameterSpace,
    ParameterSpec,
    default_genotype,
)

ObjectiveVector = tuple  # (peak_heap_bytes, wallclock_seconds), both minimized


class EvaluatedRecord(Protocol):
    objective_vector: ObjectiveVector


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 24
    generations: int = 500
    seed: int = 0
    crossover_probability: float = 0.9
    sbx_eta: float = 15.0
    mutation_probability: float | None = None  # None = 1 / number of genes
    mutation_eta: float = 20.0

    def __post_init__(self) -> None:
        if self.population_size < 4 or self.population_size % 2:
            raise ValueError("population_size must be even and >= 4")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        for name in ("crossover_probability", "mutation_probability"):
            p = getattr(self, name)
            if p is not None and not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")

    def resolved_mutation_probability(self, space: ParameterSpace) -> float:
        if self.mutation_probability is not None:
            return self.mutation_probability
        return 1.0 / len(space.specs)


@dataclass
class Member:
    genotype: Genotype
    objectives: ObjectiveVector
    rank: int = -1
    crowding: float = 0.0


def derived_rng(root_seed: int, *path) -> random.Random:
    """Deterministic child stream for (root seed, generation, operator, index)."""
    token = ":".join(str(p) for p in (root_seed, *path))
    digest = hashlib.sha256(token.encode()).digest()
    return random.Random(int.from_bytes(digest[:16], "big"))


def dominates(a: ObjectiveVector, b: ObjectiveVector) -> bool:
    """Minimization dominance: a <= b everywhere and a < b somewhere."""
    if len(a) != len(b):
        raise ValueError("objective arity mismatch")
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def non_dominated_sort(points: Sequence[ObjectiveVector]) -> list[list[int]]:
    """Fast non-dominated sorting; returns fronts as lists of indices."""
    if not points:
        raise ValueError("no points to sort")
    n = len(points)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    domination_count = [0] * n
    fronts: list[list[int]] = [[]]
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(points[i], points[j]):
                dominated_by[i].append(j)
                domination_count[j] += 1
            elif dominates(points[j], points[i]):
                dominated_by[j].append(i)
                domination_count[i] += 1
    for i in range(n):
        if domination_count[i] == 0:
            fronts[0].append(i)
    current = 0
    while fronts[current]:
        nxt: list[int] = []
        for i in fronts[current]:
            for j in dominated_by[i]:
                domination_count[j] -= 1
                if domination_count[j] == 0:
                    nxt.append(j)
        current += 1
        fronts.append(nxt)
    fronts.pop()  # trailing empty front
    return fronts


def crowding_distance(front: Sequence[ObjectiveVector]) -> list[float]:
    """Per-point crowding: boundary points infinite, interior neighbor spread."""
    n = len(front)
    if n == 0:
        raise ValueError("empty front")
    distance = [0.0] * n
    n_obj = len(front[0])
    for m in range(n_obj):
        order = sorted(range(n), key=lambda i: front[i][m])
        lo = front[order[0]][m]
        hi = front[order[-1]][m]
        distance[order[0]] = math.inf
        distance[order[-1]] = math.inf
        span = hi - lo
        if span == 0:
            continue  # zero range contributes nothing to interior points
        for k in range(1, n - 1):
            if distance[order[k]] != math.inf:
                distance[order[k]] += (front[order[k + 1]][m] - front[order[k - 1]][m]) / span
    return distance


def crowded_better(a: Member, b: Member, rng: random.Random) -> Member:
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.random() < 0.5 else b


def tournament_select(population: Sequence[Member], rng: random.Random) -> int:
    """Binary tournament under crowded comparison; returns the winner's index."""
    i = rng.randrange(len(population))
    j = rng.randrange(len(population))
    winner = crowded_better(population[i], population[j], rng)
    return i if winner is population[i] else j


# -- variation operators ----------------------------------------------------


def _is_real_gene(spec: ParameterSpec) -> bool:
    return spec.kind in (INTEGER, CONTINUOUS)


def _encode(spec: ParameterSpec, value) -> float:
    if spec.scale == "log2":
        return math.log2(value)
    return float(value)


def _decode(spec: ParameterSpec, x: float):
    if spec.scale == "log2":
        if spec.kind == INTEGER:
            x = round(x)  # snap to the power-of-two grid
        value = 2.0 ** x
    else:
        value = x
    if spec.kind == INTEGER:
        value = int(round(value))
        return int(min(spec.upper, max(spec.lower, value)))
    return min(spec.upper, max(spec.lower, value))


def _bounds(spec: ParameterSpec) -> tuple[float, float]:
    if spec.scale == "log2":
        return math.log2(spec.lower), math.log2(spec.upper)
    return float(spec.lower), float(spec.upper)


def _sbx_pair(x1: float, x2: float, eta: float, u: float) -> tuple[float, float]:
    if u <= 0.5:
        beta = (2.0 * u) ** (1.0 / (eta + 1.0))
    else:
        beta = (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0))
    c1 = 0.5 * ((1.0 + beta) * x1 + (1.0 - beta) * x2)
    c2 = 0.5 * ((1.0 - beta) * x1 + (1.0 + beta) * x2)
    return c1, c2


def _poly_step(x: float, lo: float, hi: float, eta: float, u: float) -> float:
    # bounded polynomial mutation: the step shrinks near the violated bound,
    # so genes can settle onto a bound instead of bouncing off the clamp
    if hi == lo:
        return x
    span = hi - lo
    if u < 0.5:
        xy = 1.0 - (x - lo) / span
        val = 2.0 * u + (1.0 - 2.0 * u) * xy ** (eta + 1.0)
        delta = val ** (1.0 / (eta + 1.0)) - 1.0
    else:
        xy = 1.0 - (hi - x) / span
        val = 2.0 * (1.0 - u) + (2.0 * u - 1.0) * xy ** (eta + 1.0)
        delta = 1.0 - val ** (1.0 / (eta + 1.0))
    return min(hi, max(lo, x + delta * span))


def crossover(
    space: ParameterSpace, p1: Genotype, p2: Genotype, rng: random.Random, config: GAConfig
) -> tuple[Genotype, Genotype]:
    """SBX for range genes, uniform exchange for categorical/boolean genes."""
    if rng.random() >= config.crossover_probability:
        return list(p1), list(p2)
    c1: Genotype = []
    c2: Genotype = []
    for spec, a, b in zip(space.specs, p1, p2):
        if _is_real_gene(spec):
            if rng.random() >= 0.5:  # per-variable recombination coin
                c1.append(a)
                c2.append(b)
                continue
            u = rng.random()
            lo, hi = _bounds(spec)
            y1, y2 = _sbx_pair(_encode(spec, a), _encode(spec, b), config.sbx_eta, u)
            if rng.random() < 0.5:  # the gene exchange half of the published operator
                y1, y2 = y2, y1
            c1.append(_decode(spec, min(hi, max(lo, y1))))
            c2.append(_decode(spec, min(hi, max(lo, y2))))
        else:
            if rng.random() < 0.5:
                a, b = b, a
            c1.append(a)
            c2.append(b)
    return c1, c2


def mutate(space: ParameterSpace, genotype: Genotype, rng: random.Random, config: GAConfig) -> Genotype:
    """Polynomial mutation for range genes, uniform resample for the rest."""
    pm = config.resolved_mutation_probability(space)
    out: Genotype = []
    for spec, value in zip(space.specs, genotype):
        if rng.random() >= pm:
            out.append(value)
            continue
        if _is_real_gene(spec):
            lo, hi = _bounds(spec)
            u = rng.random()
            out.append(_decode(spec, _poly_step(_encode(spec, value), lo, hi, config.mutation_eta, u)))
        elif spec.kind == BOOLEAN:
            out.append(not value)
        else:
            others = [c for c in spec.choices if c != value]
            out.append(rng.choice(others) if others else value)
    return out


def random_genotype(space: ParameterSpace, rng: random.Random) -> Genotype:
    values: Genotype = []
    for spec in space.specs:
        if spec.kind == INTEGER:
            if spec.scale == "log2":
                lo, hi = _bounds(spec)
                values.append(_decode(spec, rng.randint(math.ceil(lo), math.floor(hi))))
            else:
                values.append(rng.randint(int(spec.lower), int(spec.upper)))
        elif spec.kind == CONTINUOUS:
            lo, hi = _bounds(spec)
            values.append(_decode(spec, rng.uniform(lo, hi)))
        elif spec.kind == BOOLEAN:
            values.append(rng.random() < 0.5)
        else:
            values.append(rng.choice(list(spec.choices)))
    return values


# -- environmental selection and the main loop -------------------------------


def environmental_selection(candidates: Sequence[Member], mu: int) -> list[Member]:
    """mu+lambda survivor selection: fill by front, truncate by crowding."""
    fronts = non_dominated_sort([m.objectives for m in candidates])
    survivors: list[Member] = []
    for rank, front in enumerate(fronts):
        distances = crowding_distance([candidates[i].objectives for i in front])
        for i, d in zip(front, distances):
            candidates[i].rank = rank
            candidates[i].crowding = d
        if len(survivors) + len(front) <= mu:
            survivors.extend(candidates[i] for i in front)
        else:
            order = sorted(range(len(front)), key=lambda k: -distances[k])
            take = mu - len(survivors)
            survivors.extend(candidates[front[k]] for k in order[:take])
        if len(survivors) == mu:
            break
    return survivors


EvaluateFn = Callable[[list[Genotype], int], list]  # (genotypes, generation) -> records


@dataclass
class RunResult:
    population: list[Member]
    archive: list
    completed_generations: int


@dataclass
class ResumeState:
    generation: int
    members: list[Member]


def checkpoint_path(directory: Path, generation: int) -> Path:
    return Path(directory) / f"gen_{generation:05d}.json"


def write_checkpoint(
    directory: Path, generation: int, config: GAConfig, members: Sequence[Member], archive_len: int
) -> Path:
    payload = {
        "generation": generation,
        "config": asdict(config),
        "rng": {"scheme": "derived", "root_seed": config.seed, "next_generation": generation + 1},
        "archive_records": archive_len,
        "population": [
            {"genotype": m.genotype, "objectives": list(m.objectives)} for m in members
        ],
    }
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = checkpoint_path(directory, generation)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    tmp.replace(path)
    return path


def load_checkpoint(path: Path) -> tuple[int, GAConfig, list[Member], int]:
    raw = json.loads(Path(path).read_text())
    config = GAConfig(**raw["config"])
    members = [
        Member(genotype=entry["genotype"], objectives=tuple(entry["objectives"]))
        for entry in raw["population"]
    ]
    return raw["generation"], config, members, raw["archive_records"]


def nsga2_run(
    space: ParameterSpace,
    evaluate_fn: EvaluateFn,
    config: GAConfig,
    *,
    checkpoint_dir: Path | None = None,
    wallclock_budget_seconds: float | None = None,
    stop_after_generation: int | None = None,
    resume_state: ResumeState | None = None,
    archive_offset: int = 0,
) -> RunResult:
    """Run the GA; generation 0 is the default genotype plus random fill.

    ``evaluate_fn`` receives (genotypes, generation) and returns one record
    per genotype, in order; records expose ``objective_vector``.  Failures
    must already carry penalty objectives - the loop never aborts on them.
    """
    start = time.monotonic()
    archive: list = []

    def out_of_budget() -> bool:
        return (
            wallclock_budget_seconds is not None
            and time.monotonic() - start >= wallclock_budget_seconds
        )

    def evaluate(genotypes: list[Genotype], generation: int) -> list[Member]:
        records = evaluate_fn(genotypes, generation)
        if len(records) != len(genotypes):
            raise RuntimeError("evaluator returned a different number of records")
        archive.extend(records)
        return [
            Member(genotype=g, objectives=tuple(r.objective_vector))
            for g, r in zip(genotypes, records)
        ]

    if resume_state is None:
        initial = [default_genotype(space)]
        for i in range(1, config.population_size):
            initial.append(random_genotype(space, derived_rng(config.seed, 0, "init", i)))
        population = environmental_selection(evaluate(initial, 0), config.population_size)
        generation = 0
        if checkpoint_dir is not None:
            write_checkpoint(
                checkpoint_dir, 0, config, population, archive_offset + len(archive)
            )
    else:
        population = environmental_selection(list(resume_state.members), config.population_size)
        generation = resume_state.generation

    for gen in range(generation + 1, config.generations + 1):
        if out_of_budget():
            break
        if stop_after_generation is not None and gen > stop_after_generation:
            break
        select_rng = derived_rng(config.seed, gen, "select")
        offspring: list[Genotype] = []
        for pair in range(config.population_size // 2):
            a = tournament_select(population, select_rng)
            b = tournament_select(population, select_rng)
            cross_rng = derived_rng(config.seed, gen, "cross", pair)
            c1, c2 = crossover(
                space, population[a].genotype, population[b].genotype, cross_rng, config
            )
            offspring.extend((c1, c2))
        offspring = [
            mutate(space, g, derived_rng(config.seed, gen, "mut", i), config)
            for i, g in enumerate(offspring)
        ]
        children = evaluate(offspring, gen)
        population = environmental_selection(population + children, config.population_size)
        generation = gen
        if checkpoint_dir is not None:
            write_checkpoint(
                checkpoint_dir, gen, config, population, archive_offset + len(archive)
            )

    return RunResult(population=population, archive=archive, completed_generations=generation)
