import itertools
import json
import math
import random

import pytest

from alloctune.nsga2 import (
    GAConfig,
    Member,
    ResumeState,
    crossover,
    crowding_distance,
    derived_rng,
    dominates,
    environmental_selection,
    load_checkpoint,
    mutate,
    non_dominated_sort,
    nsga2_run,
    random_genotype,
    tournament_select,
    write_checkpoint,
)
from alloctune.params import ParameterSpace, ParameterSpec, validate


def brute_force_fronts(points):
    """Independent oracle: peel non-dominated layers by pairwise dominance."""
    remaining = set(range(len(points)))
    fronts = []
    while remaining:
        front = sorted(
            i
            for i in remaining
            if not any(dominates(points[j], points[i]) for j in remaining if j != i)
        )
        fronts.append(front)
        remaining -= set(front)
    return fronts


def continuous_space(n=2, lower=0.0, upper=1.0):
    return ParameterSpace(
        allocator="glibc",
        specs=tuple(
            ParameterSpec(
                name=f"x{i}", env_var=f"X{i:02d}", kind="continuous-range",
                lower=lower, upper=upper, default=(lower + upper) / 2,
            )
            for i in range(n)
        ),
    )


MIXED_SPACE = ParameterSpace(
    allocator="glibc",
    specs=(
        ParameterSpec(name="bytes", env_var="BYTES", kind="integer-range",
                      lower=4096, upper=1048576, default=65536, scale="log2"),
        ParameterSpec(name="count", env_var="COUNT", kind="integer-range",
                      lower=0, upper=100, default=10),
        ParameterSpec(name="rate", env_var="RATE", kind="continuous-range",
                      lower=0.0, upper=10.0, default=1.0),
        ParameterSpec(name="mode", env_var="MODE", kind="categorical",
                      choices=(0, 512, 2048), default=0),
        ParameterSpec(name="flag", env_var="FLAG", kind="boolean", default=False),
    ),
)


class ScriptedRandom:
    """random.Random stand-in replaying a fixed list of unit draws."""

    def __init__(self, values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)

    def randrange(self, n):
        return int(self.random() * n)

    def randint(self, a, b):
        return a + int(self.random() * (b - a + 1))

    def choice(self, seq):
        return seq[int(self.random() * len(seq))]

    def uniform(self, a, b):
        return a + self.random() * (b - a)


class TestDominates:
    def test_strictly_better(self):
        assert dominates((1, 1), (2, 2))

    def test_incomparable(self):
        assert not dominates((1, 2), (2, 1))
        assert not dominates((2, 1), (1, 2))

    def test_equal_is_non_dominating(self):
        assert not dominates((1, 1), (1, 1))

    def test_weak_domination(self):
        assert dominates((1, 2), (1, 3))


class TestNonDominatedSort:
    def test_worked_example(self):
        points = [(1, 5), (2, 3), (3, 4), (4, 1)]
        assert non_dominated_sort(points) == [[0, 1, 3], [2]]

    def test_identical_points_single_front(self):
        points = [(2, 2)] * 5
        assert non_dominated_sort(points) == [[0, 1, 2, 3, 4]]

    def test_chain_gives_singletons(self):
        points = [(1, 1), (2, 2), (3, 3)]
        assert non_dominated_sort(points) == [[0], [1], [2]]

    def test_matches_brute_force_oracle(self):
        rng = random.Random(99)
        for _ in range(30):
            n = rng.randint(1, 120)
            points = [(rng.randint(0, 30), rng.randint(0, 30)) for _ in range(n)]
            fast = [sorted(front) for front in non_dominated_sort(points)]
            assert fast == brute_force_fronts(points)


class TestCrowdingDistance:
    def test_worked_example(self):
        distances = crowding_distance([(1, 5), (2, 3), (4, 1)])
        assert distances[0] == math.inf and distances[2] == math.inf
        assert distances[1] == pytest.approx(2.0)

    def test_two_points_both_infinite(self):
        assert crowding_distance([(1, 2), (3, 4)]) == [math.inf, math.inf]

    def test_identical_values_interior_zero(self):
        distances = crowding_distance([(5, 5), (5, 5), (5, 5)])
        assert distances[1] == 0.0  # zero range contributes nothing


class TestTournament:
    def test_lower_rank_wins(self):
        members = [
            Member([0], (1, 1), rank=0, crowding=0.1),
            Member([1], (2, 2), rank=1, crowding=9.9),
        ]
        rng = ScriptedRandom([0.0, 0.9])  # picks indices 0 and 1
        assert tournament_select(members, rng) == 0

    def test_equal_rank_larger_crowding_wins(self):
        members = [
            Member([0], (1, 2), rank=0, crowding=math.inf),
            Member([1], (2, 1), rank=0, crowding=1.0),
        ]
        rng = ScriptedRandom([0.0, 0.9])
        assert tournament_select(members, rng) == 0

    def test_full_tie_uses_rng(self):
        members = [
            Member([0], (1, 1), rank=0, crowding=1.0),
            Member([1], (1, 1), rank=0, crowding=1.0),
        ]
        assert tournament_select(members, ScriptedRandom([0.0, 0.9, 0.2])) == 0
        assert tournament_select(members, ScriptedRandom([0.0, 0.9, 0.8])) == 1


class TestCrossover:
    def test_sbx_half_draw_children_equal_parents(self):
        space = continuous_space(1)
        config = GAConfig(crossover_probability=1.0)
        # draws: pair gate, per-gene coin, u, swap coin
        rng = ScriptedRandom([0.0, 0.0, 0.5, 0.9])
        c1, c2 = crossover(space, [0.2], [0.8], rng, config)
        assert c1 == [pytest.approx(0.2)] and c2 == [pytest.approx(0.8)]

    def test_sbx_half_draw_with_swap_exchanges_genes(self):
        space = continuous_space(1)
        config = GAConfig(crossover_probability=1.0)
        rng = ScriptedRandom([0.0, 0.0, 0.5, 0.2])
        c1, c2 = crossover(space, [0.2], [0.8], rng, config)
        assert c1 == [pytest.approx(0.8)] and c2 == [pytest.approx(0.2)]

    def test_no_crossover_copies_parents(self):
        space = continuous_space(3)
        config = GAConfig(crossover_probability=0.0)
        rng = random.Random(5)
        p1 = [0.1, 0.2, 0.3]
        p2 = [0.7, 0.8, 0.9]
        assert crossover(space, p1, p2, rng, config) == (p1, p2)

    def test_equal_categorical_parents_inherit_value(self):
        config = GAConfig(crossover_probability=1.0)
        rng = random.Random(3)
        for _ in range(50):
            c1, c2 = crossover(MIXED_SPACE, [4096, 1, 0.5, 2048, True],
                               [4096, 1, 0.5, 2048, True], rng, config)
            assert c1[3] == c2[3] == 2048
            assert c1[4] is True and c2[4] is True

    def test_children_always_valid(self):
        rng = random.Random(11)
        config = GAConfig()
        for _ in range(2000):
            p1 = random_genotype(MIXED_SPACE, rng)
            p2 = random_genotype(MIXED_SPACE, rng)
            c1, c2 = crossover(MIXED_SPACE, p1, p2, rng, config)
            assert validate(MIXED_SPACE, c1) == []
            assert validate(MIXED_SPACE, c2) == []


class TestMutate:
    def test_half_draw_is_identity(self):
        space = continuous_space(1)
        config = GAConfig(mutation_probability=1.0)
        rng = ScriptedRandom([0.0, 0.5])  # gene gate, then u = 0.5 -> delta 0
        assert mutate(space, [0.4], rng, config) == [pytest.approx(0.4)]

    def test_zero_probability_is_identity(self):
        config = GAConfig(mutation_probability=0.0)
        rng = random.Random(1)
        genotype = [65536, 10, 1.0, 0, False]
        assert mutate(MIXED_SPACE, genotype, rng, config) == genotype

    def test_boolean_flips(self):
        space = ParameterSpace(
            allocator="glibc",
            specs=(ParameterSpec(name="b", env_var="B", kind="boolean", default=False),),
        )
        config = GAConfig(mutation_probability=1.0)
        assert mutate(space, [False], ScriptedRandom([0.0]), config) == [True]

    def test_categorical_resamples_among_others(self):
        space = ParameterSpace(
            allocator="glibc",
            specs=(ParameterSpec(name="c", env_var="C", kind="categorical",
                                 choices=(1, 2, 3), default=1),),
        )
        config = GAConfig(mutation_probability=1.0)
        rng = random.Random(0)
        seen = {mutate(space, [2], rng, config)[0] for _ in range(100)}
        assert seen == {1, 3}

    def test_log2_gene_stays_power_of_two(self):
        config = GAConfig(mutation_probability=1.0)
        rng = random.Random(7)
        for _ in range(500):
            (value, *_rest) = mutate(MIXED_SPACE, [65536, 10, 1.0, 0, False], rng, config)
            assert 4096 <= value <= 1048576
            assert math.log2(value).is_integer()

    def test_output_always_valid(self):
        rng = random.Random(13)
        config = GAConfig()
        for _ in range(2000):
            genotype = random_genotype(MIXED_SPACE, rng)
            mutated = mutate(MIXED_SPACE, genotype, rng, config)
            assert validate(MIXED_SPACE, mutated) == []


def test_operator_closure_bulk():
    # >= 10^4 random applications across all operators stay inside the space
    rng = random.Random(21)
    config = GAConfig()
    genotypes = [random_genotype(MIXED_SPACE, rng) for _ in range(200)]
    for _ in range(5000):
        a, b = rng.choice(genotypes), rng.choice(genotypes)
        c1, c2 = crossover(MIXED_SPACE, a, b, rng, config)
        m = mutate(MIXED_SPACE, rng.choice((c1, c2)), rng, config)
        assert validate(MIXED_SPACE, c1) == []
        assert validate(MIXED_SPACE, c2) == []
        assert validate(MIXED_SPACE, m) == []
        genotypes[rng.randrange(len(genotypes))] = m


class TestEnvironmentalSelection:
    def test_never_discards_a_dominating_solution(self):
        rng = random.Random(31)
        for _ in range(40):
            n = rng.randint(8, 40)
            members = [
                Member([i], (rng.randint(0, 10), rng.randint(0, 10))) for i in range(n)
            ]
            mu = rng.randrange(4, n + 1)
            kept = environmental_selection(list(members), mu)
            kept_ids = {m.genotype[0] for m in kept}
            for dropped in members:
                if dropped.genotype[0] in kept_ids:
                    continue
                for survivor in kept:
                    assert not dominates(dropped.objectives, survivor.objectives)

    def test_population_size_respected(self):
        members = [Member([i], (i, -i)) for i in range(10)]
        assert len(environmental_selection(members, 6)) == 6


class FakeRecord:
    def __init__(self, genotype, vector):
        self.genotype = genotype
        self.objective_vector = vector
        self.status = "ok"


def sphere_evaluator(genotypes, generation):
    return [
        FakeRecord(g, (sum(x * x for x in g), sum((x - 1.0) ** 2 for x in g)))
        for g in genotypes
    ]


class TestRunLoop:
    def test_archive_counting(self):
        space = continuous_space(3)
        result = nsga2_run(
            space, sphere_evaluator, GAConfig(population_size=4, generations=1, seed=1)
        )
        assert len(result.archive) == 8  # 4 initial + 4 offspring

    def test_generation_zero_contains_default(self):
        space = continuous_space(3)
        result = nsga2_run(
            space, sphere_evaluator, GAConfig(population_size=4, generations=1, seed=1)
        )
        assert result.archive[0].genotype == [0.5, 0.5, 0.5]

    def test_deterministic_archives(self):
        space = continuous_space(4)
        config = GAConfig(population_size=8, generations=12, seed=77)
        a = nsga2_run(space, sphere_evaluator, config)
        b = nsga2_run(space, sphere_evaluator, config)
        assert [r.genotype for r in a.archive] == [r.genotype for r in b.archive]
        assert [r.objective_vector for r in a.archive] == [
            r.objective_vector for r in b.archive
        ]

    def test_archive_front_hypervolume_non_decreasing(self):
        from alloctune.pareto import extract_front, hypervolume_2d

        space = continuous_space(4)
        config = GAConfig(population_size=8, generations=15, seed=5)
        result = nsga2_run(space, sphere_evaluator, config)
        reference = (20.0, 20.0)
        previous = -1.0
        for generation_end in range(8, len(result.archive) + 1, 8):
            front = extract_front(result.archive[:generation_end])
            usable = [v for v in front.vectors if v[0] < 20 and v[1] < 20]
            value = hypervolume_2d(usable, reference) if usable else 0.0
            assert value >= previous - 1e-12
            previous = value

    def test_resume_equals_uninterrupted(self, tmp_path):
        space = continuous_space(4)
        config = GAConfig(population_size=8, generations=10, seed=9)
        full = nsga2_run(space, sphere_evaluator, config, checkpoint_dir=tmp_path / "a")

        part = nsga2_run(
            space, sphere_evaluator, config,
            checkpoint_dir=tmp_path / "b", stop_after_generation=4,
        )
        assert part.completed_generations == 4
        generation, ck_config, members, archive_len = load_checkpoint(
            tmp_path / "b" / "gen_00004.json"
        )
        assert ck_config == config and archive_len == len(part.archive)
        resumed = nsga2_run(
            space, sphere_evaluator, config,
            checkpoint_dir=tmp_path / "b",
            resume_state=ResumeState(generation=generation, members=members),
            archive_offset=archive_len,
        )
        combined = [r.genotype for r in part.archive] + [r.genotype for r in resumed.archive]
        assert combined == [r.genotype for r in full.archive]
        assert sorted(m.genotype for m in resumed.population) == sorted(
            m.genotype for m in full.population
        )

    def test_checkpoint_roundtrip(self, tmp_path):
        config = GAConfig(population_size=4, generations=2, seed=3)
        members = [Member([1.0, 2.0], (3.0, 4.0), rank=0, crowding=math.inf)]
        write_checkpoint(tmp_path, 7, config, members, archive_len=42)
        generation, loaded_config, loaded_members, archive_len = load_checkpoint(
            tmp_path / "gen_00007.json"
        )
        assert generation == 7
        assert loaded_config == config
        assert archive_len == 42
        assert loaded_members[0].genotype == [1.0, 2.0]
        assert loaded_members[0].objectives == (3.0, 4.0)

    def test_derived_rng_stable(self):
        assert derived_rng(1, 2, "mut", 3).random() == derived_rng(1, 2, "mut", 3).random()
        assert derived_rng(1, 2, "mut", 3).random() != derived_rng(1, 2, "mut", 4).random()
