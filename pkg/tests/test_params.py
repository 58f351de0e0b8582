import ctypes.util
import math
import random
import subprocess

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alloctune.params import (
    BOOLEAN,
    CATEGORICAL,
    CONTINUOUS,
    INTEGER,
    GenotypeError,
    ParameterSpace,
    ParameterSpec,
    SpaceError,
    builtin_space,
    default_genotype,
    load_space_file,
    to_env,
    validate,
)
from tests.conftest import requires_compiler

GLIBC_DEFAULT_ENV = {
    "MALLOC_MMAP_THRESHOLD_": "131072",
    "MALLOC_TRIM_THRESHOLD_": "131072",
    "MALLOC_TOP_PAD_": "131072",
    "MALLOC_MMAP_MAX_": "65536",
    "MALLOC_ARENA_MAX": "8",
    "MALLOC_ARENA_TEST": "8",
}


def one_spec_space(**overrides):
    fields = dict(name="knob", env_var="KNOB", kind=INTEGER, lower=1, upper=9, default=4)
    fields.update(overrides)
    return ParameterSpace(allocator="glibc", specs=(ParameterSpec(**fields),))


class TestBuiltinSpaces:
    def test_glibc_required_env_vars(self):
        env_vars = {s.env_var for s in builtin_space("glibc").specs}
        assert {
            "MALLOC_MMAP_THRESHOLD_",
            "MALLOC_TRIM_THRESHOLD_",
            "MALLOC_TOP_PAD_",
            "MALLOC_MMAP_MAX_",
            "MALLOC_ARENA_MAX",
            "MALLOC_ARENA_TEST",
        } <= env_vars

    def test_tcmalloc_required_specs(self):
        space = builtin_space("tcmalloc")
        by_var = {s.env_var: s for s in space.specs}
        assert by_var["TCMALLOC_RELEASE_RATE"].kind == CONTINUOUS
        cache = by_var["TCMALLOC_MAX_TOTAL_THREAD_CACHE_BYTES"]
        assert cache.kind == INTEGER and cache.scale == "log2"
        limit = by_var["TCMALLOC_HEAP_LIMIT_MB"]
        assert limit.kind == CATEGORICAL and 0 in limit.choices  # 0 = unlimited sentinel
        assert by_var["TCMALLOC_AGGRESSIVE_DECOMMIT"].kind == BOOLEAN

    def test_preload_presence(self):
        assert builtin_space("glibc").preload_library is None
        assert builtin_space("tcmalloc").preload_library

    def test_unknown_allocator(self):
        with pytest.raises(SpaceError):
            builtin_space("jemalloc")

    def test_env_vars_distinct(self):
        for name in ("glibc", "tcmalloc"):
            env_vars = [s.env_var for s in builtin_space(name).specs]
            assert len(env_vars) == len(set(env_vars))

    def test_mixed_kinds_across_spaces(self):
        kinds = {s.kind for name in ("glibc", "tcmalloc") for s in builtin_space(name).specs}
        assert INTEGER in kinds and CONTINUOUS in kinds

    def test_glibc_defaults_match_documented_values(self):
        space = builtin_space("glibc")
        assert to_env(space, default_genotype(space)) == GLIBC_DEFAULT_ENV

    def test_log2_specs_have_power_of_two_bounds(self):
        for name in ("glibc", "tcmalloc"):
            for spec in builtin_space(name).specs:
                if spec.scale == "log2":
                    assert spec.lower >= 1
                    assert math.log2(spec.lower).is_integer()
                    assert math.log2(spec.upper).is_integer()


class TestSpecValidation:
    def test_default_outside_bounds_rejected(self):
        with pytest.raises(SpaceError):
            ParameterSpec(name="x", env_var="X", kind=INTEGER, lower=0, upper=4, default=9)

    def test_categorical_default_must_be_choice(self):
        with pytest.raises(SpaceError):
            ParameterSpec(name="x", env_var="X", kind=CATEGORICAL, choices=(1, 2), default=3)

    def test_log2_lower_bound(self):
        with pytest.raises(SpaceError):
            ParameterSpec(
                name="x", env_var="X", kind=INTEGER, lower=0, upper=8, default=4, scale="log2"
            )

    def test_duplicate_env_var_rejected(self):
        spec = ParameterSpec(name="a", env_var="X", kind=INTEGER, lower=0, upper=1, default=0)
        spec2 = ParameterSpec(name="b", env_var="X", kind=INTEGER, lower=0, upper=1, default=0)
        with pytest.raises(SpaceError):
            ParameterSpace(allocator="glibc", specs=(spec, spec2))


class TestGenotypeOps:
    def test_default_genotype_validates(self):
        for name in ("glibc", "tcmalloc"):
            space = builtin_space(name)
            assert validate(space, default_genotype(space)) == []

    def test_default_genotype_one_spec(self):
        assert default_genotype(one_spec_space()) == [4]

    def test_validate_in_bounds(self):
        space = one_spec_space(lower=0, upper=10, default=5)
        assert validate(space, [5]) == []

    def test_validate_above_upper(self):
        space = one_spec_space(lower=0, upper=10, default=5)
        (violation,) = validate(space, [11])
        assert violation.position == 0
        assert "above upper" in violation.reason

    def test_validate_non_integral(self):
        space = one_spec_space(lower=0, upper=10, default=5)
        (violation,) = validate(space, [2.5])
        assert violation.position == 0
        assert "non-integral" in violation.reason

    def test_validate_length_mismatch_is_violation(self):
        space = one_spec_space()
        violations = validate(space, [1, 2])
        assert violations and violations[0].position == -1

    def test_to_env_mmap_threshold_rendering(self):
        space = builtin_space("glibc")
        genotype = default_genotype(space)
        index = next(i for i, s in enumerate(space.specs) if s.env_var == "MALLOC_MMAP_THRESHOLD_")
        genotype[index] = 65536
        assert to_env(space, genotype)["MALLOC_MMAP_THRESHOLD_"] == "65536"

    def test_to_env_release_rate_no_trailing_zeros(self):
        space = builtin_space("tcmalloc")
        genotype = default_genotype(space)
        index = next(i for i, s in enumerate(space.specs) if s.env_var == "TCMALLOC_RELEASE_RATE")
        genotype[index] = 5.0
        assert to_env(space, genotype)["TCMALLOC_RELEASE_RATE"] == "5"
        genotype[index] = 0.1234567
        assert to_env(space, genotype)["TCMALLOC_RELEASE_RATE"] == "0.123457"

    def test_to_env_rejects_invalid(self):
        space = one_spec_space(lower=0, upper=10, default=5)
        with pytest.raises(GenotypeError):
            to_env(space, [99])

    def test_to_env_deterministic(self):
        space = builtin_space("tcmalloc")
        g = default_genotype(space)
        assert to_env(space, g) == to_env(space, g)


def _random_valid_genotype(space, rng):
    values = []
    for spec in space.specs:
        if spec.kind == INTEGER:
            values.append(rng.randint(int(spec.lower), int(spec.upper)))
        elif spec.kind == CONTINUOUS:
            values.append(rng.uniform(spec.lower, spec.upper))
        elif spec.kind == BOOLEAN:
            values.append(rng.random() < 0.5)
        else:
            values.append(rng.choice(list(spec.choices)))
    return values


@pytest.mark.parametrize("allocator", ["glibc", "tcmalloc"])
def test_random_genotypes_roundtrip_through_env(allocator):
    # >= 1000 samples per space: validate ok and env strings parse back
    space = builtin_space(allocator)
    rng = random.Random(1234)
    for _ in range(1000):
        genotype = _random_valid_genotype(space, rng)
        assert validate(space, genotype) == []
        env = to_env(space, genotype)
        for spec, value in zip(space.specs, genotype):
            rendered = env[spec.env_var]
            if spec.kind == BOOLEAN:
                assert rendered == ("1" if value else "0")
            elif spec.kind == CONTINUOUS:
                assert math.isclose(float(rendered), value, abs_tol=5e-7)
            else:
                assert int(rendered) == int(value)


def test_custom_space_file_roundtrip(tmp_path):
    import json

    payload = {
        "allocator": "glibc",
        "specs": [
            {"name": "alpha", "env_var": "ALPHA", "kind": "integer-range",
             "lower": 0, "upper": 9, "default": 3},
            {"name": "beta", "env_var": "BETA", "kind": "continuous-range",
             "lower": 0.0, "upper": 1.0, "default": 0.5},
        ],
    }
    path = tmp_path / "space.json"
    path.write_text(json.dumps(payload))
    space = load_space_file(path)
    assert [s.name for s in space.specs] == ["alpha", "beta"]
    assert default_genotype(space) == [3, 0.5]


MMAP_PROBE = r"""
#include <malloc.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
int main(void)
{
    char * volatile p = malloc(262144); /* 256 KiB */
    memset((void *)p, 1, 262144);
    struct mallinfo2 info = mallinfo2();
    printf("%s\n", info.hblks > 0 ? "mmap" : "sbrk");
    free(p);
    return 0;
}
"""


@requires_compiler
def test_mmap_threshold_env_var_is_honored(tmp_path):
    # the documented variable must actually flip mmap behavior across the threshold
    src = tmp_path / "probe.c"
    src.write_text(MMAP_PROBE)
    binary = tmp_path / "probe"
    subprocess.run(["cc", "-O0", "-o", str(binary), str(src)], check=True)

    def run(threshold):
        out = subprocess.run(
            [str(binary)],
            env={"PATH": "/usr/bin:/bin", "MALLOC_MMAP_THRESHOLD_": str(threshold)},
            capture_output=True,
            text=True,
            check=True,
        )
        return out.stdout.strip()

    assert run(65536) == "mmap"  # 256 KiB allocation above a 64 KiB threshold
    assert run(1048576) == "sbrk"  # below a 1 MiB threshold


def test_tcmalloc_release_rate_env_var_is_honored(driver_binary, tmp_path):
    library = ctypes.util.find_library("tcmalloc")
    if library is None:
        pytest.skip("tcmalloc runtime not installed")
    from alloctune.workload import WorkloadProfile

    profile = WorkloadProfile(
        total_ops=200, size_histogram=((1024, 1.0),), free_probability=0.4, max_live_blocks=50
    )
    path = tmp_path / "p.txt"
    profile.save(path)
    env = {"PATH": "/usr/bin:/bin", "LD_PRELOAD": library, "TCMALLOC_RELEASE_RATE": "5"}
    proc = subprocess.run(
        [str(driver_binary), str(path), "--seed", "1"], env=env, capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("ops=")
