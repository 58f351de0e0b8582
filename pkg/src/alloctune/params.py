"""Tunable allocator parameter spaces and genotype <-> environment mapping.

A ParameterSpace is an ordered list of ParameterSpec entries; a genotype is
a plain list of values aligned position-by-position with the specs.  The
built-in glibc and tcmalloc spaces live in ``data/spaces.json`` so bounds
and defaults can be edited without touching code.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Sequence

INTEGER = "integer-range"
CONTINUOUS = "continuous-range"
CATEGORICAL = "categorical"
BOOLEAN = "boolean"

KINDS = (INTEGER, CONTINUOUS, CATEGORICAL, BOOLEAN)
SCALES = ("linear", "log2")
ALLOCATORS = ("glibc", "tcmalloc")


class SpaceError(ValueError):
    """A parameter space definition is malformed or unknown."""


class GenotypeError(ValueError):
    """A genotype violates its parameter space."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


@dataclass(frozen=True)
class Violation:
    position: int  # -1 for structural problems such as a length mismatch
    reason: str

    def __str__(self) -> str:
        if self.position < 0:
            return self.reason
        return f"position {self.position}: {self.reason}"


@dataclass(frozen=True)
class ParameterSpec:
    """One tunable knob: its kind, bounds and environment variable binding."""

    name: str
    env_var: str
    kind: str
    default: Any
    lower: float | None = None
    upper: float | None = None
    choices: tuple = ()
    scale: str = "linear"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SpaceError(f"{self.name}: unknown kind {self.kind!r}")
        if self.scale not in SCALES:
            raise SpaceError(f"{self.name}: unknown scale {self.scale!r}")
        if not self.env_var:
            raise SpaceError(f"{self.name}: empty env_var")
        if self.kind in (INTEGER, CONTINUOUS):
            if self.lower is None or self.upper is None:
                raise SpaceError(f"{self.name}: range kind needs lower and upper")
            if not self.lower <= self.default <= self.upper:
                raise SpaceError(
                    f"{self.name}: default {self.default} outside [{self.lower}, {self.upper}]"
                )
            if self.scale == "log2" and self.lower < 1:
                raise SpaceError(f"{self.name}: log2 scale requires lower >= 1")
        elif self.kind == CATEGORICAL:
            if not self.choices:
                raise SpaceError(f"{self.name}: categorical kind needs choices")
            if self.default not in self.choices:
                raise SpaceError(f"{self.name}: default {self.default!r} not in choices")
        elif self.kind == BOOLEAN:
            if not isinstance(self.default, bool):
                raise SpaceError(f"{self.name}: boolean default must be true/false")

    def is_range(self) -> bool:
        return self.kind in (INTEGER, CONTINUOUS)

    def check_value(self, value: Any) -> str | None:
        """Return a violation reason for ``value``, or None if it is valid."""
        if self.kind == BOOLEAN:
            if not isinstance(value, bool):
                return "not a boolean"
            return None
        if self.kind == CATEGORICAL:
            if isinstance(value, bool) or value not in self.choices:
                return f"not one of the {len(self.choices)} choices"
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return "not a number"
        if not math.isfinite(value):
            return "not finite"
        if self.kind == INTEGER and float(value) != int(value):
            return "non-integral"
        if value < self.lower:
            return "below lower bound"
        if value > self.upper:
            return "above upper bound"
        return None

    def render(self, value: Any) -> str:
        """Render a valid value as the environment-variable string."""
        if self.kind == BOOLEAN:
            return "1" if value else "0"
        if self.kind == CATEGORICAL:
            if isinstance(value, float) and not value.is_integer():
                return _render_decimal(value)
            if isinstance(value, (int, float)):
                return str(int(value))
            return str(value)
        if self.kind == INTEGER:
            return str(int(value))
        return _render_decimal(float(value))


def _render_decimal(value: float) -> str:
    # plain decimal, at most 6 fractional digits, no trailing-zero padding
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    return text if text else "0"


@dataclass(frozen=True)
class ParameterSpace:
    """An allocator's ordered tunable knobs; genotype position i is specs[i]."""

    allocator: str
    specs: tuple[ParameterSpec, ...]
    preload_library: str | None = None

    def __post_init__(self) -> None:
        if self.allocator not in ALLOCATORS:
            raise SpaceError(f"unknown allocator {self.allocator!r}")
        if not self.specs:
            raise SpaceError("space has no specs")
        seen: set[str] = set()
        for spec in self.specs:
            if spec.env_var in seen:
                raise SpaceError(f"duplicate env_var {spec.env_var}")
            seen.add(spec.env_var)

    def __len__(self) -> int:
        return len(self.specs)

    def spec_by_name(self, name: str) -> ParameterSpec:
        for spec in self.specs:
            if spec.name == name:
                return spec
        raise KeyError(name)


Genotype = list  # values aligned with ParameterSpace.specs

_SPEC_FIELDS = {"name", "env_var", "kind", "default", "lower", "upper", "choices", "scale"}


def _spec_from_dict(raw: dict) -> ParameterSpec:
    unknown = set(raw) - _SPEC_FIELDS
    if unknown:
        raise SpaceError(f"unknown spec fields: {sorted(unknown)}")
    try:
        return ParameterSpec(
            name=raw["name"],
            env_var=raw["env_var"],
            kind=raw["kind"],
            default=raw["default"],
            lower=raw.get("lower"),
            upper=raw.get("upper"),
            choices=tuple(raw.get("choices", ())),
            scale=raw.get("scale", "linear"),
        )
    except KeyError as exc:
        raise SpaceError(f"spec missing required field {exc}") from None


def _space_from_dict(raw: dict) -> ParameterSpace:
    try:
        return ParameterSpace(
            allocator=raw["allocator"],
            specs=tuple(_spec_from_dict(s) for s in raw["specs"]),
            preload_library=raw.get("preload_library"),
        )
    except KeyError as exc:
        raise SpaceError(f"space missing required field {exc}") from None


@lru_cache(maxsize=None)
def _builtin_table() -> dict:
    text = resources.files("alloctune").joinpath("data/spaces.json").read_text()
    return json.loads(text)


def builtin_space(allocator: str) -> ParameterSpace:
    """Return the built-in space for ``glibc`` or ``tcmalloc``."""
    table = _builtin_table()
    if allocator not in table:
        raise SpaceError(f"unknown allocator {allocator!r}; known: {sorted(table)}")
    entry = dict(table[allocator])
    entry["allocator"] = allocator
    space = _space_from_dict(entry)
    if allocator == "tcmalloc" and not space.preload_library:
        raise SpaceError("tcmalloc space must name a preload library")
    return space


def load_space_file(path) -> ParameterSpace:
    """Load a custom space from a JSON file with the ParameterSpec fields."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpaceError(f"{path}: {exc}") from None
    return _space_from_dict(raw)


def default_genotype(space: ParameterSpace) -> Genotype:
    return [spec.default for spec in space.specs]


def validate(space: ParameterSpace, genotype: Sequence) -> list[Violation]:
    """Return all violations of ``genotype`` against ``space`` (empty list = ok)."""
    if len(genotype) != len(space.specs):
        return [
            Violation(-1, f"genotype length {len(genotype)} != spec count {len(space.specs)}")
        ]
    violations = []
    for i, (spec, value) in enumerate(zip(space.specs, genotype)):
        reason = spec.check_value(value)
        if reason is not None:
            violations.append(Violation(i, reason))
    return violations


def to_env(space: ParameterSpace, genotype: Sequence) -> dict[str, str]:
    """Render a valid genotype as its environment-variable map."""
    violations = validate(space, genotype)
    if violations:
        raise GenotypeError(violations)
    return {spec.env_var: spec.render(value) for spec, value in zip(space.specs, genotype)}
