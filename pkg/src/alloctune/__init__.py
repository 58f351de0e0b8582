"""Search-based auto-tuner for memory allocator parameters.

Explores glibc malloc / TCMalloc environment tunables with a
multi-objective genetic algorithm over a trace-seeded synthetic heap
workload, then validates winning configurations against real commands.
"""

__version__ = "0.1.0"

from alloctune.params import (
    ParameterSpace,
    ParameterSpec,
    builtin_space,
    default_genotype,
    to_env,
    validate,
)
from alloctune.workload import WorkloadProfile, extract_profile, parse_trace, synth_schedule

__all__ = [
    "ParameterSpace",
    "ParameterSpec",
    "WorkloadProfile",
    "builtin_space",
    "default_genotype",
    "extract_profile",
    "parse_trace",
    "synth_schedule",
    "to_env",
    "validate",
]
