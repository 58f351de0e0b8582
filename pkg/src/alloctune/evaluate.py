"""Candidate evaluation: environment injection, harness runs, caching.

One evaluation runs the replay driver twice per repetition - once under
the heap profiler for peak/average/free-rate and once plain for wallclock
(optionally plus the instruction counter) - with the candidate's
environment map merged over a scrubbed base environment.  Per-metric
medians aggregate the repetitions.  Failures never abort a batch; they
become penalty objectives that dominate everything feasible seen so far.

Harness command templates are plain strings with {driver}, {profile},
{seed} and {massif_out} / {perf_out} placeholders, substituted bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shlex
import signal
import statistics
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from alloctune import driver as driver_mod
from alloctune import metrics
from alloctune.metrics import MeasuredObjectives
from alloctune.params import Genotype, ParameterSpace, to_env, validate

log = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_TIMEOUT = "timeout"
STATUS_CRASH = "crash"
STATUS_INFEASIBLE = "infeasible"

# Allocator-relevant variables are scrubbed from the base environment so the
# tuner's own environment can never leak into a measurement.
SCRUB_PREFIXES = (
    "MALLOC_",
    "TCMALLOC_",
    "PERFTOOLS_",
    "HEAPPROFILE",
    "HEAP_PROFILE",
    "LD_PRELOAD",
    "GLIBC_TUNABLES",
)

DEFAULT_HEAP_TEMPLATE = (
    "valgrind --tool=massif --massif-out-file={massif_out} "
    "--time-unit=i --max-snapshots=200 -- {driver} {profile} --seed {seed}"
)
DEFAULT_PERF_TEMPLATE = "perf stat -x , -e instructions -o {perf_out} -- {driver} {profile} --seed {seed}"

# Penalty floor used before any feasible measurement exists in a campaign.
DEFAULT_PENALTY = (1e18, 1e12)


@dataclass
class EvaluationSettings:
    repetitions: int = 3
    timeout_seconds: float = 300.0
    parallelism: int = 1
    seed_policy: str = "fixed"  # or "per-repetition"
    measure_instructions: bool = False
    base_seed: int = 1
    touch: bool = True
    page_size: int = 4096
    heap_template: str = DEFAULT_HEAP_TEMPLATE
    time_template: str | None = None  # None: plain run timed by a monotonic clock
    perf_template: str = DEFAULT_PERF_TEMPLATE

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be > 0")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.seed_policy not in ("fixed", "per-repetition"):
            raise ValueError(f"unknown seed_policy {self.seed_policy!r}")

    def to_dict(self) -> dict:
        return {
            "repetitions": self.repetitions,
            "timeout_seconds": self.timeout_seconds,
            "parallelism": self.parallelism,
            "seed_policy": self.seed_policy,
            "measure_instructions": self.measure_instructions,
            "base_seed": self.base_seed,
            "touch": self.touch,
            "page_size": self.page_size,
            "heap_template": self.heap_template,
            "time_template": self.time_template,
            "perf_template": self.perf_template,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvaluationSettings":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in raw.items() if k in known})


@dataclass
class EvaluationRecord:
    genotype: Genotype
    env: dict[str, str]
    objectives: MeasuredObjectives
    per_rep: list[MeasuredObjectives]
    status: str
    candidate_hash: str
    eval_wallclock_seconds: float
    generation: int | None = None
    detail: str = ""

    @property
    def objective_vector(self) -> tuple:
        return (self.objectives.peak_heap_bytes, self.objectives.wallclock_seconds)

    def to_dict(self) -> dict:
        return {
            "genotype": self.genotype,
            "env": self.env,
            "objectives": self.objectives.to_dict(),
            "per_rep": [m.to_dict() for m in self.per_rep],
            "status": self.status,
            "candidate_hash": self.candidate_hash,
            "eval_wallclock_seconds": self.eval_wallclock_seconds,
            "generation": self.generation,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvaluationRecord":
        return cls(
            genotype=raw["genotype"],
            env=raw["env"],
            objectives=MeasuredObjectives.from_dict(raw["objectives"]),
            per_rep=[MeasuredObjectives.from_dict(m) for m in raw["per_rep"]],
            status=raw["status"],
            candidate_hash=raw["candidate_hash"],
            eval_wallclock_seconds=raw["eval_wallclock_seconds"],
            generation=raw.get("generation"),
            detail=raw.get("detail", ""),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def scrubbed_environment(base: dict[str, str] | None = None) -> dict[str, str]:
    source = os.environ if base is None else base
    return {k: v for k, v in source.items() if not k.startswith(SCRUB_PREFIXES)}


def candidate_hash(
    genotype: Genotype, env: dict[str, str], workload_id: str, settings: EvaluationSettings
) -> str:
    payload = json.dumps(
        {
            "genotype": list(genotype),
            "env": dict(sorted(env.items())),
            "workload": workload_id,
            "seed_policy": settings.seed_policy,
            "base_seed": settings.base_seed,
            "repetitions": settings.repetitions,
            "touch": settings.touch,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def _median_objectives(per_rep: Sequence[MeasuredObjectives]) -> MeasuredObjectives:
    instructions = [m.instructions for m in per_rep]
    return MeasuredObjectives(
        peak_heap_bytes=statistics.median(m.peak_heap_bytes for m in per_rep),
        avg_heap_bytes=statistics.median(m.avg_heap_bytes for m in per_rep),
        free_rate=statistics.median(m.free_rate for m in per_rep),
        wallclock_seconds=statistics.median(m.wallclock_seconds for m in per_rep),
        instructions=(
            int(statistics.median(instructions)) if all(i is not None for i in instructions) else None
        ),
    )


class EvaluationFailure(Exception):
    def __init__(self, status: str, detail: str):
        self.status = status
        self.detail = detail
        super().__init__(detail)


def _run_command(
    argv: list[str], env: dict[str, str], timeout: float, cwd: str | None = None
) -> subprocess.CompletedProcess:
    """Run in its own session so a timeout can terminate the whole tree."""
    proc = subprocess.Popen(
        argv,
        env=env,
        cwd=cwd,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        start_new_session=True,
    )
    try:
        stdout, stderr = proc.communicate(timeout=timeout)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        proc.wait()
        raise EvaluationFailure(STATUS_TIMEOUT, f"timed out after {timeout}s: {argv[0]}") from None
    return subprocess.CompletedProcess(argv, proc.returncode, stdout, stderr)


class SubprocessEvaluator:
    """Runs real candidates through the replay driver and the harnesses."""

    def __init__(
        self,
        space: ParameterSpace,
        profile_path,
        settings: EvaluationSettings,
        driver_path: Path | None = None,
        work_dir: Path | None = None,
    ):
        self.space = space
        self.profile_path = Path(profile_path)
        self.settings = settings
        self.driver_path = Path(driver_path) if driver_path else driver_mod.ensure_driver()
        self.work_dir = Path(work_dir) if work_dir else Path(tempfile.mkdtemp(prefix="alloctune-"))
        self.work_dir.mkdir(parents=True, exist_ok=True)
        self.base_env = scrubbed_environment()
        self.workload_id = hashlib.sha256(self.profile_path.read_bytes()).hexdigest()

    def candidate_environment(self, env: dict[str, str]) -> dict[str, str]:
        merged = dict(self.base_env)
        merged.update(env)
        if self.space.preload_library:
            merged["LD_PRELOAD"] = self.space.preload_library
        return merged

    def _format(self, template: str, seed: int, **extra) -> list[str]:
        text = template.format(
            driver=str(self.driver_path),
            profile=str(self.profile_path),
            seed=seed,
            **extra,
        )
        argv = shlex.split(text)
        if self.settings.touch:
            argv = self._append_driver_flags(argv)
        return argv

    def _append_driver_flags(self, argv: list[str]) -> list[str]:
        flags = ["--touch"]
        if self.settings.page_size != 4096:
            flags += ["--page-size", str(self.settings.page_size)]
        return argv + flags

    def _heap_run(self, env: dict[str, str], seed: int, tag: str) -> metrics.HeapSeries:
        out = self.work_dir / f"massif-{tag}.out"
        argv = self._format(self.settings.heap_template, seed, massif_out=str(out))
        proc = _run_command(argv, env, self.settings.timeout_seconds)
        if proc.returncode != 0:
            raise EvaluationFailure(
                STATUS_CRASH, f"heap harness exited {proc.returncode}: {proc.stderr[-500:]}"
            )
        try:
            series = metrics.parse_heap_profile(out.read_text())
        except (OSError, metrics.MetricsParseError) as exc:
            raise EvaluationFailure(STATUS_CRASH, f"heap profile unreadable: {exc}") from None
        finally:
            out.unlink(missing_ok=True)
        return series

    def _timed_run(self, env: dict[str, str], seed: int) -> float:
        if self.settings.time_template:
            argv = self._format(self.settings.time_template, seed)
            proc = _run_command(argv, env, self.settings.timeout_seconds)
            if proc.returncode != 0:
                raise EvaluationFailure(
                    STATUS_CRASH, f"timing harness exited {proc.returncode}: {proc.stderr[-500:]}"
                )
            return metrics.parse_wallclock(proc.stderr + "\n" + proc.stdout)
        argv = driver_mod.driver_command(
            self.driver_path,
            self.profile_path,
            seed,
            touch=self.settings.touch,
            page_size=self.settings.page_size if self.settings.page_size != 4096 else None,
        )
        started = time.monotonic()
        proc = _run_command(argv, env, self.settings.timeout_seconds)
        elapsed = time.monotonic() - started
        if proc.returncode != 0:
            raise EvaluationFailure(
                STATUS_CRASH, f"driver exited {proc.returncode}: {proc.stderr[-500:]}"
            )
        return max(elapsed, 1e-9)

    def _instruction_run(self, env: dict[str, str], seed: int, tag: str) -> int | None:
        out = self.work_dir / f"perf-{tag}.csv"
        argv = self._format(self.settings.perf_template, seed, perf_out=str(out))
        try:
            proc = _run_command(argv, env, self.settings.timeout_seconds)
            if proc.returncode != 0:
                log.warning("instruction counter exited %d; skipping", proc.returncode)
                return None
            text = out.read_text() if out.exists() else proc.stderr + proc.stdout
            return metrics.parse_instruction_count(text)
        except (OSError, metrics.MetricsParseError) as exc:
            log.warning("instruction counter output unusable: %s", exc)
            return None
        finally:
            out.unlink(missing_ok=True)

    def evaluate(self, genotype: Genotype, generation: int | None = None) -> EvaluationRecord:
        started = time.monotonic()
        violations = validate(self.space, genotype)
        if violations:
            return EvaluationRecord(
                genotype=list(genotype),
                env={},
                objectives=_penalty_objectives(DEFAULT_PENALTY),
                per_rep=[],
                status=STATUS_INFEASIBLE,
                candidate_hash=candidate_hash(genotype, {}, self.workload_id, self.settings),
                eval_wallclock_seconds=time.monotonic() - started,
                generation=generation,
                detail="; ".join(str(v) for v in violations),
            )
        env_map = to_env(self.space, genotype)
        digest = candidate_hash(genotype, env_map, self.workload_id, self.settings)
        env = self.candidate_environment(env_map)

        per_rep: list[MeasuredObjectives] = []
        status = STATUS_OK
        detail = ""
        try:
            for rep in range(self.settings.repetitions):
                seed = self.settings.base_seed
                if self.settings.seed_policy == "per-repetition":
                    seed += rep
                series = self._heap_run(env, seed, f"{digest[:12]}-{rep}")
                wallclock = self._timed_run(env, seed)
                measured = metrics.heap_objectives(series, wallclock)
                if self.settings.measure_instructions:
                    measured.instructions = self._instruction_run(env, seed, f"{digest[:12]}-{rep}")
                per_rep.append(measured)
        except EvaluationFailure as exc:
            status = exc.status
            detail = exc.detail
            per_rep = []

        objectives = _median_objectives(per_rep) if per_rep else _penalty_objectives(DEFAULT_PENALTY)
        return EvaluationRecord(
            genotype=list(genotype),
            env=env_map,
            objectives=objectives,
            per_rep=per_rep,
            status=status,
            candidate_hash=digest,
            eval_wallclock_seconds=time.monotonic() - started,
            generation=generation,
            detail=detail,
        )


def _penalty_objectives(penalty: tuple) -> MeasuredObjectives:
    return MeasuredObjectives(
        peak_heap_bytes=penalty[0],
        avg_heap_bytes=penalty[0],
        free_rate=0.0,
        wallclock_seconds=penalty[1],
        instructions=None,
    )


# -- mock evaluators ----------------------------------------------------------


def _paraboloids(values: Sequence) -> tuple[float, float]:
    x, y = float(values[0]), float(values[1])
    return (x * x + y * y, (x - 9.0) ** 2 + (y - 9.0) ** 2)


def _weighted_sum(values: Sequence) -> tuple[float, float]:
    x, y = float(values[0]), float(values[1])
    return (x + 2.0 * y + 1.0, 2.0 * x + y + 1.0)


MOCK_OBJECTIVES: dict[str, Callable[[Sequence], tuple[float, float]]] = {
    "paraboloids": _paraboloids,
    "weighted-sum": _weighted_sum,
}


class MockEvaluator:
    """Analytic deterministic objectives; no subprocesses, zero wallclock."""

    def __init__(self, space: ParameterSpace, name: str, settings: EvaluationSettings):
        if name not in MOCK_OBJECTIVES:
            raise ValueError(f"unknown mock objective {name!r}; known: {sorted(MOCK_OBJECTIVES)}")
        self.space = space
        self.name = name
        self.fn = MOCK_OBJECTIVES[name]
        self.settings = settings
        self.workload_id = f"mock:{name}"

    def evaluate(self, genotype: Genotype, generation: int | None = None) -> EvaluationRecord:
        violations = validate(self.space, genotype)
        if violations:
            return EvaluationRecord(
                genotype=list(genotype),
                env={},
                objectives=_penalty_objectives(DEFAULT_PENALTY),
                per_rep=[],
                status=STATUS_INFEASIBLE,
                candidate_hash=candidate_hash(genotype, {}, self.workload_id, self.settings),
                eval_wallclock_seconds=0.0,
                generation=generation,
                detail="; ".join(str(v) for v in violations),
            )
        env_map = to_env(self.space, genotype)
        f1, f2 = self.fn(genotype)
        measured = MeasuredObjectives(
            peak_heap_bytes=f1, avg_heap_bytes=f1, free_rate=0.0, wallclock_seconds=f2
        )
        return EvaluationRecord(
            genotype=list(genotype),
            env=env_map,
            objectives=measured,
            per_rep=[measured] * self.settings.repetitions,
            status=STATUS_OK,
            candidate_hash=candidate_hash(genotype, env_map, self.workload_id, self.settings),
            eval_wallclock_seconds=0.0,
            generation=generation,
        )


# -- cache, penalties and batching --------------------------------------------


class EvaluationCache:
    """Append-only JSON-lines store keyed by candidate hash."""

    def __init__(self, path):
        self.path = Path(path)
        self._by_hash: dict[str, EvaluationRecord] = {}
        if self.path.exists():
            for lineno, line in enumerate(self.path.read_text().splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    record = EvaluationRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError, TypeError):
                    log.warning("%s: skipping corrupted cache line %d", self.path, lineno)
                    continue
                self._by_hash[record.candidate_hash] = record

    def lookup(self, digest: str) -> EvaluationRecord | None:
        return self._by_hash.get(digest)

    def store(self, record: EvaluationRecord) -> None:
        self._by_hash[record.candidate_hash] = record
        with open(self.path, "a") as fh:
            fh.write(record.to_json() + "\n")

    def __len__(self) -> int:
        return len(self._by_hash)


class PenaltyTracker:
    """Death-penalty vector: 2x the worst feasible value seen so far."""

    def __init__(self, default: tuple = DEFAULT_PENALTY):
        self.default = tuple(default)
        self.worst: list | None = None

    def observe(self, vector: tuple) -> None:
        if self.worst is None:
            self.worst = list(vector)
        else:
            self.worst = [max(a, b) for a, b in zip(self.worst, vector)]

    def penalty_vector(self) -> tuple:
        if self.worst is None:
            return self.default
        return tuple(2.0 * w for w in self.worst)


def apply_penalty(record: EvaluationRecord, penalty: tuple) -> None:
    record.objectives = _penalty_objectives(penalty)


def evaluate_batch(
    genotypes: Sequence[Genotype],
    evaluator,
    *,
    settings: EvaluationSettings,
    cache: EvaluationCache | None = None,
    penalties: PenaltyTracker | None = None,
    generation: int | None = None,
    sink: Callable[[EvaluationRecord], None] | None = None,
) -> list[EvaluationRecord]:
    """Evaluate a batch, preserving input order.

    Duplicate genotypes and cache hits (by candidate hash) run once; at most
    ``settings.parallelism`` evaluations are in flight.  Results are merged
    on the calling thread, which is the mutual exclusion for cache and
    penalty updates.
    """
    keys = [json.dumps(list(g), sort_keys=True) for g in genotypes]
    unique_order: list[str] = []
    first_index: dict[str, int] = {}
    for i, key in enumerate(keys):
        if key not in first_index:
            first_index[key] = i
            unique_order.append(key)

    def run_one(key: str) -> EvaluationRecord:
        return evaluator.evaluate(genotypes[first_index[key]], generation=generation)

    results: dict[str, EvaluationRecord] = {}
    to_run: list[str] = []
    for key in unique_order:
        genotype = genotypes[first_index[key]]
        if cache is not None:
            digest = _peek_hash(evaluator, genotype, settings)
            cached = cache.lookup(digest) if digest else None
            if cached is not None:
                results[key] = cached
                continue
        to_run.append(key)

    if to_run:
        if settings.parallelism == 1:
            for key in to_run:
                results[key] = run_one(key)
        else:
            with ThreadPoolExecutor(max_workers=settings.parallelism) as pool:
                for key, record in zip(to_run, pool.map(run_one, to_run)):
                    results[key] = record

    if penalties is not None:
        for key in unique_order:
            record = results[key]
            if record.status == STATUS_OK:
                penalties.observe(record.objective_vector)
        penalty = penalties.penalty_vector()
        for key in unique_order:
            record = results[key]
            if record.status != STATUS_OK and not record.per_rep:
                apply_penalty(record, penalty)

    ordered = [results[key] for key in keys]
    for key in to_run:
        record = results[key]
        if cache is not None and record.status == STATUS_OK:
            cache.store(record)
    if sink is not None:
        for record in ordered:
            sink(record)
    return ordered


def _peek_hash(evaluator, genotype: Genotype, settings: EvaluationSettings) -> str | None:
    """Hash a candidate without executing it (None when invalid)."""
    space = getattr(evaluator, "space", None)
    workload_id = getattr(evaluator, "workload_id", None)
    if space is None or workload_id is None:
        return None
    if validate(space, genotype):
        return candidate_hash(genotype, {}, workload_id, settings)
    return candidate_hash(genotype, to_env(space, genotype), workload_id, settings)
