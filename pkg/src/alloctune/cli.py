"""Command-line pipeline: capture, profile, optimize, select, validate, report.

Exit codes are a stable scripting contract: 0 success, 1 usage error,
2 input-data error, 3 subprocess failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import shlex
import shutil
import statistics
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from alloctune import driver as driver_mod
from alloctune import metrics, pareto, workload
from alloctune.evaluate import (
    MOCK_OBJECTIVES,
    EvaluationCache,
    EvaluationRecord,
    EvaluationSettings,
    MockEvaluator,
    PenaltyTracker,
    SubprocessEvaluator,
    evaluate_batch,
    scrubbed_environment,
)
from alloctune.metrics import MeasuredObjectives
from alloctune.nsga2 import GAConfig, ResumeState, load_checkpoint, nsga2_run
from alloctune.params import (
    GenotypeError,
    ParameterSpace,
    SpaceError,
    builtin_space,
    load_space_file,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_SUBPROCESS = 3

TRACE_ENV_VAR = "ALLOC_TRACE_FILE"  # consumed by the preload interposer
SHIM_ENV_VAR = "ALLOCTUNE_SHIM"

RECIPE_ROLES = ("min-time", "min-memory", "knee")


class UsageError(Exception):
    pass


class InputDataError(Exception):
    pass


class SubprocessFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        raise UsageError(message)


# -- campaign configuration ----------------------------------------------------


@dataclass
class CampaignConfig:
    allocator: str
    output_dir: str
    profile: str | None = None
    custom_space: str | None = None
    evaluator: str = "subprocess"  # or "mock:<objective name>"
    driver: str | None = None
    ga: GAConfig = field(default_factory=GAConfig)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)

    def to_dict(self) -> dict:
        return {
            "allocator": self.allocator,
            "output_dir": self.output_dir,
            "profile": self.profile,
            "custom_space": self.custom_space,
            "evaluator": self.evaluator,
            "driver": self.driver,
            "ga": {
                "population_size": self.ga.population_size,
                "generations": self.ga.generations,
                "seed": self.ga.seed,
                "crossover_probability": self.ga.crossover_probability,
                "sbx_eta": self.ga.sbx_eta,
                "mutation_probability": self.ga.mutation_probability,
                "mutation_eta": self.ga.mutation_eta,
            },
            "evaluation": self.evaluation.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CampaignConfig":
        try:
            return cls(
                allocator=raw["allocator"],
                output_dir=raw["output_dir"],
                profile=raw.get("profile"),
                custom_space=raw.get("custom_space"),
                evaluator=raw.get("evaluator", "subprocess"),
                driver=raw.get("driver"),
                ga=GAConfig(**raw.get("ga", {})),
                evaluation=EvaluationSettings.from_dict(raw.get("evaluation", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputDataError(f"bad campaign config: {exc}") from None

    @classmethod
    def load(cls, path) -> "CampaignConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputDataError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)

    def space(self) -> ParameterSpace:
        try:
            if self.custom_space:
                return load_space_file(self.custom_space)
            return builtin_space(self.allocator)
        except (OSError, SpaceError) as exc:
            raise InputDataError(str(exc)) from None


def _load_records(path: Path) -> list[EvaluationRecord]:
    records = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputDataError(f"cannot read {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(EvaluationRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as exc:
            raise InputDataError(f"{path} line {lineno}: {exc}") from None
    return records


@contextlib.contextmanager
def _campaign_lock(directory: Path, force: bool = False):
    lock = directory / "campaign.lock"
    if force:
        lock.unlink(missing_ok=True)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise InputDataError(
            f"{lock} exists; another invocation may be active (use --force to steal)"
        ) from None
    with os.fdopen(fd, "w") as fh:
        fh.write(f"{os.getpid()}\n")
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


# -- capture -------------------------------------------------------------------


def cmd_capture(args) -> int:
    shim = args.shim or os.environ.get(SHIM_ENV_VAR)
    if not shim:
        raise InputDataError(f"no interposer shim given (--shim or ${SHIM_ENV_VAR})")
    shim = Path(shim)
    if not shim.exists():
        raise InputDataError(f"shim {shim} does not exist")
    trace_path = Path(args.output)
    try:
        with open(trace_path, "w"):
            pass
    except OSError as exc:
        raise InputDataError(f"trace path not writable: {exc}") from None

    env = dict(os.environ)
    preload = str(shim.resolve())
    if env.get("LD_PRELOAD"):
        preload = preload + ":" + env["LD_PRELOAD"]
    env["LD_PRELOAD"] = preload
    env[TRACE_ENV_VAR] = str(trace_path.resolve())
    proc = subprocess.run(args.command, env=env)

    events = sum(1 for line in trace_path.read_text().splitlines() if line.strip())
    print(f"captured {events} allocation events to {trace_path}")
    if events == 0:
        print("warning: target performed no traced allocations", file=sys.stderr)
    if proc.returncode != 0:
        print(
            f"warning: target exited {proc.returncode}; trace may be partial", file=sys.stderr
        )
        return proc.returncode
    return EXIT_OK


# -- profile -------------------------------------------------------------------


def cmd_profile(args) -> int:
    trace_path = Path(args.trace)
    try:
        with open(trace_path) as fh:
            events = workload.parse_trace(fh)
    except OSError as exc:
        raise InputDataError(str(exc)) from None
    except workload.TraceError as exc:
        raise InputDataError(f"{trace_path}: {exc}") from None
    try:
        profile = workload.extract_profile(
            events, args.target_ops, source=args.source or str(trace_path)
        )
    except workload.ProfileError as exc:
        raise InputDataError(str(exc)) from None
    profile.save(args.output)
    print(f"profile written to {args.output}")
    print(f"  events={len(events)} free_probability={profile.free_probability:.4f} "
          f"max_live_blocks={profile.max_live_blocks}")
    print("  size histogram (bucket lower bound -> weight):")
    for lo, w in profile.size_histogram:
        print(f"    {lo:>12} {w:.4f}")
    return EXIT_OK


# -- optimize ------------------------------------------------------------------


def _make_evaluator(config: CampaignConfig, space: ParameterSpace, work_dir: Path):
    if config.evaluator.startswith("mock:"):
        name = config.evaluator.split(":", 1)[1]
        try:
            return MockEvaluator(space, name, config.evaluation)
        except ValueError as exc:
            raise InputDataError(str(exc)) from None
    if config.evaluator != "subprocess":
        raise InputDataError(f"unknown evaluator {config.evaluator!r}")
    if not config.profile:
        raise InputDataError("subprocess evaluator needs a workload profile path")
    profile_path = Path(config.profile)
    if not profile_path.exists():
        raise InputDataError(f"profile {profile_path} does not exist")
    try:
        workload.load_profile(profile_path)
    except workload.ProfileError as exc:
        raise InputDataError(f"{profile_path}: {exc}") from None
    harness = shlex.split(config.evaluation.heap_template)[0]
    if shutil.which(harness) is None:
        raise InputDataError(f"heap profiler {harness!r} not found on PATH")
    try:
        driver_path = Path(config.driver) if config.driver else driver_mod.ensure_driver()
    except driver_mod.DriverBuildError as exc:
        raise InputDataError(str(exc)) from None
    return SubprocessEvaluator(
        space, profile_path, config.evaluation, driver_path=driver_path, work_dir=work_dir
    )


def _latest_checkpoint(checkpoint_dir: Path) -> Path | None:
    if not checkpoint_dir.is_dir():
        return None
    candidates = sorted(checkpoint_dir.glob("gen_*.json"))
    return candidates[-1] if candidates else None


def _truncate_log(path: Path, keep: int) -> None:
    if not path.exists():
        path.touch()
        return
    lines = path.read_text().splitlines(keepends=True)
    if len(lines) > keep:
        tmp = path.with_suffix(".tmp")
        tmp.write_text("".join(lines[:keep]))
        tmp.replace(path)


def cmd_optimize(args) -> int:
    config = CampaignConfig.load(args.config)
    if args.output_dir:
        config.output_dir = args.output_dir
    out_dir = Path(config.output_dir)
    existing = out_dir.exists() and any(out_dir.iterdir())
    if existing and not (args.resume or args.force):
        raise InputDataError(
            f"{out_dir} already contains a campaign; pass --resume to continue or --force to discard"
        )
    if args.force and out_dir.exists() and not args.resume:
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    space = config.space()
    with _campaign_lock(out_dir, force=args.force):
        (out_dir / "config.json").write_text(
            json.dumps(config.to_dict(), sort_keys=True, indent=1) + "\n"
        )
        checkpoint_dir = out_dir / "checkpoints"
        log_path = out_dir / "evaluations.jsonl"
        cache = EvaluationCache(out_dir / "cache.jsonl")
        work_dir = out_dir / "work"
        evaluator = _make_evaluator(config, space, work_dir)
        penalties = PenaltyTracker()

        resume_state = None
        archive_offset = 0
        if args.resume:
            latest = _latest_checkpoint(checkpoint_dir)
            if latest is None:
                raise InputDataError(f"--resume given but no checkpoints in {checkpoint_dir}")
            generation, ck_config, members, archive_len = load_checkpoint(latest)
            if ck_config != config.ga:
                raise InputDataError("checkpointed GA config differs from the requested one")
            _truncate_log(log_path, archive_len)
            resume_state = ResumeState(generation=generation, members=members)
            archive_offset = archive_len
        else:
            _truncate_log(log_path, 0)

        log_fh = open(log_path, "a")

        def sink(record: EvaluationRecord) -> None:
            log_fh.write(record.to_json() + "\n")
            log_fh.flush()

        def evaluate_fn(genotypes, generation):
            return evaluate_batch(
                genotypes,
                evaluator,
                settings=config.evaluation,
                cache=cache,
                penalties=penalties,
                generation=generation,
                sink=sink,
            )

        try:
            result = nsga2_run(
                space,
                evaluate_fn,
                config.ga,
                checkpoint_dir=checkpoint_dir,
                wallclock_budget_seconds=args.wallclock_budget,
                stop_after_generation=args.stop_after_generation,
                resume_state=resume_state,
                archive_offset=archive_offset,
            )
        finally:
            log_fh.close()

    records = _load_records(log_path)
    finished = result.completed_generations >= config.ga.generations
    if finished:
        _write_front_files(out_dir, config, space, records)
        print(f"campaign complete: {result.completed_generations} generations, "
              f"{len(records)} evaluations, front in {out_dir / 'front.json'}")
    else:
        print(f"campaign paused at generation {result.completed_generations} "
              f"({len(records)} evaluations so far); resume with --resume")
    return EXIT_OK


def _write_front_files(
    out_dir: Path, config: CampaignConfig, space: ParameterSpace, records
) -> None:
    try:
        front = pareto.extract_front(records)
        reference = pareto.campaign_reference(records)
    except pareto.FrontError as exc:
        raise InputDataError(f"cannot build front: {exc}") from None
    analytics = pareto.analyze_front(front, reference)
    payload = {
        "campaign": out_dir.name,
        "allocator": config.allocator,
        "preload_library": space.preload_library,
        "reference_point": list(reference),
        "points": [
            {
                "archive_index": p.archive_index,
                "genotype": p.genotype,
                "objectives": records[p.archive_index].objectives.to_dict(),
                "env": records[p.archive_index].env,
            }
            for p in front.points
        ],
    }
    (out_dir / "front.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    (out_dir / "analytics.json").write_text(
        json.dumps(analytics.to_dict(), sort_keys=True, indent=1) + "\n"
    )


# -- select --------------------------------------------------------------------


def _front_from_file(front_path: Path) -> tuple[dict, pareto.ParetoFront]:
    try:
        raw = json.loads(front_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputDataError(f"cannot read front file {front_path}: {exc}") from None
    points = tuple(
        pareto.FrontPoint(
            genotype=entry["genotype"],
            objectives=(
                entry["objectives"]["peak_heap_bytes"],
                entry["objectives"]["wallclock_seconds"],
            ),
            archive_index=entry["archive_index"],
        )
        for entry in raw["points"]
    )
    return raw, pareto.ParetoFront(points)


def cmd_select(args) -> int:
    campaign = Path(args.campaign)
    raw, front = _front_from_file(campaign / "front.json")
    reps = pareto.select_representatives(front)
    out_dir = Path(args.output) if args.output else campaign / "recipes"
    out_dir.mkdir(parents=True, exist_ok=True)
    by_index = {entry["archive_index"]: entry for entry in raw["points"]}
    for role, point in (
        ("min-time", reps.min_time),
        ("min-memory", reps.min_memory),
        ("knee", reps.knee),
    ):
        entry = by_index[point.archive_index]
        lines = [
            f"# campaign: {raw['campaign']}",
            f"# allocator: {raw['allocator']}",
            f"# role: {role}",
            f"# peak_heap_bytes: {entry['objectives']['peak_heap_bytes']}",
            f"# wallclock_seconds: {entry['objectives']['wallclock_seconds']}",
        ]
        for var, value in entry["env"].items():
            lines.append(f"{var}={value}")
        if raw.get("preload_library"):
            lines.append(f"LD_PRELOAD={raw['preload_library']}")
        (out_dir / f"{role}.env").write_text("\n".join(lines) + "\n")
        print(f"wrote {out_dir / (role + '.env')}")
    return EXIT_OK


# -- validate --------------------------------------------------------------------


def _parse_recipe(path: Path) -> dict[str, str]:
    env: dict[str, str] = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputDataError(f"cannot read recipe {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key:
            raise InputDataError(f"{path} line {lineno}: not VAR=value")
        env[key] = value
    return env


def _measure_target(
    command: list[str], env: dict[str, str], work_dir: Path, tag: str,
    timeout: float, measure_instructions: bool,
) -> MeasuredObjectives:
    massif_out = work_dir / f"massif-{tag}.out"
    argv = [
        "valgrind", "--tool=massif", f"--massif-out-file={massif_out}",
        "--time-unit=i", "--max-snapshots=200", "--",
    ] + command
    proc = subprocess.run(argv, env=env, capture_output=True, text=True, timeout=timeout)
    if proc.returncode != 0:
        raise SubprocessFailure(f"heap profiler run exited {proc.returncode}: {proc.stderr[-400:]}")
    series = metrics.parse_heap_profile(massif_out.read_text())
    massif_out.unlink(missing_ok=True)

    started = time.monotonic()
    proc = subprocess.run(command, env=env, capture_output=True, text=True, timeout=timeout)
    elapsed = max(time.monotonic() - started, 1e-9)
    if proc.returncode != 0:
        raise SubprocessFailure(f"target exited {proc.returncode}: {proc.stderr[-400:]}")
    measured = metrics.heap_objectives(series, elapsed)

    if measure_instructions:
        perf_out = work_dir / f"perf-{tag}.csv"
        argv = ["perf", "stat", "-x", ",", "-e", "instructions", "-o", str(perf_out), "--"] + command
        proc = subprocess.run(argv, env=env, capture_output=True, text=True, timeout=timeout)
        if proc.returncode == 0 and perf_out.exists():
            with contextlib.suppress(metrics.MetricsParseError):
                measured.instructions = metrics.parse_instruction_count(perf_out.read_text())
        perf_out.unlink(missing_ok=True)
    return measured


_DELTA_METRICS = (
    ("avg_heap_bytes", -1),
    ("free_rate", +1),  # positive delta = improvement
    ("peak_heap_bytes", -1),
    ("instructions", -1),
    ("wallclock_seconds", -1),
)


@dataclass
class ValidationReport:
    baseline_runs: list[MeasuredObjectives]
    tuned_runs: list[MeasuredObjectives]
    deltas: dict
    run_count: int
    noise_threshold: float

    def to_dict(self) -> dict:
        return {
            "baseline_runs": [m.to_dict() for m in self.baseline_runs],
            "tuned_runs": [m.to_dict() for m in self.tuned_runs],
            "deltas": self.deltas,
            "run_count": self.run_count,
            "noise_threshold": self.noise_threshold,
        }


def _median_metric(runs: list[MeasuredObjectives], name: str):
    values = [getattr(m, name) for m in runs]
    if any(v is None for v in values):
        return None
    return statistics.median(values)


def build_validation_report(
    baseline_runs: list[MeasuredObjectives],
    tuned_runs: list[MeasuredObjectives],
    run_count: int,
    noise_threshold: float,
) -> ValidationReport:
    deltas: dict = {}
    for name, improve_sign in _DELTA_METRICS:
        base = _median_metric(baseline_runs, name)
        tuned = _median_metric(tuned_runs, name)
        if base is None or tuned is None or base == 0:
            deltas[name] = {"baseline": base, "tuned": tuned, "relative": None, "verdict": "n/a"}
            continue
        relative = (tuned - base) / base
        if abs(relative) <= noise_threshold:
            verdict = "no-change"
        elif relative * improve_sign > 0:
            verdict = "improved"
        else:
            verdict = "regressed"
        deltas[name] = {
            "baseline": base, "tuned": tuned, "relative": relative, "verdict": verdict,
        }
    return ValidationReport(baseline_runs, tuned_runs, deltas, run_count, noise_threshold)


def cmd_validate(args) -> int:
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    if not args.command:
        raise UsageError("no target command given (put it after --)")
    tuned_env_vars = _parse_recipe(Path(args.recipe))
    base = scrubbed_environment()

    baseline_env = dict(base)
    if args.baseline == "tcmalloc":
        preload = args.preload or builtin_space("tcmalloc").preload_library
        baseline_env["LD_PRELOAD"] = preload
    tuned_env = dict(base)
    tuned_env.update(tuned_env_vars)

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    work_dir = Path(tempfile.mkdtemp(prefix="alloctune-validate-"))

    baseline_runs: list[MeasuredObjectives] = []
    tuned_runs: list[MeasuredObjectives] = []
    failures = 0
    for run in range(args.runs):
        for label, env, bucket in (
            ("baseline", baseline_env, baseline_runs),
            ("tuned", tuned_env, tuned_runs),
        ):
            try:
                bucket.append(
                    _measure_target(
                        args.command, env, work_dir, f"{label}-{run}",
                        args.timeout, args.measure_instructions,
                    )
                )
            except (SubprocessFailure, subprocess.TimeoutExpired, metrics.MetricsParseError) as exc:
                failures += 1
                print(f"warning: {label} run {run} failed: {exc}", file=sys.stderr)
    if not baseline_runs or not tuned_runs:
        raise SubprocessFailure("no successful baseline or tuned runs; nothing to report")

    report = build_validation_report(baseline_runs, tuned_runs, args.runs, args.noise_threshold)
    (out_dir / "validation.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n"
    )
    lines = [
        "# Validation report",
        "",
        f"target: `{' '.join(args.command)}`",
        f"runs: {args.runs} (failures: {failures})",
        "",
        "| metric | baseline | tuned | delta | verdict |",
        "|---|---|---|---|---|",
    ]
    for name, info in report.deltas.items():
        delta = "n/a" if info["relative"] is None else f"{100 * info['relative']:+.2f}%"
        lines.append(
            f"| {name} | {info['baseline']} | {info['tuned']} | {delta} | {info['verdict']} |"
        )
    (out_dir / "validation.md").write_text("\n".join(lines) + "\n")
    print(f"validation report written to {out_dir / 'validation.json'}")
    for name, info in report.deltas.items():
        print(f"  {name}: {info['verdict']}")
    return EXIT_OK


# -- report --------------------------------------------------------------------


def cmd_report(args) -> int:
    campaign = Path(args.campaign)
    log_path = campaign / "evaluations.jsonl"
    front_path = campaign / "front.json"
    for required in (log_path, front_path, campaign / "analytics.json"):
        if not required.exists():
            raise InputDataError(f"missing campaign artifact: {required}")
    records = _load_records(log_path)
    stored_front_raw, stored_front = _front_from_file(front_path)
    stored_analytics = json.loads((campaign / "analytics.json").read_text())

    recomputed = pareto.extract_front(records)
    if [p.objectives for p in recomputed.points] != [p.objectives for p in stored_front.points]:
        raise InputDataError("front.json disagrees with evaluations.jsonl; campaign corrupted?")
    reference = tuple(stored_analytics["reference_point"])
    analytics = pareto.analyze_front(recomputed, reference)
    if analytics.hypervolume != stored_analytics["hypervolume"]:
        raise InputDataError("analytics.json hypervolume disagrees with the evaluation log")

    report_dir = campaign / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    front_csv = report_dir / "front.csv"
    with open(front_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "row_type", "peak_heap_bytes", "wallclock_seconds", "avg_heap_bytes",
                "free_rate", "instructions", "hypervolume", "front_size",
                "tradeoff_slope", "span_peak_percent", "span_wallclock_percent", "genotype",
            ]
        )
        for point in recomputed.points:
            record = records[point.archive_index]
            obj = record.objectives
            writer.writerow(
                [
                    "point", obj.peak_heap_bytes, obj.wallclock_seconds, obj.avg_heap_bytes,
                    obj.free_rate, obj.instructions if obj.instructions is not None else "",
                    "", "", "", "", "", json.dumps(point.genotype),
                ]
            )
        spans = analytics.span_percent
        writer.writerow(
            [
                "summary", "", "", "", "", "", analytics.hypervolume, analytics.front_size,
                analytics.tradeoff_slope if analytics.tradeoff_slope is not None else "",
                spans[0] if spans[0] is not None else "",
                spans[1] if spans[1] is not None else "", "",
            ]
        )

    series_csv = report_dir / "series.csv"
    with open(series_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["index", "generation", "status", "peak_heap_bytes", "wallclock_seconds",
             "avg_heap_bytes", "free_rate"]
        )
        for i, record in enumerate(records):
            obj = record.objectives
            writer.writerow(
                [i, record.generation, record.status, obj.peak_heap_bytes,
                 obj.wallclock_seconds, obj.avg_heap_bytes, obj.free_rate]
            )

    lines = [
        f"# Campaign report: {stored_front_raw['campaign']}",
        "",
        f"allocator: {stored_front_raw['allocator']}",
        f"evaluations: {len(records)}",
        "",
        "## Pareto front",
        "",
        "| peak_heap_bytes | wallclock_seconds | genotype |",
        "|---|---|---|",
    ]
    for point in recomputed.points:
        lines.append(
            f"| {point.objectives[0]} | {point.objectives[1]} | `{json.dumps(point.genotype)}` |"
        )
    lines += [
        "",
        "## Front analytics",
        "",
        f"- hypervolume: {analytics.hypervolume} (reference point {list(reference)})",
        f"- front size: {analytics.front_size}",
        f"- span percent (peak, wallclock): {list(analytics.span_percent)}",
        f"- trade-off slope: {analytics.tradeoff_slope}",
        "",
        "## Baseline vs tuned",
        "",
    ]
    validation_path = Path(args.validation) if args.validation else campaign / "validation.json"
    if validation_path.exists():
        validation = json.loads(validation_path.read_text())
        lines += ["| metric | baseline | tuned | delta | verdict |", "|---|---|---|---|---|"]
        for name, info in validation["deltas"].items():
            delta = "n/a" if info["relative"] is None else f"{100 * info['relative']:+.2f}%"
            lines.append(
                f"| {name} | {info['baseline']} | {info['tuned']} | {delta} | {info['verdict']} |"
            )
    else:
        lines.append("no validation data available; run the validate command first.")
    (report_dir / "report.md").write_text("\n".join(lines) + "\n")
    print(f"report written to {report_dir}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="alloctune", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("capture", help="run a target with the trace interposer preloaded")
    p.add_argument("-o", "--output", required=True, help="trace output path")
    p.add_argument("--shim", help=f"interposer shared library (default ${SHIM_ENV_VAR})")
    p.add_argument("command", nargs="+", help="target command (prefix with -- if it has flags)")
    p.set_defaults(func=cmd_capture)

    p = sub.add_parser("profile", help="distill a trace into a workload profile")
    p.add_argument("-i", "--trace", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--target-ops", type=int, required=True, help="allocations to replay")
    p.add_argument("--source", help="provenance note (default: trace path)")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("optimize", help="run an optimization campaign")
    p.add_argument("--config", required=True, help="campaign config JSON")
    p.add_argument("--output-dir", help="override the config's output directory")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.add_argument("--force", action="store_true", help="discard an existing campaign directory")
    p.add_argument("--stop-after-generation", type=int,
                   help="pause cleanly after this generation (resume later)")
    p.add_argument("--wallclock-budget", type=float,
                   help="stop starting new generations after this many seconds")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("select", help="write min-time/min-memory/knee recipes from a front")
    p.add_argument("campaign", help="campaign directory")
    p.add_argument("-o", "--output", help="recipe output directory (default: campaign/recipes)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("validate", help="compare a recipe against a baseline on a real command")
    p.add_argument("--recipe", required=True, help="recipe .env file from select")
    p.add_argument("--baseline", choices=("glibc", "tcmalloc"), default="glibc")
    p.add_argument("--preload", help="preload library for a tcmalloc baseline")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--timeout", type=float, default=600.0)
    p.add_argument("--noise-threshold", type=float, default=0.05,
                   help="relative delta treated as no-change")
    p.add_argument("--measure-instructions", action="store_true")
    p.add_argument("-o", "--output", required=True, help="report output directory")
    p.add_argument("command", nargs="+", help="target command (after --)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="emit CSV and markdown reports for a campaign")
    p.add_argument("campaign", help="campaign directory")
    p.add_argument("--validation", help="validation.json path (default: campaign/validation.json)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SubprocessFailure, driver_mod.DriverBuildError) as exc:
        print(f"subprocess failure: {exc}", file=sys.stderr)
        return EXIT_SUBPROCESS
    except GenotypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main(argv=None))
