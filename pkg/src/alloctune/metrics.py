"""Harness-output parsing and the four reported heap/time metrics.

Understands the heap profiler's snapshot format (time=/mem_heap_B=/
mem_heap_extra_B= blocks), the instruction counter's field-separated
output, and POSIX timing output.  Heap metrics include the profiler's
bookkeeping overhead (extra bytes) so peak matches what the profiler
itself reports.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

log = logging.getLogger(__name__)


class MetricsParseError(ValueError):
    """Harness output could not be parsed; message carries the line number."""


@dataclass(frozen=True)
class HeapSnapshot:
    time: int
    heap_bytes: int
    extra_bytes: int

    @property
    def total(self) -> int:
        return self.heap_bytes + self.extra_bytes


@dataclass(frozen=True)
class HeapSeries:
    snapshots: tuple[HeapSnapshot, ...]
    time_unit: str = "i"

    def __post_init__(self) -> None:
        if not self.snapshots:
            raise MetricsParseError("no snapshots")
        for a, b in zip(self.snapshots, self.snapshots[1:]):
            if b.time <= a.time:
                raise MetricsParseError(f"snapshot times not increasing ({a.time} -> {b.time})")
        if any(s.heap_bytes < 0 or s.extra_bytes < 0 for s in self.snapshots):
            raise MetricsParseError("negative byte count")


_TREE_LINE = re.compile(r"^\s*n\d+:")
_HEADER_LINE = re.compile(r"^[A-Za-z_]+:")


def parse_heap_profile(text: str) -> HeapSeries:
    """Parse heap-profiler snapshot text into a HeapSeries."""
    time_unit = None
    snapshots: list[HeapSnapshot] = []
    current: dict[str, int] = {}
    in_block = False

    def close_block(lineno: int) -> None:
        nonlocal current, in_block
        if not in_block:
            return
        for want in ("time", "mem_heap_B", "mem_heap_extra_B"):
            if want not in current:
                raise MetricsParseError(f"line {lineno}: snapshot missing {want}=")
        snap = HeapSnapshot(current["time"], current["mem_heap_B"], current["mem_heap_extra_B"])
        if snap.heap_bytes < 0 or snap.extra_bytes < 0:
            raise MetricsParseError(f"line {lineno}: negative byte count")
        if snapshots and snap.time == snapshots[-1].time:
            snapshots[-1] = snap  # same-instant resample supersedes the previous one
        elif snapshots and snap.time < snapshots[-1].time:
            raise MetricsParseError(f"line {lineno}: snapshot time went backwards")
        else:
            snapshots.append(snap)
        current = {}
        in_block = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        if _TREE_LINE.match(line):
            continue  # detailed allocation trees are skipped
        if line.startswith("snapshot="):
            close_block(lineno)
            in_block = True
            continue
        if in_block:
            key, sep, value = line.partition("=")
            if not sep:
                raise MetricsParseError(f"line {lineno}: unrecognized line {line!r}")
            if key == "heap_tree":
                continue
            try:
                current[key] = int(value)
            except ValueError:
                raise MetricsParseError(f"line {lineno}: non-numeric {key}={value!r}") from None
            continue
        if _HEADER_LINE.match(line):
            if time_unit is None and line.startswith("time_unit:"):
                time_unit = line.split(":", 1)[1].strip()
            continue  # other header lines (desc:, cmd:) are ignored
        raise MetricsParseError(f"line {lineno}: unrecognized line {line!r}")

    close_block(len(text.splitlines()))
    if not snapshots:
        raise MetricsParseError("no snapshots")
    if time_unit is None:
        raise MetricsParseError("missing time_unit header")
    return HeapSeries(tuple(snapshots), time_unit)


def peak_heap(series: HeapSeries) -> int:
    """Maximum heap + bookkeeping bytes over all snapshots."""
    return max(s.total for s in series.snapshots)


def avg_heap(series: HeapSeries) -> float:
    """Time-weighted mean heap under piecewise-constant (left-hold) interpolation."""
    snaps = series.snapshots
    if len(snaps) == 1:
        return float(snaps[0].total)
    span = snaps[-1].time - snaps[0].time
    weighted = sum(s.total * (t.time - s.time) for s, t in zip(snaps, snaps[1:]))
    return weighted / span


def free_rate(series: HeapSeries) -> float:
    """Releases divided by held bytes: sum(max(0, h[i]-h[i+1])) / sum(h[:-1])."""
    snaps = series.snapshots
    if len(snaps) < 2:
        return 0.0
    released = sum(max(0, a.total - b.total) for a, b in zip(snaps, snaps[1:]))
    held = sum(s.total for s in snaps[:-1])
    return released / held if held else 0.0


@dataclass
class MeasuredObjectives:
    """Per-run measurements; instructions only present for validation runs."""

    peak_heap_bytes: float
    avg_heap_bytes: float
    free_rate: float
    wallclock_seconds: float
    instructions: int | None = None

    def check(self) -> None:
        if not self.peak_heap_bytes >= self.avg_heap_bytes >= 0:
            raise ValueError(f"peak {self.peak_heap_bytes} < avg {self.avg_heap_bytes}")
        if not self.wallclock_seconds > 0:
            raise ValueError("wallclock must be positive")

    def to_dict(self) -> dict:
        return {
            "peak_heap_bytes": self.peak_heap_bytes,
            "avg_heap_bytes": self.avg_heap_bytes,
            "free_rate": self.free_rate,
            "wallclock_seconds": self.wallclock_seconds,
            "instructions": self.instructions,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MeasuredObjectives":
        return cls(
            peak_heap_bytes=raw["peak_heap_bytes"],
            avg_heap_bytes=raw["avg_heap_bytes"],
            free_rate=raw["free_rate"],
            wallclock_seconds=raw["wallclock_seconds"],
            instructions=raw.get("instructions"),
        )


def heap_objectives(series: HeapSeries, wallclock_seconds: float) -> MeasuredObjectives:
    return MeasuredObjectives(
        peak_heap_bytes=float(peak_heap(series)),
        avg_heap_bytes=avg_heap(series),
        free_rate=free_rate(series),
        wallclock_seconds=wallclock_seconds,
    )


def parse_instruction_count(text: str) -> int | None:
    """Extract the instructions counter from field-separated counter output.

    Returns None when the counter reports "<not counted>"; raises when no
    instructions row exists at all.
    """
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) < 3:
            continue
        event = fields[2].split(":")[0].strip()
        if event != "instructions":
            continue
        value = fields[0].strip()
        if value == "<not counted>":
            return None
        try:
            return int(value)
        except ValueError:
            raise MetricsParseError(f"line {lineno}: non-numeric count {value!r}") from None
    raise MetricsParseError("no instructions row")


_REAL_LINE = re.compile(r"^\s*real[ \t]+(\d+(?:\.\d*)?)\s*$", re.MULTILINE)


def parse_wallclock(text: str) -> float:
    """Extract elapsed seconds from POSIX timing output (the "real" line)."""
    match = _REAL_LINE.search(text)
    if match is None:
        raise MetricsParseError("no real line in timing output")
    seconds = float(match.group(1))
    if seconds == 0.0:
        log.warning("elapsed time 0.00 is below timer resolution")
    return seconds
