"""Trace files, workload profiles and synthetic schedule generation.

A trace is one allocation event per line ("A <id> <size>", "F <id>",
"R <old_id> <id> <size>").  It is distilled into a WorkloadProfile (log2
size/lifetime histograms, free probability, live-set bound), and a profile
plus a seed deterministically expands into a synthetic operation schedule.

The schedule generator uses only 64-bit integer arithmetic plus IEEE
doubles produced the same way everywhere, so the native replay driver
reproduces the exact same operation stream from the same profile file and
seed.  A realized schedule is always drained (every block freed) so
release-rate metrics are comparable across candidates.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

_MASK64 = (1 << 64) - 1
_WEIGHT_SCALE = 1e9


class TraceError(ValueError):
    """A trace line is malformed or structurally inconsistent."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ProfileError(ValueError):
    """A workload profile is malformed or cannot be derived."""


@dataclass(frozen=True)
class TraceEvent:
    op: str  # "A", "F" or "R"
    id: int
    size: int = 0
    old_id: int = 0  # R only


def parse_trace(lines: Iterable[str]) -> list[TraceEvent]:
    """Parse trace lines into events, checking id lifetime consistency."""
    events: list[TraceEvent] = []
    live: set[int] = set()
    issued: set[int] = set()
    for lineno, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        op = parts[0]
        try:
            if op == "A" and len(parts) == 3:
                event = TraceEvent("A", id=int(parts[1]), size=int(parts[2]))
            elif op == "F" and len(parts) == 2:
                event = TraceEvent("F", id=int(parts[1]))
            elif op == "R" and len(parts) == 4:
                event = TraceEvent("R", id=int(parts[2]), size=int(parts[3]), old_id=int(parts[1]))
            else:
                raise TraceError(lineno, f"malformed event {raw.strip()!r}")
        except ValueError as exc:
            if isinstance(exc, TraceError):
                raise
            raise TraceError(lineno, f"non-numeric field in {raw.strip()!r}") from None
        if event.size < 0:
            raise TraceError(lineno, "negative size")
        if event.op in ("A", "R"):
            if event.id in issued:
                raise TraceError(lineno, f"id {event.id} reused")
            issued.add(event.id)
        if event.op in ("F", "R"):
            ref = event.old_id if event.op == "R" else event.id
            if ref not in live:
                raise TraceError(lineno, f"free of unknown or already-freed id {ref}")
            live.discard(ref)
        if event.op in ("A", "R"):
            live.add(event.id)
        events.append(event)
    return events


def serialize_trace(events: Sequence[TraceEvent]) -> str:
    out = []
    for e in events:
        if e.op == "A":
            out.append(f"A {e.id} {e.size}")
        elif e.op == "F":
            out.append(f"F {e.id}")
        else:
            out.append(f"R {e.old_id} {e.id} {e.size}")
    return "\n".join(out) + ("\n" if out else "")


def size_bucket(n: int) -> int:
    """Log2 bucket lower bound: 0 for 0, else the largest power of two <= n."""
    if n <= 0:
        return 0
    return 1 << (n.bit_length() - 1)


@dataclass(frozen=True)
class WorkloadProfile:
    """Statistical distillation of a trace, enough to regenerate its shape."""

    total_ops: int
    size_histogram: tuple[tuple[int, float], ...]  # (log2 bucket lower bound, weight)
    free_probability: float
    lifetime_histogram: tuple[tuple[int, float], ...] = ()
    max_live_blocks: int = 1
    source: str = ""

    def __post_init__(self) -> None:
        if self.total_ops < 1:
            raise ProfileError("total_ops must be >= 1")
        if self.max_live_blocks < 1:
            raise ProfileError("max_live_blocks must be >= 1")
        if not 0.0 <= self.free_probability <= 1.0:
            raise ProfileError("free_probability must be in [0, 1]")
        if not self.size_histogram:
            raise ProfileError("size histogram is empty")
        for label, hist in (("size", self.size_histogram), ("lifetime", self.lifetime_histogram)):
            if not hist:
                continue  # lifetime histogram may be empty when the trace has no frees
            if any(w < 0 for _, w in hist):
                raise ProfileError(f"negative weight in {label} histogram")
            total = math.fsum(w for _, w in hist)
            if abs(total - 1.0) > 1e-9:
                raise ProfileError(f"{label} histogram weights sum to {total}, not 1")

    def dump(self) -> str:
        lines = [
            "# workload profile v1",
            f"total_ops {self.total_ops}",
            f"free_probability {self.free_probability!r}",
            f"max_live_blocks {self.max_live_blocks}",
            f"source {self.source}".rstrip(),
        ]
        for lo, w in self.size_histogram:
            lines.append(f"size_bucket {lo} {w!r}")
        for lo, w in self.lifetime_histogram:
            lines.append(f"lifetime_bucket {lo} {w!r}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dump())


def parse_profile(text: str) -> WorkloadProfile:
    fields: dict[str, object] = {}
    size_hist: list[tuple[int, float]] = []
    life_hist: list[tuple[int, float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        try:
            if key == "total_ops":
                fields["total_ops"] = int(rest)
            elif key == "free_probability":
                fields["free_probability"] = float(rest)
            elif key == "max_live_blocks":
                fields["max_live_blocks"] = int(rest)
            elif key == "source":
                fields["source"] = rest
            elif key == "size_bucket":
                lo, w = rest.split()
                size_hist.append((int(lo), float(w)))
            elif key == "lifetime_bucket":
                lo, w = rest.split()
                life_hist.append((int(lo), float(w)))
            else:
                raise ProfileError(f"line {lineno}: unknown key {key!r}")
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ProfileError):
                raise
            raise ProfileError(f"line {lineno}: bad value in {line!r}") from None
    for required in ("total_ops", "free_probability", "max_live_blocks"):
        if required not in fields:
            raise ProfileError(f"missing {required}")
    return WorkloadProfile(
        total_ops=fields["total_ops"],
        size_histogram=tuple(size_hist),
        free_probability=fields["free_probability"],
        lifetime_histogram=tuple(life_hist),
        max_live_blocks=fields["max_live_blocks"],
        source=str(fields.get("source", "")),
    )


def load_profile(path) -> WorkloadProfile:
    with open(path) as fh:
        return parse_profile(fh.read())


def extract_profile(
    events: Sequence[TraceEvent], target_ops: int, source: str = ""
) -> WorkloadProfile:
    """Distill structurally valid events into a WorkloadProfile."""
    if not events:
        raise ProfileError("cannot build a profile from an empty trace")
    if target_ops < 1:
        raise ProfileError("total_ops must be >= 1")

    sizes = Counter()
    lifetimes = Counter()
    alloc_pos: dict[int, int] = {}
    live = 0
    max_live = 0
    frees = 0
    for pos, event in enumerate(events):
        if event.op == "A":
            sizes[size_bucket(event.size)] += 1
            alloc_pos[event.id] = pos
            live += 1
        elif event.op == "F":
            lifetimes[size_bucket(pos - alloc_pos.pop(event.id))] += 1
            frees += 1
            live -= 1
        else:  # R frees old_id and allocates id; live count is unchanged
            sizes[size_bucket(event.size)] += 1
            lifetimes[size_bucket(pos - alloc_pos.pop(event.old_id))] += 1
            alloc_pos[event.id] = pos
            frees += 1
        max_live = max(max_live, live)

    n_sizes = sum(sizes.values())
    size_hist = tuple((lo, count / n_sizes) for lo, count in sorted(sizes.items()))
    n_lives = sum(lifetimes.values())
    life_hist = tuple((lo, count / n_lives) for lo, count in sorted(lifetimes.items()))
    return WorkloadProfile(
        total_ops=target_ops,
        size_histogram=size_hist,
        free_probability=frees / len(events),
        lifetime_histogram=life_hist,
        max_live_blocks=max_live,
        source=source,
    )


class SplitMix64:
    """Deterministic 64-bit generator; mirrored bit-for-bit by the C driver."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_double(self) -> float:
        # 53-bit mantissa in [0, 1); identical rounding in C and Python
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)


def _integer_weights(hist: Sequence[tuple[int, float]]) -> list[tuple[int, int]]:
    weights = [(lo, math.floor(w * _WEIGHT_SCALE + 0.5)) for lo, w in hist]
    if sum(w for _, w in weights) == 0:
        raise ProfileError("size histogram weights are all zero")
    return weights


# Schedule ops: ("a", block_id, size) or ("f", block_id).
SynthOp = tuple


def synth_schedule(profile: WorkloadProfile, seed: int) -> list[SynthOp]:
    """Expand a profile into a deterministic, fully drained operation list.

    Exactly ``profile.total_ops`` allocations are emitted.  Sizes are drawn
    uniformly inside a histogram-weighted log2 bucket; frees pick a uniform
    live victim, are forced when the live-set cap is hit, and drain the
    remaining blocks at the end.
    """
    rng = SplitMix64(seed)
    weights = _integer_weights(profile.size_histogram)
    total_weight = sum(w for _, w in weights)

    ops: list[SynthOp] = []
    live: list[tuple[int, int]] = []  # (id, size)
    allocs = 0
    next_id = 1
    while allocs < profile.total_ops or live:
        if allocs == profile.total_ops:
            do_free = True
        elif not live:
            do_free = False
        elif len(live) == profile.max_live_blocks:
            do_free = True
        else:
            do_free = rng.next_double() < profile.free_probability
        if do_free:
            victim = rng.next_u64() % len(live)
            block_id, _ = live[victim]
            live[victim] = live[-1]
            live.pop()
            ops.append(("f", block_id))
        else:
            r = rng.next_u64() % total_weight
            lo = weights[-1][0]
            for bucket_lo, w in weights:
                if r < w:
                    lo = bucket_lo
                    break
                r -= w
            size = 0 if lo == 0 else lo + rng.next_u64() % lo
            ops.append(("a", next_id, size))
            live.append((next_id, size))
            next_id += 1
            allocs += 1
    return ops


@dataclass(frozen=True)
class ScheduleStats:
    total_ops: int
    alloc_ops: int
    max_live_blocks: int
    max_live_bytes: int
    final_live_blocks: int


def schedule_stats(ops: Sequence[SynthOp]) -> ScheduleStats:
    """Analytic replay of a schedule: live-set trajectory without allocating."""
    sizes: dict[int, int] = {}
    live_bytes = 0
    max_bytes = 0
    max_blocks = 0
    allocs = 0
    for op in ops:
        if op[0] == "a":
            _, block_id, size = op
            sizes[block_id] = size
            live_bytes += size
            allocs += 1
            max_bytes = max(max_bytes, live_bytes)
            max_blocks = max(max_blocks, len(sizes))
        else:
            live_bytes -= sizes.pop(op[1])
    return ScheduleStats(
        total_ops=len(ops),
        alloc_ops=allocs,
        max_live_blocks=max_blocks,
        max_live_bytes=max_bytes,
        final_live_blocks=len(sizes),
    )
