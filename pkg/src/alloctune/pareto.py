"""Pareto front extraction and trade-off analytics for campaign archives.

Front analytics mirror what gets reported per campaign: exact 2-D
hypervolume against a declared reference point, front size, per-objective
spans as percent of the front minimum, the least-squares trade-off slope
in percent-normalized space, and the three representative configurations
(fastest, smallest, knee).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from alloctune.nsga2 import ObjectiveVector

REFERENCE_MARGIN = 1.1  # campaign reference point = margin x per-objective worst


class FrontError(ValueError):
    """A front cannot be built or analyzed as requested."""


@dataclass(frozen=True)
class FrontPoint:
    genotype: list
    objectives: ObjectiveVector
    archive_index: int


@dataclass(frozen=True)
class ParetoFront:
    points: tuple[FrontPoint, ...]

    def __len__(self) -> int:
        return len(self.points)

    @property
    def vectors(self) -> list[ObjectiveVector]:
        return [p.objectives for p in self.points]


def extract_front(records: Sequence) -> ParetoFront:
    """Non-dominated subset of ok records; duplicate objectives keep the
    first record in archive order; result sorted ascending by objective 0."""
    ok = [(i, tuple(r.objective_vector)) for i, r in enumerate(records) if r.status == "ok"]
    if not ok:
        raise FrontError("no successful records to build a front from")
    ok.sort(key=lambda item: (item[1][0], item[1][1], item[0]))
    chosen: list[tuple[int, ObjectiveVector]] = []
    best_second = math.inf
    for index, vec in ok:
        if vec[1] < best_second:
            chosen.append((index, vec))
            best_second = vec[1]
    points = tuple(
        FrontPoint(genotype=list(records[i].genotype), objectives=vec, archive_index=i)
        for i, vec in chosen
    )
    return ParetoFront(points)


def _vectors(front_or_points) -> list[ObjectiveVector]:
    if isinstance(front_or_points, ParetoFront):
        return front_or_points.vectors
    return [tuple(p) for p in front_or_points]


def hypervolume_2d(front_or_points, reference: ObjectiveVector) -> float:
    """Exact dominated area between a front and a reference point (minimization).

    Every point must strictly dominate the reference in both objectives.
    """
    vectors = _vectors(front_or_points)
    if not vectors:
        raise FrontError("empty front")
    for vec in vectors:
        if not (vec[0] < reference[0] and vec[1] < reference[1]):
            raise FrontError(f"point {vec} does not strictly dominate reference {tuple(reference)}")
    area = 0.0
    prev_second = reference[1]
    for first, second in sorted(vectors):
        if second < prev_second:  # dominated or duplicate points contribute nothing
            area += (reference[0] - first) * (prev_second - second)
            prev_second = second
    return area


def spans(front_or_points) -> tuple[float | None, ...]:
    """Per-objective spread as percent of the front minimum (None if min is 0)."""
    vectors = _vectors(front_or_points)
    if not vectors:
        raise FrontError("empty front")
    out: list[float | None] = []
    for m in range(len(vectors[0])):
        values = [v[m] for v in vectors]
        lo, hi = min(values), max(values)
        if hi == lo:
            out.append(0.0)
        elif lo == 0:
            out.append(None)
        else:
            out.append(100.0 * (hi - lo) / lo)
    return tuple(out)


def tradeoff_slope(front_or_points) -> float | None:
    """Least-squares slope of objective 1 vs objective 0, each normalized to
    percent above its front minimum; None for singleton fronts or a zero min."""
    vectors = _vectors(front_or_points)
    if len(vectors) < 2:
        return None
    min0 = min(v[0] for v in vectors)
    min1 = min(v[1] for v in vectors)
    if min0 == 0 or min1 == 0:
        return None
    xs = [100.0 * (v[0] - min0) / min0 for v in vectors]
    ys = [100.0 * (v[1] - min1) / min1 for v in vectors]
    mean_x = sum(xs) / len(xs)
    mean_y = sum(ys) / len(ys)
    denom = sum((x - mean_x) ** 2 for x in xs)
    if denom == 0:
        return None
    return sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys)) / denom


@dataclass(frozen=True)
class Representatives:
    min_time: FrontPoint
    min_memory: FrontPoint
    knee: FrontPoint


def select_representatives(front: ParetoFront) -> Representatives:
    """Fastest, smallest, and the knee (max perpendicular distance from the
    extreme-to-extreme segment in min-max normalized objective space)."""
    if not front.points:
        raise FrontError("empty front")
    points = front.points
    min_memory = min(points, key=lambda p: p.objectives[0])
    min_time = min(points, key=lambda p: p.objectives[1])

    values0 = [p.objectives[0] for p in points]
    values1 = [p.objectives[1] for p in points]
    range0 = max(values0) - min(values0)
    range1 = max(values1) - min(values1)

    def normalized(p: FrontPoint) -> tuple[float, float]:
        x = (p.objectives[0] - min(values0)) / range0 if range0 else 0.0
        y = (p.objectives[1] - min(values1)) / range1 if range1 else 0.0
        return x, y

    ax, ay = normalized(min_memory)
    bx, by = normalized(min_time)
    seg_len = math.hypot(bx - ax, by - ay)

    def perpendicular(p: FrontPoint) -> float:
        if seg_len == 0:
            return 0.0
        px, py = normalized(p)
        return abs((bx - ax) * (ay - py) - (ax - px) * (by - ay)) / seg_len

    def midpoint_distance(p: FrontPoint) -> float:
        px, py = normalized(p)
        return math.hypot(px - 0.5, py - 0.5)

    best = points[0]
    best_key = (perpendicular(best), -midpoint_distance(best))
    for p in points[1:]:
        key = (perpendicular(p), -midpoint_distance(p))
        if key > best_key:  # larger distance wins; ties prefer nearer the midpoint
            best, best_key = p, key
    return Representatives(min_time=min_time, min_memory=min_memory, knee=best)


@dataclass(frozen=True)
class FrontAnalytics:
    hypervolume: float
    reference_point: ObjectiveVector
    front_size: int
    span_percent: tuple[float | None, ...]
    tradeoff_slope: float | None

    def to_dict(self) -> dict:
        return {
            "hypervolume": self.hypervolume,
            "reference_point": list(self.reference_point),
            "front_size": self.front_size,
            "span_percent": list(self.span_percent),
            "tradeoff_slope": self.tradeoff_slope,
        }


def campaign_reference(records: Sequence) -> ObjectiveVector:
    """Reference point: REFERENCE_MARGIN x the per-objective worst ok value.

    A degenerate all-zero objective falls back to a tiny positive bound so
    front points still strictly dominate the reference.
    """
    vectors = [tuple(r.objective_vector) for r in records if r.status == "ok"]
    if not vectors:
        raise FrontError("no successful records")
    reference = []
    for m in range(len(vectors[0])):
        worst = max(v[m] for v in vectors)
        reference.append(worst * REFERENCE_MARGIN if worst > 0 else 1e-9)
    return tuple(reference)


def analyze_front(front: ParetoFront, reference: ObjectiveVector) -> FrontAnalytics:
    return FrontAnalytics(
        hypervolume=hypervolume_2d(front, reference),
        reference_point=tuple(reference),
        front_size=len(front),
        span_percent=spans(front),
        tradeoff_slope=tradeoff_slope(front),
    )


def analyze_records(records: Sequence) -> tuple[ParetoFront, FrontAnalytics]:
    front = extract_front(records)
    return front, analyze_front(front, campaign_reference(records))
