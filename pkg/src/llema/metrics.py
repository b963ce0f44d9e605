"""Evaluation metrics over a candidate-record stream.

All functions are pure over immutable record lists. Records are duck-typed:
they need `.score.success`, `.properties.get(...)`, `.iteration`, and an
optional `.structure` (None for unparseable candidates).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from .oracle import ReferenceDB

STABILITY_HULL_MAX = 0.1  # eV/atom


@dataclass(frozen=True)
class ParetoPoint:
    formula: str
    x: float
    y: float
    record: object = None


@dataclass(frozen=True)
class MetricsBlock:
    hit_rate: float
    stability_rate: float
    stability_among_valid: float
    memorization_rate: float
    pareto_front: tuple[ParetoPoint, ...]
    element_coverage: dict[str, float]
    trace: tuple[tuple[int, float], ...]  # (window index, valid fraction)


def hit_rate(records: Sequence) -> float:
    """Percentage of records satisfying every constraint; 0 for no records."""
    if not records:
        return 0.0
    return 100.0 * sum(1 for r in records if r.score.success) / len(records)


def _is_stable(record) -> bool:
    if not record.score.success:
        return False
    hull = record.properties.get("energy_above_hull")
    return hull is not None and hull <= STABILITY_HULL_MAX


def stability_rate(records: Sequence) -> float:
    """Percentage of records that are both valid and hull-stable."""
    if not records:
        return 0.0
    return 100.0 * sum(1 for r in records if _is_stable(r)) / len(records)


def stability_among_valid(records: Sequence) -> float:
    """Stable fraction restricted to constraint-satisfying records."""
    valid = [r for r in records if r.score.success]
    if not valid:
        return 0.0
    return 100.0 * sum(1 for r in valid if _is_stable(r)) / len(valid)


def memorization_rate(records: Sequence, db: ReferenceDB) -> float:
    """Percentage of records whose reduced formula has an exact database key."""
    if not records:
        return 0.0
    hits = sum(
        1
        for r in records
        if r.structure is not None and r.structure.reduced_formula in db
    )
    return 100.0 * hits / len(records)


def element_coverage(records: Sequence) -> dict[str, float]:
    """Occurrence count per element over records, normalized by the max count."""
    counts: dict[str, int] = {}
    for r in records:
        if r.structure is None:
            continue
        for el in r.structure.elements():
            counts[el] = counts.get(el, 0) + 1
    if not counts:
        return {}
    top = max(counts.values())
    return {el: counts[el] / top for el in sorted(counts)}


def convergence_trace(records: Sequence, window: int) -> list[tuple[int, float]]:
    """Valid fraction per window of consecutive iterations."""
    if window < 1:
        raise ValueError("window must be >= 1")
    buckets: dict[int, list[bool]] = {}
    for r in records:
        buckets.setdefault(r.iteration // window, []).append(r.score.success)
    return [(idx, sum(flags) / len(flags)) for idx, flags in sorted(buckets.items())]


def pareto_front(
    points: Sequence[ParetoPoint],
    x_direction: str = "maximize",
    y_direction: str = "maximize",
) -> list[ParetoPoint]:
    """Maximal non-dominated subset under the declared axis directions.

    p dominates q iff p is no worse on both axes and strictly better on at
    least one; coordinate duplicates are all retained.
    """
    if not points:
        return []
    xs = np.array([p.x for p in points], dtype=np.float64)
    ys = np.array([p.y for p in points], dtype=np.float64)
    if x_direction == "minimize":
        xs = -xs
    if y_direction == "minimize":
        ys = -ys
    keep = _accel.nondominated_mask(xs, ys)
    return [p for p, k in zip(points, keep) if k]


def pareto_points(records: Sequence, axes) -> list[ParetoPoint]:
    """Constraint-satisfying records with both axis values present."""
    (x_prop, _), (y_prop, _) = axes
    points = []
    for r in records:
        if not r.score.success:
            continue
        x = r.properties.get(x_prop)
        y = r.properties.get(y_prop)
        if x is None or y is None:
            continue
        formula = r.structure.reduced_formula if r.structure is not None else ""
        points.append(ParetoPoint(formula=formula, x=x, y=y, record=r))
    return points


def compute_metrics(records: Sequence, task, db: ReferenceDB, window: int = 10) -> MetricsBlock:
    points = pareto_points(records, task.pareto_axes)
    (_, x_dir), (_, y_dir) = task.pareto_axes
    front = pareto_front(points, x_dir, y_dir)
    return MetricsBlock(
        hit_rate=hit_rate(records),
        stability_rate=stability_rate(records),
        stability_among_valid=stability_among_valid(records),
        memorization_rate=memorization_rate(records, db),
        pareto_front=tuple(front),
        element_coverage=element_coverage(records),
        trace=tuple(convergence_trace(records, window)),
    )


def metrics_to_summary(block: MetricsBlock) -> dict:
    """The summary.json payload (canonical field set, plain types only)."""
    return {
        "hit_rate": block.hit_rate,
        "stability_rate": block.stability_rate,
        "stability_among_valid": block.stability_among_valid,
        "memorization_rate": block.memorization_rate,
        "pareto_front": [
            {"formula": p.formula, "x": p.x, "y": p.y} for p in block.pareto_front
        ],
        "element_coverage": dict(block.element_coverage),
        "trace": [
            {"window": idx, "valid_fraction": fraction} for idx, fraction in block.trace
        ],
    }


def pareto_csv_rows(records: Sequence, task) -> list[tuple[float, float, str, int]]:
    """Rows of (x, y, formula, on_front) for pareto.csv."""
    points = pareto_points(records, task.pareto_axes)
    (_, x_dir), (_, y_dir) = task.pareto_axes
    front_ids = {id(p) for p in pareto_front(points, x_dir, y_dir)}
    return [(p.x, p.y, p.formula, int(id(p) in front_ids)) for p in points]
