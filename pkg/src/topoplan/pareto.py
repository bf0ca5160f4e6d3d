"""Non-dominated filtering, 2-D hypervolume, and per-day plan metrics.

Objective points are (worst N-1 loading, number of switching timestamps),
both minimised.
"""

from __future__ import annotations

from dataclasses import dataclass

# Fixed evaluation reference point for the hypervolume.
HV_REFERENCE = (3.1, 25.0)

SOLVED_THRESHOLD = 1.0


def non_dominated_filter(points):
    """All points not weakly dominated by a distinct point; duplicates
    collapse to a single representative."""
    unique = sorted(set((float(x), float(y)) for x, y in points))
    kept = []
    for p in unique:
        dominated = any(
            q != p and q[0] <= p[0] and q[1] <= p[1] for q in unique
        )
        if not dominated:
            kept.append(p)
    return kept


def hypervolume2d(points, ref=HV_REFERENCE) -> float:
    """Area dominated by the point set inside the reference box.

    Points are clipped to the box: anything at or beyond the reference on
    an axis contributes nothing on that axis.
    """
    rx, ry = float(ref[0]), float(ref[1])
    inside = [(float(x), float(y)) for x, y in points if x < rx and y < ry]
    front = non_dominated_filter(inside)
    if not front:
        return 0.0
    # ascending x means descending y on a non-dominated front
    area = 0.0
    for i, (x, y) in enumerate(front):
        next_x = front[i + 1][0] if i + 1 < len(front) else rx
        area += (next_x - x) * (ry - y)
    return area


@dataclass(frozen=True)
class DayMetrics:
    day: int
    approach: str
    best_max_rho_n1: float
    solved: bool
    n_switching_of_best: int
    hypervolume: float
    n_plans: int


def day_metrics(day: int, approach: str, objectives,
                ref=HV_REFERENCE) -> DayMetrics:
    """Per-day statistics over a plan set's objective pairs.

    `objectives` is a non-empty collection of (max rho n-1, n switching).
    The reported switching count belongs to the plan achieving the best
    loading (ties resolved toward fewer switches).
    """
    objectives = [(float(r), int(s)) for r, s in objectives]
    if not objectives:
        raise ValueError(f"day {day}: empty plan set")
    best_rho, best_switch = min(objectives)
    return DayMetrics(
        day=day,
        approach=approach,
        best_max_rho_n1=best_rho,
        solved=best_rho < SOLVED_THRESHOLD,
        n_switching_of_best=best_switch,
        hypervolume=hypervolume2d(objectives, ref),
        n_plans=len(objectives),
    )
