"""Day-plan assembly from per-timestamp topology suggestions.

A plan switches topology at a set of timestamps. Each segment holds the
topology suggested at its opening timestamp; before the first switch the
reference topology is active. The plan's security objective is the worst
screened loading over all 24 hours, traded off against the number of
switching timestamps.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .environment import ScreeningCache
from .grid import Grid, TopologyConfig, reference_topology, topology_from_doc, topology_to_doc
from .pareto import non_dominated_filter
from .powerflow import RHO_ISLAND, IslandedGridError, PowerFlowError
from .scenario import N_HOURS, DayScenario

PLAN_FORMAT_VERSION = 1

BRUTE_FORCE_BUDGET = 2_000_000


class PlannerError(ValueError):
    pass


@dataclass(frozen=True)
class CostMatrix:
    """`value[i][j-1]`: worst N-1 loading of the topology suggested at
    timestamp i simulated with the injections of hour j (j >= i).
    Row 0 holds the reference topology costs for every hour."""

    values: np.ndarray  # shape (T+1, T); NaN where undefined (j < i)

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    def cost(self, row: int, hour: int) -> float:
        v = self.values[row, hour - 1]
        if math.isnan(v):
            raise PlannerError(f"cost M[{row}][{hour}] is undefined")
        return float(v)


@dataclass(frozen=True)
class PlanCandidate:
    switch_times: tuple[int, ...]           # strictly increasing hours
    max_rho_n1: float
    n_switching: int
    hourly_cost_sum: float
    topologies: tuple[TopologyConfig, ...] = ()  # active topology per hour
    provenance: dict = field(default_factory=dict, compare=False)

    @property
    def objectives(self) -> tuple[float, int]:
        return (self.max_rho_n1, self.n_switching)


def build_cost_matrix(suggestions: dict[int, TopologyConfig], grid: Grid,
                      day: DayScenario,
                      cache: ScreeningCache | None = None) -> CostMatrix:
    """Screen every suggested topology against its own and all later hours."""
    T = N_HOURS
    missing = [i for i in range(1, T + 1) if i not in suggestions]
    if missing:
        raise PlannerError(f"missing suggestions for timestamps {missing}")
    cache = cache or ScreeningCache(grid)
    ref = reference_topology(grid)

    values = np.full((T + 1, T), np.nan)
    rows = [ref] + [suggestions[i] for i in range(1, T + 1)]
    for i, topo in enumerate(rows):
        for j in range(max(i, 1), T + 1):
            try:
                values[i, j - 1] = cache.rho_day(topo, day, j)
            except (IslandedGridError, PowerFlowError):
                values[i, j - 1] = RHO_ISLAND
    return CostMatrix(values=values)


def _plan_value(M: CostMatrix, switches: tuple[int, ...]):
    """(objective, hourly cost sum) of a plan following the segment rule."""
    worst = -math.inf
    total = 0.0
    row = 0
    times = list(switches)
    for j in range(1, M.horizon + 1):
        if times and times[0] == j:
            row = j
            times.pop(0)
        c = M.cost(row, j)
        worst = max(worst, c)
        total += c
    return worst, total


def _candidate_key(M: CostMatrix, switches: tuple[int, ...]):
    worst, total = _plan_value(M, switches)
    return (worst, len(switches), total, switches)


def brute_force_best_plan(M: CostMatrix, n_switch: int,
                          budget: int = BRUTE_FORCE_BUDGET) -> PlanCandidate:
    """Literal enumeration over all switch-time combinations of size up to
    `n_switch`; the exactness oracle for the dynamic program."""
    T = M.horizon
    if not (1 <= n_switch <= T):
        raise PlannerError(f"switch count {n_switch} out of range 1..{T}")
    n_plans = sum(math.comb(T, k) for k in range(n_switch + 1))
    if n_plans > budget:
        raise PlannerError(
            f"{n_plans} combinations exceed the enumeration budget {budget}"
        )
    best = None
    for k in range(n_switch + 1):
        for combo in itertools.combinations(range(1, T + 1), k):
            key = _candidate_key(M, combo)
            if best is None or key < best:
                best = key
    worst, used, total, times = best
    return PlanCandidate(
        switch_times=times, max_rho_n1=worst,
        n_switching=len(times), hourly_cost_sum=total,
    )


def best_plan_for_switch_count(M: CostMatrix, n_switch: int) -> PlanCandidate:
    """Best plan using at most `n_switch` switches.

    Dynamic program over (hour, switches used, last switch); the running
    maximum of segment costs is the optimised objective. Ties prefer fewer
    switches, then smaller summed hourly cost, then earlier switch times.
    """
    T = M.horizon
    if not (1 <= n_switch <= T):
        raise PlannerError(f"switch count {n_switch} out of range 1..{T}")

    # state -> (running max, cost sum, switch times); state = (k, last row)
    states: dict[tuple[int, int], tuple[float, float, tuple[int, ...]]] = {}
    c = M.cost(0, 1)
    states[(0, 0)] = (c, c, ())
    if n_switch >= 1:
        c = M.cost(1, 1)
        states[(1, 1)] = (c, c, (1,))

    for j in range(2, T + 1):
        nxt: dict[tuple[int, int], tuple[float, float, tuple[int, ...]]] = {}

        def offer(key, value):
            cur = nxt.get(key)
            if cur is None or (value[0], value[1], value[2]) < (cur[0], cur[1], cur[2]):
                nxt[key] = value

        for (k, row), (worst, total, times) in states.items():
            c = M.cost(row, j)
            offer((k, row), (max(worst, c), total + c, times))
            if k < n_switch:
                c = M.cost(j, j)
                offer((k + 1, j), (max(worst, c), total + c, times + (j,)))
        states = nxt

    best = None
    for (k, _row), (worst, total, times) in states.items():
        key = (worst, len(times), total, times)
        if best is None or key < best:
            best = key
    worst, _, total, times = best
    return PlanCandidate(
        switch_times=times, max_rho_n1=worst,
        n_switching=len(times), hourly_cost_sum=total,
    )


def _attach_topologies(plan: PlanCandidate, suggestions, grid: Grid,
                       provenance: dict) -> PlanCandidate:
    """Resolve the active topology per hour and recount actual switches
    (a 'switch' to an identical topology does not change the plan)."""
    ref = reference_topology(grid)
    times = list(plan.switch_times)
    active = ref
    per_hour = []
    real_switches = []
    for j in range(1, N_HOURS + 1):
        if times and times[0] == j:
            new = suggestions[j]
            if new != active:
                real_switches.append(j)
            active = new
            times.pop(0)
        per_hour.append(active)
    return PlanCandidate(
        switch_times=tuple(real_switches),
        max_rho_n1=plan.max_rho_n1,
        n_switching=len(real_switches),
        hourly_cost_sum=plan.hourly_cost_sum,
        topologies=tuple(per_hour),
        provenance=provenance,
    )


def generate_plan_set(suggestions: dict[int, TopologyConfig], grid: Grid,
                      day: DayScenario, provenance: dict | None = None,
                      cache: ScreeningCache | None = None) -> list[PlanCandidate]:
    """Reference plan plus the best plan per switch budget, with dominated
    plans removed; sorted by switching count."""
    cache = cache or ScreeningCache(grid)
    M = build_cost_matrix(suggestions, grid, day, cache)
    provenance = dict(provenance or {})
    provenance.setdefault("day", day.day)

    ref = reference_topology(grid)
    ref_worst, ref_total = _plan_value(M, ())
    candidates = [PlanCandidate(
        switch_times=(), max_rho_n1=ref_worst, n_switching=0,
        hourly_cost_sum=ref_total, topologies=(ref,) * N_HOURS,
        provenance={**provenance, "plan": "reference"},
    )]
    for k in range(1, N_HOURS + 1):
        plan = best_plan_for_switch_count(M, k)
        candidates.append(_attach_topologies(
            plan, suggestions, grid, {**provenance, "plan": f"n_switch<={k}"}
        ))
    return _filter_plans(candidates)


def _filter_plans(candidates: list[PlanCandidate]) -> list[PlanCandidate]:
    front = set(non_dominated_filter([p.objectives for p in candidates]))
    kept: dict[tuple[float, int], PlanCandidate] = {}
    for p in candidates:
        obj = (p.max_rho_n1, p.n_switching)
        if obj in front and obj not in kept:
            kept[obj] = p
    return sorted(kept.values(), key=lambda p: (p.n_switching, p.max_rho_n1))


def expert_baseline_plans(grid: Grid, day: DayScenario,
                          expert_topologies: dict[str, TopologyConfig],
                          cache: ScreeningCache | None = None
                          ) -> dict[str, list[PlanCandidate]]:
    """Fixed-topology baselines: the reference held all day, and each
    expert topology applied from hour 1 onward. The expert set is their
    union with dominated plans removed."""
    cache = cache or ScreeningCache(grid)
    ref = reference_topology(grid)

    def held_all_day(topo: TopologyConfig, name: str) -> PlanCandidate:
        costs = []
        for j in range(1, N_HOURS + 1):
            try:
                costs.append(cache.rho_day(topo, day, j))
            except (IslandedGridError, PowerFlowError):
                costs.append(RHO_ISLAND)
        switches = () if topo == ref else (1,)
        return PlanCandidate(
            switch_times=switches,
            max_rho_n1=max(costs),
            n_switching=len(switches),
            hourly_cost_sum=sum(costs),
            topologies=(topo,) * N_HOURS,
            provenance={"day": day.day, "plan": name},
        )

    plans = {"reference": [held_all_day(ref, "reference")]}
    for name, topo in expert_topologies.items():
        plans[name] = [held_all_day(topo, name)]
    pooled = [p for group in plans.values() for p in group]
    plans["expert_set"] = _filter_plans(pooled)
    return plans


def replay_plan_objective(plan: PlanCandidate, grid: Grid, day: DayScenario,
                          cache: ScreeningCache | None = None) -> float:
    """Recompute the plan's security objective hour by hour through the
    power-flow engine."""
    cache = cache or ScreeningCache(grid)
    if len(plan.topologies) != N_HOURS:
        raise PlannerError("plan has no per-hour topologies to replay")
    worst = -math.inf
    for j, topo in enumerate(plan.topologies, start=1):
        try:
            worst = max(worst, cache.rho_day(topo, day, j))
        except (IslandedGridError, PowerFlowError):
            worst = max(worst, RHO_ISLAND)
    return worst


# --- plan document I/O -----------------------------------------------------

def plans_to_doc(day: DayScenario, agent: str,
                 plans: list[PlanCandidate]) -> dict:
    entries = []
    for p in plans:
        topo_ids: list[int] = []
        distinct: list[TopologyConfig] = []
        for topo in p.topologies:
            if topo not in distinct:
                distinct.append(topo)
            topo_ids.append(distinct.index(topo))
        entries.append({
            "switch_times": list(p.switch_times),
            "objectives": {"max_rho_n1": p.max_rho_n1,
                           "n_switching": p.n_switching},
            "hourly_cost_sum": p.hourly_cost_sum,
            "hourly_topology": topo_ids,
            "topologies": [topology_to_doc(t) for t in distinct],
            "provenance": {k: p.provenance[k] for k in sorted(p.provenance)},
        })
    return {
        "format_version": PLAN_FORMAT_VERSION,
        "day": day.day,
        "agent": agent,
        "plans": entries,
    }


def plans_from_doc(doc: dict) -> tuple[int, str, list[PlanCandidate]]:
    if doc.get("format_version") != PLAN_FORMAT_VERSION:
        raise PlannerError(
            f"unsupported plan format_version {doc.get('format_version')!r}"
        )
    plans = []
    for entry in doc["plans"]:
        distinct = [topology_from_doc(t) for t in entry["topologies"]]
        topologies = tuple(distinct[i] for i in entry["hourly_topology"])
        plans.append(PlanCandidate(
            switch_times=tuple(entry["switch_times"]),
            max_rho_n1=float(entry["objectives"]["max_rho_n1"]),
            n_switching=int(entry["objectives"]["n_switching"]),
            hourly_cost_sum=float(entry["hourly_cost_sum"]),
            topologies=topologies,
            provenance=dict(entry["provenance"]),
        ))
    return int(doc["day"]), str(doc["agent"]), plans


def save_plans(path, day: DayScenario, agent: str,
               plans: list[PlanCandidate]) -> None:
    with open(path, "w") as fh:
        json.dump(plans_to_doc(day, agent, plans), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_plans(path) -> tuple[int, str, list[PlanCandidate]]:
    with open(path) as fh:
        return plans_from_doc(json.load(fh))
