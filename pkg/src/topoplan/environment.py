"""Episodic switching environment and reward functions.

An episode builds the topology for a single timestamp out of at most
three unitary actions starting from the reference configuration. The
terminal reward combines current-hour N-1 security with how long the
formed topology stays secure over the following hours.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .grid import (
    Grid,
    GridError,
    InfeasibleActionError,
    TopologyConfig,
    UnitaryAction,
    apply_unitary_action,
    reference_topology,
    topological_depth,
)
from .powerflow import (
    ContingencyReport,
    IslandedGridError,
    SensitivityFactors,
    compute_lodf,
    compute_ptdf,
    screen_contingencies,
)
from .scenario import N_HOURS, DayScenario

ACTION_BUDGET = 3

# Explicit end-of-episode choice, so an agent can stop below the budget.
TERMINATE = "terminate"


class ScreeningCache:
    """Memoises sensitivity factors per topology for cheap re-screening."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self._factors: dict[TopologyConfig, SensitivityFactors] = {}
        self._rho_day: dict[tuple, float] = {}

    def factors(self, topo: TopologyConfig) -> SensitivityFactors:
        got = self._factors.get(topo)
        if got is None:
            got = compute_lodf(compute_ptdf(self.grid, topo))
            self._factors[topo] = got
        return got

    def report(self, topo: TopologyConfig, injections) -> ContingencyReport:
        return screen_contingencies(self.factors(topo), injections)

    def rho(self, topo: TopologyConfig, injections) -> float:
        return self.report(topo, injections).max_rho_n1

    def rho_day(self, topo: TopologyConfig, day: "DayScenario", hour: int) -> float:
        """Memoised worst N-1 loading per (topology, day, hour)."""
        key = (topo, day.day, hour)
        got = self._rho_day.get(key)
        if got is None:
            got = self.rho(topo, day.hour(hour))
            self._rho_day[key] = got
        return got


def shaping(x: float) -> float:
    """Monotonically decreasing loading score: clamp(1 - x, -2, 1)."""
    return float(np.clip(1.0 - x, -2.0, 1.0))


@dataclass(frozen=True)
class RewardWeights:
    """Scalarisation weights; all non-negative."""

    w1: float
    w2: float
    w3: float = 0.0

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("reward weights must be non-negative")


SSA_WEIGHTS = RewardWeights(0.15, 0.7, 0.15)
AZA_WEIGHTS = RewardWeights(0.95, 0.05)


@dataclass(frozen=True)
class StableWindow:
    """Longest secure run of future hours for one topology."""

    hours: tuple[int, ...]
    aggregate: float  # max of per-hour max rho over the window; 0 if empty

    def __len__(self) -> int:
        return len(self.hours)


@dataclass(frozen=True)
class EnvState:
    grid: Grid
    day: DayScenario
    timestamp: int
    topo: TopologyConfig
    report: ContingencyReport
    loadings: np.ndarray  # base-case loading per line (0 where offline)
    actions_taken: int
    terminal: bool

    @property
    def max_rho_n1(self) -> float:
        return self.report.max_rho_n1


def _observe(grid: Grid, day: DayScenario, i: int, topo: TopologyConfig,
             actions_taken: int, terminal: bool,
             cache: ScreeningCache | None = None) -> EnvState:
    cache = cache or ScreeningCache(grid)
    injections = day.hour(i)
    factors = cache.factors(topo)
    report = screen_contingencies(factors, injections)
    flows = factors.base_flows(injections)
    loadings = np.zeros(grid.n_lines)
    for row, line in enumerate(factors.online_lines):
        loadings[line] = abs(flows[row]) / grid.lines[line].p_max
    return EnvState(
        grid=grid, day=day, timestamp=i, topo=topo, report=report,
        loadings=loadings, actions_taken=actions_taken, terminal=terminal,
    )


def reset(grid: Grid, day: DayScenario, i: int,
          cache: ScreeningCache | None = None) -> EnvState:
    """Initial state: reference topology, flows solved for hour i."""
    if not (1 <= i <= N_HOURS):
        raise ValueError(f"timestamp {i} out of range 1..{N_HOURS}")
    return _observe(grid, day, i, reference_topology(grid), 0, False, cache)


def restart_from(grid: Grid, day: DayScenario, i: int, topo: TopologyConfig,
                 cache: ScreeningCache | None = None) -> EnvState:
    """Like reset, but starting from a carried-over topology (used by the
    whole-day sequence agent)."""
    return _observe(grid, day, i, topo, 0, False, cache)


def step(state: EnvState, action, cache: ScreeningCache | None = None) -> EnvState:
    """Apply one unitary action (or TERMINATE); input state is unchanged."""
    if state.terminal:
        raise GridError("episode already terminated")
    if action == TERMINATE:
        return replace(state, terminal=True)
    if state.actions_taken >= ACTION_BUDGET:
        raise GridError("action budget exhausted; only terminate is allowed")
    if not isinstance(action, UnitaryAction):
        raise GridError(f"invalid action {action!r}")
    topo = apply_unitary_action(state.grid, state.topo, action)
    if topological_depth(state.grid, topo) > ACTION_BUDGET:
        raise InfeasibleActionError("action exceeds the depth budget")
    taken = state.actions_taken + 1
    new = _observe(state.grid, state.day, state.timestamp, topo, taken,
                   taken >= ACTION_BUDGET, cache)
    return new


def stable_window(grid: Grid, topo: TopologyConfig, day: DayScenario, i: int,
                  cache: ScreeningCache | None = None) -> StableWindow:
    """Longest prefix of hours i+1, i+2, ... that stays N-1 secure.

    Islanding counts as unstable through the screening sentinel. The
    aggregate over an empty window is 0.
    """
    cache = cache or ScreeningCache(grid)
    hours = []
    agg = 0.0
    for j in range(i + 1, N_HOURS + 1):
        try:
            rho = cache.rho_day(topo, day, j)
        except IslandedGridError:
            break
        if rho >= 1.0:
            break
        hours.append(j)
        agg = max(agg, rho)
    return StableWindow(hours=tuple(hours), aggregate=agg if hours else 0.0)


def ssa_terminal_reward(final: EnvState, window: StableWindow,
                        w: RewardWeights = SSA_WEIGHTS) -> float:
    """Terminal utility: security now, length of the secure window, and
    worst loading across that window."""
    if not final.terminal:
        raise ValueError("reward is defined on terminal states only")
    r1 = shaping(final.max_rho_n1)
    r2 = float(len(window))
    r3 = shaping(window.aggregate)
    return w.w1 * r1 + w.w2 * r2 + w.w3 * r3


def aza_step_reward(prev_topo: TopologyConfig, cur_topo: TopologyConfig,
                    report: ContingencyReport,
                    w: RewardWeights = AZA_WEIGHTS) -> float:
    """Per-timestamp utility: security plus a bonus for not switching."""
    if prev_topo.grid_fingerprint != cur_topo.grid_fingerprint:
        raise GridError("topologies belong to different grids")
    same = 1.0 if prev_topo == cur_topo else 0.0
    return w.w1 * shaping(report.max_rho_n1) + w.w2 * same


def optimize_injection_topology(grid: Grid, topo: TopologyConfig, injections,
                                cache: ScreeningCache | None = None) -> TopologyConfig:
    """Best injection placement at the manipulated substations.

    Exhaustively enumerates bus assignments of the injections at every
    substation whose branch layout deviates from the reference, keeping
    the branch topology fixed, and returns the assignment with the lowest
    worst N-1 loading. Ties prefer fewer injections on bus B, then the
    lexicographically smallest assignment.
    """
    cache = cache or ScreeningCache(grid)
    ref = reference_topology(grid)
    manipulated = [
        s for s in range(grid.n_substations)
        if any(topo.end_bus(l, sd) != ref.end_bus(l, sd)
               for l, sd in grid.line_ends_at(s))
    ]
    inj_ids = [i for s in manipulated for i in grid.injections_at(s)]
    if not inj_ids:
        return topo

    buses_with_lines = {
        s: {topo.end_bus(l, sd) for l, sd in grid.line_ends_at(s)
            if topo.line_online[l]}
        for s in manipulated
    }

    best = None
    for pattern in itertools.product("AB", repeat=len(inj_ids)):
        assignment = list(topo.injection_bus)
        feasible = True
        for inj, bus in zip(inj_ids, pattern):
            sub = grid.injections[inj].substation
            if bus not in buses_with_lines[sub]:
                feasible = False
                break
            assignment[inj] = bus
        if not feasible:
            continue
        candidate = TopologyConfig(
            grid_fingerprint=topo.grid_fingerprint,
            branch_bus=topo.branch_bus,
            injection_bus=tuple(assignment),
            line_online=topo.line_online,
        )
        try:
            rho = cache.rho(candidate, injections)
        except IslandedGridError:
            continue
        n_on_b = pattern.count("B")
        key = (rho, n_on_b, pattern)
        if best is None or key < best[0]:
            best = (key, candidate)
    if best is None:
        raise InfeasibleActionError(
            "no feasible injection assignment at the manipulated substations"
        )
    return best[1]
