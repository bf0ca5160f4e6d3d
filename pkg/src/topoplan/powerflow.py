"""DC power flow, sensitivity factors, and fast N-1 screening.

Electrical buses are derived from (grid, topology): buses A and B of a
substation are distinct electrical buses only when both carry at least one
online line end; otherwise everything at the substation collapses onto a
single bus. The slack is the lowest-indexed electrical bus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import BUS_A, BUS_B, Grid, TopologyConfig

# Loading assigned to an outage that would island the grid. Any value well
# above 1 keeps the security threshold decision intact.
RHO_ISLAND = 10.0

# |1 - self-shift factor| below this marks an outage as a bridge.
_BRIDGE_TOL = 1e-8


class PowerFlowError(RuntimeError):
    """Power-flow system could not be solved."""


class IslandedGridError(PowerFlowError):
    """The online electrical graph is disconnected."""

    def __init__(self, components):
        self.components = components
        super().__init__(f"grid splits into {len(components)} electrical islands")


@dataclass(frozen=True)
class BusMap:
    """Mapping from grid elements to electrical buses for one topology."""

    n_buses: int
    end_bus: tuple[tuple[int, int], ...]   # per line: electrical bus of each end
    injection_bus: tuple[int, ...]         # per injection: electrical bus
    online_lines: tuple[int, ...]          # line ids in service


def build_bus_map(grid: Grid, topo: TopologyConfig) -> BusMap:
    online = tuple(l for l in range(grid.n_lines) if topo.line_online[l])
    online_set = set(online)

    ends_per_bus: dict[tuple[int, str], int] = {}
    for line in online:
        ln = grid.lines[line]
        for side, sub in ((0, ln.from_sub), (1, ln.to_sub)):
            key = (sub, topo.end_bus(line, side))
            ends_per_bus[key] = ends_per_bus.get(key, 0) + 1

    # Substation is split only when both buses carry online line ends.
    split = {
        sub.id: ends_per_bus.get((sub.id, BUS_A), 0) > 0
        and ends_per_bus.get((sub.id, BUS_B), 0) > 0
        for sub in grid.substations
    }

    def key_of(sub: int, label: str) -> tuple[int, str]:
        return (sub, label if split[sub] else BUS_A)

    # Electrical buses, ordered by (substation, label): any bus that carries
    # an online line end or an injection exists.
    keys = {key_of(sub, label) for sub, label in ends_per_bus}
    for i in range(grid.n_injections):
        keys.add(key_of(grid.injections[i].substation, topo.injection_bus[i]))
    bus_index = {k: idx for idx, k in enumerate(sorted(keys))}

    end_bus = []
    for line in range(grid.n_lines):
        if line in online_set:
            ln = grid.lines[line]
            end_bus.append((
                bus_index[key_of(ln.from_sub, topo.end_bus(line, 0))],
                bus_index[key_of(ln.to_sub, topo.end_bus(line, 1))],
            ))
        else:
            end_bus.append((-1, -1))

    injection_bus = tuple(
        bus_index[key_of(grid.injections[i].substation, topo.injection_bus[i])]
        for i in range(grid.n_injections)
    )
    counter = len(bus_index)
    return BusMap(
        n_buses=counter,
        end_bus=tuple(end_bus),
        injection_bus=injection_bus,
        online_lines=online,
    )


def _connected_components(bus_map: BusMap) -> list[list[int]]:
    n = bus_map.n_buses
    adj: list[list[int]] = [[] for _ in range(n)]
    for line in bus_map.online_lines:
        f, t = bus_map.end_bus[line]
        adj[f].append(t)
        adj[t].append(f)
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        stack = [start]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


def bus_power(grid: Grid, bus_map: BusMap, injections: np.ndarray) -> np.ndarray:
    """Net MW per electrical bus from a per-injection vector."""
    p = np.zeros(bus_map.n_buses)
    np.add.at(p, np.asarray(bus_map.injection_bus), np.asarray(injections, dtype=float))
    return p


@dataclass(frozen=True)
class FlowSolution:
    angles: np.ndarray          # radians per electrical bus
    flows: dict[int, float]     # MW per online line
    loadings: dict[int, float]  # |flow| / p_max per online line


@dataclass
class SensitivityFactors:
    """PTDF/LODF for one (grid, topology) pair.

    `ptdf` has one row per online line and one column per electrical bus;
    the slack column is identically zero. `lodf[l, k]` redistributes the
    pre-outage flow of line k onto line l; bridge outages are flagged in
    `is_bridge` and their LODF column is NaN.
    """

    grid: Grid
    bus_map: BusMap
    slack: int
    ptdf: np.ndarray
    lodf: np.ndarray | None = None
    is_bridge: np.ndarray | None = None

    @property
    def online_lines(self) -> tuple[int, ...]:
        return self.bus_map.online_lines

    def base_flows(self, injections: np.ndarray) -> np.ndarray:
        p = bus_power(self.grid, self.bus_map, injections)
        return self.ptdf @ p


def _susceptance_matrix(grid: Grid, bus_map: BusMap) -> sp.csc_matrix:
    n = bus_map.n_buses
    rows, cols, vals = [], [], []
    for line in bus_map.online_lines:
        b = grid.lines[line].susceptance
        f, t = bus_map.end_bus[line]
        rows += [f, t, f, t]
        cols += [f, t, t, f]
        vals += [b, b, -b, -b]
    return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))


def _require_connected(bus_map: BusMap) -> None:
    comps = _connected_components(bus_map)
    if len(comps) > 1:
        raise IslandedGridError(comps)


def solve_dc(grid: Grid, topo: TopologyConfig, injections) -> FlowSolution:
    """Solve B·theta = P with the slack angle pinned to zero.

    `injections` is a per-injection MW vector, already balanced to zero
    net power.
    """
    injections = np.asarray(injections, dtype=float)
    if injections.shape != (grid.n_injections,):
        raise PowerFlowError(
            f"injection vector has shape {injections.shape}, "
            f"expected ({grid.n_injections},)"
        )
    bus_map = build_bus_map(grid, topo)
    _require_connected(bus_map)

    B = _susceptance_matrix(grid, bus_map)
    p = bus_power(grid, bus_map, injections)

    slack = 0
    keep = np.arange(bus_map.n_buses) != slack
    reduced = B[keep][:, keep].tocsc()
    try:
        theta_red = spla.splu(reduced).solve(p[keep])
    except RuntimeError as exc:
        raise PowerFlowError(f"singular susceptance matrix: {exc}") from exc

    theta = np.zeros(bus_map.n_buses)
    theta[keep] = theta_red

    flows = {}
    loadings = {}
    for line in bus_map.online_lines:
        ln = grid.lines[line]
        f, t = bus_map.end_bus[line]
        flow = ln.susceptance * (theta[f] - theta[t])
        flows[line] = flow
        loadings[line] = abs(flow) / ln.p_max
    return FlowSolution(angles=theta, flows=flows, loadings=loadings)


def line_loadings(sol: FlowSolution) -> dict[int, float]:
    return dict(sol.loadings)


def compute_ptdf(grid: Grid, topo: TopologyConfig, slack: int = 0) -> SensitivityFactors:
    """Injection-shift factors for every online line and electrical bus."""
    bus_map = build_bus_map(grid, topo)
    _require_connected(bus_map)

    n = bus_map.n_buses
    if not (0 <= slack < n):
        raise PowerFlowError(f"slack bus {slack} out of range")
    B = _susceptance_matrix(grid, bus_map)
    keep = np.arange(n) != slack
    reduced = B[keep][:, keep].tocsc()
    try:
        lu = spla.splu(reduced)
    except RuntimeError as exc:
        raise PowerFlowError(f"singular susceptance matrix: {exc}") from exc

    # X maps bus power to angles; slack row and column stay zero.
    X = np.zeros((n, n))
    X[np.ix_(keep, keep)] = lu.solve(np.eye(n - 1))

    lines = bus_map.online_lines
    ptdf = np.zeros((len(lines), n))
    for row, line in enumerate(lines):
        b = grid.lines[line].susceptance
        f, t = bus_map.end_bus[line]
        ptdf[row] = b * (X[f] - X[t])
    return SensitivityFactors(grid=grid, bus_map=bus_map, slack=slack, ptdf=ptdf)


def compute_lodf(factors: SensitivityFactors) -> SensitivityFactors:
    """Fill in outage-distribution factors; bridge outages get flagged."""
    bus_map = factors.bus_map
    lines = bus_map.online_lines
    m = len(lines)
    ends = np.array([bus_map.end_bus[line] for line in lines])

    # h[l, k]: flow change on l from a unit transfer across line k's ends.
    h = factors.ptdf[:, ends[:, 0]] - factors.ptdf[:, ends[:, 1]]
    denom = 1.0 - np.diag(h)
    is_bridge = np.abs(denom) < _BRIDGE_TOL

    lodf = np.full((m, m), np.nan)
    ok = ~is_bridge
    lodf[:, ok] = h[:, ok] / denom[ok]
    np.fill_diagonal(lodf, np.nan)
    factors.lodf = lodf
    factors.is_bridge = is_bridge
    return factors


@dataclass(frozen=True)
class ContingencyReport:
    """Worst loadings over all single-line outages."""

    max_rho_n1: float
    per_outage: dict[int, float]       # line id -> worst loading after outage
    worst_pair: tuple[int, int] | None  # (outaged line, overloaded line)
    islanding_outages: frozenset[int]


def screen_contingencies(
    factors: SensitivityFactors, injections
) -> ContingencyReport:
    """N-1 screening via LODF for a prepared factor set."""
    if factors.lodf is None:
        compute_lodf(factors)
    grid = factors.grid
    lines = factors.online_lines
    injections = np.asarray(injections, dtype=float)
    f0 = factors.base_flows(injections)
    pmax = np.array([grid.lines[line].p_max for line in lines])

    per_outage: dict[int, float] = {}
    islanding: set[int] = set()
    worst_pair = None
    worst = -1.0
    for k, line_k in enumerate(lines):
        if factors.is_bridge[k]:
            per_outage[line_k] = RHO_ISLAND
            islanding.add(line_k)
            if RHO_ISLAND > worst:
                worst = RHO_ISLAND
                worst_pair = (line_k, line_k)
            continue
        post = f0 + factors.lodf[:, k] * f0[k]
        post[k] = 0.0
        rho = np.abs(post) / pmax
        rho[k] = 0.0
        idx = int(np.argmax(rho))
        per_outage[line_k] = float(rho[idx])
        if rho[idx] > worst:
            worst = float(rho[idx])
            worst_pair = (line_k, lines[idx])
    return ContingencyReport(
        max_rho_n1=max(worst, 0.0),
        per_outage=per_outage,
        worst_pair=worst_pair,
        islanding_outages=frozenset(islanding),
    )


def max_rho_n1(grid: Grid, topo: TopologyConfig, injections) -> ContingencyReport:
    """One-shot N-1 screening for a (topology, injection) pair."""
    factors = compute_lodf(compute_ptdf(grid, topo))
    return screen_contingencies(factors, injections)


def flow_table(grid: Grid, sol: FlowSolution) -> str:
    """Tabular dump of flows and loadings for debugging."""
    rows = ["line  from  to    flow_mw      rho"]
    for line, flow in sorted(sol.flows.items()):
        ln = grid.lines[line]
        rows.append(
            f"{line:4d}  {ln.from_sub:4d}  {ln.to_sub:2d}  {flow:9.4f}  {sol.loadings[line]:7.4f}"
        )
    return "\n".join(rows)
