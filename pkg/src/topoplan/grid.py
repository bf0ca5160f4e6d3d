"""Static grid description, switching topologies, and unitary actions.

A grid is an undirected graph of substations joined by transmission lines.
Every substation carries two buses (A and B); line ends and injections can
be reassigned between them, which changes the electrical topology without
changing the physical graph.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field

BUS_A = "A"
BUS_B = "B"
BUS_LABELS = (BUS_A, BUS_B)

GRID_FORMAT_VERSION = 1


class GridError(ValueError):
    """Structural problem in a grid description or topology."""


class InfeasibleActionError(GridError):
    """A switching action would produce an invalid local configuration."""


@dataclass(frozen=True)
class Substation:
    id: int


@dataclass(frozen=True)
class Line:
    id: int
    from_sub: int
    to_sub: int
    susceptance: float
    p_max: float


@dataclass(frozen=True)
class Injection:
    id: int
    substation: int
    kind: str  # "generator" | "load"


@dataclass(frozen=True)
class Grid:
    """Immutable network description.

    Element ids equal their position in the corresponding tuple.
    """

    substations: tuple[Substation, ...]
    lines: tuple[Line, ...]
    injections: tuple[Injection, ...]
    fingerprint: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "fingerprint", _fingerprint(self))

    @property
    def n_substations(self) -> int:
        return len(self.substations)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_injections(self) -> int:
        return len(self.injections)

    def line_ends_at(self, sub: int) -> list[tuple[int, int]]:
        """All (line id, side) pairs attached to a substation. Side 0 is
        the from-end, side 1 the to-end."""
        ends = []
        for ln in self.lines:
            if ln.from_sub == sub:
                ends.append((ln.id, 0))
            if ln.to_sub == sub:
                ends.append((ln.id, 1))
        return ends

    def injections_at(self, sub: int) -> list[int]:
        return [inj.id for inj in self.injections if inj.substation == sub]

    def generator_ids(self) -> list[int]:
        return [inj.id for inj in self.injections if inj.kind == "generator"]

    def load_ids(self) -> list[int]:
        return [inj.id for inj in self.injections if inj.kind == "load"]


def _fingerprint(grid: Grid) -> str:
    payload = json.dumps(
        {
            "subs": [s.id for s in grid.substations],
            "lines": [(l.id, l.from_sub, l.to_sub, l.susceptance, l.p_max) for l in grid.lines],
            "inj": [(i.id, i.substation, i.kind) for i in grid.injections],
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TopologyConfig:
    """Full switching state of one grid.

    ``branch_bus[line][side]`` is the bus label of that line end,
    ``injection_bus[i]`` the bus label of injection *i*, and
    ``line_online[line]`` whether the line is in service.
    """

    grid_fingerprint: str
    branch_bus: tuple[tuple[str, str], ...]
    injection_bus: tuple[str, ...]
    line_online: tuple[bool, ...]

    def end_bus(self, line: int, side: int) -> str:
        return self.branch_bus[line][side]


@dataclass(frozen=True)
class UnitaryAction:
    """Reconfigure a single substation, or toggle a single line.

    For a substation action, ``end_buses`` fixes every line end at the
    substation and ``injection_buses`` every injection there. For a line
    action only ``line`` and ``online`` are set.
    """

    kind: str  # "reconfigure" | "line_status"
    substation: int = -1
    end_buses: tuple[tuple[tuple[int, int], str], ...] = ()
    injection_buses: tuple[tuple[int, str], ...] = ()
    line: int = -1
    online: bool = True

    def sort_key(self) -> tuple:
        # Line-status actions order after substation actions.
        if self.kind == "reconfigure":
            return (0, self.substation, self.end_buses, self.injection_buses)
        return (1, self.line, self.online)


def build_grid(doc: dict) -> Grid:
    """Validate a parsed grid description document and build the Grid.

    Raises GridError naming the first violated invariant.
    """
    version = doc.get("format_version")
    if version != GRID_FORMAT_VERSION:
        raise GridError(f"unsupported grid format_version: {version!r}")

    subs = tuple(Substation(id=i) for i in range(len(doc["substations"])))
    n = len(subs)

    lines = []
    for i, entry in enumerate(doc["lines"]):
        f, t = int(entry["from"]), int(entry["to"])
        b, pmax = float(entry["susceptance"]), float(entry["p_max"])
        if not (0 <= f < n) or not (0 <= t < n):
            raise GridError(f"line {i} references unknown substation ({f}, {t})")
        if f == t:
            raise GridError(f"line {i} is a self-loop at substation {f}")
        if b <= 0:
            raise GridError(f"line {i} has non-positive susceptance {b}")
        if pmax <= 0:
            raise GridError(f"line {i} has non-positive thermal limit {pmax}")
        lines.append(Line(id=i, from_sub=f, to_sub=t, susceptance=b, p_max=pmax))

    injections = []
    for i, entry in enumerate(doc["injections"]):
        s = int(entry["substation"])
        kind = entry["kind"]
        if not (0 <= s < n):
            raise GridError(f"injection {i} references unknown substation {s}")
        if kind not in ("generator", "load"):
            raise GridError(f"injection {i} has unknown kind {kind!r}")
        injections.append(Injection(id=i, substation=s, kind=kind))

    grid = Grid(substations=subs, lines=tuple(lines), injections=tuple(injections))
    if not _reference_graph_connected(grid):
        raise GridError("grid is disconnected with all elements on bus A")
    return grid


def _reference_graph_connected(grid: Grid) -> bool:
    if grid.n_substations == 0:
        return False
    adj: dict[int, set[int]] = {s.id: set() for s in grid.substations}
    for ln in grid.lines:
        adj[ln.from_sub].add(ln.to_sub)
        adj[ln.to_sub].add(ln.from_sub)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == grid.n_substations


def grid_to_doc(grid: Grid) -> dict:
    return {
        "format_version": GRID_FORMAT_VERSION,
        "substations": [{"id": s.id} for s in grid.substations],
        "lines": [
            {"id": l.id, "from": l.from_sub, "to": l.to_sub,
             "susceptance": l.susceptance, "p_max": l.p_max}
            for l in grid.lines
        ],
        "injections": [
            {"id": i.id, "substation": i.substation, "kind": i.kind}
            for i in grid.injections
        ],
    }


def load_grid(path) -> Grid:
    with open(path) as fh:
        return build_grid(json.load(fh))


def save_grid(grid: Grid, path) -> None:
    with open(path, "w") as fh:
        json.dump(grid_to_doc(grid), fh, indent=1, sort_keys=True)
        fh.write("\n")


def reference_topology(grid: Grid) -> TopologyConfig:
    """All line ends and injections on bus A, every line online."""
    return TopologyConfig(
        grid_fingerprint=grid.fingerprint,
        branch_bus=tuple((BUS_A, BUS_A) for _ in grid.lines),
        injection_bus=tuple(BUS_A for _ in grid.injections),
        line_online=tuple(True for _ in grid.lines),
    )


def _check_same_grid(grid: Grid, topo: TopologyConfig) -> None:
    if topo.grid_fingerprint != grid.fingerprint:
        raise GridError("topology belongs to a different grid")


def apply_unitary_action(grid: Grid, topo: TopologyConfig, action: UnitaryAction) -> TopologyConfig:
    """Return a new configuration with the action applied.

    Rejects actions that would leave an injection alone on a bus with no
    connected line at its substation (infeasible local configuration).
    """
    _check_same_grid(grid, topo)

    if action.kind == "line_status":
        if not (0 <= action.line < grid.n_lines):
            raise GridError(f"unknown line {action.line}")
        online = list(topo.line_online)
        online[action.line] = action.online
        return TopologyConfig(
            grid_fingerprint=topo.grid_fingerprint,
            branch_bus=topo.branch_bus,
            injection_bus=topo.injection_bus,
            line_online=tuple(online),
        )

    if action.kind != "reconfigure":
        raise GridError(f"unknown action kind {action.kind!r}")
    sub = action.substation
    if not (0 <= sub < grid.n_substations):
        raise GridError(f"unknown substation {sub}")

    local_ends = set(grid.line_ends_at(sub))
    local_injs = set(grid.injections_at(sub))
    if {e for e, _ in action.end_buses} != local_ends:
        raise GridError(f"action does not cover all line ends at substation {sub}")
    if {i for i, _ in action.injection_buses} != local_injs:
        raise GridError(f"action does not cover all injections at substation {sub}")

    branch_bus = [list(pair) for pair in topo.branch_bus]
    for (line, side), bus in action.end_buses:
        branch_bus[line][side] = bus
    injection_bus = list(topo.injection_bus)
    for inj, bus in action.injection_buses:
        injection_bus[inj] = bus

    new = TopologyConfig(
        grid_fingerprint=topo.grid_fingerprint,
        branch_bus=tuple(tuple(p) for p in branch_bus),
        injection_bus=tuple(injection_bus),
        line_online=topo.line_online,
    )
    _check_local_feasibility(grid, new, sub)
    return new


def _check_local_feasibility(grid: Grid, topo: TopologyConfig, sub: int) -> None:
    """An injection must sit on a bus that has at least one online line end
    at the same substation."""
    ends = grid.line_ends_at(sub)
    buses_with_lines = {
        topo.end_bus(line, side) for line, side in ends if topo.line_online[line]
    }
    for inj in grid.injections_at(sub):
        if topo.injection_bus[inj] not in buses_with_lines:
            raise InfeasibleActionError(
                f"injection {inj} stranded on bus {topo.injection_bus[inj]} "
                f"of substation {sub}"
            )


def local_config_differs(grid: Grid, a: TopologyConfig, b: TopologyConfig, sub: int) -> bool:
    for line, side in grid.line_ends_at(sub):
        if a.end_bus(line, side) != b.end_bus(line, side):
            return True
    for inj in grid.injections_at(sub):
        if a.injection_bus[inj] != b.injection_bus[inj]:
            return True
    return False


def reconfigure_action(grid: Grid, target: TopologyConfig, sub: int) -> UnitaryAction:
    """The single action that sets substation `sub` to its state in `target`."""
    end_buses = tuple(
        ((line, side), target.end_bus(line, side))
        for line, side in sorted(grid.line_ends_at(sub))
    )
    injection_buses = tuple(
        (inj, target.injection_bus[inj]) for inj in sorted(grid.injections_at(sub))
    )
    return UnitaryAction(
        kind="reconfigure", substation=sub,
        end_buses=end_buses, injection_buses=injection_buses,
    )


def decompose_target(grid: Grid, current: TopologyConfig, target: TopologyConfig) -> list[UnitaryAction]:
    """Ordered unitary actions turning `current` into `target`.

    Substation reconfigurations come first in ascending substation index,
    line-status changes last in ascending line index.
    """
    _check_same_grid(grid, current)
    _check_same_grid(grid, target)

    actions: list[UnitaryAction] = []
    for sub in range(grid.n_substations):
        if local_config_differs(grid, current, target, sub):
            actions.append(reconfigure_action(grid, target, sub))
    for line in range(grid.n_lines):
        if current.line_online[line] != target.line_online[line]:
            actions.append(UnitaryAction(kind="line_status", line=line,
                                         online=target.line_online[line]))
    return actions


def topological_depth(grid: Grid, topo: TopologyConfig) -> int:
    """Substations deviating from all-bus-A, plus offline lines."""
    _check_same_grid(grid, topo)
    ref = reference_topology(grid)
    depth = sum(
        1 for sub in range(grid.n_substations)
        if local_config_differs(grid, topo, ref, sub)
    )
    depth += sum(1 for online in topo.line_online if not online)
    return depth


def topology_distance(grid: Grid, a: TopologyConfig, b: TopologyConfig) -> int:
    """Differing substations plus lines with differing status; a metric."""
    _check_same_grid(grid, a)
    _check_same_grid(grid, b)
    d = sum(
        1 for sub in range(grid.n_substations)
        if local_config_differs(grid, a, b, sub)
    )
    d += sum(1 for x, y in zip(a.line_online, b.line_online) if x != y)
    return d


def topology_to_doc(topo: TopologyConfig) -> dict:
    return {
        "grid_fingerprint": topo.grid_fingerprint,
        "branch_bus": [list(p) for p in topo.branch_bus],
        "injection_bus": list(topo.injection_bus),
        "line_online": [bool(x) for x in topo.line_online],
    }


def topology_from_doc(doc: dict) -> TopologyConfig:
    return TopologyConfig(
        grid_fingerprint=doc["grid_fingerprint"],
        branch_bus=tuple(tuple(p) for p in doc["branch_bus"]),
        injection_bus=tuple(doc["injection_bus"]),
        line_online=tuple(bool(x) for x in doc["line_online"]),
    )


def is_electrically_connected(grid: Grid, topo: TopologyConfig) -> bool:
    """Whether the online electrical graph is a single component.

    Buses A/B of a substation are distinct nodes only when both carry an
    online line end (the same merge rule the power-flow solver applies).
    """
    ends_per_bus: dict[tuple[int, str], int] = {}
    online = [l for l in range(grid.n_lines) if topo.line_online[l]]
    for line in online:
        ln = grid.lines[line]
        for side, sub in ((0, ln.from_sub), (1, ln.to_sub)):
            key = (sub, topo.end_bus(line, side))
            ends_per_bus[key] = ends_per_bus.get(key, 0) + 1

    def node(sub: int, label: str) -> tuple[int, str]:
        if ends_per_bus.get((sub, BUS_A), 0) > 0 and ends_per_bus.get((sub, BUS_B), 0) > 0:
            return (sub, label)
        return (sub, BUS_A)

    nodes: set[tuple[int, str]] = set()
    adj: dict[tuple[int, str], list[tuple[int, str]]] = {}
    for line in online:
        ln = grid.lines[line]
        u = node(ln.from_sub, topo.end_bus(line, 0))
        v = node(ln.to_sub, topo.end_bus(line, 1))
        nodes.update((u, v))
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    for i in range(grid.n_injections):
        nodes.add(node(grid.injections[i].substation, topo.injection_bus[i]))

    if not nodes:
        return False
    start = next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj.get(u, []):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(nodes)


@dataclass(frozen=True)
class TargetTopologySet:
    """Pre-generated switching targets, each of depth at most three."""

    topologies: tuple[TopologyConfig, ...]
    depths: tuple[int, ...]


def _local_splits(grid: Grid, sub: int) -> list[tuple[tuple[tuple[int, int], str], ...]]:
    """All branch-end partitions of one substation with both buses populated.

    The lowest (line, side) end is pinned to bus A, which drops the
    electrically equivalent A/B mirror of each split.
    """
    ends = sorted(grid.line_ends_at(sub))
    if len(ends) < 2:
        return []
    splits = []
    rest = ends[1:]
    for pattern in itertools.product(BUS_LABELS, repeat=len(rest)):
        if all(b == BUS_A for b in pattern):
            continue  # no split
        assignment = ((ends[0], BUS_A),) + tuple(
            (e, b) for e, b in zip(rest, pattern)
        )
        splits.append(assignment)
    return splits


def generate_target_topologies(
    grid: Grid,
    n_substations: int = 4,
    max_depth: int = 3,
    max_count: int = 10_000,
) -> TargetTopologySet:
    """Enumerate branch-split targets at the most-connected substations.

    Splits are combined across one, two, or three substations (up to
    `max_depth`); injections stay on bus A, to be placed later by
    injection optimisation. Enumeration stops at `max_count` targets.
    """
    ref = reference_topology(grid)
    order = sorted(
        range(grid.n_substations),
        key=lambda s: (-len(grid.line_ends_at(s)), s),
    )
    candidates = [s for s in order[:n_substations] if len(grid.line_ends_at(s)) >= 2]
    per_sub = {s: _local_splits(grid, s) for s in candidates}

    topologies: list[TopologyConfig] = []
    depths: list[int] = []

    def add(subs_splits: list[tuple[int, tuple]]) -> bool:
        branch_bus = [list(p) for p in ref.branch_bus]
        for _, assignment in subs_splits:
            for (line, side), bus in assignment:
                branch_bus[line][side] = bus
        topo = TopologyConfig(
            grid_fingerprint=grid.fingerprint,
            branch_bus=tuple(tuple(p) for p in branch_bus),
            injection_bus=ref.injection_bus,
            line_online=ref.line_online,
        )
        if is_electrically_connected(grid, topo):
            topologies.append(topo)
            depths.append(len(subs_splits))
        return len(topologies) < max_count

    done = False
    for depth in range(1, max_depth + 1):
        if done:
            break
        for combo in itertools.combinations(candidates, depth):
            if done:
                break
            for choice in itertools.product(*(per_sub[s] for s in combo)):
                if not add(list(zip(combo, choice))):
                    done = True
                    break
    return TargetTopologySet(topologies=tuple(topologies), depths=tuple(depths))
