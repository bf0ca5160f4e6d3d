"""Experiment configuration: one YAML file drives every pipeline stage."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import yaml

from .agents import DEFAULT_K_NEAREST, TrainingConfig
from .grid import BUS_A, BUS_B, Grid, GridError, TopologyConfig, reference_topology
from .pareto import HV_REFERENCE


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExpertDefinition:
    """A hand-crafted fixed topology: substation splits plus disabled lines.

    `ends_on_b` lists (line, side) pairs moved to bus B; `injections_on_b`
    lists injection ids moved to bus B; `lines_offline` lists disabled lines.
    """

    name: str
    ends_on_b: tuple[tuple[int, int], ...] = ()
    injections_on_b: tuple[int, ...] = ()
    lines_offline: tuple[int, ...] = ()

    def build(self, grid: Grid) -> TopologyConfig:
        ref = reference_topology(grid)
        branch = [list(p) for p in ref.branch_bus]
        for line, side in self.ends_on_b:
            if not (0 <= line < grid.n_lines) or side not in (0, 1):
                raise ConfigError(f"expert {self.name}: bad line end "
                                  f"({line}, {side})")
            branch[line][side] = BUS_B
        inj = list(ref.injection_bus)
        for i in self.injections_on_b:
            if not (0 <= i < grid.n_injections):
                raise ConfigError(f"expert {self.name}: unknown injection {i}")
            inj[i] = BUS_B
        online = list(ref.line_online)
        for line in self.lines_offline:
            if not (0 <= line < grid.n_lines):
                raise ConfigError(f"expert {self.name}: unknown line {line}")
            online[line] = False
        topo = TopologyConfig(
            grid_fingerprint=grid.fingerprint,
            branch_bus=tuple(tuple(p) for p in branch),
            injection_bus=tuple(inj),
            line_online=tuple(online),
        )
        # every injection must share a bus with an online line end
        for sub in range(grid.n_substations):
            buses = {topo.end_bus(l, s) for l, s in grid.line_ends_at(sub)
                     if topo.line_online[l]}
            for i in grid.injections_at(sub):
                if topo.injection_bus[i] not in buses:
                    raise ConfigError(
                        f"expert {self.name}: injection {i} stranded at "
                        f"substation {sub}"
                    )
        return topo


@dataclass(frozen=True)
class ScenarioConfig:
    days: int = 50
    seed: int = 0
    peak_mw: float = 10.0


@dataclass(frozen=True)
class SplitConfig:
    train: int = 20
    in_dist: int = 10
    out_dist: int = 20
    seed: int = 0


@dataclass(frozen=True)
class AgentConfig:
    name: str = "ssa"           # greedy | ssa | aza
    beam: int = 4               # greedy search width
    k_nearest: int = DEFAULT_K_NEAREST
    training: TrainingConfig = field(default_factory=TrainingConfig)


@dataclass(frozen=True)
class ExperimentConfig:
    grid_path: str | None = None      # None -> built-in synthetic benchmark
    scenario_path: str | None = None  # None -> generate per `scenario`
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    splits: SplitConfig = field(default_factory=SplitConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    hv_reference: tuple[float, float] = HV_REFERENCE
    experts: tuple[ExpertDefinition, ...] = ()
    out_dir: str = "runs/default"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override every stage seed with one top-level seed."""
        return replace(
            self,
            scenario=replace(self.scenario, seed=seed),
            splits=replace(self.splits, seed=seed),
            agent=replace(self.agent,
                          training=replace(self.agent.training, seed=seed)),
        )


def default_experts() -> tuple[ExpertDefinition, ...]:
    """Hand-picked fixed strategies for the built-in benchmark grid:
    the strongest single-substation split and the strongest single-line
    disable, plus their combination."""
    expert1 = ExpertDefinition(
        name="expert_1",
        ends_on_b=((6, 0), (18, 1)),
    )
    expert2 = ExpertDefinition(
        name="expert_2",
        lines_offline=(15,),
    )
    expert12 = ExpertDefinition(
        name="expert_1_2",
        ends_on_b=expert1.ends_on_b,
        lines_offline=expert2.lines_offline,
    )
    return (expert1, expert2, expert12)


def default_config() -> ExperimentConfig:
    return ExperimentConfig(experts=default_experts())


_AGENT_NAMES = ("greedy", "ssa", "aza")


def config_from_doc(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    base = default_config()

    def section(name):
        got = doc.get(name, {})
        if not isinstance(got, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        return got

    sc = section("scenario")
    scenario = ScenarioConfig(
        days=int(sc.get("days", base.scenario.days)),
        seed=int(sc.get("seed", base.scenario.seed)),
        peak_mw=float(sc.get("peak_mw", base.scenario.peak_mw)),
    )
    if scenario.days <= 0:
        raise ConfigError("scenario.days must be positive")

    sp = section("splits")
    splits = SplitConfig(
        train=int(sp.get("train", base.splits.train)),
        in_dist=int(sp.get("in_dist", base.splits.in_dist)),
        out_dist=int(sp.get("out_dist", base.splits.out_dist)),
        seed=int(sp.get("seed", base.splits.seed)),
    )
    if min(splits.train, splits.in_dist, splits.out_dist) < 0:
        raise ConfigError("split counts must be non-negative")
    if splits.train + splits.in_dist + splits.out_dist != scenario.days:
        raise ConfigError(
            f"split counts {splits.train}+{splits.in_dist}+{splits.out_dist} "
            f"must sum to scenario.days={scenario.days}"
        )

    ag = section("agent")
    name = ag.get("name", base.agent.name)
    if name not in _AGENT_NAMES:
        raise ConfigError(f"agent.name must be one of {_AGENT_NAMES}")
    tr = ag.get("training", {})
    if not isinstance(tr, dict):
        raise ConfigError("agent.training must be a mapping")
    try:
        training = replace(TrainingConfig(), **tr)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid agent.training: {exc}") from exc
    agent = AgentConfig(
        name=name,
        beam=int(ag.get("beam", base.agent.beam)),
        k_nearest=int(ag.get("k_nearest", base.agent.k_nearest)),
        training=training,
    )
    if agent.beam < 1:
        raise ConfigError("agent.beam must be at least 1")

    hv = doc.get("hv_reference", list(base.hv_reference))
    if len(hv) != 2:
        raise ConfigError("hv_reference must hold two numbers")

    experts = []
    for ed in doc.get("experts", [dict(name=e.name,
                                       ends_on_b=[list(p) for p in e.ends_on_b],
                                       injections_on_b=list(e.injections_on_b),
                                       lines_offline=list(e.lines_offline))
                                  for e in base.experts]):
        experts.append(ExpertDefinition(
            name=str(ed["name"]),
            ends_on_b=tuple((int(l), int(s)) for l, s in ed.get("ends_on_b", [])),
            injections_on_b=tuple(int(i) for i in ed.get("injections_on_b", [])),
            lines_offline=tuple(int(l) for l in ed.get("lines_offline", [])),
        ))

    return ExperimentConfig(
        grid_path=doc.get("grid_path"),
        scenario_path=doc.get("scenario_path"),
        scenario=scenario,
        splits=splits,
        agent=agent,
        hv_reference=(float(hv[0]), float(hv[1])),
        experts=tuple(experts),
        out_dir=str(doc.get("out_dir", base.out_dir)),
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return config_from_doc(doc or {})


def expert_topologies(cfg: ExperimentConfig, grid: Grid) -> dict[str, TopologyConfig]:
    out = {}
    for e in cfg.experts:
        try:
            out[e.name] = e.build(grid)
        except GridError as exc:
            raise ConfigError(f"expert {e.name}: {exc}") from exc
    return out
