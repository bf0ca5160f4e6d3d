"""Command-line pipeline: generate -> train -> plan -> evaluate.

All artifacts land under the output directory with a manifest; every
stage is deterministic given the config file and seeds.

Exit statuses: 0 success, 1 validation/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .agents import (
    ActionSpace,
    Policy,
    TrainingDivergedError,
    suggest_all_hours,
    train_aza_mcts,
    train_ssa_policy,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    default_config,
    expert_topologies,
    load_config,
)
from .environment import ScreeningCache
from .grid import Grid, GridError, build_grid, load_grid, save_grid
from .pareto import day_metrics
from .planner import (
    PlannerError,
    expert_baseline_plans,
    generate_plan_set,
    load_plans,
    save_plans,
)
from .report import emit_report
from .scenario import (
    ScenarioError,
    benchmark_grid,
    benchmark_grid_doc,
    benchmark_profile,
    benchmark_days,
    load_day_scenarios,
    save_day_scenarios,
    split_dataset,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _update_manifest(out: Path, stage: str, entries: dict) -> None:
    path = out / "manifest.json"
    manifest = {}
    if path.exists():
        manifest = json.loads(path.read_text())
    manifest[stage] = entries
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _load_inputs(cfg: ExperimentConfig, out: Path):
    """Grid, scenario days, and split labels as produced by `generate`."""
    grid_path = out / "grid.json"
    scen_path = out / "scenario.csv"
    split_path = out / "splits.json"
    for p in (grid_path, scen_path, split_path):
        if not p.exists():
            raise ConfigError(f"missing artifact {p}; run `generate` first")
    grid = load_grid(grid_path)
    days = load_day_scenarios(scen_path, grid)
    split_of = {int(k): v for k, v in
                json.loads(split_path.read_text()).items()}
    return grid, days, split_of


def cmd_generate(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.grid_path is not None:
        grid = load_grid(cfg.grid_path)
        if cfg.scenario_path is None:
            raise ConfigError(
                "a custom grid_path needs a matching scenario_path; the "
                "built-in demand profile is calibrated to the default grid"
            )
        days = load_day_scenarios(cfg.scenario_path, grid)
    else:
        grid = benchmark_grid()
        if cfg.scenario_path is not None:
            days = load_day_scenarios(cfg.scenario_path, grid)
        else:
            profile = replace(benchmark_profile(), peak_mw=cfg.scenario.peak_mw)
            days = benchmark_days(cfg.scenario.days, seed=cfg.scenario.seed,
                                  profile=profile)

    counts = (cfg.splits.train, cfg.splits.in_dist, cfg.splits.out_dist)
    if sum(counts) != len(days):
        raise ConfigError(
            f"split counts {counts} do not sum to {len(days)} days"
        )
    split = split_dataset(days, counts, seed=cfg.splits.seed)

    out.mkdir(parents=True, exist_ok=True)
    save_grid(grid, out / "grid.json")
    save_day_scenarios(days, out / "scenario.csv")
    split_of = {}
    for label, group in (("train", split.train), ("in_dist", split.in_dist),
                         ("out_dist", split.out_dist)):
        for day_id in group:
            split_of[day_id] = label
    (out / "splits.json").write_text(
        json.dumps({str(k): v for k, v in sorted(split_of.items())},
                   indent=1, sort_keys=True) + "\n")

    _update_manifest(out, "generate", {
        "grid": str(out / "grid.json"),
        "scenario": str(out / "scenario.csv"),
        "splits": str(out / "splits.json"),
        "n_days": len(days),
        "split_counts": {"train": counts[0], "in_dist": counts[1],
                         "out_dist": counts[2]},
    })
    print(f"generated grid with {grid.n_substations} substations, "
          f"{grid.n_lines} lines; {len(days)} days "
          f"(train={counts[0]}, in_dist={counts[1]}, out_dist={counts[2]}) "
          f"-> {out}")
    return EXIT_OK


def _checkpoint_path(out: Path, agent: str) -> Path:
    return out / f"policy_{agent}.json"


def cmd_train(cfg: ExperimentConfig, out: Path) -> int:
    agent = cfg.agent.name
    if agent == "greedy":
        raise ConfigError("the greedy search baseline has no trainable "
                          "parameters; nothing to train")
    grid, days, split_of = _load_inputs(cfg, out)
    train_days = [d for d in days if split_of[d.day] == "train"]
    if not train_days:
        raise ConfigError("train split is empty")

    space = ActionSpace(grid, k_nearest=cfg.agent.k_nearest)
    t0 = time.perf_counter()
    if agent == "ssa":
        policy = train_ssa_policy(grid, train_days, cfg.agent.training,
                                  action_space=space)
    else:
        policy = train_aza_mcts(grid, train_days, cfg.agent.training,
                                action_space=space)
    elapsed = time.perf_counter() - t0

    ckpt = _checkpoint_path(out, agent)
    policy.save(ckpt)
    curve_path = out / f"training_curve_{agent}.csv"
    curve = policy.meta.get("training_curve", [])
    with open(curve_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        reward_col = "mean_reward" if agent == "ssa" else "daily_reward"
        w.writerow(["iteration", reward_col, "loss", "eval_reward"])
        for row in curve:
            w.writerow([row["iteration"],
                        format(row[reward_col], ".10g"),
                        format(row["loss"], ".10g"),
                        format(row["eval_reward"], ".10g")
                        if "eval_reward" in row else ""])
    _update_manifest(out, f"train_{agent}", {
        "checkpoint": str(ckpt),
        "training_curve": str(curve_path),
        "iterations": len(curve),
        "seconds": round(elapsed, 3),
    })
    print(f"trained {agent} on {len(train_days)} days in {elapsed:.1f}s "
          f"-> {ckpt}")
    return EXIT_OK


# --- planning (optionally fanned out across worker processes) ----------------

_WORKER: dict = {}


def _plan_worker_init(out_dir: str, agent: str, beam: int, k_nearest: int):
    out = Path(out_dir)
    grid = load_grid(out / "grid.json")
    days = load_day_scenarios(out / "scenario.csv", grid)
    space = ActionSpace(grid, k_nearest=k_nearest)
    suggester = beam
    if agent in ("ssa", "aza"):
        suggester = Policy.load(_checkpoint_path(out, agent), grid,
                                targets=space.targets)
        suggester.action_space = space
    _WORKER.update(grid=grid, days={d.day: d for d in days},
                   space=space, suggester=suggester, agent=agent,
                   out=out)


def _plan_one_day(day_id: int) -> tuple[int, float, str]:
    grid = _WORKER["grid"]
    day = _WORKER["days"][day_id]
    cache = ScreeningCache(grid)
    t0 = time.perf_counter()
    suggestions = suggest_all_hours(_WORKER["suggester"], grid, day,
                                    cache=cache,
                                    action_space=_WORKER["space"])
    plans = generate_plan_set(suggestions, grid, day,
                              provenance={"agent": _WORKER["agent"]},
                              cache=cache)
    elapsed = time.perf_counter() - t0
    path = _WORKER["out"] / "plans" / f"day_{day_id:03d}_{_WORKER['agent']}.json"
    save_plans(path, day, _WORKER["agent"], plans)
    return day_id, elapsed, str(path)


def cmd_plan(cfg: ExperimentConfig, out: Path, jobs: int,
             only_days: list[int] | None = None) -> int:
    agent = cfg.agent.name
    grid, days, split_of = _load_inputs(cfg, out)
    if agent in ("ssa", "aza") and not _checkpoint_path(out, agent).exists():
        raise ConfigError(f"checkpoint {_checkpoint_path(out, agent)} not "
                          f"found; run `train --agent {agent}` first")
    day_ids = sorted(d.day for d in days)
    if only_days is not None:
        unknown = sorted(set(only_days) - set(day_ids))
        if unknown:
            raise ConfigError(f"unknown day ids {unknown}")
        day_ids = sorted(only_days)

    (out / "plans").mkdir(parents=True, exist_ok=True)
    initargs = (str(out), agent, cfg.agent.beam, cfg.agent.k_nearest)
    results = []
    if jobs <= 1:
        _plan_worker_init(*initargs)
        for day_id in day_ids:
            results.append(_plan_one_day(day_id))
    else:
        with ProcessPoolExecutor(max_workers=jobs,
                                 initializer=_plan_worker_init,
                                 initargs=initargs) as pool:
            results = list(pool.map(_plan_one_day, day_ids))

    per_day = {}
    for day_id, elapsed, path in sorted(results):
        log.info("day %d planned in %.2fs", day_id, elapsed)
        per_day[str(day_id)] = {"seconds": round(elapsed, 3), "plans": path}
    _update_manifest(out, f"plan_{agent}", per_day)
    worst = max(e for _, e, _ in results)
    print(f"planned {len(results)} days with agent {agent}; "
          f"worst per-day wall clock {worst:.1f}s")
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, out: Path) -> int:
    agent = cfg.agent.name
    grid, days, split_of = _load_inputs(cfg, out)
    experts = expert_topologies(cfg, grid)
    cache = ScreeningCache(grid)
    ref = cfg.hv_reference

    rows = []
    missing = []
    for day in sorted(days, key=lambda d: d.day):
        plan_path = out / "plans" / f"day_{day.day:03d}_{agent}.json"
        if not plan_path.exists():
            missing.append(day.day)
            continue
        _, _, plans = load_plans(plan_path)
        split = split_of[day.day]
        rows.append((split, day_metrics(
            day.day, agent, [p.objectives for p in plans], ref)))
        baselines = expert_baseline_plans(grid, day, experts, cache)
        for name, group in baselines.items():
            rows.append((split, day_metrics(
                day.day, name, [p.objectives for p in group], ref)))
    if missing:
        raise ConfigError(f"missing plan documents for days {missing}; "
                          f"run `plan` first")

    bundle = emit_report(rows, out / "report")
    _update_manifest(out, f"evaluate_{agent}", bundle)
    print(f"evaluated {len(days)} days; report bundle in {out / 'report'}")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topoplan",
        description="Two-phase multi-objective grid-topology planning "
                    "pipeline on a DC power-flow simulator.",
    )
    parser.add_argument("--verbose", action="store_true",
                        help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int,
                       help="override every stage seed")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--agent", choices=("greedy", "ssa", "aza"),
                       help="agent choice (overrides config)")

    p = sub.add_parser("generate", help="write grid, scenario, and splits")
    common(p)

    p = sub.add_parser("train", help="train the selected agent")
    common(p)

    p = sub.add_parser("plan", help="produce per-day plan documents")
    common(p)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel planning workers (default: all cores)")
    p.add_argument("--days", type=int, nargs="*",
                   help="restrict planning to these day ids")

    p = sub.add_parser("evaluate", help="score plans against baselines")
    common(p)
    return parser


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.agent is not None:
        cfg = replace(cfg, agent=replace(cfg.agent, name=args.agent))
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _resolve_config(args)
        out = Path(cfg.out_dir)
        if args.command == "generate":
            return cmd_generate(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "plan":
            return cmd_plan(cfg, out, jobs=args.jobs, only_days=args.days)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ScenarioError, GridError, PlannerError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("unhandled failure")
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
