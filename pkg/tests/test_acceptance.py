"""End-to-end acceptance tests.

Covers, at the stated tolerances:
 1. power-flow engine (balance, PTDF, LODF) on random connected grids
 2. day-plan dynamic program against literal enumeration
 3. non-dominated filtering and hypervolume against an independent oracle
 4. reward hand values and shaping monotonicity
 5. the full pipeline: the trained agent beats the expert baselines
 6. per-day planning wall clock
 7. byte-level determinism of a seeded rerun
"""

import csv
import dataclasses
import json
import time

import numpy as np
import pytest

from conftest import make_random_grid, random_injections
from topoplan.cli import EXIT_OK, main
from topoplan.environment import (
    AZA_WEIGHTS,
    RewardWeights,
    ScreeningCache,
    StableWindow,
    TERMINATE,
    aza_step_reward,
    reset,
    shaping,
    ssa_terminal_reward,
    step,
)
from topoplan.grid import (
    TopologyConfig,
    generate_target_topologies,
    reference_topology,
)
from topoplan.pareto import HV_REFERENCE, hypervolume2d, non_dominated_filter
from topoplan.planner import (
    CostMatrix,
    best_plan_for_switch_count,
    brute_force_best_plan,
    generate_plan_set,
    load_plans,
    replay_plan_objective,
)
from topoplan.powerflow import (
    ContingencyReport,
    build_bus_map,
    bus_power,
    compute_lodf,
    compute_ptdf,
    solve_dc,
)
from topoplan.scenario import N_HOURS


class TestPowerFlowEngine:
    def test_random_grids_within_budget(self):
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        for trial in range(50):
            n = int(rng.integers(5, 201))
            grid = make_random_grid(rng, n)
            topo = reference_topology(grid)
            inj = random_injections(rng, grid)
            sol = solve_dc(grid, topo, inj)

            # nodal balance: flows out of every bus equal its injection
            bm = build_bus_map(grid, topo)
            net = bus_power(grid, bm, inj)
            for line_id, flow in sol.flows.items():
                bu, bv = bm.end_bus[line_id]
                net[bu] -= flow
                net[bv] += flow
            assert np.abs(net).max() <= 1e-9, (trial, n)

            # PTDF-predicted flows match the direct solve
            factors = compute_lodf(compute_ptdf(grid, topo))
            base = factors.base_flows(inj)
            for row, line in enumerate(factors.online_lines):
                assert base[row] == pytest.approx(sol.flows[line],
                                                  rel=1e-8, abs=1e-8)

            # LODF-predicted post-outage flows match full re-solves on a
            # random sample of non-bridge outages
            non_bridge = [k for k in range(len(factors.online_lines))
                          if not factors.is_bridge[k]]
            sample = rng.choice(non_bridge,
                                size=min(6, len(non_bridge)),
                                replace=False) if non_bridge else []
            for k in sample:
                line_k = factors.online_lines[k]
                online = list(topo.line_online)
                online[line_k] = False
                resolved = solve_dc(grid, dataclasses.replace(
                    topo, line_online=tuple(online)), inj)
                for l, line_l in enumerate(factors.online_lines):
                    if line_l == line_k:
                        continue
                    predicted = base[l] + factors.lodf[l, k] * base[k]
                    assert predicted == pytest.approx(
                        resolved.flows[line_l], rel=1e-6, abs=1e-6)
        assert time.perf_counter() - t0 < 60.0


def _random_matrix(rng, T):
    values = np.full((T + 1, T), np.nan)
    for i in range(T + 1):
        for j in range(max(i, 1), T + 1):
            values[i, j - 1] = round(float(rng.uniform(0.3, 2.0)), 3)
    return CostMatrix(values=values)


class TestPlannerOptimality:
    def test_dynamic_program_is_exact(self):
        rng = np.random.default_rng(7)
        t0 = time.perf_counter()
        for _ in range(200):
            T = int(rng.integers(2, 9))
            n_switch = int(rng.integers(1, min(T, 4) + 1))
            M = _random_matrix(rng, T)
            dp = best_plan_for_switch_count(M, n_switch)
            bf = brute_force_best_plan(M, n_switch)
            assert dp.switch_times == bf.switch_times
            assert dp.max_rho_n1 == bf.max_rho_n1
            assert dp.n_switching == bf.n_switching
            assert dp.hourly_cost_sum == pytest.approx(bf.hourly_cost_sum,
                                                       abs=1e-9)
        assert time.perf_counter() - t0 < 30.0

    def test_plan_objectives_replay(self, bench_grid, bench_days):
        cache = ScreeningCache(bench_grid)
        targets = generate_target_topologies(bench_grid, max_depth=1)
        ref = reference_topology(bench_grid)
        alt = targets.topologies[0]
        suggestions = {i: alt if 7 <= i <= 18 else ref
                       for i in range(1, N_HOURS + 1)}
        plans = generate_plan_set(suggestions, bench_grid, bench_days[0],
                                  cache=cache)
        for p in plans:
            replayed = replay_plan_objective(p, bench_grid, bench_days[0],
                                             cache)
            assert abs(replayed - p.max_rho_n1) <= 1e-9


class TestParetoTools:
    def test_filter_and_hypervolume(self):
        assert hypervolume2d([(1.0, 5), (2.0, 2)], (3.1, 25)) == \
            pytest.approx(45.3, abs=1e-12)

        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(1, 12))
            pts = list(zip(rng.uniform(0, 3.5, n).round(2),
                           rng.integers(0, 26, n).astype(float)))
            front = non_dominated_filter(pts)
            assert non_dominated_filter(front) == front
            for p in front:
                assert not any(q[0] <= p[0] and q[1] <= p[1] and q != p
                               for q in front)
            # independent oracle: decompose into vertical strips
            rx, ry = HV_REFERENCE
            inside = [(x, y) for x, y in pts if x < rx and y < ry]
            expected = 0.0
            if inside:
                xs = sorted({x for x, _ in inside}) + [rx]
                for left, right in zip(xs, xs[1:]):
                    best = min(y for x, y in inside if x <= left)
                    expected += (right - left) * (ry - best)
            assert hypervolume2d(pts, HV_REFERENCE) == pytest.approx(
                expected, abs=1e-9)


class TestRewardDefinitions:
    SSA_CASES = [
        (0.3, 2, 0.5, RewardWeights(0.15, 0.7, 0.15), 1.58),
        (0.5, 0, 0.0, RewardWeights(0.15, 0.7, 0.15), 0.225),
        (1.0, 3, 0.9, RewardWeights(0.15, 0.7, 0.15), 2.115),
        (4.0, 0, 0.0, RewardWeights(0.15, 0.7, 0.15), -0.15),
        (0.3, 5, 0.7, RewardWeights(0.15, 0.7, 0.15), 3.65),
        (0.0, 23, 0.0, RewardWeights(0.15, 0.7, 0.15), 16.4),
        (0.8, 1, 0.8, RewardWeights(1.0, 0.0, 0.0), 0.2),
        (0.8, 1, 0.8, RewardWeights(0.0, 1.0, 0.0), 1.0),
        (0.8, 1, 0.8, RewardWeights(0.0, 0.0, 1.0), 0.2),
        (2.5, 2, 0.95, RewardWeights(0.15, 0.7, 0.15), 1.1825),
    ]
    AZA_CASES = [
        (0.5, True, 0.525),
        (0.5, False, 0.475),
        (1.0, True, 0.05),
        (1.0, False, 0.0),
        (4.0, True, -1.85),
        (4.0, False, -1.9),
        (0.0, True, 1.0),
        (0.0, False, 0.95),
        (0.9, True, 0.145),
        (1.2, False, -0.19),
    ]

    def test_constructed_cases(self, bench_grid, bench_days):
        cache = ScreeningCache(bench_grid)
        done = step(reset(bench_grid, bench_days[0], 1, cache), TERMINATE,
                    cache)
        for rho, wl, agg, w, expected in self.SSA_CASES:
            report = ContingencyReport(max_rho_n1=rho, per_outage={},
                                       worst_pair=None,
                                       islanding_outages=frozenset())
            final = dataclasses.replace(done, report=report)
            window = StableWindow(hours=tuple(range(2, 2 + wl)),
                                  aggregate=agg if wl else 0.0)
            assert ssa_terminal_reward(final, window, w) == pytest.approx(
                expected, abs=1e-12)

        ref = reference_topology(bench_grid)
        alt = generate_target_topologies(bench_grid,
                                         max_depth=1).topologies[0]
        for rho, same, expected in self.AZA_CASES:
            report = ContingencyReport(max_rho_n1=rho, per_outage={},
                                       worst_pair=None,
                                       islanding_outages=frozenset())
            other = ref if same else alt
            assert aza_step_reward(ref, other, report, AZA_WEIGHTS) == \
                pytest.approx(expected, abs=1e-12)

    def test_shaping_monotone(self):
        rng = np.random.default_rng(3)
        xs = rng.uniform(-5.0, 15.0, size=(10_000, 2))
        lo = xs.min(axis=1)
        hi = xs.max(axis=1)
        for a, b in zip(lo, hi):
            assert shaping(a) >= shaping(b)
        assert shaping(0.0) == 1.0
        assert shaping(1.0) == 0.0
        assert shaping(100.0) == -2.0


def _run_pipeline(out):
    """Default-scale seeded pipeline; returns elapsed wall clock."""
    t0 = time.perf_counter()
    for argv in (["generate", "--out", str(out)],
                 ["train", "--out", str(out), "--agent", "ssa"],
                 ["plan", "--out", str(out), "--agent", "ssa",
                  "--jobs", "4"],
                 ["evaluate", "--out", str(out), "--agent", "ssa"]):
        assert main(argv) == EXIT_OK, argv
    return time.perf_counter() - t0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance") / "run"
    elapsed = _run_pipeline(out)
    return out, elapsed


def _split_rows(out):
    with open(out / "report" / "split_summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    return {(r["split"], r["approach"]): r for r in rows}


class TestFullPipeline:
    def test_within_time_budget(self, pipeline):
        _, elapsed = pipeline
        assert elapsed < 15 * 60

    def test_agent_beats_expert_hypervolume(self, pipeline):
        out, _ = pipeline
        rows = _split_rows(out)
        for split in ("train", "in_dist"):
            agent = float(rows[(split, "ssa")]["hv_median"])
            expert = float(rows[(split, "expert_set")]["hv_median"])
            assert agent > expert, (split, agent, expert)

    def test_agent_solved_rate(self, pipeline):
        out, _ = pipeline
        rows = _split_rows(out)
        for split in ("train", "in_dist", "out_dist"):
            agent = int(rows[(split, "ssa")]["solved_days"])
            expert = int(rows[(split, "expert_set")]["solved_days"])
            days = int(rows[(split, "ssa")]["days"])
            assert agent >= expert, (split, agent, expert)
            if split == "out_dist":
                assert agent >= 0.75 * days, (agent, days)

    def test_mean_switching_bounded(self, pipeline):
        out, _ = pipeline
        rows = _split_rows(out)
        for split in ("train", "in_dist", "out_dist"):
            assert float(rows[(split, "ssa")]["mean_n_switching"]) <= 4.0

    def test_per_day_planning_time(self, pipeline):
        out, _ = pipeline
        manifest = json.loads((out / "manifest.json").read_text())
        per_day = manifest["plan_ssa"]
        assert len(per_day) == 50
        for day_id, entry in per_day.items():
            assert entry["seconds"] <= 60.0, (day_id, entry["seconds"])

    def test_every_plan_replays(self, pipeline, bench_grid):
        out, _ = pipeline
        from topoplan.scenario import load_day_scenarios

        days = {d.day: d for d in load_day_scenarios(out / "scenario.csv",
                                                     bench_grid)}
        cache = ScreeningCache(bench_grid)
        for day_id in (0, 17, 49):
            _, _, plans = load_plans(out / "plans"
                                     / f"day_{day_id:03d}_ssa.json")
            for p in plans:
                replayed = replay_plan_objective(p, bench_grid,
                                                 days[day_id], cache)
                assert abs(replayed - p.max_rho_n1) <= 1e-9

    def test_seeded_rerun_is_byte_identical(self, pipeline,
                                            tmp_path_factory):
        out, _ = pipeline
        again = tmp_path_factory.mktemp("acceptance_rerun") / "run"
        _run_pipeline(again)
        files = ["grid.json", "scenario.csv", "splits.json",
                 "policy_ssa.json", "training_curve_ssa.csv",
                 "report/per_day_metrics.csv", "report/split_summary.csv"]
        files += [f"plans/day_{d:03d}_ssa.json" for d in range(50)]
        for name in files:
            assert (again / name).read_bytes() == (out / name).read_bytes(), \
                name
