import numpy as np
import pytest

from topoplan.config import default_config, expert_topologies
from topoplan.environment import ScreeningCache
from topoplan.grid import reference_topology
from topoplan.planner import (
    CostMatrix,
    PlannerError,
    best_plan_for_switch_count,
    brute_force_best_plan,
    build_cost_matrix,
    expert_baseline_plans,
    generate_plan_set,
    load_plans,
    replay_plan_objective,
    save_plans,
)
from topoplan.scenario import N_HOURS


def random_matrix(rng, T):
    """Random cost matrix with the planner's triangular defined region."""
    values = np.full((T + 1, T), np.nan)
    for i in range(T + 1):
        for j in range(max(i, 1), T + 1):
            values[i, j - 1] = round(float(rng.uniform(0.3, 2.0)), 3)
    return CostMatrix(values=values)


def constant_matrix(T, c):
    values = np.full((T + 1, T), np.nan)
    for i in range(T + 1):
        for j in range(max(i, 1), T + 1):
            values[i, j - 1] = c
    return CostMatrix(values=values)


class TestCostMatrix:
    def test_undefined_cell_raises(self):
        M = random_matrix(np.random.default_rng(0), 4)
        with pytest.raises(PlannerError):
            M.cost(3, 2)

    def test_defined_cells(self):
        M = random_matrix(np.random.default_rng(0), 4)
        for i in range(5):
            for j in range(max(i, 1), 5):
                assert np.isfinite(M.cost(i, j))

    def test_horizon(self):
        assert random_matrix(np.random.default_rng(0), 6).horizon == 6


class TestDynamicProgram:
    def test_matches_brute_force_exactly(self):
        rng = np.random.default_rng(42)
        for trial in range(200):
            T = int(rng.integers(2, 9))
            n_switch = int(rng.integers(1, min(T, 4) + 1))
            M = random_matrix(rng, T)
            dp = best_plan_for_switch_count(M, n_switch)
            bf = brute_force_best_plan(M, n_switch)
            assert dp.switch_times == bf.switch_times, (trial, T, n_switch)
            assert dp.max_rho_n1 == bf.max_rho_n1
            assert dp.n_switching == bf.n_switching
            assert dp.hourly_cost_sum == pytest.approx(
                bf.hourly_cost_sum, abs=1e-9)

    def test_constant_matrix_prefers_no_switch(self):
        M = constant_matrix(6, 0.7)
        for k in range(1, 7):
            plan = best_plan_for_switch_count(M, k)
            assert plan.max_rho_n1 == 0.7
            assert plan.switch_times == ()

    def test_monotone_in_switch_budget(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            M = random_matrix(rng, 8)
            prev = np.inf
            for k in range(1, 9):
                obj = best_plan_for_switch_count(M, k).max_rho_n1
                assert obj <= prev + 1e-12
                prev = obj

    def test_at_most_semantics(self):
        # one cheap switch suffices; a larger budget must not force more
        M = constant_matrix(5, 1.0)
        M.values[0, 2:] = 1.5  # staying put is insecure from hour 3 on
        M.values[3, 2:] = 0.2  # switching at hour 3 fixes hours 3..5
        best1 = best_plan_for_switch_count(M, 1)
        best4 = best_plan_for_switch_count(M, 4)
        assert best1.switch_times == (3,)
        assert best4.switch_times == (3,)
        assert best4.max_rho_n1 == best1.max_rho_n1 == 1.0

    def test_switch_count_out_of_range(self):
        M = constant_matrix(4, 1.0)
        for bad in (0, 5, -1):
            with pytest.raises(PlannerError):
                best_plan_for_switch_count(M, bad)
            with pytest.raises(PlannerError):
                brute_force_best_plan(M, bad)

    def test_brute_force_budget(self):
        M = constant_matrix(8, 1.0)
        with pytest.raises(PlannerError):
            brute_force_best_plan(M, 4, budget=10)


@pytest.fixture(scope="module")
def bench_cache(bench_grid):
    return ScreeningCache(bench_grid)


@pytest.fixture(scope="module")
def mixed_suggestions(bench_grid):
    """Reference at night, one expert reconfiguration through midday."""
    cfg = default_config()
    experts = expert_topologies(cfg, bench_grid)
    ref = reference_topology(bench_grid)
    out = {}
    for i in range(1, N_HOURS + 1):
        out[i] = experts["expert_1"] if 7 <= i <= 18 else ref
    return out


class TestGridPlans:
    def test_missing_suggestion_rejected(self, bench_grid, bench_days,
                                         bench_cache):
        ref = reference_topology(bench_grid)
        partial = {i: ref for i in range(1, N_HOURS)}
        with pytest.raises(PlannerError):
            build_cost_matrix(partial, bench_grid, bench_days[0], bench_cache)

    def test_all_reference_collapses_to_single_plan(self, bench_grid,
                                                    bench_days, bench_cache):
        ref = reference_topology(bench_grid)
        sugg = {i: ref for i in range(1, N_HOURS + 1)}
        plans = generate_plan_set(sugg, bench_grid, bench_days[0],
                                  cache=bench_cache)
        assert len(plans) == 1
        assert plans[0].n_switching == 0
        assert plans[0].switch_times == ()
        assert all(t == ref for t in plans[0].topologies)

    def test_plan_set_structure(self, bench_grid, bench_days, bench_cache,
                                mixed_suggestions):
        plans = generate_plan_set(mixed_suggestions, bench_grid,
                                  bench_days[0], cache=bench_cache)
        assert plans[0].n_switching == 0
        counts = [p.n_switching for p in plans]
        assert counts == sorted(counts)
        rhos = [p.max_rho_n1 for p in plans]
        assert rhos == sorted(rhos, reverse=True)

    def test_replay_consistency(self, bench_grid, bench_days, bench_cache,
                                mixed_suggestions):
        for day in bench_days[:3]:
            plans = generate_plan_set(mixed_suggestions, bench_grid, day,
                                      cache=bench_cache)
            for p in plans:
                replayed = replay_plan_objective(p, bench_grid, day,
                                                 bench_cache)
                assert replayed == pytest.approx(p.max_rho_n1, abs=1e-9)

    def test_doc_round_trip(self, tmp_path, bench_grid, bench_days,
                            bench_cache, mixed_suggestions):
        day = bench_days[0]
        plans = generate_plan_set(mixed_suggestions, bench_grid, day,
                                  cache=bench_cache)
        path = tmp_path / "plans.json"
        save_plans(path, day, "ssa", plans)
        day_id, agent, loaded = load_plans(path)
        assert day_id == day.day and agent == "ssa"
        assert len(loaded) == len(plans)
        for a, b in zip(plans, loaded):
            assert a.switch_times == b.switch_times
            assert a.max_rho_n1 == b.max_rho_n1
            assert a.n_switching == b.n_switching
            assert a.topologies == b.topologies

    def test_expert_baselines(self, bench_grid, bench_days, bench_cache):
        cfg = default_config()
        experts = expert_topologies(cfg, bench_grid)
        day = bench_days[0]
        groups = expert_baseline_plans(bench_grid, day, experts, bench_cache)
        assert set(experts) | {"reference", "expert_set"} == set(groups)
        ref_plan = groups["reference"][0]
        assert ref_plan.n_switching == 0
        for name in experts:
            (plan,) = groups[name]
            assert plan.switch_times == (1,)
            assert plan.n_switching == 1
        pool = [p.objectives for g in [groups["reference"]] +
                [groups[n] for n in experts] for p in g]
        front = {p.objectives for p in groups["expert_set"]}
        # the set is the non-dominated union of its members
        for obj in front:
            assert obj in pool
        for obj in pool:
            dominated = any(q[0] <= obj[0] and q[1] <= obj[1] and q != obj
                            for q in front)
            assert (obj in front) or dominated
