import numpy as np
import pytest

from topoplan.pareto import (
    HV_REFERENCE,
    DayMetrics,
    day_metrics,
    hypervolume2d,
    non_dominated_filter,
)


def hv_oracle(points, ref):
    """Independent hypervolume oracle: decompose the dominated region into
    vertical strips between consecutive distinct x coordinates; the strip
    height is governed by the best (lowest) y among points at or left of
    the strip."""
    rx, ry = ref
    pts = [(x, y) for x, y in points if x < rx and y < ry]
    if not pts:
        return 0.0
    xs = sorted({x for x, _ in pts}) + [rx]
    area = 0.0
    for left, right in zip(xs, xs[1:]):
        best_y = min(y for x, y in pts if x <= left)
        if best_y < ry:
            area += (right - left) * (ry - best_y)
    return area


class TestFilter:
    def test_mutually_non_dominated_kept(self):
        pts = [(1, 3), (2, 2), (3, 1)]
        assert non_dominated_filter(pts) == [(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)]

    def test_strict_domination_removed(self):
        assert non_dominated_filter([(1, 1), (2, 2)]) == [(1.0, 1.0)]

    def test_duplicates_collapse(self):
        assert non_dominated_filter([(1, 1), (1, 1)]) == [(1.0, 1.0)]

    def test_weak_domination_removed(self):
        # equal on one axis, better on the other
        assert non_dominated_filter([(1, 2), (1, 3)]) == [(1.0, 2.0)]

    def test_empty(self):
        assert non_dominated_filter([]) == []

    def test_random_sets_properties(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 15))
            pts = list(zip(rng.uniform(0, 3, n).round(2),
                           rng.integers(0, 10, n)))
            front = non_dominated_filter(pts)
            # mutually non-dominated
            for p in front:
                for q in front:
                    if p != q:
                        assert not (q[0] <= p[0] and q[1] <= p[1])
            # idempotent
            assert non_dominated_filter(front) == front
            # every removed point dominated by a kept point
            for p in set((float(x), float(y)) for x, y in pts):
                if p not in front:
                    assert any(q[0] <= p[0] and q[1] <= p[1] and q != p
                               for q in front)


class TestHypervolume:
    def test_worked_value(self):
        assert hypervolume2d([(1.0, 5), (2.0, 2)], (3.1, 25)) == \
            pytest.approx(45.3, abs=1e-12)

    def test_empty_is_zero(self):
        assert hypervolume2d([], HV_REFERENCE) == 0.0

    def test_point_outside_box_contributes_nothing(self):
        assert hypervolume2d([(5.0, 1)], (3.1, 25)) == 0.0
        assert hypervolume2d([(1.0, 30)], (3.1, 25)) == 0.0
        inside = hypervolume2d([(1.0, 5)], (3.1, 25))
        both = hypervolume2d([(1.0, 5), (5.0, 1), (1.0, 30)], (3.1, 25))
        assert both == pytest.approx(inside, abs=1e-12)

    def test_single_point(self):
        assert hypervolume2d([(1.1, 5)], (3.1, 25)) == pytest.approx(
            2.0 * 20.0, abs=1e-12)

    def test_matches_oracle_on_random_sets(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            n = int(rng.integers(0, 20))
            pts = list(zip(rng.uniform(0, 4.0, n),
                           rng.integers(0, 30, n).astype(float)))
            got = hypervolume2d(pts, HV_REFERENCE)
            assert got == pytest.approx(hv_oracle(pts, HV_REFERENCE),
                                        abs=1e-9)

    def test_monotone_in_points(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            pts = list(zip(rng.uniform(0, 3.0, 5),
                           rng.integers(0, 24, 5).astype(float)))
            sub = pts[:3]
            assert hypervolume2d(pts, HV_REFERENCE) >= \
                hypervolume2d(sub, HV_REFERENCE) - 1e-12


class TestDayMetrics:
    def test_basic(self):
        m = day_metrics(3, "ssa", [(0.9, 2), (1.2, 0)])
        assert m.best_max_rho_n1 == 0.9
        assert m.solved is True
        assert m.n_switching_of_best == 2
        assert m.n_plans == 2

    def test_boundary_not_solved(self):
        m = day_metrics(0, "ref", [(1.0, 0)])
        assert m.solved is False

    def test_tie_prefers_fewer_switches(self):
        m = day_metrics(0, "x", [(0.9, 3), (0.9, 1)])
        assert m.n_switching_of_best == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            day_metrics(0, "x", [])

    def test_hypervolume_consistent(self):
        objs = [(1.0, 5), (2.0, 2)]
        m = day_metrics(0, "x", objs)
        assert m.hypervolume == hypervolume2d(objs, HV_REFERENCE)

    def test_is_dataclass_record(self):
        m = day_metrics(1, "a", [(0.5, 0)])
        assert isinstance(m, DayMetrics)
        assert m.day == 1 and m.approach == "a"
