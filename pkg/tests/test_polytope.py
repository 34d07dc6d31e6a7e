"""Fiber geometry: exact enumeration, feasible starting points, and
componentwise move bounds, each checked against brute force."""

import io

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import box_enumerate
from routeflow import intlin, polytope
from routeflow.errors import (
    EnumerationCapError,
    IntegerInfeasibleError,
    RationallyInfeasibleError,
    ValidationError,
)

# three pairwise-overlapping routes: x1+x2 = x2+x3 = x1+x3 = 1 has the
# rational solution (1/2, 1/2, 1/2) and no integer one
ODD_CYCLE = np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1]])


class TestEnumerate:
    def test_segment_fiber_exact(self, junction, y_segment):
        pts = polytope.enumerate_feasible(junction, y_segment)
        assert len(pts) == 11
        got = [tuple(int(v) for v in s.x) for s in pts]
        expect = sorted((0, t, 10 - t, 0, 10 - t, t) for t in range(11))
        assert got == expect  # lexicographic order is part of the API
        for s in pts:
            s.check(junction, y_segment)

    def test_zero_counts_single_point(self, junction):
        pts = polytope.enumerate_feasible(junction, np.zeros(4, dtype=int))
        assert len(pts) == 1 and not pts[0].x.any()

    def test_mixed_fiber_against_brute_force(self, junction, y_mixed):
        pts = polytope.enumerate_feasible(junction, y_mixed)
        assert len(pts) == 20
        assert all(int(s.x.sum()) == 20 for s in pts)
        brute = box_enumerate(junction.entries, y_mixed)
        assert sorted(brute) == [tuple(int(v) for v in s.x) for s in pts]

    def test_empty_fiber(self):
        assert polytope.enumerate_feasible(ODD_CYCLE, [1, 1, 1]) == []

    def test_cap_enforced(self, junction, y_segment):
        with pytest.raises(EnumerationCapError) as err:
            polytope.enumerate_feasible(junction, y_segment, cap=5)
        assert err.value.cap == 5

    @given(st.data())
    @settings(max_examples=60, deadline=None)
    def test_random_networks_match_brute_force(self, data):
        n = data.draw(st.integers(2, 3), label="links")
        r = data.draw(st.integers(2, 5), label="routes")
        cols = data.draw(
            st.lists(
                st.integers(1, 2 ** n - 1), min_size=r, max_size=r
            ),
            label="columns",
        )
        ent = np.array(
            [[(c >> i) & 1 for c in cols] for i in range(n)],
            dtype=np.int64,
        )
        assume(ent.any(axis=1).all())  # every link used by some route
        y = np.array(
            data.draw(
                st.lists(st.integers(0, 4), min_size=n, max_size=n),
                label="counts",
            )
        )
        pts = polytope.enumerate_feasible(ent, y)
        got = [tuple(int(v) for v in s.x) for s in pts]
        assert got == sorted(box_enumerate(ent, y))


class TestInitialFeasible:
    def test_any_point_is_feasible(self, junction, y_segment):
        s = polytope.initial_feasible(junction, y_segment, "any")
        s.check(junction, y_segment)

    def test_max_l1_attains_enumeration_maximum(self, junction,
                                                y_segment, y_mixed):
        for y in (y_segment, y_mixed):
            best = max(
                int(s.x.sum())
                for s in polytope.enumerate_feasible(junction, y)
            )
            s = polytope.initial_feasible(junction, y, "max-L1")
            s.check(junction, y)
            assert int(s.x.sum()) == best == 20

    def test_max_l1_with_fractional_relaxation(self):
        # adding an all-links route to the odd cycle leaves the
        # relaxed optimum at the fractional (1/2, 1/2, 1/2, 0) with
        # value 3/2, while the best integer point is (0, 0, 0, 1)
        ent = np.hstack([ODD_CYCLE, np.ones((3, 1), dtype=np.int64)])
        s = polytope.initial_feasible(ent, [1, 1, 1], "max-L1")
        assert s.x.tolist() == [0, 0, 0, 1]

    def test_crossing_max_l1(self, crossing, crossing_y):
        s = polytope.initial_feasible(crossing, crossing_y, "max-L1")
        s.check(crossing, crossing_y)
        assert int(s.x.sum()) == 771

    def test_rational_infeasibility_detected(self, junction):
        for y in ([10, 5, 0, 0], [25, 20, 19, 9]):
            with pytest.raises(RationallyInfeasibleError):
                polytope.initial_feasible(junction, np.array(y))

    def test_integer_infeasibility_is_distinct(self):
        with pytest.raises(IntegerInfeasibleError):
            polytope.initial_feasible(ODD_CYCLE, [1, 1, 1])
        # both infeasibility errors satisfy the common ancestor
        from routeflow.errors import InfeasibleError
        with pytest.raises(InfeasibleError):
            polytope.initial_feasible(ODD_CYCLE, [1, 1, 1])

    def test_unknown_objective_rejected(self, junction, y_segment):
        with pytest.raises(ValueError):
            polytope.initial_feasible(junction, y_segment, "max-L2")


class TestMoveBounds:
    def test_leading_partition_is_stuck_on_segment(self, junction,
                                                   y_segment):
        p = intlin.make_partition(junction, (1, 2, 3, 4))
        U = intlin.null_basis(p, junction)
        for s in polytope.enumerate_feasible(junction, y_segment):
            for j in range(U.n_free):
                b = polytope.move_bounds(s, p, U, j)
                t_cur = int(s.x[p.free_cols[j] - 1])
                assert (b.lo, b.hi) == (t_cur, t_cur)
                assert b.width == 1

    def test_revised_partition_spans_segment(self, junction, y_segment):
        p = intlin.make_partition(junction, (1, 2, 3, 5))
        U = intlin.null_basis(p, junction)
        j6 = p.free_cols.index(6)
        for s in polytope.enumerate_feasible(junction, y_segment):
            b = polytope.move_bounds(s, p, U, j6)
            assert (b.lo, b.hi) == (0, 10)

    def test_bounds_match_conditional_support(self, junction, y_mixed):
        pts = polytope.enumerate_feasible(junction, y_mixed)
        for basis in ((1, 2, 3, 4), (1, 2, 3, 5)):
            p = intlin.make_partition(junction, basis)
            U = intlin.null_basis(p, junction)
            for s in pts:
                for j in range(U.n_free):
                    b = polytope.move_bounds(s, p, U, j)
                    others = [c for jj, c in enumerate(p.free_cols)
                              if jj != j]
                    support = sorted(
                        int(t.x[p.free_cols[j] - 1]) for t in pts
                        if all(t.x[c - 1] == s.x[c - 1] for c in others)
                    )
                    assert support == list(range(b.lo, b.hi + 1))

    def test_fractional_basis_rejected(self, smallnet):
        p = intlin.make_partition(smallnet, (1, 2, 3))
        U = intlin.null_basis(p, smallnet)
        s = polytope.FlowState(np.array([1, 0, 0, 1]))
        with pytest.raises(ValueError, match="unimodular"):
            polytope.move_bounds(s, p, U, 0)
        with pytest.raises(TypeError):
            polytope.move_bounds(s, p, np.eye(4), 0)

    def test_positive_basis_flows_admit_unit_step(self, junction,
                                                  y_mixed):
        # whenever every basis flow is strictly positive, one more unit
        # on any free route stays feasible
        p = intlin.make_partition(junction, (1, 2, 3, 5))
        U = intlin.null_basis(p, junction)
        ent = junction.entries
        hit = 0
        for s in polytope.enumerate_feasible(junction, y_mixed):
            if not all(s.x[c - 1] > 0 for c in p.basis_cols):
                continue
            hit += 1
            for j in range(U.n_free):
                xn = s.x.copy()
                for i, c in enumerate(p.basis_cols):
                    xn[c - 1] += int(U.U[i][j])
                xn[p.free_cols[j] - 1] += 1
                assert (xn >= 0).all()
                assert (ent @ xn == y_mixed).all()
        assert hit > 0


class TestVertex:
    def test_segment_endpoints_and_interior(self, junction):
        v1 = polytope.FlowState(np.array([0, 0, 10, 0, 10, 0]))
        v2 = polytope.FlowState(np.array([0, 10, 0, 0, 0, 10]))
        mid = polytope.FlowState(np.array([0, 5, 5, 0, 5, 5]))
        assert polytope.is_vertex(junction, v1)
        assert polytope.is_vertex(junction, v2)
        assert not polytope.is_vertex(junction, mid)


class TestFlowState:
    def test_negative_entries_rejected(self):
        with pytest.raises(ValidationError):
            polytope.FlowState(np.array([1, -1]))

    def test_check_raises_on_mismatch(self, junction, y_segment):
        s = polytope.FlowState(np.array([0, 3, 7, 0, 7, 3]))
        s.check(junction, y_segment)
        with pytest.raises(ValidationError):
            s.check(junction, np.array([10, 20, 20, 9]))

    def test_partition_views(self, junction):
        p = intlin.make_partition(junction, (3, 1, 4, 2))
        s = polytope.FlowState(np.array([1, 2, 3, 4, 5, 6]),
                               partition_ref=p)
        assert s.x1().tolist() == [3, 1, 4, 2]
        assert s.x2().tolist() == [5, 6]
        with pytest.raises(ValueError):
            polytope.FlowState(np.array([1, 2])).x1()


def test_flows_to_csv_layout(junction, y_segment):
    pts = polytope.enumerate_feasible(junction, y_segment)
    buf = io.StringIO()
    polytope.flows_to_csv(pts, buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "x_1,x_2,x_3,x_4,x_5,x_6"
    assert len(lines) == 12
    assert lines[1] == "0,0,10,0,10,0"
