"""Operations on the feasible set {x : Ax = y, x >= 0, x integer}.

Provides initial feasible points, exact componentwise move bounds,
brute-force enumeration (the exactness oracle for the sampler), and
vertex tests.  Everything here uses exact integer or rational
arithmetic; these routines are the reference against which the fast
sampler kernels are validated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ratlp
from .errors import (
    EnumerationCapError,
    IntegerInfeasibleError,
    RationallyInfeasibleError,
    ValidationError,
)
from .intlin import NullBasis, Partition, independent_row_prefix

DEFAULT_ENUM_CAP = 10**6

__all__ = [
    "DEFAULT_ENUM_CAP",
    "FlowState",
    "MoveBounds",
    "initial_feasible",
    "move_bounds",
    "enumerate_feasible",
    "is_vertex",
    "flows_to_csv",
]


@dataclass(frozen=True)
class FlowState:
    """A point of the feasible set, in original route order.

    Parameters
    ----------
    x : length-r vector of nonnegative integers, one per route, in
        original route order (route id j is ``x[j-1]`` regardless of
        any column permutation in play).
    partition_ref : the Partition under which basis/free views are
        materialized, or None when no partition is attached.
    """

    x: np.ndarray
    partition_ref: Partition | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.int64).copy()
        if x.ndim != 1:
            raise ValidationError("flow vector must be one-dimensional")
        if (x < 0).any():
            raise ValidationError("flow vector has negative entries")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def r(self):
        return self.x.shape[0]

    def _partition(self, p):
        p = p if p is not None else self.partition_ref
        if p is None:
            raise ValueError("no partition attached to this state")
        return p

    def x1(self, p=None):
        """Basis-block flows, in partition order."""
        p = self._partition(p)
        return self.x[[c - 1 for c in p.basis_cols]]

    def x2(self, p=None):
        """Free flows, in partition order."""
        p = self._partition(p)
        return self.x[[c - 1 for c in p.free_cols]]

    def check(self, A, y):
        """Raise ValidationError unless A x = y exactly."""
        ent = _entries(A)
        y = _vector(y, ent.shape[0])
        if not np.array_equal(ent @ self.x, y):
            raise ValidationError("state does not satisfy Ax = y")


@dataclass(frozen=True)
class MoveBounds:
    """Contiguous support [lo, hi] of one free coordinate, all other
    free coordinates held fixed."""

    lo: int
    hi: int

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi:
            raise ValidationError(
                f"invalid move bounds [{self.lo}, {self.hi}]"
            )

    @property
    def width(self):
        return self.hi - self.lo + 1


def _entries(A):
    return np.asarray(getattr(A, "entries", A), dtype=np.int64)


def _vector(y, n=None):
    y = np.asarray(getattr(y, "counts", y), dtype=np.int64)
    if y.ndim == 2 and y.shape[0] == 1:
        y = y[0]
    if y.ndim != 1:
        raise ValidationError("expected a single link-count vector")
    if n is not None and y.shape[0] != n:
        raise ValidationError(
            f"count vector has length {y.shape[0]}, matrix has {n} rows"
        )
    return y


def _structure(ent):
    """Per-route link lists and the reverse map used by the search
    pruning rules."""
    n, r = ent.shape
    links_of = [np.flatnonzero(ent[:, j]).tolist() for j in range(r)]
    routes_of = [np.flatnonzero(ent[i]).tolist() for i in range(n)]
    for i, routes in enumerate(routes_of):
        if not routes:
            raise ValidationError(f"link {i + 1} is used by no route")
    for j, links in enumerate(links_of):
        if not links:
            raise ValidationError(f"route {j + 1} crosses no monitored "
                                  f"link")
    # links whose last touching route is j: their residual must be
    # exactly zero once x_j is fixed
    finalized_at = [[] for _ in range(r)]
    for i, routes in enumerate(routes_of):
        finalized_at[routes[-1]].append(i)
    return links_of, routes_of, finalized_at


def _supply_ok(d, r, resid, links_of, routes_of):
    """Necessary feasibility condition after fixing routes < d: every
    link's residual must be coverable by the remaining routes through
    it, each of which is capped by the tightest residual it faces."""
    ub = [-1] * r
    for i, resid_i in enumerate(resid):
        if resid_i == 0:
            continue
        avail = 0
        for j in routes_of[i]:
            if j < d:
                continue
            if ub[j] < 0:
                u = resid[links_of[j][0]]
                for l in links_of[j][1:]:
                    if resid[l] < u:
                        u = resid[l]
                ub[j] = u
            avail += ub[j]
            if avail >= resid_i:
                break
        else:
            return False
    return True


def enumerate_feasible(A, y, cap=DEFAULT_ENUM_CAP):
    """Enumerate every integer point of {x >= 0 : Ax = y}.

    Depth-first over routes in ascending original index, values
    ascending, with exact interval propagation (a route's flow cannot
    exceed the smallest residual count over its links).  The output is
    in lexicographically ascending order.  Raises EnumerationCapError
    once more than `cap` points have been found; real networks are
    expected to trip this, the enumeration is an oracle for small
    cases, not a scalable algorithm.
    """
    ent = _entries(A)
    n, r = ent.shape
    y = _vector(y, n)
    links_of, routes_of, finalized_at = _structure(ent)
    resid = [int(v) for v in y]
    x = [0] * r
    out = []

    def rec(j):
        if j == r:
            out.append(FlowState(np.array(x, dtype=np.int64)))
            if len(out) > cap:
                raise EnumerationCapError(
                    cap, f"feasible set exceeds {cap} points"
                )
            return
        u = min(resid[l] for l in links_of[j])
        for v in range(u + 1):
            x[j] = v
            for l in links_of[j]:
                resid[l] -= v
            ok = all(resid[l] == 0 for l in finalized_at[j])
            if ok and _supply_ok(j + 1, r, resid, links_of, routes_of):
                rec(j + 1)
            for l in links_of[j]:
                resid[l] += v
        x[j] = 0

    rec(0)
    return out


def _search(ent, y, maximize_l1):
    """Shared DFS behind initial_feasible.

    Values are tried in descending order so that large flows are
    assigned early; for max-L1 this gives good incumbents fast, and
    for the first-solution case it follows the descent to the forced
    tail quickly.  For max-L1, subtrees are pruned against the exact
    rational LP bound on the remaining total flow.
    """
    n, r = ent.shape
    links_of, routes_of, finalized_at = _structure(ent)
    resid = [int(v) for v in y]
    x = [0] * r
    best = {"x": None, "val": -1}
    cols = [[int(ent[i, j]) for j in range(r)] for i in range(n)]
    ones = [1] * r

    target = None
    if maximize_l1:
        sol = ratlp.solve(cols, resid, ones, maximize=True)
        if sol.status != ratlp.OPTIMAL:
            return None
        if all(v.denominator == 1 for v in sol.x):
            # the relaxation already sits on an integer vertex
            return [int(v) for v in sol.x]
        # otherwise the integer optimum cannot exceed its floor; the
        # search stops as soon as that total is reached
        target = sol.value.numerator // sol.value.denominator

    def lp_bound(d):
        sub = [row[d:] for row in cols]
        res = ratlp.solve(sub, resid, ones[d:], maximize=True)
        if res.status != ratlp.OPTIMAL:
            return None
        num, den = res.value.numerator, res.value.denominator
        return num // den

    def rec(d, cur_sum):
        if d == r:
            # every link is finalized by its last route, so residuals
            # are all zero here and x is feasible
            if maximize_l1:
                if cur_sum > best["val"]:
                    best["val"] = cur_sum
                    best["x"] = list(x)
                return cur_sum == target
            best["x"] = list(x)
            return True
        if maximize_l1 and best["x"] is not None:
            b = lp_bound(d)
            if b is None or cur_sum + b <= best["val"]:
                return False
        u = min(resid[l] for l in links_of[d])
        for v in range(u, -1, -1):
            x[d] = v
            for l in links_of[d]:
                resid[l] -= v
            ok = all(resid[l] == 0 for l in finalized_at[d])
            if ok and _supply_ok(d + 1, r, resid, links_of, routes_of):
                done = rec(d + 1, cur_sum + v)
                if done:
                    return True
            for l in links_of[d]:
                resid[l] += v
        x[d] = 0
        return False

    rec(0, 0)
    return best["x"]


def initial_feasible(A, y, objective="any"):
    """Find one integer point of {x >= 0 : Ax = y}.

    With objective "any", the first point found by the search is
    returned.  With "max-L1", an exact branch-and-bound search returns
    a point maximizing the total flow sum; ties go to the first
    maximizer found (lexicographically largest).  Rational
    infeasibility (no nonnegative rational solution at all) and
    integer infeasibility (rational solutions exist, integer ones do
    not) are reported as distinct errors.
    """
    if objective not in ("any", "max-L1"):
        raise ValueError(f"unknown objective {objective!r}")
    ent = _entries(A)
    n, r = ent.shape
    y = _vector(y, n)
    cols = [[int(ent[i, j]) for j in range(r)] for i in range(n)]
    if not ratlp.feasible(cols, [int(v) for v in y]):
        raise RationallyInfeasibleError(
            "Ax = y has no nonnegative rational solution"
        )
    x = _search(ent, y, maximize_l1=(objective == "max-L1"))
    if x is None:
        raise IntegerInfeasibleError(
            "Ax = y is rationally feasible but has no integer solution"
        )
    return FlowState(np.array(x, dtype=np.int64))


def move_bounds(state, p, U, j):
    """Exact support of free coordinate j, all other free coordinates
    held fixed.

    With w the basis block of U's column j, the coordinate value t
    must keep x*(t) = x* + t w nonnegative, where x* is the basis
    solution with coordinate j zeroed out.  Entries w_i > 0 give lower
    bounds, entries w_i < 0 give upper bounds; at least one entry is
    negative whenever A1 is nonnegative and the free column is
    nonzero, so the upper bound is always finite.  This is the slow
    exact reference for the sampler kernels.
    """
    if not isinstance(U, NullBasis):
        raise TypeError("U must be a NullBasis")
    if not U.is_integer():
        raise ValueError("move bounds need an integer null basis "
                         "(unimodular A1)")
    n = len(p.basis_cols)
    t_cur = int(state.x[p.free_cols[j] - 1])
    lo = 0
    hi = None
    for i in range(n):
        wi = int(U.U[i][j])
        if wi == 0:
            continue
        xi_star = int(state.x[p.basis_cols[i] - 1]) - t_cur * wi
        if wi > 0:
            cand = -(xi_star // wi)
            if cand > lo:
                lo = cand
        else:
            cand = xi_star // (-wi)
            if hi is None or cand < hi:
                hi = cand
    if hi is None:
        raise AssertionError(
            f"free column {p.free_cols[j]} has no negative step entry"
        )
    if not lo <= t_cur <= hi:
        raise AssertionError(
            f"current value {t_cur} outside computed bounds "
            f"[{lo}, {hi}]; state is not feasible under this partition"
        )
    return MoveBounds(lo, hi)


def is_vertex(A, state):
    """True iff the state is a vertex of the rational polytope
    {x >= 0 : Ax = y}: at least r - n zero coordinates, and the
    columns of its support linearly independent."""
    ent = _entries(A)
    n, r = ent.shape
    support = np.flatnonzero(state.x)
    if support.shape[0] > n:
        return False
    if support.shape[0] == 0:
        return True
    sub = [[int(v) for v in ent[:, j]] for j in support]
    return len(independent_row_prefix(sub)) == support.shape[0]


def flows_to_csv(states, file):
    """Write enumerated flow vectors as CSV, one row per state,
    original route order, header x_1..x_r."""
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "w", encoding="utf-8")
        close = True
    try:
        if states:
            r = states[0].r
            file.write(",".join(f"x_{j + 1}" for j in range(r)) + "\n")
        for s in states:
            file.write(",".join(str(int(v)) for v in s.x) + "\n")
    finally:
        if close:
            file.close()
