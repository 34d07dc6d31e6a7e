"""Exact rational linear programming at desk scale.

A two-phase primal simplex over ``fractions.Fraction``, with Bland's
rule for anti-cycling.  Problems are given in equality standard form

    optimize c.x  subject to  A x = b,  x >= 0,

and every quantity is carried exactly, so feasibility verdicts and
optimal values are never floating-point artifacts.  Intended for the
small systems that arise from routing matrices (tens of rows and
columns), not as a general-purpose solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LpResult:
    status: str
    x: tuple[Fraction, ...] | None
    value: Fraction | None


def _to_matrix(rows):
    return [[Fraction(v) for v in row] for row in rows]


def _pivot(tableau, basis, row, col):
    """Pivot the tableau so that column `col` becomes the unit vector
    with a one in `row`."""
    piv = tableau[row][col]
    inv = Fraction(1) / piv
    tableau[row] = [v * inv for v in tableau[row]]
    for i, line in enumerate(tableau):
        if i != row and line[col] != 0:
            factor = line[col]
            prow = tableau[row]
            tableau[i] = [v - factor * p for v, p in zip(line, prow)]
    basis[row] = col


def _simplex(tableau, basis, n_cols):
    """Run Bland-rule simplex on a tableau whose last row holds reduced
    costs (for minimization) and whose last column holds the RHS.

    Returns "optimal" or "unbounded"; `tableau` and `basis` are updated
    in place.
    """
    m = len(tableau) - 1
    cost = tableau[m]
    while True:
        enter = -1
        for j in range(n_cols):
            if cost[j] < 0:
                enter = j
                break
        if enter < 0:
            return OPTIMAL
        leave = -1
        best = None
        for i in range(m):
            a = tableau[i][enter]
            if a > 0:
                ratio = tableau[i][-1] / a
                if best is None or ratio < best or (
                    ratio == best and basis[i] < basis[leave]
                ):
                    best = ratio
                    leave = i
        if leave < 0:
            return UNBOUNDED
        _pivot(tableau, basis, leave, enter)
        cost = tableau[m]


def solve(A, b, c, maximize=False):
    """Optimize ``c.x`` over ``{A x = b, x >= 0}`` exactly.

    Parameters
    ----------
    A : sequence of rows (any Fraction-convertible entries)
    b : RHS vector
    c : objective vector
    maximize : bool
        Maximize instead of minimize.

    Returns
    -------
    LpResult
        status is "optimal", "infeasible" or "unbounded"; for optimal
        results `x` is an exact vertex solution and `value` the exact
        objective value (in the caller's sense, i.e. already negated
        back when maximizing).
    """
    A = _to_matrix(A)
    b = [Fraction(v) for v in b]
    c = [Fraction(v) for v in c]
    m, n = len(A), len(c)
    if any(len(row) != n for row in A) or len(b) != m:
        raise ValueError("inconsistent LP dimensions")
    if maximize:
        c = [-v for v in c]

    # Make the RHS nonnegative so the artificial basis is feasible.
    for i in range(m):
        if b[i] < 0:
            A[i] = [-v for v in A[i]]
            b[i] = -b[i]

    # Phase 1: minimize the sum of artificial variables.
    width = n + m + 1
    tableau = []
    for i in range(m):
        row = A[i] + [Fraction(int(i == j)) for j in range(m)] + [b[i]]
        tableau.append(row)
    basis = [n + i for i in range(m)]
    cost = [Fraction(0)] * width
    for k in range(m):
        cost[n + k] = Fraction(1)
    for i in range(m):
        # Zero the reduced cost of each basic artificial; the objective
        # cell ends up holding minus the current phase-1 objective.
        factor = cost[basis[i]]
        if factor != 0:
            cost = [v - factor * p for v, p in zip(cost, tableau[i])]
    tableau.append(cost)
    _simplex(tableau, basis, n + m)
    if tableau[m][-1] != 0:
        return LpResult(INFEASIBLE, None, None)

    # Drive any artificial variables still basic (at zero) out of the
    # basis; a row with no real pivot is redundant and can be cleared.
    for i in range(m):
        if basis[i] >= n:
            for j in range(n):
                if tableau[i][j] != 0:
                    _pivot(tableau, basis, i, j)
                    break
            else:
                tableau[i] = [Fraction(0)] * width
                basis[i] = -1

    # Phase 2 on the real objective, artificial columns frozen.
    cost = list(c) + [Fraction(0)] * (m + 1)
    for i in range(m):
        if basis[i] >= 0 and cost[basis[i]] != 0:
            factor = cost[basis[i]]
            cost = [v - factor * p for v, p in zip(cost, tableau[i])]
    tableau[m] = cost
    rows_alive = [i for i in range(m) if basis[i] >= 0]
    reduced_t = [tableau[i] for i in rows_alive] + [tableau[m]]
    reduced_b = [basis[i] for i in rows_alive]
    status = _simplex(reduced_t, reduced_b, n)
    if status == UNBOUNDED:
        return LpResult(UNBOUNDED, None, None)

    x = [Fraction(0)] * n
    for i, bi in enumerate(reduced_b):
        if bi < n:
            x[bi] = reduced_t[i][-1]
    value = -reduced_t[-1][-1]
    if maximize:
        value = -value
    return LpResult(OPTIMAL, tuple(x), value)


def feasible(A, b):
    """True iff ``{A x = b, x >= 0}`` has a rational point."""
    n = len(A[0]) if len(A) else 0
    result = solve(A, b, [Fraction(0)] * n)
    return result.status == OPTIMAL
