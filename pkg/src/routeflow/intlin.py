"""Exact integer linear algebra over routing matrices.

Partitions ``A = [A1 | A2]``, exact determinants and inverses, the
null-space basis ``U = [-A1^{-1} A2 ; I]``, unimodularity checks, and
the greedy score-driven basis search used to re-optimize partitions
between sampling phases.

All arithmetic is exact: determinants by fraction-free (Bareiss)
elimination over Python integers, inverses by Gauss-Jordan over
``fractions.Fraction``.  Column indices exposed by :class:`Partition`
are 1-based original route ids throughout, matching the ids used in
chain output files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    CannotCompleteBasisError,
    NoUnimodularBasisError,
    SingularMatrixError,
)

TU_VERIFIED = "verified-TU"
TU_VIOLATED = "verified-not-TU"
TU_UNCHECKED = "unchecked"

#: Budget used to pick the automatic size limit of the exhaustive
#: total-unimodularity scan: the scan is attempted only when the total
#: number of k x k minors with k >= 3 stays below this.
TU_MINOR_BUDGET = 10**7


def _entries(A):
    """Accept either a RoutingMatrix-like object or a plain array."""
    return np.asarray(getattr(A, "entries", A), dtype=np.int64)


def bareiss_det(M):
    """Exact determinant of a square integer matrix.

    Fraction-free Gaussian elimination: every intermediate value is an
    integer (a minor of the input), so there is no rounding and no
    fraction bookkeeping.
    """
    M = [[int(v) for v in row] for row in np.asarray(M)]
    n = len(M)
    if n == 0:
        return 1
    if any(len(row) != n for row in M):
        raise ValueError("determinant of a non-square matrix")
    sign = 1
    prev = 1
    for k in range(n - 1):
        if M[k][k] == 0:
            for i in range(k + 1, n):
                if M[i][k] != 0:
                    M[k], M[i] = M[i], M[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                M[i][j] = (M[i][j] * M[k][k] - M[i][k] * M[k][j]) // prev
            M[i][k] = 0
        prev = M[k][k]
    return sign * M[n - 1][n - 1]


def fraction_inverse(M):
    """Exact inverse of a square matrix as a tuple of Fraction rows.

    Returns None when the matrix is singular.
    """
    A = [[Fraction(int(v)) for v in row] for row in np.asarray(M)]
    n = len(A)
    if any(len(row) != n for row in A):
        raise ValueError("inverse of a non-square matrix")
    inv = [
        [Fraction(int(i == j)) for j in range(n)] for i in range(n)
    ]
    for col in range(n):
        pivot = None
        for row in range(col, n):
            if A[row][col] != 0:
                pivot = row
                break
        if pivot is None:
            return None
        if pivot != col:
            A[col], A[pivot] = A[pivot], A[col]
            inv[col], inv[pivot] = inv[pivot], inv[col]
        p = A[col][col]
        A[col] = [v / p for v in A[col]]
        inv[col] = [v / p for v in inv[col]]
        for row in range(n):
            if row != col and A[row][col] != 0:
                f = A[row][col]
                A[row] = [v - f * w for v, w in zip(A[row], A[col])]
                inv[row] = [v - f * w for v, w in zip(inv[row], inv[col])]
    return tuple(tuple(row) for row in inv)


def independent_row_prefix(M):
    """Indices (0-based) of the rows that are rationally independent of
    all earlier rows, scanning top to bottom."""
    M = np.asarray(M)
    basis = []  # reduced rows, as Fraction lists with leading column
    kept = []
    for idx in range(M.shape[0]):
        row = [Fraction(int(v)) for v in M[idx]]
        for lead, vec in basis:
            if row[lead] != 0:
                f = row[lead]
                row = [v - f * w for v, w in zip(row, vec)]
        lead = next((j for j, v in enumerate(row) if v != 0), None)
        if lead is None:
            continue
        p = row[lead]
        row = [v / p for v in row]
        basis.append((lead, row))
        kept.append(idx)
    return kept


@dataclass(frozen=True)
class Partition:
    """A partition of the routing matrix into ``A = [A1 | A2]``.

    Fields
    ------
    basis_cols : ordered 1-based original route ids forming A1
    free_cols : ordered 1-based route ids forming A2
    inv_A1 : exact inverse of A1 (tuple of Fraction rows)
    det_A1 : exact integer determinant of A1
    """

    basis_cols: tuple[int, ...]
    free_cols: tuple[int, ...]
    inv_A1: tuple[tuple[Fraction, ...], ...]
    det_A1: int

    @property
    def n(self):
        return len(self.basis_cols)

    @property
    def order(self):
        """All route ids in partition order (basis block first)."""
        return self.basis_cols + self.free_cols

    def inv_A1_int(self):
        """The inverse as an int64 array; requires a unimodular A1."""
        if abs(self.det_A1) != 1:
            raise ValueError(
                "integer inverse requires |det(A1)| = 1, "
                f"got det = {self.det_A1}"
            )
        return np.array(
            [[int(v) for v in row] for row in self.inv_A1], dtype=np.int64
        )


@dataclass(frozen=True)
class NullBasis:
    """Null-space basis ``U = [-A1^{-1} A2 ; I]`` in partition order.

    Row i of U corresponds to the route ``order[i]`` (basis routes
    first, then free routes); column j is the move direction associated
    with free route ``order[n + j]``.
    """

    U: tuple[tuple[Fraction, ...], ...]
    order: tuple[int, ...]
    n: int

    @property
    def n_free(self):
        return len(self.order) - self.n

    def is_integer(self):
        return all(v.denominator == 1 for row in self.U for v in row)

    def top_block_int(self):
        """The first n rows (= -A1^{-1} A2) as an int64 array of shape
        (n, r - n); requires integer entries."""
        if not self.is_integer():
            raise ValueError("null basis has non-integer entries")
        return np.array(
            [[int(v) for v in row] for row in self.U[: self.n]],
            dtype=np.int64,
        )


def make_partition(A, basis_cols):
    """Build the partition of A with the given basis columns.

    Parameters
    ----------
    A : RoutingMatrix or array
    basis_cols : sequence of n distinct 1-based column ids

    Raises
    ------
    ValueError for malformed indices, SingularMatrixError when the
    selected block is singular (the error carries ``det == 0`` to keep
    that case distinct from structural failures).
    """
    entries = _entries(A)
    n, r = entries.shape
    basis_cols = tuple(int(c) for c in basis_cols)
    if len(basis_cols) != n:
        raise ValueError(f"expected {n} basis columns, got {len(basis_cols)}")
    if len(set(basis_cols)) != n:
        raise ValueError("basis columns must be distinct")
    if any(c < 1 or c > r for c in basis_cols):
        raise ValueError(f"basis column ids must lie in 1..{r}")
    A1 = entries[:, [c - 1 for c in basis_cols]]
    det = bareiss_det(A1)
    if det == 0:
        raise SingularMatrixError(
            f"columns {basis_cols} form a singular block (det = 0)"
        )
    inv = fraction_inverse(A1)
    free_cols = tuple(c for c in range(1, r + 1) if c not in set(basis_cols))
    return Partition(
        basis_cols=basis_cols, free_cols=free_cols, inv_A1=inv, det_A1=det
    )


def null_basis(p, A):
    """The null-space basis U for partition p of A.

    ``A @ U == 0`` exactly, and row n + j of U is the unit vector for
    free column j.
    """
    entries = _entries(A)
    n = p.n
    k = len(p.free_cols)
    A2 = entries[:, [c - 1 for c in p.free_cols]]
    top = []
    for i in range(n):
        row = []
        for j in range(k):
            acc = Fraction(0)
            for l in range(n):
                acc -= p.inv_A1[i][l] * int(A2[l, j])
            row.append(acc)
        top.append(tuple(row))
    bottom = [
        tuple(Fraction(int(i == j)) for j in range(k)) for i in range(k)
    ]
    return NullBasis(U=tuple(top) + tuple(bottom), order=p.order, n=n)


def is_unimodular(p):
    """True iff |det(A1)| = 1, i.e. A1^{-1} is integer-valued."""
    return abs(p.det_A1) == 1


def tu_minor_count(n, r):
    """Number of k x k minors with 3 <= k <= min(n, r)."""
    total = 0
    for k in range(3, min(n, r) + 1):
        total += math.comb(n, k) * math.comb(r, k)
    return total


def total_unimodularity_check(A, size_limit=None):
    """Exhaustively test whether every square submatrix of A has
    determinant in {-1, 0, 1}.

    1 x 1 and 2 x 2 minors of a 0/1 matrix always satisfy this, so the
    scan covers k >= 3.  With ``size_limit`` given, the scan runs iff
    ``min(n, r) <= size_limit``; by default it runs iff the total minor
    count stays under ``TU_MINOR_BUDGET``.  Returns one of the
    ``TU_*`` status strings; oversized inputs return "unchecked".
    """
    entries = _entries(A)
    n, r = entries.shape
    if size_limit is not None:
        if min(n, r) > size_limit:
            return TU_UNCHECKED
    elif tu_minor_count(n, r) > TU_MINOR_BUDGET:
        return TU_UNCHECKED
    from . import kernels

    ok = kernels.tu_scan(np.ascontiguousarray(entries, dtype=np.int64))
    return TU_VERIFIED if ok else TU_VIOLATED


class _RankTracker:
    """Incremental exact rank tracking for greedy column selection.

    Keeps reduced column vectors; `would_extend` tests a candidate
    column without mutating, `add` commits it.  Snapshots are cheap
    copies used by the backtracking search.
    """

    def __init__(self):
        self.basis = []  # list of (lead_index, Fraction column)

    def _reduce(self, col):
        col = list(col)
        for lead, vec in self.basis:
            if col[lead] != 0:
                f = col[lead]
                col = [v - f * w for v, w in zip(col, vec)]
        return col

    def would_extend(self, col):
        reduced = self._reduce([Fraction(int(v)) for v in col])
        return any(v != 0 for v in reduced)

    def add(self, col):
        reduced = self._reduce([Fraction(int(v)) for v in col])
        lead = next((j for j, v in enumerate(reduced) if v != 0), None)
        if lead is None:
            raise ValueError("column does not extend the span")
        p = reduced[lead]
        self.basis.append((lead, [v / p for v in reduced]))

    def snapshot(self):
        copy = _RankTracker()
        copy.basis = list(self.basis)
        return copy


def greedy_reorder(A, flow_scores, backtrack_budget=64):
    """Choose a unimodular basis by descending flow score.

    Columns are ranked by (score descending, original id ascending) and
    added greedily, skipping any column in the rational span of those
    already chosen.  If the resulting block is invertible but not
    unimodular, the search backtracks over later-ranked alternatives,
    testing up to ``backtrack_budget`` completed bases before giving
    up.

    Returns the Partition of the first unimodular basis found.  Raises
    CannotCompleteBasisError if no invertible completion exists at all
    (impossible when the rows of A are independent) and
    NoUnimodularBasisError when the budget is exhausted.
    """
    entries = _entries(A)
    n, r = entries.shape
    scores = [float(s) for s in np.asarray(flow_scores, dtype=float)]
    if len(scores) != r:
        raise ValueError(f"expected {r} scores, got {len(scores)}")
    if any(s < 0 or not math.isfinite(s) for s in scores):
        raise ValueError("flow scores must be finite and nonnegative")
    ranked = sorted(range(r), key=lambda j: (-scores[j], j))
    cols = [entries[:, j] for j in range(r)]

    tried = 0
    found_any = False

    def search(pos, chosen, tracker):
        """DFS over ranked candidates; yields complete bases in greedy
        order."""
        nonlocal tried, found_any
        if len(chosen) == n:
            found_any = True
            tried += 1
            basis_ids = tuple(j + 1 for j in chosen)
            p = make_partition(entries, basis_ids)
            if is_unimodular(p):
                return p
            if tried >= backtrack_budget:
                raise NoUnimodularBasisError(
                    f"no unimodular basis within {backtrack_budget} "
                    "candidate completions"
                )
            return None
        for idx in range(pos, r):
            j = ranked[idx]
            if not tracker.would_extend(cols[j]):
                continue
            sub = tracker.snapshot()
            sub.add(cols[j])
            result = search(idx + 1, chosen + [j], sub)
            if result is not None:
                return result
        return None

    result = search(0, [], _RankTracker())
    if result is None:
        if not found_any:
            raise CannotCompleteBasisError(
                "columns of A do not span the link space"
            )
        raise NoUnimodularBasisError(
            f"no unimodular basis within {backtrack_budget} "
            "candidate completions"
        )
    return result
