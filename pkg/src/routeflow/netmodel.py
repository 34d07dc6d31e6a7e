"""Routing structure: loading, validation, and structural checks.

The central object is the link-path incidence matrix: a dense 0/1
matrix with one row per monitored link and one column per route.  A
column lists the monitored links a route traverses; the observed link
counts are ``y = A x`` for the latent integer route flows ``x``.

Loading performs the structural repairs and checks that the sampling
theory depends on: rationally dependent rows are dropped (they carry
no information and would make every basis singular), zero columns are
rejected, and duplicate columns are recorded as a warning because they
make the mean flows unidentifiable even though sampling still works.
"""

from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import ratlp
from .errors import DimensionError, ParseError, ValidationError
from .intlin import independent_row_prefix


@dataclass(frozen=True)
class RoutingMatrix:
    """A validated link-path incidence matrix.

    Fields
    ------
    entries : (n, r) int64 array of 0/1 entries, one row per monitored
        link, one column per route; read-only.
    col_perm : tuple of 1-based original route ids giving the current
        column order.  Identity after loading; `reordered` produces
        permuted views.
    n_swap : width of the basis block under the current permutation
        (always the row count n).
    route_labels : optional route names from the header row.
    rows_removed : 1-based indices (in the source file) of rows dropped
        as rationally dependent.
    duplicate_columns : 1-based ids of columns identical to an earlier
        column, in original order.
    """

    entries: np.ndarray
    col_perm: tuple[int, ...]
    n_swap: int
    route_labels: tuple[str, ...] | None = None
    rows_removed: tuple[int, ...] = ()
    duplicate_columns: tuple[int, ...] = ()

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.int64)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n_links(self):
        return self.entries.shape[0]

    @property
    def n_routes(self):
        return self.entries.shape[1]

    def reordered(self, col_perm):
        """A copy with columns placed in the order given by `col_perm`
        (a permutation of 1-based original route ids)."""
        perm = tuple(int(c) for c in col_perm)
        if sorted(perm) != list(range(1, self.n_routes + 1)):
            raise ValueError("col_perm must be a permutation of route ids")
        # Map requested original ids to current column positions.
        pos = {orig: i for i, orig in enumerate(self.col_perm)}
        entries = self.entries[:, [pos[c] for c in perm]]
        labels = None
        if self.route_labels is not None:
            labels = tuple(self.route_labels[pos[c]] for c in perm)
        return RoutingMatrix(
            entries=entries,
            col_perm=perm,
            n_swap=self.n_swap,
            route_labels=labels,
            rows_removed=self.rows_removed,
            duplicate_columns=self.duplicate_columns,
        )


@dataclass(frozen=True)
class LinkCountSample:
    """One or more observed link-count vectors.

    counts is an (N, n) int64 array, one row per observation period;
    labels optionally names the periods.
    """

    counts: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim == 1:
            counts = counts[None, :]
        if counts.ndim != 2 or counts.shape[0] < 1:
            raise ValidationError("counts must be a nonempty 2-D array")
        if np.any(counts < 0):
            raise ValidationError("link counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if self.labels is not None and len(self.labels) != counts.shape[0]:
            raise ValidationError("one label per observation required")

    @property
    def n_obs(self):
        return self.counts.shape[0]

    @property
    def n_links(self):
        return self.counts.shape[1]


@dataclass(frozen=True)
class NetworkReport:
    """Outcome of the structural checks on a routing matrix."""

    rows_removed: tuple[int, ...]
    identifiability_ok: bool
    coprime_ok: bool
    tu_status: str


def _read_rows(source):
    """Yield stripped comma-separated rows from a path, file object or
    literal text block."""
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, (str, os.PathLike)):
        if isinstance(source, str) and "\n" in source:
            text = source
        else:
            try:
                with open(source, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ParseError(f"cannot read {source}: {exc}") from exc
    else:
        raise ParseError(f"unsupported matrix source {type(source)!r}")
    rows = []
    for line in io.StringIO(text):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rows.append([cell.strip() for cell in line.split(",")])
    return rows


def load_network(matrix_source):
    """Load and validate a link-path incidence matrix.

    The source is CSV text (path, file object, or a literal multi-line
    string): one row per monitored link, one 0/1 column per route, with
    an optional first header row of route ids in
    ``origin-destination[:variant]`` form.

    Rationally redundant rows are dropped with a warning and recorded
    (1-based, in source order).  Duplicate columns are recorded and
    warned about but kept, since sampling remains well defined; the
    identifiability check reports them.  Zero columns and non-binary
    entries are errors.
    """
    rows = _read_rows(matrix_source)
    if not rows:
        raise ParseError("matrix source contains no rows")

    labels = None
    first = rows[0]
    if any(not _is_int(cell) for cell in first):
        labels = tuple(first)
        rows = rows[1:]
        if not rows:
            raise ParseError("matrix source has a header but no rows")

    width = len(rows[0])
    data = []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(
                f"row {i + 1} has {len(row)} cells, expected {width}"
            )
        try:
            data.append([int(cell) for cell in row])
        except ValueError as exc:
            raise ParseError(f"row {i + 1}: {exc}") from exc
    entries = np.array(data, dtype=np.int64)
    if labels is not None and len(labels) != entries.shape[1]:
        raise ParseError(
            f"header names {len(labels)} routes but rows have "
            f"{entries.shape[1]} columns"
        )

    if np.any((entries != 0) & (entries != 1)):
        bad = np.argwhere((entries != 0) & (entries != 1))[0]
        raise ValidationError(
            f"entry at row {bad[0] + 1}, column {bad[1] + 1} is not 0/1"
        )
    zero_cols = np.flatnonzero(~entries.any(axis=0))
    if zero_cols.size:
        raise ValidationError(
            f"column {zero_cols[0] + 1} has no nonzero entry: every "
            "route must traverse at least one monitored link"
        )

    kept = independent_row_prefix(entries)
    removed = tuple(
        i + 1 for i in range(entries.shape[0]) if i not in set(kept)
    )
    if removed:
        warnings.warn(
            f"dropped {len(removed)} rationally dependent row(s): "
            f"{list(removed)}",
            stacklevel=2,
        )
        entries = entries[kept, :]

    seen = {}
    duplicates = []
    for j in range(entries.shape[1]):
        key = entries[:, j].tobytes()
        if key in seen:
            duplicates.append(j + 1)
        else:
            seen[key] = j + 1
    if duplicates:
        warnings.warn(
            f"duplicate route column(s) {duplicates}: mean flows on "
            "these routes are not identifiable",
            stacklevel=2,
        )

    r = entries.shape[1]
    return RoutingMatrix(
        entries=entries,
        col_perm=tuple(range(1, r + 1)),
        n_swap=entries.shape[0],
        route_labels=labels,
        rows_removed=removed,
        duplicate_columns=tuple(duplicates),
    )


def _is_int(cell):
    try:
        int(cell)
    except ValueError:
        return False
    return True


def load_counts(source, n_links=None):
    """Load observed link counts: CSV with one row per observation
    period and one column per monitored link.  An optional header row
    of non-numeric labels is skipped."""
    rows = _read_rows(source)
    if not rows:
        raise ParseError("counts source contains no rows")
    if any(not _is_int(cell) for cell in rows[0]):
        rows = rows[1:]
        if not rows:
            raise ParseError("counts source has a header but no rows")
    width = len(rows[0])
    data = []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(
                f"counts row {i + 1} has {len(row)} cells, expected {width}"
            )
        try:
            data.append([int(cell) for cell in row])
        except ValueError as exc:
            raise ParseError(f"counts row {i + 1}: {exc}") from exc
    counts = np.array(data, dtype=np.int64)
    if np.any(counts < 0):
        raise ValidationError("link counts must be nonnegative")
    if n_links is not None and counts.shape[1] != n_links:
        raise DimensionError(
            f"counts have {counts.shape[1]} links but the matrix has "
            f"{n_links} rows"
        )
    return LinkCountSample(counts=counts)


def check_identifiability_preconditions(A, tu_size_limit=None):
    """Verify the structural preconditions for identifiable means.

    identifiability_ok requires all columns distinct and nonzero.
    coprime_ok reports whether the column sums of the current basis
    block (the first ``n_swap`` columns in current order) have gcd 1,
    a necessary condition for that block to be unimodular.  tu_status
    comes from the exhaustive minor scan, size permitting.
    """
    from .intlin import total_unimodularity_check

    entries = A.entries
    n = A.n_swap
    distinct = len({entries[:, j].tobytes() for j in range(A.n_routes)}) \
        == A.n_routes
    nonzero = bool(entries.any(axis=0).all())
    col_sums = entries[:, :n].sum(axis=0)
    coprime = int(np.gcd.reduce(col_sums)) == 1
    tu_status = total_unimodularity_check(A, size_limit=tu_size_limit)
    return NetworkReport(
        rows_removed=A.rows_removed,
        identifiability_ok=distinct and nonzero,
        coprime_ok=coprime,
        tu_status=tu_status,
    )


def consistency_check(A, y):
    """True iff every observation admits a rational nonnegative
    solution of ``A x = y`` (LP feasibility); a cheap gate before any
    integer work."""
    counts = y.counts if isinstance(y, LinkCountSample) else \
        LinkCountSample(counts=np.asarray(y)).counts
    if counts.shape[1] != A.n_links:
        raise DimensionError(
            f"counts have {counts.shape[1]} links but the matrix has "
            f"{A.n_links} rows"
        )
    rows = [[int(v) for v in row] for row in A.entries]
    for t in range(counts.shape[0]):
        if not ratlp.feasible(rows, [int(v) for v in counts[t]]):
            return False
    return True
