"""Pure Python sampler kernels.

This module and the compiled ``_kernels`` extension implement exactly
the same contract and must produce bit-identical results: the same
sequence of uniform draws from the supplied generator, the same
floating-point operations in the same order, and the same integer
bound arithmetic.  The compiled module is a transliteration of this
one; any semantic change here must be mirrored there.

All state arrays are in partition order: ``x1`` holds the basis-block
flows and ``x2`` the free flows; ``W[j]`` holds the n-vector by which
``x1`` moves when free coordinate j increases by one.  ``lm_basis``
and ``lm_free`` are per-coordinate log-mass lookup tables, wide enough
to cover every feasible flow value (any coordinate is bounded by the
largest link count).
"""

from __future__ import annotations

from itertools import combinations
from math import exp

PROPOSAL_UNIFORM = 0
PROPOSAL_GIBBS = 1


def run_sweeps(
    W,
    x1,
    x2,
    lm_basis,
    lm_free,
    proposal,
    random_scan,
    n_sweeps,
    rng,
    thin,
    out_x,
    out_acc,
    out_chg,
    acc_coord,
    chg_route,
):
    """Run componentwise sweeps over the free coordinates.

    Parameters
    ----------
    W : (k, n) int64 array, W[j, i] = step of basis coordinate i per
        unit increase of free coordinate j.
    x1, x2 : int64 state vectors (partition order); updated in place.
    lm_basis : (n, V) float64 log-mass table for basis coordinates.
    lm_free : (k, V) float64 log-mass table for free coordinates.
    proposal : PROPOSAL_UNIFORM or PROPOSAL_GIBBS.
    random_scan : 0 for fixed ascending coordinate order, 1 to shuffle
        the order each sweep (Fisher-Yates, one draw per swap).
    n_sweeps : number of full sweeps (one proposal per free coordinate
        per sweep).
    rng : numpy Generator; consumed one double per uniform draw.
    thin : record every thin-th sweep into the out arrays.
    out_x : (n_sweeps // thin, n + k) int64, state snapshots.
    out_acc, out_chg : per-record acceptance / change counts for the
        recorded sweep.
    acc_coord : (k,) int64, cumulative acceptances per free coordinate.
    chg_route : (n + k,) int64, cumulative value changes per coordinate
        (partition order).
    """
    k, n = W.shape
    x1l = [int(v) for v in x1]
    x2l = [int(v) for v in x2]
    lmb = lm_basis.tolist()
    lmf = lm_free.tolist()
    nz = [
        [(i, int(W[j, i])) for i in range(n) if W[j, i] != 0]
        for j in range(k)
    ]
    random = rng.random
    order = list(range(k))

    for s in range(1, n_sweeps + 1):
        acc = 0
        chg = 0
        if random_scan:
            for i in range(k - 1, 0, -1):
                u = random()
                jj = int(u * (i + 1))
                if jj > i:
                    jj = i
                order[i], order[jj] = order[jj], order[i]
        for j in order:
            t_cur = x2l[j]
            lo_d = -t_cur
            hi_d = None
            for i, w in nz[j]:
                if w > 0:
                    b = -(x1l[i] // w)
                    if b > lo_d:
                        lo_d = b
                else:
                    b = x1l[i] // (-w)
                    if hi_d is None or b < hi_d:
                        hi_d = b
            lo = t_cur + lo_d
            hi = t_cur + (hi_d if hi_d is not None else 0)
            if hi_d is None:
                # Every free column hits the basis block somewhere with
                # a -1 step; a missing upper bound means the tables
                # were built for an inconsistent partition.
                raise AssertionError(
                    f"free coordinate {j} has no upper bound"
                )

            if proposal == PROPOSAL_UNIFORM:
                u = random()
                t = lo + int(u * (hi - lo + 1))
                if t > hi:
                    t = hi
                if t == t_cur:
                    acc += 1
                    acc_coord[j] += 1
                    continue
                d = t - t_cur
                row = lmf[j]
                delta = row[t] - row[t_cur]
                for i, w in nz[j]:
                    row = lmb[i]
                    v = x1l[i]
                    delta += row[v + d * w] - row[v]
                if delta >= 0.0:
                    accept = True
                else:
                    accept = random() < exp(delta)
                if accept:
                    acc += 1
                    chg += 1
                    acc_coord[j] += 1
                    chg_route[n + j] += 1
                    x2l[j] = t
                    for i, w in nz[j]:
                        x1l[i] += d * w
                        chg_route[i] += 1
            else:
                m = hi - lo + 1
                row = lmf[j]
                probs = []
                best = None
                for idx in range(m):
                    t = lo + idx
                    d = t - t_cur
                    lp = row[t]
                    for i, w in nz[j]:
                        lp += lmb[i][x1l[i] + d * w]
                    probs.append(lp)
                    if best is None or lp > best:
                        best = lp
                total = 0.0
                for idx in range(m):
                    p = exp(probs[idx] - best)
                    probs[idx] = p
                    total += p
                u = random() * total
                csum = 0.0
                pick = m - 1
                for idx in range(m):
                    csum += probs[idx]
                    if u < csum:
                        pick = idx
                        break
                t = lo + pick
                acc += 1
                acc_coord[j] += 1
                if t != t_cur:
                    chg += 1
                    d = t - t_cur
                    x2l[j] = t
                    chg_route[n + j] += 1
                    for i, w in nz[j]:
                        x1l[i] += d * w
                        chg_route[i] += 1
        if thin > 0 and s % thin == 0:
            rec = s // thin - 1
            for i in range(n):
                out_x[rec, i] = x1l[i]
            for j in range(k):
                out_x[rec, n + j] = x2l[j]
            out_acc[rec] = acc
            out_chg[rec] = chg

    for i in range(n):
        x1[i] = x1l[i]
    for j in range(k):
        x2[j] = x2l[j]


def _det_bareiss(M, k):
    """Exact determinant of the k x k integer list-of-lists M;
    destroys M."""
    sign = 1
    prev = 1
    for p in range(k - 1):
        if M[p][p] == 0:
            for i in range(p + 1, k):
                if M[i][p] != 0:
                    M[p], M[i] = M[i], M[p]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(p + 1, k):
            for j in range(p + 1, k):
                M[i][j] = (M[i][j] * M[p][p] - M[i][p] * M[p][j]) // prev
            M[i][p] = 0
        prev = M[p][p]
    return sign * M[k - 1][k - 1]


def tu_scan(entries):
    """True iff every square minor of the 0/1 matrix has determinant
    in {-1, 0, 1}.  Scans k >= 3 only (smaller minors of a 0/1 matrix
    cannot violate the bound); the caller is responsible for keeping
    the minor count within budget."""
    n, r = entries.shape
    rows = entries.tolist()
    for k in range(3, min(n, r) + 1):
        for ri in combinations(range(n), k):
            sub = [rows[i] for i in ri]
            for ci in combinations(range(r), k):
                M = [[row[c] for c in ci] for row in sub]
                if abs(_det_bareiss(M, k)) > 1:
                    return False
    return True
