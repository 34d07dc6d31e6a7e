# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampler kernels.

Transliteration of ``_kernels_py``; see that module for the contract.
The two must stay bit-identical: same draw sequence from the bit
generator, same floating-point operation order, same integer bound
arithmetic.  All integer divisions below have nonnegative operands, so
C truncation and Python floor division agree.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp as c_exp
from numpy.random cimport bitgen_t

cnp.import_array()

PROPOSAL_UNIFORM = 0
PROPOSAL_GIBBS = 1


def run_sweeps(
    const cnp.int64_t[:, ::1] W,
    cnp.int64_t[::1] x1,
    cnp.int64_t[::1] x2,
    const cnp.float64_t[:, ::1] lm_basis,
    const cnp.float64_t[:, ::1] lm_free,
    int proposal,
    int random_scan,
    long n_sweeps,
    object rng,
    long thin,
    cnp.int64_t[:, ::1] out_x,
    cnp.int64_t[::1] out_acc,
    cnp.int64_t[::1] out_chg,
    cnp.int64_t[::1] acc_coord,
    cnp.int64_t[::1] chg_route,
):
    """Compiled twin of ``_kernels_py.run_sweeps``.

    Draws doubles straight from the generator's bit generator; the
    chain must not share its generator with another thread.
    """
    cdef bitgen_t *bg
    capsule = rng.bit_generator.capsule
    bg = <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")

    cdef Py_ssize_t k = W.shape[0]
    cdef Py_ssize_t n = W.shape[1]

    # Sparse view of W: per free coordinate, the indices and steps of
    # the basis coordinates it touches, in ascending index order.
    cdef cnp.int64_t[::1] nz_off = np.zeros(k + 1, dtype=np.int64)
    cdef Py_ssize_t j, i, c
    c = 0
    for j in range(k):
        for i in range(n):
            if W[j, i] != 0:
                c += 1
        nz_off[j + 1] = c
    cdef cnp.int64_t[::1] nz_i = np.empty(c, dtype=np.int64)
    cdef cnp.int64_t[::1] nz_w = np.empty(c, dtype=np.int64)
    c = 0
    for j in range(k):
        for i in range(n):
            if W[j, i] != 0:
                nz_i[c] = i
                nz_w[c] = W[j, i]
                c += 1

    cdef Py_ssize_t V = lm_basis.shape[1]
    cdef cnp.float64_t[::1] scratch = np.empty(V, dtype=np.float64)
    cdef cnp.int64_t[::1] order = np.arange(k, dtype=np.int64)

    cdef long s, rec
    cdef long long acc, chg
    cdef long long t_cur, lo_d, hi_d, lo, hi, t, d, b, w, v, m, idx, pick
    cdef long long jj, swap
    cdef bint have_hi, accept
    cdef double u, delta, lp, best, total, csum, p
    cdef Py_ssize_t a, a0, a1, ii, jo

    for s in range(1, n_sweeps + 1):
        acc = 0
        chg = 0
        if random_scan:
            for jo in range(k - 1, 0, -1):
                u = bg.next_double(bg.state)
                jj = <long long>(u * <double>(jo + 1))
                if jj > jo:
                    jj = jo
                swap = order[jo]
                order[jo] = order[jj]
                order[jj] = swap
        for jo in range(k):
            j = order[jo]
            a0 = nz_off[j]
            a1 = nz_off[j + 1]
            t_cur = x2[j]
            lo_d = -t_cur
            hi_d = 0
            have_hi = False
            for a in range(a0, a1):
                w = nz_w[a]
                v = x1[nz_i[a]]
                if w > 0:
                    b = -(v / w)
                    if b > lo_d:
                        lo_d = b
                else:
                    b = v / (-w)
                    if (not have_hi) or b < hi_d:
                        hi_d = b
                        have_hi = True
            lo = t_cur + lo_d
            hi = t_cur + hi_d
            if not have_hi:
                raise AssertionError(
                    f"free coordinate {j} has no upper bound"
                )

            if proposal == PROPOSAL_UNIFORM:
                u = bg.next_double(bg.state)
                t = lo + <long long>(u * <double>(hi - lo + 1))
                if t > hi:
                    t = hi
                if t == t_cur:
                    acc += 1
                    acc_coord[j] += 1
                    continue
                d = t - t_cur
                delta = lm_free[j, <Py_ssize_t>t] - lm_free[j, <Py_ssize_t>t_cur]
                for a in range(a0, a1):
                    ii = nz_i[a]
                    v = x1[ii]
                    delta += (
                        lm_basis[ii, <Py_ssize_t>(v + d * nz_w[a])]
                        - lm_basis[ii, <Py_ssize_t>v]
                    )
                if delta >= 0.0:
                    accept = True
                else:
                    accept = bg.next_double(bg.state) < c_exp(delta)
                if accept:
                    acc += 1
                    chg += 1
                    acc_coord[j] += 1
                    chg_route[n + j] += 1
                    x2[j] = t
                    for a in range(a0, a1):
                        ii = nz_i[a]
                        x1[ii] += d * nz_w[a]
                        chg_route[ii] += 1
            else:
                m = hi - lo + 1
                best = 0.0
                for idx in range(m):
                    t = lo + idx
                    d = t - t_cur
                    lp = lm_free[j, <Py_ssize_t>t]
                    for a in range(a0, a1):
                        ii = nz_i[a]
                        lp += lm_basis[ii, <Py_ssize_t>(x1[ii] + d * nz_w[a])]
                    scratch[idx] = lp
                    if idx == 0 or lp > best:
                        best = lp
                total = 0.0
                for idx in range(m):
                    p = c_exp(scratch[idx] - best)
                    scratch[idx] = p
                    total += p
                u = bg.next_double(bg.state) * total
                csum = 0.0
                pick = m - 1
                for idx in range(m):
                    csum += scratch[idx]
                    if u < csum:
                        pick = idx
                        break
                t = lo + pick
                acc += 1
                acc_coord[j] += 1
                if t != t_cur:
                    chg += 1
                    d = t - t_cur
                    x2[j] = t
                    chg_route[n + j] += 1
                    for a in range(a0, a1):
                        ii = nz_i[a]
                        x1[ii] += d * nz_w[a]
                        chg_route[ii] += 1
        if thin > 0 and s % thin == 0:
            rec = s / thin - 1
            for i in range(n):
                out_x[rec, i] = x1[i]
            for j in range(k):
                out_x[rec, n + j] = x2[j]
            out_acc[rec] = acc
            out_chg[rec] = chg


cdef long long _det_bareiss(cnp.int64_t[:, ::1] M, Py_ssize_t k) noexcept:
    """Exact determinant of the leading k x k block; destroys M.
    Intermediates are minors of the original 0/1 matrix, which fit in
    int64 comfortably for every size the scan budget can reach."""
    cdef long long sign = 1
    cdef long long prev = 1
    cdef long long tmp
    cdef Py_ssize_t p, i, j
    for p in range(k - 1):
        if M[p, p] == 0:
            for i in range(p + 1, k):
                if M[i, p] != 0:
                    for j in range(k):
                        tmp = M[p, j]
                        M[p, j] = M[i, j]
                        M[i, j] = tmp
                    sign = -sign
                    break
            else:
                return 0
        for i in range(p + 1, k):
            for j in range(p + 1, k):
                M[i, j] = (M[i, j] * M[p, p] - M[i, p] * M[p, j]) // prev
            M[i, p] = 0
        prev = M[p, p]
    return sign * M[k - 1, k - 1]


def tu_scan(const cnp.int64_t[:, ::1] entries):
    """Compiled twin of ``_kernels_py.tu_scan``: True iff every square
    minor of the 0/1 matrix has determinant in {-1, 0, 1}."""
    cdef Py_ssize_t n = entries.shape[0]
    cdef Py_ssize_t r = entries.shape[1]
    cdef Py_ssize_t kmax = n if n < r else r
    cdef Py_ssize_t k, i, j, p
    cdef bint more
    if kmax < 3:
        return True
    cdef cnp.int64_t[::1] ri = np.empty(kmax, dtype=np.int64)
    cdef cnp.int64_t[::1] ci = np.empty(kmax, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] M = np.empty((kmax, kmax), dtype=np.int64)
    cdef long long det
    for k in range(3, kmax + 1):
        for i in range(k):
            ri[i] = i
        while True:
            for j in range(k):
                ci[j] = j
            while True:
                for i in range(k):
                    for j in range(k):
                        M[i, j] = entries[ri[i], ci[j]]
                det = _det_bareiss(M, k)
                if det > 1 or det < -1:
                    return False
                # next column combination
                more = False
                for p in range(k - 1, -1, -1):
                    if ci[p] != r - k + p:
                        ci[p] += 1
                        for j in range(p + 1, k):
                            ci[j] = ci[j - 1] + 1
                        more = True
                        break
                if not more:
                    break
            # next row combination
            more = False
            for p in range(k - 1, -1, -1):
                if ri[p] != n - k + p:
                    ri[p] += 1
                    for i in range(p + 1, k):
                        ri[i] = ri[i - 1] + 1
                    more = True
                    break
            if not more:
                break
    return True
