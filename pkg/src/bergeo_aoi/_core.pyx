# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: stationary power iteration and the slotted link simulator.

Semantics are identical to ``_pykernels``; both consume the same inputs so
results agree bit-for-bit (power iteration up to summation order).
"""

from libc.math cimport fabs
from libc.stdint cimport int64_t

DEF MAX_GEN = 64


cdef inline int64_t _row(int64_t n) nogil:
    return n * (n - 1) // 2 - 1


cdef void _row_sums(const double *x, int64_t n_max, double *col, double *busy,
                    double *total) noexcept nogil:
    cdef int64_t n, m, base
    cdef double b, v, tot = 0.0
    for m in range(n_max + 1):
        col[m] = 0.0
        busy[m] = 0.0
    for n in range(2, n_max + 1):
        base = _row(n)
        b = 0.0
        for m in range(1, n):
            v = x[base + m]
            b += v
            col[m] += v
        busy[n] = b
        tot += x[base] + b
    total[0] = tot


def power_iterate(int64_t n_max, double w_gen, double w_stay, double w_dn,
                  double w_di, double w_fn, double w_fo, double lam,
                  double[::1] pi, double[::1] work, double[:, ::1] scratch,
                  double tol, int64_t max_iters, int64_t check_every=1):
    """Matrix-free power iteration on the clamped 2D age chain.

    ``pi`` is stored row-major over ``n = 2..n_max``, row ``n`` holding
    ``m = 0..n-1``.  Weights: from ``(n, 0)`` generate/stay; from ``(n, m>=1)``
    deliver+new, deliver+idle, fail+new, fail+other, retransmit (``lam``).
    ``scratch`` needs shape ``(4, n_max + 1)``.

    Each sweep builds row ``t`` of the next iterate from row ``t - 1``
    (row ``n_max`` also from itself), the per-row busy mass and the
    per-column delivery mass, all in one pass; normalization is deferred
    to a scale factor.  The residual ``max|pi P - pi|`` is evaluated on
    every ``check_every``-th sweep (and the last allowed one); iteration
    stops at the first evaluated iterate with residual ``<= tol``, which is
    left in ``pi``.  Returns ``(sweeps, residual)``.
    """
    cdef Py_ssize_t size = pi.shape[0]
    if work.shape[0] < size or scratch.shape[0] < 4 or scratch.shape[1] < n_max + 1:
        raise ValueError("work buffers too small")
    cdef double *x = &pi[0]
    cdef double *y = &work[0]
    cdef double *col = &scratch[0, 0]
    cdef double *busy = &scratch[1, 0]
    cdef double *col2 = &scratch[2, 0]
    cdef double *busy2 = &scratch[3, 0]
    cdef double *tmp
    cdef int64_t t, m, tb, pb
    cdef int64_t it = 0
    cdef double total, total2, scale, res = 0.0, x0, bz, y0, y1, v, b, d
    cdef bint measure
    cdef Py_ssize_t j
    if check_every < 1:
        check_every = 1
    with nogil:
        _row_sums(x, n_max, col, busy, &total)
        scale = 1.0 / total
        while it < max_iters:
            for j in range(n_max + 1):
                col2[j] = 0.0
                busy2[j] = 0.0
            total2 = 0.0
            res = 0.0
            measure = (it + 1) % check_every == 0 or it + 1 == max_iters
            for t in range(2, n_max + 1):
                tb = _row(t)
                if t == 2:
                    y0 = w_di * col[1]
                    y1 = w_dn * col[1]
                else:
                    pb = _row(t - 1)
                    x0 = x[pb]
                    bz = busy[t - 1]
                    if t == n_max:
                        x0 = x0 + x[tb]
                        bz = bz + busy[t]
                    y0 = w_stay * x0 + w_fo * bz + w_di * col[t - 1]
                    y1 = w_gen * x0 + w_fn * bz + w_dn * col[t - 1]
                y[tb] = y0
                y[tb + 1] = y1
                if measure:
                    d = fabs(y0 - x[tb])
                    if d > res:
                        res = d
                    d = fabs(y1 - x[tb + 1])
                    if d > res:
                        res = d
                col2[1] += y1
                b = y1
                if t >= 3:
                    pb = _row(t - 1)
                    if t < n_max and not measure:
                        for m in range(2, t):
                            v = lam * x[pb + m - 1]
                            y[tb + m] = v
                            col2[m] += v
                            b += v
                    elif t < n_max:
                        for m in range(2, t):
                            v = lam * x[pb + m - 1]
                            y[tb + m] = v
                            col2[m] += v
                            b += v
                            d = fabs(v - x[tb + m])
                            if d > res:
                                res = d
                    else:
                        for m in range(2, t):
                            v = lam * (x[pb + m - 1] + x[tb + m - 1])
                            if m == t - 1:
                                v = v + lam * x[tb + m]
                            y[tb + m] = v
                            col2[m] += v
                            b += v
                            d = fabs(v - x[tb + m])
                            if d > res:
                                res = d
                busy2[t] = b
                total2 += y0 + b
            res = res * scale
            it += 1
            if measure and res <= tol:
                break
            tmp = x; x = y; y = tmp
            tmp = col; col = col2; col2 = tmp
            tmp = busy; busy = busy2; busy2 = tmp
            scale = 1.0 / total2
        for j in range(size):
            pi[j] = x[j] * scale
    return it, res


def simulate_block(const double[:, ::1] u, const double[::1] q,
                   const double[::1] gamma, bint retransmit,
                   int64_t[::1] aoi, int64_t[::1] server, int64_t t0,
                   int64_t warmup, int64_t[:, ::1] hist,
                   int64_t[::1] overflow, int64_t[::1] aoi_sum):
    """Advance the link over ``u.shape[0]`` slots starting at slot ``t0``.

    Row layout of ``u``: success draw, one generation draw per source, the
    selection draw.  ``server`` holds ``(source or -1, update age)``.
    """
    cdef Py_ssize_t n_src = q.shape[0]
    cdef Py_ssize_t n_slots = u.shape[0]
    cdef Py_ssize_t cap = hist.shape[1] - 1
    cdef Py_ssize_t r, i, k, sel
    cdef int64_t t, j, m, a
    cdef bint success
    cdef int64_t gens[MAX_GEN]
    if n_src > MAX_GEN:
        raise ValueError("too many sources")
    with nogil:
        for r in range(n_slots):
            t = t0 + r
            if t > warmup:
                for i in range(n_src):
                    a = aoi[i]
                    aoi_sum[i] += a
                    if a <= cap:
                        hist[i, a] += 1
                    else:
                        overflow[i] += 1
            j = server[0]
            m = server[1]
            success = j >= 0 and u[r, 0] < gamma[j]
            k = 0
            for i in range(n_src):
                if u[r, 1 + i] < q[i]:
                    gens[k] = i
                    k += 1
            for i in range(n_src):
                aoi[i] += 1
            if success:
                aoi[j] = m + 1
            if k > 0:
                sel = <Py_ssize_t>(u[r, n_src + 1] * k)
                if sel >= k:
                    sel = k - 1
                server[0] = gens[sel]
                server[1] = 1
            elif j >= 0 and not success and retransmit:
                server[1] = m + 1
            else:
                server[0] = -1
                server[1] = 0
