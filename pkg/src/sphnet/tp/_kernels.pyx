# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loops for the channel-aligned tensor product and Jacobi sweeps."""
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free


def tp_forward(const double[:, ::1] x, const double[:, ::1] y, const double[:, ::1] w,
               const long[:, ::1] table, const double[::1] norms, const double[::1] cg,
               int channels, bint broadcast2, double[:, ::1] out):
    """Accumulate every path into ``out`` (batch, dim_out).

    ``w`` is (1, n_weights) for shared weights or (batch, n_weights).
    Within a path the sum runs m1 outer, m2 inner.
    """
    cdef Py_ssize_t B = x.shape[0], P = table.shape[0]
    cdef Py_ssize_t b, p, u, m1, m2, m3, wrow
    cdef long o1, o2, o3, d1, d2, d3, cgo, wo, xb, yb, ob
    cdef double s, xv, xy
    cdef bint shared = w.shape[0] == 1
    cdef long dmax = 1
    for p in range(P):
        if table[p, 5] > dmax:
            dmax = table[p, 5]
    cdef double *tmp = <double *> malloc(dmax * sizeof(double))
    if tmp == NULL:
        raise MemoryError()
    try:
        with nogil:
            for b in range(B):
                wrow = 0 if shared else b
                for p in range(P):
                    o1 = table[p, 0]; o2 = table[p, 1]; o3 = table[p, 2]
                    d1 = table[p, 3]; d2 = table[p, 4]; d3 = table[p, 5]
                    cgo = table[p, 6]; wo = table[p, 7]
                    for u in range(channels):
                        if wo >= 0:
                            s = norms[p] * w[wrow, wo + u]
                        else:
                            s = norms[p]
                        xb = o1 + u * d1
                        yb = o2 if broadcast2 else o2 + u * d2
                        ob = o3 + u * d3
                        for m3 in range(d3):
                            tmp[m3] = 0.0
                        for m1 in range(d1):
                            xv = x[b, xb + m1]
                            for m2 in range(d2):
                                xy = xv * y[b, yb + m2]
                                for m3 in range(d3):
                                    tmp[m3] += cg[cgo + (m1 * d2 + m2) * d3 + m3] * xy
                        for m3 in range(d3):
                            out[b, ob + m3] += s * tmp[m3]
    finally:
        free(tmp)


def tp_backward(const double[:, ::1] x, const double[:, ::1] y, const double[:, ::1] w,
                const long[:, ::1] table, const double[::1] norms, const double[::1] cg,
                int channels, bint broadcast2, const double[:, ::1] g,
                double[:, ::1] gx, double[:, ::1] gy, double[:, ::1] gw):
    """Accumulate adjoints into gx, gy and gw (same row convention as ``w``)."""
    cdef Py_ssize_t B = x.shape[0], P = table.shape[0]
    cdef Py_ssize_t b, p, u, m1, m2, m3, wrow
    cdef long o1, o2, o3, d1, d2, d3, cgo, wo, xb, yb, ob, base
    cdef double s, xv, yv, t, acc
    cdef bint shared = w.shape[0] == 1
    with nogil:
        for b in range(B):
            wrow = 0 if shared else b
            for p in range(P):
                o1 = table[p, 0]; o2 = table[p, 1]; o3 = table[p, 2]
                d1 = table[p, 3]; d2 = table[p, 4]; d3 = table[p, 5]
                cgo = table[p, 6]; wo = table[p, 7]
                for u in range(channels):
                    if wo >= 0:
                        s = norms[p] * w[wrow, wo + u]
                    else:
                        s = norms[p]
                    xb = o1 + u * d1
                    yb = o2 if broadcast2 else o2 + u * d2
                    ob = o3 + u * d3
                    acc = 0.0
                    for m1 in range(d1):
                        xv = x[b, xb + m1]
                        for m2 in range(d2):
                            yv = y[b, yb + m2]
                            base = cgo + (m1 * d2 + m2) * d3
                            t = 0.0
                            for m3 in range(d3):
                                t = t + cg[base + m3] * g[b, ob + m3]
                            gx[b, xb + m1] += s * t * yv
                            gy[b, yb + m2] += s * t * xv
                            acc = acc + t * xv * yv
                    if wo >= 0:
                        gw[wrow, wo + u] += norms[p] * acc


def jacobi_eigh(double[:, ::1] a, double[:, ::1] v, double tol, int max_sweeps):
    """Cyclic Jacobi on symmetric ``a`` in place; ``v`` receives eigenvectors.

    Stops when the off-diagonal Frobenius norm drops below ``tol``.
    Returns the number of sweeps used, or -1 if ``max_sweeps`` ran out.
    """
    cdef Py_ssize_t n = a.shape[0], i, j, k, sweep
    cdef double off, apq, app, aqq, theta, t, c, s, akp, akq
    cdef int used = -1
    with nogil:
        for i in range(n):
            for j in range(n):
                v[i, j] = 1.0 if i == j else 0.0
        for sweep in range(max_sweeps + 1):
            off = 0.0
            for i in range(n):
                for j in range(i + 1, n):
                    off = off + 2.0 * a[i, j] * a[i, j]
            if sqrt(off) < tol:
                used = sweep
                break
            if sweep == max_sweeps:
                break
            for i in range(n - 1):
                for j in range(i + 1, n):
                    apq = a[i, j]
                    if apq == 0.0:
                        continue
                    app = a[i, i]
                    aqq = a[j, j]
                    theta = (aqq - app) / (2.0 * apq)
                    if theta >= 0:
                        t = 1.0 / (theta + sqrt(1.0 + theta * theta))
                    else:
                        t = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = t * c
                    for k in range(n):
                        akp = a[k, i]
                        akq = a[k, j]
                        a[k, i] = c * akp - s * akq
                        a[k, j] = s * akp + c * akq
                    for k in range(n):
                        akp = a[i, k]
                        akq = a[j, k]
                        a[i, k] = c * akp - s * akq
                        a[j, k] = s * akp + c * akq
                    for k in range(n):
                        akp = v[k, i]
                        akq = v[k, j]
                        v[k, i] = c * akp - s * akq
                        v[k, j] = s * akp + c * akq
    return used
