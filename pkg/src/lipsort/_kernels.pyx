# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_reference.py`` for the numpy versions."""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, hypot, sqrt
from libc.stdlib cimport free, malloc

cnp.import_array()


def groupsort(z, Py_ssize_t k):
    cdef double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t b = zv.shape[0], n = zv.shape[1]
    out_arr = np.empty((b, n), dtype=np.float64)
    perm_arr = np.empty((b, n), dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef cnp.int64_t[:, ::1] perm = perm_arr
    cdef Py_ssize_t i, g, j, h, start
    cdef double v
    cdef cnp.int64_t idx
    with nogil:
        for i in range(b):
            start = 0
            while start < n:
                if k == 2:
                    if zv[i, start] > zv[i, start + 1]:
                        out[i, start] = zv[i, start + 1]
                        out[i, start + 1] = zv[i, start]
                        perm[i, start] = start + 1
                        perm[i, start + 1] = start
                    else:
                        out[i, start] = zv[i, start]
                        out[i, start + 1] = zv[i, start + 1]
                        perm[i, start] = start
                        perm[i, start + 1] = start + 1
                else:
                    # stable insertion sort of one group
                    for j in range(k):
                        v = zv[i, start + j]
                        idx = start + j
                        h = j
                        while h > 0 and out[i, start + h - 1] > v:
                            out[i, start + h] = out[i, start + h - 1]
                            perm[i, start + h] = perm[i, start + h - 1]
                            h -= 1
                        out[i, start + h] = v
                        perm[i, start + h] = idx
                start += k
    return out_arr, perm_arr


def jacobi_singular_values(a, double tol=1e-12, int max_sweeps=60):
    arr = np.array(a, dtype=np.float64, ndmin=2)
    if arr.shape[0] < arr.shape[1]:
        arr = arr.T
    # columns of the tall matrix stored as contiguous rows
    cdef double[:, ::1] g = np.ascontiguousarray(arr.T)
    cdef Py_ssize_t n = g.shape[0], m = g.shape[1]
    cdef Py_ssize_t p, q, r, sweep
    cdef double alpha, beta, gamma, scale, zeta, t, c, s, x, y, off, ratio
    with nogil:
        for sweep in range(max_sweeps):
            off = 0.0
            for p in range(n - 1):
                for q in range(p + 1, n):
                    alpha = 0.0
                    beta = 0.0
                    gamma = 0.0
                    for r in range(m):
                        alpha = alpha + g[p, r] * g[p, r]
                        beta = beta + g[q, r] * g[q, r]
                        gamma = gamma + g[p, r] * g[q, r]
                    scale = sqrt(alpha * beta)
                    if scale == 0.0 or fabs(gamma) <= tol * scale:
                        continue
                    ratio = fabs(gamma) / scale
                    if ratio > off:
                        off = ratio
                    zeta = (beta - alpha) / (2.0 * gamma)
                    if zeta >= 0:
                        t = 1.0 / (zeta + hypot(1.0, zeta))
                    else:
                        t = -1.0 / (-zeta + hypot(1.0, zeta))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = c * t
                    for r in range(m):
                        x = g[p, r]
                        y = g[q, r]
                        g[p, r] = c * x - s * y
                        g[q, r] = s * x + c * y
            if off <= tol:
                break
    sv = np.sqrt(np.einsum("ij,ij->i", np.asarray(g), np.asarray(g)))
    return np.sort(sv)[::-1]


cdef double _l1_threshold(const double* y, Py_ssize_t n, double radius,
                          double* v, double* spare) noexcept nogil:
    """Threshold tau of the l1-ball projection of nonnegative y (Condat's
    pivot scan: expected linear time, no sort)."""
    cdef Py_ssize_t nv = 1, ns = 0, i, j
    cdef double rho = y[0] - radius, yi
    cdef bint changed = True
    v[0] = y[0]
    for i in range(1, n):
        yi = y[i]
        if yi > rho:
            rho = rho + (yi - rho) / (nv + 1)
            if rho > yi - radius:
                v[nv] = yi
                nv = nv + 1
            else:
                for j in range(nv):
                    spare[ns] = v[j]
                    ns = ns + 1
                v[0] = yi
                nv = 1
                rho = yi - radius
    for j in range(ns):
        yi = spare[j]
        if yi > rho:
            v[nv] = yi
            nv = nv + 1
            rho = rho + (yi - rho) / nv
    while changed:
        changed = False
        j = 0
        while j < nv:
            yi = v[j]
            if yi <= rho and nv > 1:
                v[j] = v[nv - 1]
                nv = nv - 1
                rho = rho + (rho - yi) / nv
                changed = True
            else:
                j = j + 1
    return rho


def project_rows_l1(w, double radius=1.0):
    arr = np.array(w, dtype=np.float64, ndmin=2, copy=True)
    cdef double[:, ::1] out = arr
    cdef Py_ssize_t rows = out.shape[0], n = out.shape[1]
    cdef Py_ssize_t i, j
    cdef double total, tau, v
    cdef double* buf = <double*>malloc(3 * n * sizeof(double) + 1)
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(rows):
                total = 0.0
                for j in range(n):
                    buf[j] = fabs(out[i, j])
                    total = total + buf[j]
                if total <= radius:
                    continue
                tau = _l1_threshold(buf, n, radius, buf + n, buf + 2 * n)
                for j in range(n):
                    v = buf[j] - tau
                    if v <= 0.0:
                        out[i, j] = 0.0
                    elif out[i, j] < 0:
                        out[i, j] = -v
                    else:
                        out[i, j] = v
    finally:
        free(buf)
    return arr
