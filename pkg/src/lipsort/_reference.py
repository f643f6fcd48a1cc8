"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is missing, or when
``LIPSORT_PURE=1`` is set. Every function here has a twin in ``_kernels.pyx``
with the same signature and output conventions.
"""
import numpy as np


def groupsort(z, k):
    """Sort contiguous groups of ``k`` columns ascending, row by row.

    Returns ``(out, perm)`` with ``out[i, j] == z[i, perm[i, j]]``. Ties keep
    their original index order.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    b, n = z.shape
    if k == 2:
        lo, hi = z[:, 0::2], z[:, 1::2]
        swap = lo > hi
        out = np.empty_like(z)
        out[:, 0::2] = np.where(swap, hi, lo)
        out[:, 1::2] = np.where(swap, lo, hi)
        base = np.arange(0, n, 2, dtype=np.int64)[None, :]
        perm = np.empty((b, n), dtype=np.int64)
        perm[:, 0::2] = base + swap
        perm[:, 1::2] = base + ~swap
        return out, perm
    g = z.reshape(b, n // k, k)
    order = np.argsort(g, axis=-1, kind="stable")
    out = np.take_along_axis(g, order, axis=-1).reshape(b, n)
    perm = (order + np.arange(0, n, k, dtype=np.int64)[None, :, None]).reshape(b, n)
    return out, perm


def _round_robin(n):
    # circle-method tournament: n - 1 rounds of n / 2 disjoint pairs
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_singular_values(a, tol=1e-12, max_sweeps=60):
    """Singular values (descending) by one-sided Jacobi rotations.

    Each round rotates a set of disjoint column pairs at once, so a sweep is
    ``n - 1`` vectorized rounds.
    """
    a = np.array(a, dtype=np.float64, ndmin=2)
    if a.shape[0] < a.shape[1]:
        a = a.T.copy()
    m, n = a.shape
    count = n
    if n == 1:
        return np.array([np.sqrt(np.sum(a * a))])
    if n % 2:
        a = np.hstack([a, np.zeros((m, 1))])
        n += 1
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        off = 0.0
        for p, q in rounds:
            ap, aq = a[:, p], a[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            scale = np.sqrt(alpha * beta)
            live = (scale > 0) & (np.abs(gamma) > tol * scale)
            if not live.any():
                continue
            off = max(off, float(np.max(np.abs(gamma[live]) / scale[live])))
            p, q = p[live], q[live]
            alpha, beta, gamma = alpha[live], beta[live], gamma[live]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            ap, aq = a[:, p], a[:, q]
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
        if off <= tol:
            break
    sv = np.sqrt(np.einsum("ij,ij->j", a, a))
    return np.sort(sv)[::-1][:count]


def project_rows_l1(w, radius=1.0):
    """Euclidean projection of every row of ``w`` onto the l1 ball.

    Rows already inside the ball are returned untouched.
    """
    w = np.array(w, dtype=np.float64, ndmin=2)
    out = w.copy()
    a = np.abs(w)
    outside = a.sum(axis=1) > radius
    if not outside.any():
        return out
    u = -np.sort(-a[outside], axis=1)
    css = np.cumsum(u, axis=1) - radius
    k = np.arange(1, u.shape[1] + 1)
    cond = css / k <= u  # k = 1 always holds, even when radius is below one ulp
    big_k = u.shape[1] - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(u.shape[0]), big_k - 1] / big_k
    out[outside] = np.sign(w[outside]) * np.maximum(a[outside] - tau[:, None], 0.0)
    return out
