"""Matrix norms, power iteration and singular spectra on dense float64 arrays."""
import math

import numpy as np

from . import _backend

INF = math.inf


def as_matrix(w, name="matrix"):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {w.shape}")
    if w.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{name} has non-finite entries")
    return w


def parse_p(p):
    """Normalise a norm order to one of 1, 2, inf."""
    if isinstance(p, str):
        p = {"1": 1, "2": 2, "inf": INF, "two": 2}.get(p.lower(), p)
    if p in (1, 2) or p == INF:
        return INF if p == INF else int(p)
    raise ValueError(f"unsupported norm order {p!r}; use 1, 2 or inf")


def dual_exponent(p):
    p = parse_p(p)
    return {1: INF, 2: 2, INF: 1}[p]


def vector_norm(x, p, axis=-1):
    p = parse_p(p)
    x = np.asarray(x, dtype=np.float64)
    if p == 1:
        return np.sum(np.abs(x), axis=axis)
    if p == 2:
        return np.sqrt(np.sum(x * x, axis=axis))
    return np.max(np.abs(x), axis=axis)


def matrix_inf_norm(w):
    """Largest row sum of absolute values, i.e. the operator norm on l-inf."""
    w = as_matrix(w)
    return float(np.max(np.sum(np.abs(w), axis=1)))


def matrix_one_norm(w):
    w = as_matrix(w)
    return float(np.max(np.sum(np.abs(w), axis=0)))


def matrix_max_norm(w):
    w = as_matrix(w)
    return float(np.max(np.abs(w)))


def mixed_norm_p_inf(w, p):
    """sup of ||Wx||_inf over ||x||_p = 1: the largest dual-norm of a row."""
    w = as_matrix(w)
    return float(np.max(vector_norm(w, dual_exponent(p), axis=1)))


def _unit(x):
    n = math.sqrt(float(x @ x))
    return x / n if n > 0 else x, n


def power_iteration_steps(w, iters, seed=0, v0=None):
    """Yield ``(sigma, u, v)`` after each step of power iteration on ``w``.

    ``sigma = ||W v||`` with ``v`` the current right iterate, so the sequence is
    the square root of the Rayleigh quotient of WᵀW and never decreases.
    """
    w = as_matrix(w)
    if v0 is None:
        v0 = np.random.default_rng(seed).uniform(-1.0, 1.0, w.shape[1])
    v, _ = _unit(np.asarray(v0, dtype=np.float64))
    for _ in range(iters):
        u, nu = _unit(w @ v)
        if nu == 0:
            u = np.zeros(w.shape[0])
            u[0] = 1.0
            yield 0.0, u, v
            continue
        v, _ = _unit(w.T @ u)
        wv = w @ v
        sigma = math.sqrt(float(wv @ wv))
        yield sigma, u, v


def spectral_norm_power_iteration(w, iters, seed=0):
    """Estimate the top singular triple of ``w``.

    A zero matrix gives ``sigma == 0`` and arbitrary unit vectors.
    """
    if iters < 1:
        raise ValueError("power iteration needs iters >= 1")
    w = as_matrix(w)
    if not np.any(w):
        u = np.zeros(w.shape[0])
        v = np.zeros(w.shape[1])
        u[0] = v[0] = 1.0
        return 0.0, u, v
    for sigma, u, v in power_iteration_steps(w, iters, seed):
        pass
    u, _ = _unit(w @ v)
    return sigma, u, v


def singular_spectrum(w):
    """All singular values, descending, via one-sided Jacobi sweeps."""
    w = as_matrix(w)
    return _backend.jacobi_singular_values(w)
