"""Weight constraints that keep each linear map 1-Lipschitz.

Every scheme is exposed twice: as a plain function (``bjorck_orthonormalize``,
``spectral_normalize``, ...) and through :func:`constrain`, which also returns
a pullback so gradients flow from the constrained weight back to the raw
parameter. Parseval is the one scheme applied after the optimizer step instead
of inside the forward pass.
"""
from dataclasses import dataclass
import math

import numpy as np

from . import _backend
from .linalg import (
    as_matrix,
    matrix_inf_norm,
    matrix_max_norm,
    matrix_one_norm,
    parse_p,
    spectral_norm_power_iteration,
    INF,
)

SAFE_SCALE_MODES = ("spectral", "inf_bound", "one_bound", "max_bound")
SPECTRAL_SLACK = 1e-3
MATVEC_MAX_ITERS = 5


class PreconditionError(ValueError):
    pass


# -- constraint kinds --------------------------------------------------------

@dataclass(frozen=True)
class Bjorck:
    order: int = 1
    iters: int = 3
    final_iters: int = 20
    safe_scale: str = "spectral"
    power_iters: int = 1

    def __post_init__(self):
        if self.order < 1 or self.iters < 0 or self.final_iters < 0:
            raise ValueError("Bjorck needs order >= 1 and non-negative iteration counts")
        if self.safe_scale not in SAFE_SCALE_MODES:
            raise ValueError(f"unknown safe_scale mode {self.safe_scale!r}")


@dataclass(frozen=True)
class SpectralNormalize:
    power_iters: int = 1
    final_power_iters: int = 100


@dataclass(frozen=True)
class ParsevalRegularize:
    beta: float = 0.0003

    def __post_init__(self):
        if not 0.0 < self.beta <= 0.5:
            raise ValueError(f"Parseval beta must lie in (0, 0.5], got {self.beta}")


@dataclass(frozen=True)
class LInfProject:
    post_step: bool = False


@dataclass(frozen=True)
class MixedNorm:
    """Bound every row's dual norm so that ||W||_{p,inf} <= 1."""

    p: float = 2

    def __post_init__(self):
        object.__setattr__(self, "p", parse_p(self.p))


@dataclass(frozen=True)
class Unconstrained:
    pass


def norm_family(kind):
    """'2', 'inf' or None for unconstrained layers."""
    if isinstance(kind, (Bjorck, SpectralNormalize, ParsevalRegularize)):
        return "2"
    if isinstance(kind, (LInfProject, MixedNorm)):
        return "inf"
    return None


def parse_constraint(text):
    """Parse ``bjorck``, ``spectral``, ``parseval:<beta>``, ``linf``, ``none``, ..."""
    name, _, arg = text.strip().lower().partition(":")
    if name == "bjorck":
        return Bjorck(iters=int(arg)) if arg else Bjorck()
    if name == "spectral":
        return SpectralNormalize(int(arg)) if arg else SpectralNormalize()
    if name == "parseval":
        return ParsevalRegularize(float(arg)) if arg else ParsevalRegularize()
    if name == "linf":
        return LInfProject(post_step=arg == "post")
    if name == "mixed":
        return MixedNorm(arg or 2)
    if name in ("none", "unconstrained"):
        return Unconstrained()
    raise ValueError(f"cannot parse constraint {text!r}")


# -- power iteration with an exact reverse pass --------------------------------

def _unit(x):
    n = math.sqrt(float(x @ x))
    return x / n, n


def _power_sigma(w, u0, steps):
    """sigma = ||W v_T|| after ``steps`` iterations started from the left vector u0.

    Returns (sigma, u_T, tape); the tape lets :func:`_power_sigma_grad`
    differentiate the whole iteration with u0 held fixed.
    """
    u = u0
    tape = []
    for _ in range(steps):
        v, na = _unit(w.T @ u)
        b = w @ v
        u_next, nb = _unit(b)
        tape.append((u, v, na, u_next, nb))
        u = u_next
    return tape[-1][4], u, tape


def _power_sigma_grad(w, tape, g):
    dw = np.zeros_like(w)
    u_last = tape[-1][3]
    db = g * u_last
    for t in range(len(tape) - 1, -1, -1):
        u_prev, v, na, u_t, nb = tape[t]
        if t < len(tape) - 1:
            db = (du - u_t * (u_t @ du)) / nb
        dw += np.outer(db, v)
        dv = w.T @ db
        da = (dv - v * (v @ dv)) / na
        dw += np.outer(u_prev, da)
        du = w @ da
    return dw


def initial_power_state(rows, rng):
    u = rng.uniform(-1.0, 1.0, rows)
    return u / np.linalg.norm(u)


# -- safe scaling --------------------------------------------------------------

def _scale_factor(a, mode, u0=None, steps=100):
    """Upper bound on sigma_max(a) and its gradient map.

    Returns (factor, grad_factor_fn, new_u).
    """
    m, n = a.shape
    if mode == "spectral":
        if u0 is None:
            u0 = initial_power_state(m, np.random.default_rng(0))
        u0 = np.asarray(u0, dtype=a.dtype)
        if not np.any(a @ (a.T @ u0)):
            # the start vector is blind to the matrix; fall back to a full solve
            _, u0, _ = spectral_norm_power_iteration(a, 5, seed=1)
            u0 = u0.astype(a.dtype)
        sigma, u_new, tape = _power_sigma(a, u0, steps)
        factor = sigma * (1.0 + SPECTRAL_SLACK)
        return factor, lambda: (1.0 + SPECTRAL_SLACK) * _power_sigma_grad(a, tape, 1.0), u_new
    absa = np.abs(a)
    sign = np.where(a < 0, -1.0, 1.0)
    if mode == "inf_bound":
        sums = absa.sum(axis=1)
        i = int(np.argmax(sums))
        factor = math.sqrt(m) * float(sums[i])

        def grad():
            d = np.zeros_like(a)
            d[i] = math.sqrt(m) * sign[i]
            return d
    elif mode == "one_bound":
        sums = absa.sum(axis=0)
        j = int(np.argmax(sums))
        factor = math.sqrt(n) * float(sums[j])

        def grad():
            d = np.zeros_like(a)
            d[:, j] = math.sqrt(n) * sign[:, j]
            return d
    elif mode == "max_bound":
        flat = int(np.argmax(absa))
        factor = math.sqrt(m * n) * float(absa.flat[flat])

        def grad():
            d = np.zeros_like(a)
            d.flat[flat] = math.sqrt(m * n) * sign.flat[flat]
            return d
    else:
        raise ValueError(f"unknown safe_scale mode {mode!r}")
    return factor, grad, u0


def safe_scale(a, mode="spectral", power_iters=100, seed=0):
    """Divide ``a`` by an upper bound on its largest singular value.

    ``spectral`` uses power iteration plus a 1e-3 slack; the other modes use
    the bounds sqrt(m)·||A||_inf, sqrt(n)·||A||_1 and sqrt(mn)·max|a_ij|.
    Returns ``(a_scaled, factor)``.
    """
    a = as_matrix(a)
    if not np.any(a):
        raise ValueError("cannot safe-scale a zero matrix")
    u0 = initial_power_state(a.shape[0], np.random.default_rng(seed))
    factor, _, _ = _scale_factor(a, mode, u0, power_iters)
    return a / factor, factor


# -- Bjorck ----------------------------------------------------------------------

def bjorck_coefficients(order):
    """Taylor coefficients (-1)^j binom(-1/2, j) for j = 0..order."""
    coeffs = [1.0]
    for j in range(1, order + 1):
        coeffs.append(coeffs[-1] * (j - 0.5) / j)
    return coeffs


def _bjorck_forward(x, order, iters):
    """Run the recurrence on a tall-or-square ``x``; keep what backward needs."""
    coeffs = bjorck_coefficients(order)
    eye = np.eye(x.shape[1], dtype=x.dtype)
    tape = []
    for _ in range(iters):
        q = eye - x.T @ x
        if order == 1:
            poly = eye + 0.5 * q
            powers = None
        else:
            powers = [eye, q]
            for _ in range(order - 1):
                powers.append(powers[-1] @ q)
            poly = sum(c * pw for c, pw in zip(coeffs, powers))
        tape.append((x, poly, powers))
        x = x @ poly
    return x, tape


def _bjorck_backward(tape, g, order):
    coeffs = bjorck_coefficients(order)
    for x, poly, powers in reversed(tape):
        dpoly = x.T @ g
        if order == 1:
            dq = 0.5 * dpoly
        else:
            dq = np.zeros_like(dpoly)
            for j in range(1, order + 1):
                for i in range(j):
                    dq += coeffs[j] * (powers[i] @ dpoly @ powers[j - 1 - i])
        g = g @ poly.T - x @ (dq + dq.T)
    return g


def _gram_gap(a):
    """Estimate ||AᵀA - I||_2 on the smaller Gram matrix."""
    x = a.T if a.shape[0] < a.shape[1] else a
    gap = x.T @ x - np.eye(x.shape[1])
    if np.sqrt(np.sum(gap * gap)) < 1.0:
        return float(np.sqrt(np.sum(gap * gap)))
    sigma, _, _ = spectral_norm_power_iteration(gap, 200)
    return sigma


def bjorck_orthonormalize(a, order=1, iters=15, check=True):
    """Iterate A <- A (I + Q/2 + 3Q²/8 + ...), Q = I - AᵀA, truncated at ``order``.

    The input must satisfy ||AᵀA - I||_2 < 1; call :func:`safe_scale` first.
    Wide matrices are processed through their transpose, which gives the
    same iterates with a smaller Gram matrix.
    """
    a = as_matrix(a)
    if check:
        gap = _gram_gap(a)
        if gap >= 1.0:
            raise PreconditionError(
                f"Bjorck needs ||A^T A - I||_2 < 1 but it is about {gap:.4g}; "
                "rescale with safe_scale() first"
            )
    wide = a.shape[0] < a.shape[1]
    x, _ = _bjorck_forward(a.T if wide else a, order, iters)
    return x.T if wide else x


def bjorck_matvec(a, v, iters):
    """First-order Bjorck iterate applied to ``v`` using only matrix-vector products.

    Costs O(3^iters) products, so iteration counts above 5 are refused.
    """
    if iters > MATVEC_MAX_ITERS:
        raise ValueError(
            f"bjorck_matvec needs O(3^k) products; iters={iters} exceeds {MATVEC_MAX_ITERS}"
        )
    a = as_matrix(a)
    v = np.asarray(v, dtype=np.float64)

    def apply_a(k, x):
        if k == 0:
            return a @ x
        ax = apply_a(k - 1, x)
        return 1.5 * ax - 0.5 * apply_aat(k - 1, ax)

    def apply_aat(k, x):
        if k == 0:
            return a @ (a.T @ x)
        s1 = apply_aat(k - 1, x)
        s2 = apply_aat(k - 1, s1)
        s3 = apply_aat(k - 1, s2)
        return 2.25 * s1 - 1.5 * s2 + 0.25 * s3

    return apply_a(iters, v)


# -- other schemes ----------------------------------------------------------------

def spectral_normalize(w, power_iters, state_u):
    """Return ``(w / sigma_hat, new_u)`` after ``power_iters`` steps from ``state_u``."""
    w = as_matrix(w)
    state_u = np.asarray(state_u, dtype=np.float64)
    if state_u.shape != (w.shape[0],):
        raise ValueError(f"state_u must have length {w.shape[0]}")
    sigma, u_new, _ = _power_sigma(w, state_u, max(1, power_iters))
    if sigma == 0:
        return w.copy(), state_u
    return w / sigma, u_new


def parseval_step(w, beta):
    """W <- (1 + beta) W - beta W WᵀW; beta = 0.5 is one first-order Bjorck step."""
    if not 0.0 < beta <= 0.5:
        raise ValueError(f"beta must lie in (0, 0.5], got {beta}")
    w = as_matrix(w)
    # same association as the Bjorck iterate so the two agree to rounding
    if w.shape[0] < w.shape[1]:
        return ((1.0 + beta) * w.T - beta * (w.T @ (w @ w.T))).T
    return (1.0 + beta) * w - beta * (w @ (w.T @ w))


def linf_project_row(y, radius=1.0):
    """Euclidean projection of ``y`` onto the l1 ball, by sorting.

    A matrix whose rows all lie in this ball has ||W||_inf <= 1.
    """
    y = np.asarray(y, dtype=np.float64)
    return _backend.project_rows_l1(y[None, :], radius)[0]


def linf_project_rows(w, radius=1.0):
    return _backend.project_rows_l1(as_matrix(w), radius)


# -- differentiable dispatch ----------------------------------------------------------

def _identity_pullback(g):
    return g


def constrain(kind, w, phase="train", state=None):
    """Apply ``kind`` to raw weight ``w``.

    Returns ``(w_eff, pullback, new_state)`` where ``pullback`` maps a gradient
    with respect to ``w_eff`` to one with respect to ``w``. ``state`` holds the
    power-iteration vector for spectral schemes.
    """
    if phase not in ("train", "final"):
        raise ValueError(f"phase must be 'train' or 'final', got {phase!r}")
    state = dict(state or {})

    if isinstance(kind, Bjorck):
        iters = kind.iters if phase == "train" else kind.final_iters
        steps = kind.power_iters if phase == "train" else max(kind.power_iters, 50)
        if not np.any(w):
            raise ValueError("cannot orthonormalize a zero matrix")
        factor, dfactor, u_new = _scale_factor(w, kind.safe_scale, state.get("u"), steps)
        if kind.safe_scale == "spectral":
            state["u"] = u_new
        wide = w.shape[0] < w.shape[1]
        scaled = w / factor
        x, tape = _bjorck_forward(scaled.T if wide else scaled, kind.order, iters)
        w_eff = x.T if wide else x

        def pullback(g):
            gx = _bjorck_backward(tape, g.T if wide else g, kind.order)
            gs = gx.T if wide else gx
            return gs / factor - (np.sum(gs * w) / factor**2) * dfactor()

        return w_eff, pullback, state

    if isinstance(kind, SpectralNormalize):
        steps = kind.power_iters if phase == "train" else kind.final_power_iters
        u0 = state.get("u")
        if u0 is None:
            u0 = initial_power_state(w.shape[0], np.random.default_rng(0))
        sigma, u_new, tape = _power_sigma(w, np.asarray(u0, dtype=w.dtype), max(1, steps))
        state["u"] = u_new
        if sigma == 0:
            return w.copy(), _identity_pullback, state

        def pullback(g):
            return g / sigma - (np.sum(g * w) / sigma**2) * _power_sigma_grad(w, tape, 1.0)

        return w / sigma, pullback, state

    if isinstance(kind, ParsevalRegularize):
        if phase == "final":
            return constrain(Bjorck(iters=20, final_iters=20), w, "final", state)
        return w, _identity_pullback, state

    if isinstance(kind, LInfProject) or (isinstance(kind, MixedNorm) and kind.p == INF):
        if isinstance(kind, LInfProject) and kind.post_step and phase == "train":
            return w, _identity_pullback, state
        x = _backend.project_rows_l1(w, 1.0)
        moved = np.any(x != w, axis=1)
        if not moved.any():
            return x, _identity_pullback, state
        sx = np.sign(x)

        def pullback(g):
            out = g.copy()
            for i in np.flatnonzero(moved):
                s = sx[i]
                support = s != 0
                out[i] = np.where(support, g[i] - s * (s @ g[i]) / support.sum(), 0.0)
            return out

        return x, pullback, state

    if isinstance(kind, MixedNorm):
        if kind.p == 1:
            x = np.clip(w, -1.0, 1.0)
            inside = np.abs(w) <= 1.0
            return x, lambda g: np.where(inside, g, 0.0), state
        norms = np.sqrt(np.sum(w * w, axis=1))
        over = norms > 1.0
        if not over.any():
            return w, _identity_pullback, state
        x = w.copy()
        x[over] = w[over] / norms[over, None]

        def pullback(g):
            out = g.copy()
            xo = x[over]
            go = g[over]
            out[over] = (go - xo * np.sum(xo * go, axis=1, keepdims=True)) / norms[over, None]
            return out

        return x, pullback, state

    if isinstance(kind, Unconstrained):
        return w, _identity_pullback, state

    raise TypeError(f"unknown constraint {kind!r}")


def enforce_constraint(kind, w_raw, phase="train"):
    """Constrained version of ``w_raw`` (no gradient bookkeeping)."""
    w_raw = as_matrix(w_raw, "W_raw")
    w_eff, _, _ = constrain(kind, w_raw, phase)
    return w_eff


def post_step(kind, w):
    """In-place update applied after an optimizer step (Parseval, post-step l-inf)."""
    if isinstance(kind, ParsevalRegularize):
        w[...] = parseval_step(w, kind.beta)
    elif isinstance(kind, LInfProject) and kind.post_step:
        w[...] = _backend.project_rows_l1(w, 1.0)
