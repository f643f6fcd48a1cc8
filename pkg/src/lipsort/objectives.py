"""Training objectives and robustness certificates."""
from dataclasses import dataclass

import numpy as np

from .network import backward, forward, jacobian_bilinear_grads, jvp_from_tape

CERT_RULES = ("sound_2K", "paper_K_half")


def _samples(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    return x


def wasserstein_dual_objective(net, samples_p1, samples_p2, phase="final"):
    """mean f(P1) - mean f(P2) for a scalar critic ``net``.

    A 1-D sample array is read as one scalar sample per entry.
    """
    if net.out_width != 1:
        raise ValueError(f"critic must have one output, got {net.out_width}")
    y1, _ = forward(net, _samples(samples_p1, "samples_p1"), phase)
    y2, _ = forward(net, _samples(samples_p2, "samples_p2"), phase)
    return float(np.mean(y1) - np.mean(y2))


def dual_loss(y1, y2):
    """Negated dual objective and its gradients with respect to both outputs."""
    loss = -(np.mean(y1) - np.mean(y2))
    return float(loss), np.full_like(y1, -1.0 / y1.shape[0]), np.full_like(y2, 1.0 / y2.shape[0])


def _check_logits(logits, t):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] < 2:
        raise ValueError("margins need at least two classes")
    if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) >= logits.shape[-1]):
        raise ValueError(f"class index out of range for {logits.shape[-1]} classes")
    return logits


def _runner_up(logits, t):
    """Largest logit other than the target, row-wise."""
    others = logits.copy()
    np.put_along_axis(others, np.asarray(t)[:, None], -np.inf, axis=1)
    return others.max(axis=1)


def margins(logits, t):
    """Batch version of :func:`margin`."""
    logits = _check_logits(np.atleast_2d(logits), t)
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    yt = np.take_along_axis(logits, t[:, None], axis=1)[:, 0]
    return np.maximum(0.0, yt - _runner_up(logits, t))


def margin(logits, t):
    """max(0, y_t - max_{i != t} y_i)."""
    return float(margins(np.atleast_2d(logits), [t])[0])


def hinge_loss(logits, t, kappa):
    """sum over i != t of max(0, kappa - (y_t - y_i))."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    logits = _check_logits(logits, t)
    gaps = kappa - (logits[t] - logits)
    gaps[t] = 0.0
    return float(np.sum(np.maximum(0.0, gaps)))


def hinge_loss_batch(logits, t, kappa):
    """Mean multi-class hinge loss over a batch and its gradient in the logits."""
    logits = _check_logits(logits, t)
    rows = np.arange(logits.shape[0])
    yt = logits[rows, t]
    gaps = kappa - (yt[:, None] - logits)
    gaps[rows, t] = 0.0
    active = (gaps > 0).astype(np.float64)
    n = logits.shape[0]
    grad = active / n
    grad[rows, t] = -active.sum(axis=1) / n
    return float(np.sum(np.maximum(gaps, 0.0)) / n), grad


def cross_entropy_batch(logits, t):
    """Mean softmax cross-entropy and its gradient in the logits."""
    logits = _check_logits(logits, t)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    rows = np.arange(logits.shape[0])
    n = logits.shape[0]
    probs = np.exp(shifted - logz[:, None])
    probs[rows, t] -= 1.0
    return float(np.mean(logz - shifted[rows, t])), probs / n


def certified_radius(margin_val, K, rule="sound_2K"):
    """Largest l-inf perturbation that provably keeps the prediction.

    ``sound_2K`` gives margin / (2K): each logit moves by at most K·eps, so
    the gap shrinks by at most 2K·eps. ``paper_K_half`` gives 2·margin / K.
    """
    if K <= 0:
        raise ValueError("K must be positive")
    margin_val = np.maximum(np.asarray(margin_val, dtype=np.float64), 0.0)
    if rule == "sound_2K":
        r = margin_val / (2.0 * K)
    elif rule == "paper_K_half":
        r = 2.0 * margin_val / K
    else:
        raise ValueError(f"unknown certificate rule {rule!r}; use one of {CERT_RULES}")
    return float(r) if r.ndim == 0 else r


@dataclass
class CertificationReport:
    margin: np.ndarray
    certified_radius: np.ndarray
    predicted: np.ndarray
    true: np.ndarray

    @property
    def correct(self):
        return self.predicted == self.true

    def accuracy_at(self, eps):
        return float(np.mean(self.correct & (self.certified_radius >= eps)))


def certify(net, x, t, rule="sound_2K", K=None, phase="final", batch=1024):
    """Per-example margins and certified radii for a classifier."""
    K = net.declared_K if K is None else K
    t = np.asarray(t, dtype=np.int64)
    logits = np.concatenate(
        [forward(net, x[i:i + batch], phase)[0] for i in range(0, len(x), batch)]
    )
    m = margins(logits, t)
    return CertificationReport(m, certified_radius(m, K, rule), logits.argmax(axis=1), t)


def certified_accuracy_curve(net, x, t, epsilons, rule="sound_2K", K=None):
    """Fraction of examples correctly classified with certified radius >= eps."""
    report = certify(net, x, t, rule, K)
    return {float(e): report.accuracy_at(e) for e in np.atleast_1d(epsilons)}


def _power_step(net, x, u, phase):
    _, tape = forward(net, x, phase)
    _, g = backward(net, tape, u, param_grads=False)
    gn = np.linalg.norm(g, axis=1, keepdims=True)
    v = np.divide(g, gn, out=np.zeros_like(g), where=gn > 0)
    h = jvp_from_tape(net, tape, v)
    hn = np.linalg.norm(h, axis=1, keepdims=True)
    new_u = np.where(hn > 0, h / np.where(hn > 0, hn, 1.0), u)
    return tape, new_u, v, h


def spectral_jac_penalty(net, x_batch, state_u, phase="train"):
    """One power-iteration step per example on the input Jacobian.

    Returns ``(penalty, new_u)`` where the penalty is the batch mean of
    new_u·h with h = J v, an estimate of the Jacobian spectral norm.
    """
    x = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    u = np.atleast_2d(np.asarray(state_u, dtype=np.float64))
    _, new_u, _, h = _power_step(net, x, u, phase)
    return float(np.mean(np.sum(new_u * h, axis=1))), new_u


def spectral_jac_penalty_grad(net, x_batch, state_u, phase="train"):
    """Like :func:`spectral_jac_penalty` but also returns raw-parameter
    gradients of the penalty, treating u and v as constants."""
    x = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    u = np.atleast_2d(np.asarray(state_u, dtype=np.float64))
    tape, new_u, v, h = _power_step(net, x, u, phase)
    penalty = float(np.mean(np.sum(new_u * h, axis=1)))
    grads = jacobian_bilinear_grads(net, tape, new_u / x.shape[0], v)
    return penalty, new_u, grads
