"""Sign-gradient l-inf attacks (FGS and PGD with random restarts)."""
from dataclasses import dataclass

import numpy as np

from .network import backward, forward
from .objectives import _check_logits, _runner_up, cross_entropy_batch

LOSSES = ("cross_entropy", "cw_f6")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    steps: int = 200
    step_size: float | None = None  # defaults to epsilon / 10
    restarts: int = 10
    init_scale: float = 0.1
    loss: str = "cw_f6"
    seed: int = 0
    kappa_cw: float | None = None  # None: no clamp on the logit gap
    box: tuple | None = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.steps < 1 or self.restarts < 1:
            raise ValueError("steps and restarts must be at least 1")
        if not 0.0 <= self.init_scale <= 1.0:
            raise ValueError("init_scale must lie in [0, 1]")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown attack loss {self.loss!r}")

    @property
    def alpha(self):
        return self.epsilon / 10.0 if self.step_size is None else self.step_size


def cw_f6_loss(logits, t, kappa=None):
    """y_t - max_{i != t} y_i, clamped below at -kappa when kappa is given.

    Attacks ascend its negation.
    """
    logits = _check_logits(np.atleast_2d(logits), [t])
    gap = logits[0, t] - _runner_up(logits, np.array([t]))[0]
    return float(gap if kappa is None else max(-kappa, gap))


def _attack_loss(logits, t, cfg):
    """Per-example attacker objective (to maximize) and its logit gradient."""
    rows = np.arange(logits.shape[0])
    if cfg.loss == "cross_entropy":
        _, grad = cross_entropy_batch(logits, t)
        shifted = logits - logits.max(axis=1, keepdims=True)
        ce = np.log(np.exp(shifted).sum(axis=1)) - shifted[rows, t]
        return ce, grad * logits.shape[0]
    others = logits.copy()
    others[rows, t] = -np.inf
    j = others.argmax(axis=1)
    gap = logits[rows, t] - logits[rows, j]
    floor = -np.inf if cfg.kappa_cw is None else -cfg.kappa_cw
    live = (gap > floor).astype(logits.dtype)
    grad = np.zeros_like(logits)
    grad[rows, t] = -live
    grad[rows, j] += live
    return -np.maximum(floor, gap), grad


def _loss_and_input_grad(net, x, t, cfg):
    logits, tape = forward(net, x, "final")
    loss, dlogits = _attack_loss(logits, t, cfg)
    _, dx = backward(net, tape, dlogits, param_grads=False)
    return loss, dx, logits


def _project(x_adv, x, cfg):
    x_adv = np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon)
    if cfg.box is not None:
        x_adv = np.clip(x_adv, cfg.box[0], cfg.box[1])
    return x_adv


def _as_batch(x, t):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    return np.atleast_2d(x), np.atleast_1d(np.asarray(t, dtype=np.int64)), single


def fgs_attack(net, x, t, cfg):
    """One signed-gradient step of size epsilon, clipped to the input box."""
    xb, tb, single = _as_batch(x, t)
    _, g, _ = _loss_and_input_grad(net, xb, tb, cfg)
    x_adv = _project(xb + cfg.epsilon * np.sign(g), xb, cfg)
    return x_adv[0] if single else x_adv


def attack_loss(net, x, t, cfg):
    """Attacker objective at ``x`` (higher is stronger)."""
    xb, tb, single = _as_batch(x, t)
    loss, _ = _attack_loss(forward(net, xb, "final")[0], tb, cfg)
    return loss[0] if single else loss


def pgd_attack(net, x, t, cfg):
    """Projected sign-gradient ascent from random starts within init_scale·eps.

    Each step moves by ``cfg.alpha``, projects onto the eps-ball around x and
    clips to the box. The restart with the highest final loss is kept.
    Returns ``(x_adv, success)`` where success means the prediction differs
    from ``t``.
    """
    xb, tb, single = _as_batch(x, t)
    rng = np.random.default_rng(cfg.seed)
    best = xb.copy()
    best_loss = np.full(xb.shape[0], -np.inf)
    radius = cfg.init_scale * cfg.epsilon
    for _ in range(cfg.restarts):
        x_adv = _project(xb + rng.uniform(-radius, radius, xb.shape), xb, cfg)
        for _ in range(cfg.steps):
            _, g, _ = _loss_and_input_grad(net, x_adv, tb, cfg)
            x_adv = _project(x_adv + cfg.alpha * np.sign(g), xb, cfg)
        loss, _ = _attack_loss(forward(net, x_adv, "final")[0], tb, cfg)
        better = loss > best_loss
        best[better] = x_adv[better]
        best_loss[better] = loss[better]
    success = forward(net, best, "final")[0].argmax(axis=1) != tb
    if single:
        return best[0], bool(success[0])
    return best, success
