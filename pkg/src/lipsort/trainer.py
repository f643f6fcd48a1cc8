"""Seeded Adam training for dual critics and margin classifiers."""
from dataclasses import dataclass, field, replace
import csv
import io
import math
import time

import numpy as np

from . import constraints as C
from .network import backward, empirical_lipschitz, finalize, forward
from .objectives import (
    cross_entropy_batch,
    dual_loss,
    hinge_loss_batch,
    spectral_jac_penalty_grad,
    wasserstein_dual_objective,
)
from .tasks import Dataset, TaskSpec

OBJECTIVES = ("wasserstein_dual", "hinge", "cross_entropy")
METRICS_HEADER = ("step", "loss", "objective", "lipschitz_check", "wall_ms")
LIPSCHITZ_SLACK = 1e-6


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float | None = None  # None: 0.01 for Bjorck nets, 0.001 otherwise
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 64
    seed: int = 0
    objective: str = "wasserstein_dual"
    kappa: float = 0.0
    lambda_specjac: float = 0.0
    final_enforce_iters: int = 20
    eval_every: int = 500
    eval_samples: int = 10_000
    lipschitz_pairs: int = 2000
    record_time: bool = False
    dtype: str = "float64"  # float32 halves the cost of training steps

    def __post_init__(self):
        if self.lr is not None and self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.kappa < 0 or self.lambda_specjac < 0:
            raise ValueError("kappa and lambda_specjac must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    def learning_rate(self, net):
        if self.lr is not None:
            return self.lr
        bjorck = any(isinstance(l.constraint, C.Bjorck) for l in net.layers)
        return 0.01 if bjorck else 0.001


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state, cfg, lr=None):
    """One bias-corrected Adam update, applied in place. Returns (params, state)."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    lr = cfg.lr if lr is None else lr
    state.t += 1
    c1 = 1.0 - cfg.beta1**state.t
    c2 = 1.0 - cfg.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: parameter {p.shape}, gradient {g.shape}")
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps_adam)
    return params, state


# -- batch gradients -------------------------------------------------------------

def _flatten(grads):
    return [g for pair in grads for g in pair]


def _dual_batch(net, draw, cfg):
    p1, p2 = draw(cfg.batch_size)
    y, tape = forward(net, np.vstack([p1, p2]), "train", update_state=True)
    n1 = p1.shape[0]
    loss, d1, d2 = dual_loss(y[:n1], y[n1:])
    grads, _ = backward(net, tape, np.vstack([d1, d2]))
    return loss, -loss, grads


def _classify_batch(net, data, idx, cfg, u_state):
    x, t = data.x[idx], data.y[idx]
    logits, tape = forward(net, x, "train", update_state=True)
    if cfg.objective == "hinge":
        loss, dlogits = hinge_loss_batch(logits, t, cfg.kappa)
    else:
        loss, dlogits = cross_entropy_batch(logits, t)
    grads, _ = backward(net, tape, dlogits)
    if cfg.lambda_specjac > 0:
        penalty, new_u, pgrads = spectral_jac_penalty_grad(net, x, u_state[idx])
        u_state[idx] = new_u
        loss += cfg.lambda_specjac * penalty
        grads = [(gw + cfg.lambda_specjac * pw, gb) for (gw, gb), (pw, _) in zip(grads, pgrads)]
    accuracy = float(np.mean(logits.argmax(axis=1) == t))
    return loss, accuracy, grads


def _epoch_batches(n, batch_size, rng):
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]


# -- evaluation -------------------------------------------------------------------

def _classify_objective(net, data, cfg, phase):
    logits = np.concatenate(
        [forward(net, data.x[i:i + 2048], phase)[0] for i in range(0, len(data), 2048)]
    )
    return float(np.mean(logits.argmax(axis=1) == data.y))


def lipschitz_check(net, points, pairs, seed):
    """Worst ratio ||f(x)-f(x')|| / (K ||x-x'||) over random far and near pairs."""
    rng = np.random.default_rng(seed)
    half = pairs // 2
    i = rng.integers(0, len(points), half)
    j = rng.integers(0, len(points), half)
    keep = np.any(points[i] != points[j], axis=1)
    x1, x2 = points[i][keep], points[j][keep]
    k = rng.integers(0, len(points), pairs - half)
    near = points[k] + 1e-3 * rng.standard_normal((pairs - half, points.shape[1]))
    ratios = np.concatenate([
        empirical_lipschitz(net, x1, x2) if len(x1) else np.zeros(0),
        empirical_lipschitz(net, points[k], near),
    ])
    return float(ratios.max() / net.declared_K)


def _fmt(value):
    return "" if value is None else repr(float(value))


def metrics_csv(rows):
    """Serialize log rows with the fixed header; floats use repr for exact round trips."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for row in rows:
        w.writerow([row["step"], _fmt(row["loss"]), _fmt(row["objective"]),
                    _fmt(row["lipschitz_check"]), _fmt(row["wall_ms"])])
    return buf.getvalue()


# -- main loop ----------------------------------------------------------------------

def train(net, task, cfg, log_path=None, progress=None):
    """Train ``net`` in place; returns ``(net, rows)``.

    ``task`` is a :class:`TaskSpec` for the dual objective or a
    :class:`Dataset` for the classification objectives. Rows hold step, batch
    loss, evaluation objective (dual estimate or accuracy), the post-training
    Lipschitz ratio and optionally wall-clock milliseconds.
    """
    dual = cfg.objective == "wasserstein_dual"
    if dual and not isinstance(task, TaskSpec):
        raise TypeError("the dual objective needs a TaskSpec distribution pair")
    if not dual and not isinstance(task, Dataset):
        raise TypeError("classification objectives need a Dataset")
    if dual and net.out_width != 1:
        raise ValueError("a dual critic must have a single output")
    if not dual and net.out_width <= int(task.y.max()):
        raise ValueError(f"net has {net.out_width} outputs but labels reach {int(task.y.max())}")
    width = task.input_dim if dual else task.x.shape[1]
    if net.in_width != width:
        raise ValueError(f"net input width {net.in_width} != task width {width}")

    rng = np.random.default_rng(cfg.seed)
    if dual:
        draw = task.sampler(int(rng.integers(0, 2**63)))
        eval_p1, eval_p2 = task.evaluation_samples(cfg.eval_samples)
        check_points = np.vstack([eval_p1, eval_p2])
    else:
        batches = _epoch_batches(len(task), cfg.batch_size, rng)
        check_points = task.x
        u_state = rng.standard_normal((len(task), net.out_width))
        u_state /= np.linalg.norm(u_state, axis=1, keepdims=True)

    lr = cfg.learning_rate(net)
    # an enforced weight is a feasible raw starting point; training must
    # go back through the constraint
    for layer in net.layers:
        layer.enforced = False
    net.astype(np.dtype(cfg.dtype))
    state = AdamState()
    rows = []
    t0 = time.perf_counter()

    def evaluate(phase):
        if dual:
            return wasserstein_dual_objective(net, eval_p1, eval_p2, phase)
        return _classify_objective(net, task, cfg, phase)

    def log(step, loss, objective, check=None):
        wall = (time.perf_counter() - t0) * 1e3 if cfg.record_time else None
        rows.append(dict(step=step, loss=loss, objective=objective,
                         lipschitz_check=check, wall_ms=wall))
        if progress:
            progress(rows[-1])

    loss = None
    for step in range(1, cfg.steps + 1):
        if dual:
            loss, _, grads = _dual_batch(net, draw, cfg)
        else:
            loss, _, grads = _classify_batch(net, task, next(batches), cfg, u_state)
        if not math.isfinite(loss):
            raise TrainingError(f"loss became {loss} at step {step}; try a smaller learning rate")
        flat = _flatten(grads)
        if not all(np.all(np.isfinite(g)) for g in flat):
            raise TrainingError(f"non-finite gradient at step {step}")
        adam_step(net.parameters(), flat, state, cfg, lr)
        for layer in net.layers:
            C.post_step(layer.constraint, layer.weight)
            layer.touch()
        if step % cfg.eval_every == 0 and step != cfg.steps:
            log(step, loss, evaluate("train"))

    # final enforcement and every reported number use float64
    net.astype(np.float64)
    _set_final_iters(net, cfg.final_enforce_iters)
    finalize(net)
    check = None
    if net.norm_family is not None:
        check = lipschitz_check(net, check_points, cfg.lipschitz_pairs, cfg.seed)
        if check > 1.0 + LIPSCHITZ_SLACK:
            raise TrainingError(
                f"empirical Lipschitz ratio {check:.9g} exceeds declared K after enforcement"
            )
    log(cfg.steps, loss, evaluate("final"), check)
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            fh.write(metrics_csv(rows))
    return net, rows


def _set_final_iters(net, iters):
    for layer in net.layers:
        if isinstance(layer.constraint, C.Bjorck) and layer.constraint.final_iters != iters:
            layer.constraint = replace(layer.constraint, final_iters=iters)
            layer.touch()
