"""Pointwise max/min of two l-inf constrained networks, built as one network.

The combined network stacks the two first layers, runs the remaining layers
block-diagonally, and finishes with a MaxMin on the pair of outputs followed
by a one-hot readout. Every weight in the result is a copy of an input weight,
an identity, or a 0/1 selector, so the norm bounds carry over exactly.
"""
import numpy as np

from . import constraints as C
from .activations import Identity, MaxMin
from .linalg import dual_exponent, parse_p, vector_norm
from .network import Layer, LipschitzNet

_PAD_SAFE = ("groupsort", "identity", "relu", "abs")


def _frozen_layers(net):
    """Final-phase weights of ``net`` as (W, b, constraint, activation) tuples."""
    out = []
    for layer in net.layers:
        w, _ = layer.effective_weight("final")
        out.append([np.array(w), layer.bias.copy(), layer.constraint, layer.activation])
    return out


def _check_input(net, name):
    if net.norm_family != "inf":
        raise ValueError(f"{name} must belong to the l-inf norm family, got {net.norm_family}")
    if net.out_width != 1:
        raise ValueError(f"{name} must have a scalar output, got width {net.out_width}")
    if any(layer.scale != 1.0 for layer in net.layers):
        raise ValueError(f"{name} has scaled layers; only 1-Lipschitz nets can be combined")


def _pad(layers, depth, act):
    """Grow ``layers`` to ``depth`` using identity layers placed after an
    activation whose output they leave unchanged."""
    if len(layers) == 1 and depth > 1:
        if act.kind != "groupsort":
            raise ValueError(
                f"a single-layer net cannot be deepened under {act}; "
                "only sorting leaves duplicated outputs unchanged"
            )
        # no activation yet: copy the row once per group slot, sort the equal
        # copies (a no-op), then read one of them back out
        w, b, cons, _ = layers[0]
        copies = act.group_size if act.kind == "groupsort" else 2
        readout = np.zeros((1, copies))
        readout[0, 0] = 1.0
        layers = [
            [np.vstack([w] * copies), np.repeat(b, copies), cons, act],
            [readout, np.zeros(1), C.LInfProject(), Identity()],
        ]
    while len(layers) < depth:
        width = layers[-2][0].shape[0]
        layers.insert(-1, [np.eye(width), np.zeros(width), C.LInfProject(), act])
    return layers


def _block_diag(a, b):
    out = np.zeros((a.shape[0] + b.shape[0], a.shape[1] + b.shape[1]))
    out[:a.shape[0], :a.shape[1]] = a
    out[a.shape[0]:, a.shape[1]:] = b
    return out


def lattice_combine(f, g, op="max"):
    """Network computing max(f(x), g(x)) or min(f(x), g(x)) exactly."""
    if op not in ("max", "min"):
        raise ValueError(f"op must be 'max' or 'min', got {op!r}")
    _check_input(f, "f")
    _check_input(g, "g")
    if f.in_width != g.in_width:
        raise ValueError(f"input widths differ: {f.in_width} vs {g.in_width}")
    lf, lg = _frozen_layers(f), _frozen_layers(g)
    if lf[0][2] != lg[0][2]:
        raise ValueError(
            f"first-layer constraints differ: {lf[0][2]} vs {lg[0][2]}"
        )
    hidden = {l[3] for l in lf[:-1] + lg[:-1]}
    if len(hidden) > 1:
        raise ValueError(f"hidden activations must agree, got {sorted(map(str, hidden))}")
    act = hidden.pop() if hidden else MaxMin()
    if act.kind not in _PAD_SAFE:
        raise ValueError(f"activation {act} cannot be padded with identity layers")
    if act.kind == "groupsort":
        for l in lf[:-1] + lg[:-1]:
            act.group_for(l[0].shape[0])
    depth = max(len(lf), len(lg))
    lf, lg = _pad(lf, depth, act), _pad(lg, depth, act)

    layers = []
    for i, (a, b) in enumerate(zip(lf, lg)):
        w = np.vstack([a[0], b[0]]) if i == 0 else _block_diag(a[0], b[0])
        cons = a[2] if i == 0 else C.LInfProject()
        out_act = MaxMin() if i == depth - 1 else act
        layers.append(Layer(w, np.concatenate([a[1], b[1]]), cons, out_act, enforced=True))
    selector = np.array([[0.0, 1.0]]) if op == "max" else np.array([[1.0, 0.0]])
    layers.append(Layer(selector, np.zeros(1), C.LInfProject(), Identity(), enforced=True))
    return LipschitzNet(layers, "inf", 1.0)


def constraint_bounds_hold(net, tol=0.0):
    """True when the first layer meets its mixed-norm bound and every later
    layer has l-inf operator norm at most 1 (+ tol)."""
    for i, layer in enumerate(net.layers):
        w, _ = layer.effective_weight("final")
        p = layer.constraint.p if isinstance(layer.constraint, C.MixedNorm) else np.inf
        bound = np.max(vector_norm(w, dual_exponent(p), axis=1))
        if bound > 1.0 + tol:
            return False
    return True


def fit_separating_line(x1, x2, a, b, p=2):
    """Single affine layer with f(x1) = a, f(x2) = b and ||W||_{p,inf} <= 1.

    The weight is (b - a)/||x2 - x1||_p times the dual vector of x2 - x1,
    which has unit dual norm and pairs with x2 - x1 to give ||x2 - x1||_p.
    """
    p = parse_p(p)
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1)
    if x1.shape != x2.shape:
        raise ValueError("x1 and x2 must have the same length")
    delta = x2 - x1
    dist = float(vector_norm(delta, p))
    if dist == 0:
        raise ValueError("x1 and x2 must differ")
    if abs(b - a) > dist * (1.0 + 1e-12):
        raise ValueError(
            f"need |a - b| <= ||x1 - x2||_p, but |a - b| = {abs(b - a)} > {dist}"
        )
    if p == 2:
        d = delta / dist
    elif p == 1:
        d = np.sign(delta)
    else:
        d = np.zeros_like(delta)
        i = int(np.argmax(np.abs(delta)))
        d[i] = np.sign(delta[i])
    w = (b - a) / dist * d
    bias = a - float(w @ x1)
    layer = Layer(w[None, :], np.array([bias]), C.MixedNorm(p), Identity(), enforced=True)
    return LipschitzNet([layer], "inf", 1.0)
