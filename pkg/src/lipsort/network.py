"""Fully connected Lipschitz networks with a hand-written reverse mode.

A layer computes ``h -> scale * act(W h + b)`` where ``W`` is the constrained
version of the raw parameter. The forward pass records a :class:`Tape`; the
backward pass walks it in reverse, pulling gradients through each layer and
through the (differentiable) weight constraints.
"""
from dataclasses import dataclass, field
import math
import struct

import numpy as np

from . import constraints as C
from .activations import (
    Activation,
    Identity,
    activation_forward,
    activation_jvp,
    activation_vjp,
)
from .linalg import vector_norm


@dataclass(eq=False)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    constraint: object = field(default_factory=C.Unconstrained)
    activation: Activation = field(default_factory=Identity)
    scale: float = 1.0
    enforced: bool = False
    state: dict = field(default_factory=dict)
    version: int = 0

    def __post_init__(self):
        dtype = np.float32 if np.asarray(self.weight).dtype == np.float32 else np.float64
        self.weight = np.array(self.weight, dtype=dtype, ndmin=2)
        self.bias = np.array(self.bias, dtype=dtype).reshape(-1)
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}"
            )
        if self.scale <= 0:
            raise ValueError("layer scale must be positive")
        self.activation.output_width(self.weight.shape[0])
        self._cache = None

    @property
    def in_width(self):
        return self.weight.shape[1]

    @property
    def out_width(self):
        return self.activation.output_width(self.weight.shape[0])

    def astype(self, dtype):
        """Convert parameters and power-iteration state to ``dtype`` in place."""
        self.weight = self.weight.astype(dtype)
        self.bias = self.bias.astype(dtype)
        self.state = {k: np.asarray(v).astype(dtype) for k, v in self.state.items()}
        self.touch()

    def touch(self):
        """Mark the raw parameters as changed."""
        self.version += 1
        self._cache = None

    def effective_weight(self, phase="train", update_state=False):
        """Constrained weight and its pullback, cached per parameter version."""
        if self.enforced:
            return self.weight, _identity
        key = (self.version, phase)
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1], self._cache[2]
        w_eff, pullback, new_state = C.constrain(
            self.constraint, self.weight, phase, self.state
        )
        if update_state:
            self.state = new_state
        self._cache = (key, w_eff, pullback)
        return w_eff, pullback


def _identity(g):
    return g


class LipschitzNet:
    """Ordered layers with a declared norm family ('2', 'inf' or None) and K."""

    def __init__(self, layers, norm_family=None, declared_K=None):
        if not layers:
            raise ValueError("a network needs at least one layer")
        self.layers = list(layers)
        self.norm_family = None if norm_family in (None, "none") else str(norm_family)
        if self.norm_family not in (None, "2", "inf"):
            raise ValueError(f"norm_family must be '2', 'inf' or None, got {norm_family!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_width != nxt.in_width:
                raise ValueError(
                    f"width mismatch: layer outputs {prev.out_width}, next expects {nxt.in_width}"
                )
        product = math.prod(layer.scale for layer in self.layers)
        if declared_K is None:
            declared_K = product
        elif not math.isclose(product, declared_K, rel_tol=1e-9):
            raise ValueError(f"layer scales multiply to {product}, declared K is {declared_K}")
        self.declared_K = float(declared_K)
        if self.norm_family is not None:
            for i, layer in enumerate(self.layers):
                fam = C.norm_family(layer.constraint)
                if fam != self.norm_family:
                    raise ValueError(
                        f"layer {i} constraint {layer.constraint} does not match norm family "
                        f"{self.norm_family}"
                    )
                if isinstance(layer.constraint, C.MixedNorm) and i > 0:
                    raise ValueError("only the first layer may carry a mixed-norm constraint")

    @property
    def in_width(self):
        return self.layers[0].in_width

    @property
    def out_width(self):
        return self.layers[-1].out_width

    @property
    def input_norm(self):
        """Norm in which the Lipschitz bound holds."""
        if self.norm_family == "inf":
            first = self.layers[0].constraint
            return first.p if isinstance(first, C.MixedNorm) else math.inf
        return 2

    @property
    def output_norm(self):
        return math.inf if self.norm_family == "inf" else 2

    def versions(self):
        return tuple(layer.version for layer in self.layers)

    def parameters(self):
        """Raw weights and biases, in layer order (arrays are live references)."""
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def touch(self):
        for layer in self.layers:
            layer.touch()

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def copy(self):
        layers = [
            Layer(
                layer.weight.copy(),
                layer.bias.copy(),
                layer.constraint,
                layer.activation,
                layer.scale,
                layer.enforced,
                {k: v.copy() for k, v in layer.state.items()},
            )
            for layer in self.layers
        ]
        return LipschitzNet(layers, self.norm_family, self.declared_K)

    def __call__(self, x, phase="final"):
        y, _ = forward(self, x, phase)
        return y


@dataclass
class Tape:
    versions: tuple
    squeeze: bool
    records: list


def forward(net, x, phase="train", update_state=False):
    """Evaluate ``net`` on a vector or a batch of row vectors.

    Returns ``(y, tape)``; the tape holds every pre-activation, activation
    record and constraint pullback needed by :func:`backward`.
    """
    x = np.asarray(x, dtype=net.dtype)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != net.in_width:
        raise ValueError(f"input width {h.shape[1]} != network input width {net.in_width}")
    records = []
    for layer in net.layers:
        w, pullback = layer.effective_weight(phase, update_state)
        z = h @ w.T + layer.bias
        a, rec = activation_forward(layer.activation, z)
        records.append((h, w, pullback, rec))
        h = a * layer.scale if layer.scale != 1.0 else a
    return (h[0] if squeeze else h), Tape(net.versions(), squeeze, records)


def backward(net, tape, dy, param_grads=True):
    """Reverse-mode pass. Returns ``(grads, dx)``.

    ``grads`` is a list of ``(dW_raw, db)`` per layer (summed over the batch),
    or None when ``param_grads`` is False.
    """
    if tape.versions != net.versions():
        raise RuntimeError("stale tape: parameters changed since the forward pass")
    g = np.atleast_2d(np.asarray(dy, dtype=net.dtype))
    grads = []
    for layer, (h, w, pullback, rec) in zip(reversed(net.layers), reversed(tape.records)):
        if layer.scale != 1.0:
            g = g * layer.scale
        dz = activation_vjp(layer.activation, rec, g, w.shape[0])
        if param_grads:
            grads.append((pullback(dz.T @ h), dz.sum(axis=0)))
        g = dz @ w
    if param_grads:
        grads.reverse()
    dx = g[0] if tape.squeeze else g
    return (grads if param_grads else None), dx


def jvp_from_tape(net, tape, v):
    t = np.atleast_2d(np.asarray(v, dtype=np.float64))
    for layer, (h, w, pullback, rec) in zip(net.layers, tape.records):
        t = activation_jvp(layer.activation, rec, t @ w.T)
        if layer.scale != 1.0:
            t = t * layer.scale
    return t[0] if tape.squeeze else t


def input_jvp(net, x, v, phase="final"):
    """Jacobian-vector product (∂f/∂x)·v by forward-mode through the tape."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != x.shape:
        raise ValueError(f"tangent shape {v.shape} != input shape {x.shape}")
    _, tape = forward(net, x, phase)
    return jvp_from_tape(net, tape, v)


def input_jacobian(net, x, phase="final"):
    """Dense input Jacobian at a single point, assembled row by row via backward."""
    x = np.asarray(x, dtype=np.float64)
    _, tape = forward(net, np.tile(x, (net.out_width, 1)), phase)
    _, rows = backward(net, tape, np.eye(net.out_width), param_grads=False)
    return rows


def input_jacobian_spectral_norm(net, x, iters=50, seed=0, phase="final"):
    """Largest singular value of ∂f/∂x at ``x`` by alternating VJPs and JVPs."""
    x = np.asarray(x, dtype=np.float64)
    _, tape = forward(net, x[None, :], phase)
    u = np.random.default_rng(seed).uniform(-1.0, 1.0, (1, net.out_width))
    u /= np.linalg.norm(u)
    sigma = 0.0
    for _ in range(iters):
        _, g = backward(net, tape, u, param_grads=False)
        gn = np.linalg.norm(g)
        if gn == 0:
            return 0.0
        hv = jvp_from_tape(net, tape, g / gn)
        sigma = float(np.linalg.norm(hv))
        if sigma == 0:
            return 0.0
        u = hv / sigma
    return sigma


def activation_statistics(net, data, thresholds, phase="final"):
    """For each threshold, the fraction of ReLU units that are positive on at
    least that fraction of ``data``."""
    relu_layers = [i for i, l in enumerate(net.layers) if l.activation.kind == "relu"]
    others = [
        i for i, l in enumerate(net.layers)
        if l.activation.kind not in ("relu", "identity")
    ]
    if not relu_layers or others:
        raise ValueError("activation statistics need a ReLU network")
    _, tape = forward(net, np.atleast_2d(data), phase)
    freqs = np.concatenate([tape.records[i][3].mean(axis=0) for i in relu_layers])
    return {float(t): float(np.mean(freqs >= t)) for t in np.atleast_1d(thresholds)}


def empirical_lipschitz(net, x1, x2, phase="final"):
    """Per-pair ratios ||f(x1) - f(x2)|| / ||x1 - x2|| in the net's norms."""
    y1, _ = forward(net, x1, phase)
    y2, _ = forward(net, x2, phase)
    num = vector_norm(np.atleast_2d(y1 - y2), net.output_norm)
    den = vector_norm(np.atleast_2d(np.asarray(x1) - np.asarray(x2)), net.input_norm)
    return num / den


def finalize(net):
    """Replace every raw weight with its final-phase constrained value."""
    for layer in net.layers:
        if not layer.enforced:
            w, _ = layer.effective_weight("final", update_state=True)
            layer.weight = np.array(w)
            layer.enforced = True
            layer.touch()
    return net


# -- construction -----------------------------------------------------------------

def build_net(widths, activation, constraint, K=1.0, seed=0, first_constraint=None,
              norm_family="auto"):
    """Stack of layers ``widths[0] -> ... -> widths[-1]``.

    Hidden layers use ``activation``, the output layer is linear. The Lipschitz
    constant K is spread as K^(1/L) over the L layers. Weights start Gaussian;
    Bjorck layers are then orthonormalized so training starts feasible.
    """
    rng = np.random.default_rng(seed)
    n_layers = len(widths) - 1
    scale = K ** (1.0 / n_layers)
    layers = []
    fan_in = widths[0]
    for i in range(n_layers):
        rows = widths[i + 1]
        act = activation if i < n_layers - 1 else Identity()
        kind = first_constraint if (i == 0 and first_constraint is not None) else constraint
        w = rng.standard_normal((rows, fan_in)) / math.sqrt(fan_in)
        state = {}
        if isinstance(kind, (C.Bjorck, C.SpectralNormalize)):
            state["u"] = C.initial_power_state(rows, rng)
        if isinstance(kind, C.Bjorck):
            scaled, _ = C.safe_scale(w, "spectral")
            w = C.bjorck_orthonormalize(scaled, 1, kind.final_iters, check=False)
        layers.append(Layer(w, np.zeros(rows), kind, act, scale, state=state))
        fan_in = layers[-1].out_width
    if norm_family == "auto":
        norm_family = C.norm_family(constraint)
    return LipschitzNet(layers, norm_family, scale**n_layers)


# -- checkpoints ------------------------------------------------------------------

MAGIC = b"LIPN"
FORMAT_VERSION = 1
_CONSTRAINT_TAGS = {
    C.Unconstrained: 0, C.Bjorck: 1, C.SpectralNormalize: 2,
    C.ParsevalRegularize: 3, C.LInfProject: 4, C.MixedNorm: 5,
}
_ACTIVATION_TAGS = {k: i for i, k in enumerate(
    ("identity", "groupsort", "fullsort", "relu", "maxout", "abs"))}
_SAFE_TAGS = {m: i for i, m in enumerate(C.SAFE_SCALE_MODES)}
_FAMILY_TAGS = {None: 0, "2": 2, "inf": 3}


def _pack_constraint(c):
    # tag, then (u32, u32, u32, u8, u32, f64) slots whose meaning depends on the tag
    tag = _CONSTRAINT_TAGS[type(c)]
    a = b = d = e = 0
    s = 0
    f = 0.0
    if isinstance(c, C.Bjorck):
        a, b, d, s, e = c.order, c.iters, c.final_iters, _SAFE_TAGS[c.safe_scale], c.power_iters
    elif isinstance(c, C.SpectralNormalize):
        a, b = c.power_iters, c.final_power_iters
    elif isinstance(c, C.ParsevalRegularize):
        f = c.beta
    elif isinstance(c, C.LInfProject):
        a = int(c.post_step)
    elif isinstance(c, C.MixedNorm):
        f = c.p
    return struct.pack("<BIIIBId", tag, a, b, d, s, e, f)


def _unpack_constraint(buf):
    tag, a, b, d, s, e, f = struct.unpack("<BIIIBId", buf)
    if tag == 0:
        return C.Unconstrained()
    if tag == 1:
        return C.Bjorck(a, b, d, C.SAFE_SCALE_MODES[s], e)
    if tag == 2:
        return C.SpectralNormalize(a, b)
    if tag == 3:
        return C.ParsevalRegularize(f)
    if tag == 4:
        return C.LInfProject(bool(a))
    if tag == 5:
        return C.MixedNorm(f)
    raise ValueError(f"unknown constraint tag {tag}")


_CONSTRAINT_SIZE = struct.calcsize("<BIIIBId")


def save_net(net, path):
    """Write ``net`` as little-endian binary: magic, version, header, layers."""
    out = [MAGIC, struct.pack("<IBdI", FORMAT_VERSION, _FAMILY_TAGS[net.norm_family],
                              net.declared_K, len(net.layers))]
    for layer in net.layers:
        rows, cols = layer.weight.shape
        u = layer.state.get("u")
        out.append(struct.pack("<II", rows, cols))
        out.append(_pack_constraint(layer.constraint))
        out.append(struct.pack("<BIdBB", _ACTIVATION_TAGS[layer.activation.kind],
                               layer.activation.group_size or 0, layer.scale,
                               int(layer.enforced), int(u is not None)))
        out.append(layer.weight.astype("<f8").tobytes())
        out.append(layer.bias.astype("<f8").tobytes())
        if u is not None:
            out.append(np.asarray(u).astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ValueError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def load_net(path):
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise ValueError(f"{path} is not a lipsort checkpoint (bad magic)")
    version, fam, declared_K, count = r.unpack("<IBdI")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    family = {v: k for k, v in _FAMILY_TAGS.items()}[fam]
    kinds = {v: k for k, v in _ACTIVATION_TAGS.items()}
    layers = []
    for _ in range(count):
        rows, cols = r.unpack("<II")
        constraint = _unpack_constraint(r.take(_CONSTRAINT_SIZE))
        act_tag, group, scale, enforced, has_u = r.unpack("<BIdBB")
        act = Activation(kinds[act_tag], group or None)
        w = r.floats(rows * cols).reshape(rows, cols)
        b = r.floats(rows)
        state = {"u": r.floats(rows)} if has_u else {}
        layers.append(Layer(w, b, constraint, act, scale, bool(enforced), state))
    if r.pos != len(r.data):
        raise ValueError("trailing bytes after the last layer")
    return LipschitzNet(layers, family, declared_K)


def jacobian_bilinear_grads(net, tape, u, v):
    """Raw-parameter gradients of sum_rows u·(∂f/∂x)v with u and v held fixed.

    Sort permutations and ReLU masks are locally constant, so only the weights
    carry gradient; the bias entries are zero.
    """
    if tape.versions != net.versions():
        raise RuntimeError("stale tape: parameters changed since the forward pass")
    t = np.atleast_2d(np.asarray(v, dtype=np.float64))
    tangents = []
    for layer, (h, w, pullback, rec) in zip(net.layers, tape.records):
        tangents.append(t)
        t = activation_jvp(layer.activation, rec, t @ w.T)
        if layer.scale != 1.0:
            t = t * layer.scale
    g = np.atleast_2d(np.asarray(u, dtype=np.float64))
    grads = []
    for layer, t_in, (h, w, pullback, rec) in zip(
        reversed(net.layers), reversed(tangents), reversed(tape.records)
    ):
        if layer.scale != 1.0:
            g = g * layer.scale
        dz = activation_vjp(layer.activation, rec, g, w.shape[0])
        grads.append((pullback(dz.T @ t_in), np.zeros_like(layer.bias)))
        g = dz @ w
    grads.reverse()
    return grads
