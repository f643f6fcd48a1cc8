"""GroupSort-family activations, their derivatives, and small constructions
showing how MaxMin reproduces ReLU, absolute value and FullSort-style sorting.

Groups are contiguous index blocks sorted ascending, so MaxMin maps a pair
``[a, b]`` to ``[min(a, b), max(a, b)]``. Ties keep index order, which makes
the Jacobian a well-defined permutation everywhere.
"""
from dataclasses import dataclass
import math

import numpy as np

from . import _backend

KINDS = ("groupsort", "fullsort", "relu", "maxout", "identity", "abs")


@dataclass(frozen=True)
class Activation:
    kind: str
    group_size: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind in ("groupsort", "maxout"):
            if self.group_size is None or self.group_size < 2:
                raise ValueError(f"{self.kind} needs group_size >= 2")

    @property
    def is_sort(self):
        return self.kind in ("groupsort", "fullsort")

    def output_width(self, width):
        self.group_for(width)
        return width // self.group_size if self.kind == "maxout" else width

    def group_for(self, width):
        """Effective group size for a layer of ``width`` units (None if unused)."""
        if self.kind == "fullsort":
            return width
        if self.kind in ("groupsort", "maxout"):
            if width % self.group_size:
                raise ValueError(
                    f"{self.kind} group size {self.group_size} does not divide width {width}"
                )
            return self.group_size
        return None

    def __str__(self):
        if self.kind == "groupsort":
            return "maxmin" if self.group_size == 2 else f"groupsort:{self.group_size}"
        if self.kind == "maxout":
            return f"maxout:{self.group_size}"
        return self.kind


def GroupSort(group_size):
    return Activation("groupsort", group_size)


def MaxMin():
    return Activation("groupsort", 2)


def FullSort():
    return Activation("fullsort")


def ReLU():
    return Activation("relu")


def Maxout(k):
    return Activation("maxout", k)


def Identity():
    return Activation("identity")


def AbsoluteValue():
    return Activation("abs")


def parse_activation(text):
    """Parse ``relu``, ``maxmin``, ``groupsort:4``, ``fullsort``, ``maxout:4``, ..."""
    name, _, arg = text.strip().lower().partition(":")
    if name == "maxmin":
        return MaxMin()
    if name in ("groupsort", "maxout"):
        if not arg:
            raise ValueError(f"{name} needs a group size, e.g. {name}:4")
        return Activation(name, int(arg))
    if name in ("absolutevalue", "absolute"):
        name = "abs"
    if name in KINDS and not arg:
        return Activation(name)
    raise ValueError(f"cannot parse activation {text!r}")


def _float_array(z):
    z = np.asarray(z)
    return z if z.dtype in (np.float32, np.float64) else z.astype(np.float64)


def activation_forward(act, z):
    """Apply ``act`` to a batch ``z`` (rows are examples).

    Returns ``(out, record)``; the record is what the derivative routines need:
    the permutation for sorts, the mask for ReLU, the winners for maxout, the
    signs for abs.
    """
    z = _float_array(z)
    width = z.shape[1]
    if act.kind in ("groupsort", "fullsort"):
        out, perm = _backend.sort_groups(z, act.group_for(width))
        # the kernels work in float64; values are copies so the cast back is exact
        return out.astype(z.dtype, copy=False), perm
    if act.kind == "relu":
        mask = z > 0
        return np.where(mask, z, 0.0), mask
    if act.kind == "maxout":
        k = act.group_for(width)
        g = z.reshape(z.shape[0], width // k, k)
        win = np.argmax(g, axis=-1) + np.arange(0, width, k)[None, :]
        return np.take_along_axis(z, win, axis=1), win
    if act.kind == "abs":
        sign = np.where(z < 0, -1.0, 1.0).astype(z.dtype)
        return np.abs(z), sign
    return z.copy(), None


def activation_vjp(act, record, dout, width):
    """Pull a batch of output cotangents back to the pre-activations."""
    if act.kind in ("groupsort", "fullsort"):
        dz = np.empty_like(dout)
        np.put_along_axis(dz, record, dout, axis=1)
        return dz
    if act.kind == "relu":
        return np.where(record, dout, 0.0)
    if act.kind == "maxout":
        dz = np.zeros((dout.shape[0], width), dtype=dout.dtype)
        np.put_along_axis(dz, record, dout, axis=1)
        return dz
    if act.kind == "abs":
        return record * dout
    return dout


def activation_jvp(act, record, dz):
    """Push a batch of pre-activation tangents forward."""
    if act.kind in ("groupsort", "fullsort", "maxout"):
        return np.take_along_axis(dz, record, axis=1)
    if act.kind == "relu":
        return np.where(record, dz, 0.0)
    if act.kind == "abs":
        return record * dz
    return dz


def apply_activation(act, z):
    z = np.asarray(z, dtype=np.float64)
    out, _ = activation_forward(act, np.atleast_2d(z))
    return out[0] if z.ndim == 1 else out


def activation_jacobian(act, z):
    """Dense Jacobian of ``act`` at the single point ``z``.

    For sorts this is the block-diagonal permutation realizing the sort.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    _, record = activation_forward(act, z[None, :])
    cols = activation_jvp(act, record, np.eye(n))
    return cols.T


# -- constructions -----------------------------------------------------------

_S = 1.0 / math.sqrt(2.0)
# first and second weight of the abs construction; both have spectral norm 1
ABS_IN_WEIGHT = np.array([[_S], [-_S]])
ABS_OUT_WEIGHT = np.array([[-_S, _S]])
# with ascending pairs the max sits in the second slot
RELU_OUT_WEIGHT = np.array([[0.0, 1.0]])


def construct_relu_via_maxmin(x):
    """ReLU(x) as a readout of MaxMin applied to ``[x, 0]``."""
    h = apply_activation(MaxMin(), np.array([float(x), 0.0]))
    return float(RELU_OUT_WEIGHT[0] @ h)


def construct_abs_via_maxmin(x):
    """|x| as rotate, MaxMin, rotate back with 1/sqrt(2) weights."""
    h = apply_activation(MaxMin(), ABS_IN_WEIGHT[:, 0] * float(x))
    return float(ABS_OUT_WEIGHT[0] @ h)


def staircase_bias(n, x_max):
    """Pairwise-equal biases, successive pairs separated by more than 2·x_max."""
    if n % 2:
        raise ValueError(f"width {n} must be even to pair units")
    pairs = (2 * np.arange(n // 2) + 1) * (x_max + 1.0)
    return np.repeat(pairs, 2)


def fullsort_implements_maxmin(z, x_max):
    """Return FullSort(z + b) - b for the staircase bias ``b``.

    Every pair lives on its own band, so sorting the whole vector only reorders
    within pairs and the result is MaxMin(z) up to the rounding of adding and
    subtracting ``b``.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] % 2:
        raise ValueError("z must be a 1-D vector of even length")
    if np.max(np.abs(z)) > x_max:
        raise ValueError(f"||z||_inf = {np.max(np.abs(z))} exceeds x_max = {x_max}")
    b = staircase_bias(z.shape[0], x_max)
    return apply_activation(FullSort(), z + b) - b
