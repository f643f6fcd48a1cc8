"""Lipschitz networks built from sorting activations and norm-constrained weights."""
from ._backend import BACKEND
from .activations import (
    AbsoluteValue,
    Activation,
    FullSort,
    GroupSort,
    Identity,
    MaxMin,
    Maxout,
    ReLU,
    apply_activation,
)
from .constraints import (
    Bjorck,
    LInfProject,
    MixedNorm,
    ParsevalRegularize,
    SpectralNormalize,
    Unconstrained,
    bjorck_orthonormalize,
    enforce_constraint,
    safe_scale,
)
from .lattice import fit_separating_line, lattice_combine
from .network import Layer, LipschitzNet, backward, build_net, forward, load_net, save_net
from .tasks import TaskSpec, load_mnist_idx
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AbsoluteValue", "Activation", "FullSort", "GroupSort", "Identity", "MaxMin",
    "Maxout", "ReLU", "apply_activation", "Bjorck", "LInfProject", "MixedNorm",
    "ParsevalRegularize", "SpectralNormalize", "Unconstrained", "bjorck_orthonormalize",
    "enforce_constraint", "safe_scale", "fit_separating_line", "lattice_combine", "Layer",
    "LipschitzNet", "backward", "build_net", "forward", "load_net", "save_net", "TaskSpec",
    "load_mnist_idx", "TrainConfig", "train",
]
