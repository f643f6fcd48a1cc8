"""Distribution pairs with a known Wasserstein-1 distance, plus data loading.

Each synthetic pair has distance exactly 1 and a closed-form optimal critic,
which makes the learned dual objective directly comparable to the truth.
"""
from dataclasses import dataclass
import gzip
from pathlib import Path
import struct

import numpy as np

CONE_CENTERS = np.array([[-2.0, 0.0], [0.0, 0.0], [2.0, 0.0]])
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _check_n(n):
    if n < 1:
        raise ValueError("need at least one sample")


def sample_abs_pair(n, seed=0):
    """P1 is a point mass at 0, P2 is uniform on {-1, +1}. Optimal critic: |x|."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    return np.zeros((n, 1)), rng.choice([-1.0, 1.0], size=(n, 1))


def sample_three_cones(n, seed=0):
    """P1 picks one of three centers; P2 picks a center and a uniform point
    on the unit circle around it."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    p1 = CONE_CENTERS[rng.integers(0, 3, n)]
    angle = rng.uniform(0.0, 2.0 * np.pi, n)
    p2 = CONE_CENTERS[rng.integers(0, 3, n)] + np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return p1, p2


def sample_shell_cone(dim, n, seed=0):
    """P1 is the origin, P2 is uniform on the unit sphere in ``dim`` dimensions."""
    if dim < 2:
        raise ValueError("shell task needs dim >= 2")
    _check_n(n)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, dim))
    return np.zeros((n, dim)), g / np.linalg.norm(g, axis=1, keepdims=True)


def abs_dual(x):
    return np.abs(np.asarray(x, dtype=np.float64)).sum(axis=-1)


def three_cones_dual(x):
    """max(0, 1 - distance to the nearest center); 1 on P1, 0 on P2."""
    x = np.asarray(x, dtype=np.float64)
    d = np.linalg.norm(x[..., None, :] - CONE_CENTERS, axis=-1).min(axis=-1)
    return np.maximum(0.0, 1.0 - d)


def shell_dual(x):
    return -np.linalg.norm(np.asarray(x, dtype=np.float64), axis=-1)


# -- task descriptions -----------------------------------------------------------

@dataclass(frozen=True)
class TaskSpec:
    kind: str  # abs | cones3 | shell | pair | mnist
    dim: int = 1
    paths: tuple = ()
    train_size: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("abs", "cones3", "shell", "pair", "mnist"):
            raise ValueError(f"unknown task {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be at least 1")
        if self.kind == "mnist" and not 0 < self.train_size <= 60000:
            raise ValueError("train_size must lie in 1..60000")

    @property
    def input_dim(self):
        return {"abs": 1, "cones3": 2}.get(self.kind, self.dim)

    def sampler(self, seed=None):
        """Infinite minibatch source: ``draw(n) -> (p1_batch, p2_batch)``."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        if self.kind == "pair":
            a, b = (load_sample_csv(p) for p in self.paths)

            def draw(n):
                return a[rng.integers(0, len(a), n)], b[rng.integers(0, len(b), n)]
            return draw
        fn = {
            "abs": lambda n, s: sample_abs_pair(n, s),
            "cones3": lambda n, s: sample_three_cones(n, s),
            "shell": lambda n, s: sample_shell_cone(self.dim, n, s),
        }.get(self.kind)
        if fn is None:
            raise ValueError(f"task {self.kind!r} is not a distribution pair")
        return lambda n: fn(n, rng.integers(0, 2**63))

    def evaluation_samples(self, n=10_000, seed=None):
        if self.kind == "pair":
            return tuple(load_sample_csv(p) for p in self.paths)
        return self.sampler(self.seed + 7919 if seed is None else seed)(n)


def parse_task(text, seed=0):
    """``abs``, ``cones3``, ``shell:<dim>`` or ``pair:<csv1>,<csv2>``."""
    name, _, arg = text.strip().partition(":")
    name = name.lower()
    if name == "shell":
        if not arg:
            raise ValueError("shell task needs a dimension, e.g. shell:128")
        return TaskSpec("shell", dim=int(arg), seed=seed)
    if name == "pair":
        paths = tuple(p for p in arg.split(",") if p)
        if len(paths) != 2:
            raise ValueError("pair task needs two CSV paths: pair:<csv1>,<csv2>")
        dims = {load_sample_csv(p).shape[1] for p in paths}
        if len(dims) != 1:
            raise ValueError("the two sample files have different column counts")
        return TaskSpec("pair", dim=dims.pop(), paths=paths, seed=seed)
    if name in ("abs", "cones3") and not arg:
        return TaskSpec(name, seed=seed)
    raise ValueError(f"cannot parse task {text!r}")


def load_sample_csv(path):
    """Headerless CSV, one real-valued sample per row."""
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if data.size == 0:
        raise ValueError(f"{path} holds no samples")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path} has non-finite entries")
    return data


# -- IDX files --------------------------------------------------------------------

class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


def _read_bytes(path):
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".gz":
        try:
            data = gzip.decompress(data)
        except (EOFError, gzip.BadGzipFile) as exc:
            raise IdxTruncatedError(f"{path}: damaged gzip stream ({exc})") from None
    return data


def read_idx(path, expected_magic):
    """Parse an unsigned-byte IDX file into an array with its stated shape."""
    data = _read_bytes(path)
    if len(data) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxTruncatedError(f"{path}: header cut short")
    shape = struct.unpack(f">{ndim}I", data[4:header])
    size = int(np.prod(shape))
    if len(data) - header < size:
        raise IdxTruncatedError(f"{path}: expected {size} data bytes, found {len(data) - header}")
    if len(data) - header > size:
        raise IdxCountMismatchError(f"{path}: {len(data) - header - size} bytes beyond the stated shape")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(shape)


def write_idx(path, array):
    """Write a uint8 array as IDX (gzipped when the name ends in .gz)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    blob = struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()
    path = Path(path)
    path.write_bytes(gzip.compress(blob, mtime=0) if path.suffix == ".gz" else blob)


@dataclass
class Dataset:
    x: np.ndarray  # (n, 784) in [0, 1]
    y: np.ndarray  # (n,) int64

    def __len__(self):
        return len(self.y)

    def head(self, n):
        return Dataset(self.x[:n], self.y[:n])


def load_mnist_idx(images_path, labels_path):
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64))


def find_mnist(directory, split="train"):
    """Locate the image/label pair for ``split`` ('train' or 't10k') in a directory,
    accepting both plain and gzipped names."""
    directory = Path(directory)
    found = []
    for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
        for name in (f"{split}-{kind}", f"{split}-{kind}.gz"):
            if (directory / name).exists():
                found.append(directory / name)
                break
        else:
            raise FileNotFoundError(f"no {split}-{kind}[.gz] in {directory}")
    return tuple(found)
