"""Build the bundled MNIST subset in tests/data from mlxtend's 5000-digit CSV.

Usage: python scripts/make_mnist_subset.py path/to/mnist_5k.csv.gz [out_dir]

The CSV holds 784 pixel columns followed by the label. Digits are shuffled
with a fixed seed and split per class into 400 training and 100 test examples,
then written as gzipped IDX files under the standard MNIST names.
"""
import gzip
import io
import sys
from pathlib import Path

import numpy as np

from lipsort.tasks import write_idx

SEED = 20190101
TRAIN_PER_CLASS = 400


def main(argv):
    src = Path(argv[0])
    out = Path(argv[1]) if len(argv) > 1 else Path(__file__).resolve().parents[1] / "tests" / "data"
    raw = gzip.decompress(src.read_bytes()).decode()
    table = np.loadtxt(io.StringIO(raw), delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1].astype(np.uint8), table[:, -1].astype(np.uint8)
    rng = np.random.default_rng(SEED)
    train, test = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        train.extend(idx[:TRAIN_PER_CLASS])
        test.extend(idx[TRAIN_PER_CLASS:])
    train = rng.permutation(np.array(train))
    test = rng.permutation(np.array(test))
    out.mkdir(parents=True, exist_ok=True)
    for prefix, idx in (("train", train), ("t10k", test)):
        write_idx(out / f"{prefix}-images-idx3-ubyte.gz", pixels[idx].reshape(-1, 28, 28))
        write_idx(out / f"{prefix}-labels-idx1-ubyte.gz", labels[idx])
        print(f"{prefix}: {len(idx)} examples")


if __name__ == "__main__":
    main(sys.argv[1:])
