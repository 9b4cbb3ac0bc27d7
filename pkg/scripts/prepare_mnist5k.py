"""Convert the 5000-digit MNIST sample shipped inside the mlxtend wheel into IDX files.

The first 200 digits of every class become the training file (2000 images),
the remaining 300 per class become the test file (3000 images).

    python scripts/prepare_mnist5k.py /path/to/mlxtend-0.24.0-py3-none-any.whl data/mnist5k
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from advaug.datasets import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
TRAIN_PER_CLASS = 200


def load_rows(wheel: Path) -> np.ndarray:
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    return np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)


def split(rows: np.ndarray):
    labels = rows[:, -1]
    images = rows[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    train, test = [], []
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        train.extend(idx[:TRAIN_PER_CLASS])
        test.extend(idx[TRAIN_PER_CLASS:])
    train, test = np.sort(train), np.sort(test)
    return (images[train], labels[train].astype(np.uint8)), (images[test], labels[test].astype(np.uint8))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("wheel", type=Path)
    ap.add_argument("out", type=Path)
    args = ap.parse_args(argv)
    (xtr, ytr), (xte, yte) = split(load_rows(args.wheel))
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "train-images-idx3-ubyte", args.out / "train-labels-idx1-ubyte", xtr, ytr)
    write_idx(args.out / "t10k-images-idx3-ubyte", args.out / "t10k-labels-idx1-ubyte", xte, yte)
    print(f"train {len(ytr)} test {len(yte)} -> {args.out}")


if __name__ == "__main__":
    main()
