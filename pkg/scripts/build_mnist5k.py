"""Convert the 5,000-digit MNIST sample shipped in the mlxtend wheel to IDX files.

    pip download mlxtend --no-deps -d /tmp/mlx
    python scripts/build_mnist5k.py /tmp/mlx/mlxtend-*.whl data/mnist5k

The CSV holds 500 digits per class, grouped by class. The first 250 of each
class go to the train files and the last 250 to the test files.
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from challenger.data import write_idx

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("source", help="mlxtend wheel or mnist_5k.csv.gz")
    ap.add_argument("out", type=Path)
    args = ap.parse_args()

    if args.source.endswith(".whl"):
        raw = zipfile.ZipFile(args.source).read(CSV_MEMBER)
    else:
        raw = Path(args.source).read_bytes()
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",").astype(np.uint8)
    images, labels = table[:, :-1].reshape(-1, 28, 28), table[:, -1]

    train, test = [], []
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        train.append(idx[:250])
        test.append(idx[250:500])
    args.out.mkdir(parents=True, exist_ok=True)
    for name, idx in (("train", np.concatenate(train)), ("test", np.concatenate(test))):
        write_idx(args.out / f"{name}-images-idx3-ubyte.gz", images[idx])
        write_idx(args.out / f"{name}-labels-idx1-ubyte.gz", labels[idx])
        print(f"{name}: {idx.size} samples")


if __name__ == "__main__":
    main()
