"""Rebuild MNIST digits from the npm `mnist` package into IDX files.

Usage: build_mnist_idx.py <package>/src/digits <out_dir>

Each `<d>.json` holds {"data": [...]} with 784 floats per digit. Pixels are
restored to bytes with rint(v * 255). Output: images-idx3-ubyte.gz and
labels-idx1-ubyte.gz, digits ordered by class then position.
"""

import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(src: Path, out: Path) -> None:
    images, labels = [], []
    for d in range(10):
        data = np.asarray(json.loads((src / f"{d}.json").read_text())["data"], dtype=np.float64)
        n = data.size // 784
        images.append(np.rint(data.reshape(n, 784) * 255).astype(np.uint8))
        labels.append(np.full(n, d, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    out.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(out / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28) + images.tobytes())
    with gzip.GzipFile(out / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)) + labels.tobytes())
    print(f"{len(images)} digits, per class {np.bincount(labels).tolist()}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
