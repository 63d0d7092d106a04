#!/usr/bin/env python3
"""Build the bundled MNIST subset from the `mnist` npm package (MIT).

The package ships 10,000 MNIST training digits as JSON arrays of
intensities rounded to three decimals; round(v * 255) recovers the
original bytes.  Digits are grouped by class in the package, so they are
shuffled with a fixed seed before being split into 9,000 training and
1,000 held-out images.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def write_idx(path, images):
    header = struct.pack(">IIII", 0x00000803, len(images), 28, 28)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + images.astype(np.uint8).tobytes())


def main(src, dst):
    parts = []
    for digit in range(10):
        data = json.loads((Path(src) / f"{digit}.json").read_text())["data"]
        parts.append(np.rint(np.asarray(data) * 255).reshape(-1, 784))
    images = np.concatenate(parts)
    order = np.random.default_rng(20190715).permutation(len(images))
    images = images[order]
    dst = Path(dst)
    write_idx(dst / "mnist-subset-train-images-idx3-ubyte.gz", images[:9000])
    write_idx(dst / "mnist-subset-test-images-idx3-ubyte.gz", images[9000:])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
