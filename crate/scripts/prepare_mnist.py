#!/usr/bin/env python3
"""Build the MNIST pool shipped in data/mnist/.

The pool is the 10,000-digit sample distributed with the `mnist` npm package
(MIT licensed, https://github.com/cazala/mnist). Pixels there are stored as
floats in [0, 1] with three decimals; they are mapped back to bytes with
round(v * 255) and written as gzipped IDX files in a fixed shuffled order.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/prepare_mnist.py package/src/digits data/mnist

The canonical 60k/10k files can be used instead: download
train-images-idx3-ubyte.gz and train-labels-idx1-ubyte.gz from any MNIST
mirror and point the experiment config at them. The library only reads local
paths.
"""

import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28
PIXELS = SIDE * SIDE


def main() -> None:
    if len(sys.argv) != 3:
        sys.exit("usage: prepare_mnist.py <digits-json-dir> <out-dir>")
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    samples = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(raw) % PIXELS == 0
        for i in range(len(raw) // PIXELS):
            row = raw[i * PIXELS:(i + 1) * PIXELS]
            samples.append((digit, bytes(min(255, max(0, round(v * 255))) for v in row)))

    random.Random(20200701).shuffle(samples)

    n = len(samples)
    images = struct.pack(">IIII", 0x00000803, n, SIDE, SIDE) + b"".join(s[1] for s in samples)
    labels = struct.pack(">II", 0x00000801, n) + bytes(s[0] for s in samples)
    # mtime=0 keeps the archives byte-stable across rebuilds
    with gzip.GzipFile(out / "pool-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(images)
    with gzip.GzipFile(out / "pool-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(labels)
    print(f"wrote {n} samples to {out}")


if __name__ == "__main__":
    main()
