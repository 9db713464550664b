#!/usr/bin/env python3
"""Rebuild the bundled MNIST subset as gzip'd IDX files.

The npm package `mnist` ships 10,000 MNIST digits as JSON arrays of
pixel/255 rounded to three decimals; round(v * 255) recovers the bytes.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main(src, dst, n_test=2000, seed=0):
    samples = []
    for digit in range(10):
        data = json.loads((Path(src) / f"{digit}.json").read_text())["data"]
        for i in range(0, len(data), 784):
            px = bytes(int(round(v * 255)) for v in data[i : i + 784])
            samples.append((px, digit))
    random.Random(seed).shuffle(samples)
    splits = {"t10k": samples[:n_test], "train": samples[n_test:]}
    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    for name, part in splits.items():
        images = b"".join(px for px, _ in part)
        labels = bytes(label for _, label in part)
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x803, (len(part), 28, 28), images)
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x801, (len(part),), labels)
        print(name, len(part))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
