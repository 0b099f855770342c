#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package into IDX files.

Usage: mnist_npm_to_idx.py <package/src/digits> <out_dir>

Pixels in the npm package are rounded to three decimals; they are mapped back
to bytes with round(v * 255). Images are interleaved round-robin across digit
classes so any contiguous slice is close to class-balanced.
"""
import gzip
import json
import os
import struct
import sys


def main():
    src, out = sys.argv[1], sys.argv[2]
    per_digit = []
    for d in range(10):
        with open(os.path.join(src, f"{d}.json")) as f:
            flat = json.load(f)["data"]
        per_digit.append([flat[i:i + 784] for i in range(0, len(flat), 784)])

    images, labels = [], []
    cursor = [0] * 10
    while any(cursor[d] < len(per_digit[d]) for d in range(10)):
        for d in range(10):
            if cursor[d] < len(per_digit[d]):
                images.append(per_digit[d][cursor[d]])
                labels.append(d)
                cursor[d] += 1

    os.makedirs(out, exist_ok=True)
    n = len(images)
    with gzip.GzipFile(os.path.join(out, "images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(bytes(min(255, max(0, round(v * 255))) for img in images for v in img))
    with gzip.GzipFile(os.path.join(out, "labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
