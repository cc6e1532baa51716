#!/usr/bin/env python3
"""Build IDX files from the 5000-digit MNIST sample shipped in the mlxtend wheel.

The full MNIST archive is not reachable from every build machine; this sample
(500 digits per class, raw 0-255 pixels) is enough for the desk-scale runs.
Per class, the first 400 digits go to the train split and the last 100 to test.

    pip download --no-deps mlxtend==0.24.0 -d /tmp/mlx
    python3 tools/make_mnist5k.py /tmp/mlx/mlxtend-0.24.0-py3-none-any.whl data/mnist5k
"""
import gzip
import os
import struct
import sys
import zipfile


def write_idx(prefix, rows):
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(rows), 28, 28))
        for pixels, _ in rows:
            f.write(bytes(pixels))
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(rows)))
        f.write(bytes(label for _, label in rows))


def main():
    wheel, out_dir = sys.argv[1], sys.argv[2]
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    by_class = {c: [] for c in range(10)}
    for line in gzip.decompress(raw).decode().strip().split("\n"):
        values = [int(float(v)) for v in line.split(",")]
        by_class[values[-1]].append((values[:-1], values[-1]))
    train, test = [], []
    for c in range(10):
        train += by_class[c][:400]
        test += by_class[c][400:]
    os.makedirs(out_dir, exist_ok=True)
    write_idx(os.path.join(out_dir, "train"), train)
    write_idx(os.path.join(out_dir, "test"), test)
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main()
