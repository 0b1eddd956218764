#!/usr/bin/env python3
"""Convert a CSV of MNIST digits (784 pixel columns then the label) into
IDX files laid out like the standard distribution.

    python3 scripts/mnist_csv_to_idx.py mnist_5k.csv.gz data/mnist --train 2000

The first --train rows (after a seeded shuffle) become train-*, the rest
t10k-*. A wheel path is also accepted; the bundled mnist_5k.csv.gz is read
from inside it.
"""

import argparse
import gzip
import io
import random
import struct
import zipfile
from pathlib import Path


def read_rows(path):
    path = Path(path)
    if path.suffix == ".whl":
        with zipfile.ZipFile(path) as z:
            name = next(n for n in z.namelist() if n.endswith("mnist_5k.csv.gz"))
            raw = gzip.decompress(z.read(name))
    elif path.suffix == ".gz":
        raw = gzip.decompress(path.read_bytes())
    else:
        raw = path.read_bytes()
    rows = []
    for line in io.StringIO(raw.decode()):
        vals = [int(float(v)) for v in line.strip().split(",") if v]
        if len(vals) != 785:
            raise SystemExit(f"expected 785 columns, got {len(vals)}")
        rows.append((bytes(vals[:784]), vals[784]))
    return rows


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(img)


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rows = read_rows(args.source)
    random.Random(args.seed).shuffle(rows)
    train, test = rows[: args.train], rows[args.train :]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for prefix, part in (("train", train), ("t10k", test)):
        write_images(out / f"{prefix}-images-idx3-ubyte", [r[0] for r in part])
        write_labels(out / f"{prefix}-labels-idx1-ubyte", [r[1] for r in part])
    print(f"wrote {len(train)} train and {len(test)} test digits to {out}")


if __name__ == "__main__":
    main()
