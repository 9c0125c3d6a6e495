#!/usr/bin/env python3
"""Convert the digit subset shipped in the `mnist` npm package to IDX files.

The package stores each digit as a flat JSON array of pixel intensities
p / 255 rounded to three decimals; rounding v * 255 recovers the original
byte. Images of every digit are split deterministically, the first 80% going
to the training files and the rest to the test files.

    npm pack mnist@1.1.0
    python3 scripts/mnist_from_npm.py mnist-1.1.0.tgz data/mnist
"""

import argparse
import json
import struct
import tarfile
from pathlib import Path

SIDE = 28
PIXELS = SIDE * SIDE


def load_digits(source: Path):
    """Yields (digit, list of 784-byte images)."""
    if source.is_dir():
        root = source / "src" / "digits" if (source / "src").exists() else source
        read = lambda d: json.loads((root / f"{d}.json").read_text())
    else:
        archive = tarfile.open(source)
        read = lambda d: json.load(archive.extractfile(f"package/src/digits/{d}.json"))
    for digit in range(10):
        values = read(digit)["data"]
        if len(values) % PIXELS:
            raise ValueError(f"digit {digit}: {len(values)} values is not a multiple of {PIXELS}")
        raw = bytes(min(255, max(0, round(v * 255))) for v in values)
        yield digit, [raw[i : i + PIXELS] for i in range(0, len(raw), PIXELS)]


def write_images(path: Path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), SIDE, SIDE))
        for img in images:
            f.write(img)


def write_labels(path: Path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("source", type=Path, help="npm tarball or extracted package directory")
    parser.add_argument("out", type=Path, help="output directory for the four IDX files")
    parser.add_argument("--train-fraction", type=float, default=0.8)
    args = parser.parse_args()

    train, test = ([], []), ([], [])
    for digit, images in load_digits(args.source):
        cut = int(len(images) * args.train_fraction)
        for split, chunk in ((train, images[:cut]), (test, images[cut:])):
            split[0].extend(chunk)
            split[1].extend([digit] * len(chunk))

    args.out.mkdir(parents=True, exist_ok=True)
    write_images(args.out / "train-images-idx3-ubyte", train[0])
    write_labels(args.out / "train-labels-idx1-ubyte", train[1])
    write_images(args.out / "t10k-images-idx3-ubyte", test[0])
    write_labels(args.out / "t10k-labels-idx1-ubyte", test[1])
    print(f"wrote {len(train[1])} training and {len(test[1])} test images to {args.out}")


if __name__ == "__main__":
    main()
