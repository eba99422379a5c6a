#!/usr/bin/env python3
"""Arrange the JAFFE images into the corpus layout vggfer expects.

    python3 scripts/prepare_jaffe.py /path/to/jaffe corpora/jaffe

JAFFE file names look like `KA.AN1.39.tiff`; the two letters after the
subject code give the expression. Images are re-encoded as 8-bit grayscale
PNG (the loader reads PNG and PGM, not TIFF) into `<out>/<class>/`.
"""

import argparse
import os
import sys

from PIL import Image

CODES = {
    "AN": "anger",
    "DI": "disgust",
    "FE": "fear",
    "HA": "happy",
    "NE": "neutral",
    "SA": "sad",
    "SU": "surprise",
}


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("src", help="directory holding the JAFFE .tiff files")
    p.add_argument("out", help="corpus root to create")
    args = p.parse_args()

    counts = {c: 0 for c in CODES.values()}
    for name in sorted(os.listdir(args.src)):
        parts = name.split(".")
        if len(parts) < 3 or not name.lower().endswith((".tiff", ".tif")):
            continue
        label = CODES.get(parts[1][:2].upper())
        if label is None:
            print(f"skipping {name}: unknown expression code", file=sys.stderr)
            continue
        dest = os.path.join(args.out, label)
        os.makedirs(dest, exist_ok=True)
        stem = os.path.splitext(name)[0]
        Image.open(os.path.join(args.src, name)).convert("L").save(os.path.join(dest, stem + ".png"))
        counts[label] += 1
    total = sum(counts.values())
    print(f"{total} images: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    if total == 0:
        sys.exit("no JAFFE images found")


if __name__ == "__main__":
    main()
