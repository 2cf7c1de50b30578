#!/usr/bin/env python3
"""Write a procedural shape corpus to disk.

Images go to <out>/images and foreground masks (same file names) to
<out>/masks, so the corpus can be used with ``gmae train --data`` and as
``--truth`` for ``gmae segment`` and ``gmae edges``.

Usage:
    python scripts/make_shapes.py --count 2000 --out data/shapes
    python scripts/make_shapes.py --count 100 --seed 12345 --out data/shapes_val
"""

import argparse
import os
import sys
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from gmae.imageio import save_image, save_mask
from gmae.shapes import make_shape_corpus


def main():
    parser = argparse.ArgumentParser(description="Write a procedural shape corpus")
    parser.add_argument("--count", type=int, default=2000, help="Number of images")
    parser.add_argument("--size", type=int, default=64, help="Image side in pixels")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-shapes", type=int, default=3, help="Shapes per image, at most")
    parser.add_argument("--out", required=True, help="Output directory")
    args = parser.parse_args()

    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    corpus = make_shape_corpus(args.count, args.size, seed=args.seed, max_shapes=args.max_shapes)
    width = len(str(max(args.count - 1, 0)))
    for i, (image, mask) in enumerate(zip(corpus.images, corpus.masks)):
        name = f"shape_{i:0{width}d}.png"
        save_image(out / "images" / name, image)
        save_mask(out / "masks" / name, mask)
        if (i + 1) % 500 == 0:
            print(f"  {i + 1:,}/{args.count:,}")

    print(f"Wrote {len(corpus):,} images to {out}")


if __name__ == "__main__":
    main()
