#!/usr/bin/env python3
"""Render per-filter output panels for visual inspection.

Writes original/gaussian/median/sobel/hist_eq PNGs for a synthetic
dermoscopy-like sample, or for a real image when --image is given.
"""

import argparse

from lesionforge.imgio import read_image
from lesionforge.synthetic import render_filter_panels


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="artifacts/filter_panels")
    parser.add_argument("--image", default=None, help="optional source image path")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    img = read_image(args.image) if args.image else None
    written = render_filter_panels(args.out, img=img, seed=args.seed)
    for path in written:
        print(path)


if __name__ == "__main__":
    main()
