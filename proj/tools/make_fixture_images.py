#!/usr/bin/env python3
"""Regenerate the grayscale fixture images under tests/data/images.

Sources are the sample images bundled with scikit-image, so no download is
needed. Colour images are converted with BT.601 luma; every image is centre
cropped to a square and resized with area averaging.
"""
import argparse
import pathlib

import numpy as np
from skimage import data, transform

TRAIN = ["camera", "coins", "moon", "text", "page", "clock", "brick", "grass",
         "gravel", "cell", "coffee", "chelsea"]
TEST = ["astronaut", "rocket", "immunohistochemistry", "hubble_deep_field", "retina"]


def luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.max() > 1.0:
        img = img / 255.0
    if img.ndim == 3:
        img = img[..., :3] @ np.array([0.299, 0.587, 0.114])
    return img


def square(img, size):
    h, w = img.shape
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    crop = img[top:top + s, left:left + s]
    return transform.resize(crop, (size, size), anti_aliasing=True, order=1)


def write_pgm(path, img):
    px = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = px.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + px.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=pathlib.Path(__file__).resolve().parents[1] / "tests/data/images",
                    type=pathlib.Path)
    ap.add_argument("--train-size", type=int, default=128)
    ap.add_argument("--test-size", type=int, default=96)
    args = ap.parse_args()
    for split, names, size in (("train", TRAIN, args.train_size), ("test", TEST, args.test_size)):
        d = args.out / split
        d.mkdir(parents=True, exist_ok=True)
        for name in names:
            write_pgm(d / f"{name}.pgm", square(luma(getattr(data, name)()), size))
            print(d / f"{name}.pgm")


if __name__ == "__main__":
    main()
