"""Regenerate the bundled 128x128 test images from scikit-image's sample data."""

import argparse
from pathlib import Path

import cv2
import numpy as np
from skimage import data

NAMES = ("astronaut", "coffee", "chelsea")


def square_crop(img):
    h, w = img.shape[:2]
    s = min(h, w)
    r0, c0 = (h - s) // 2, (w - s) // 2
    return img[r0:r0 + s, c0:c0 + s]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "data"))
    ap.add_argument("--size", type=int, default=128)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in NAMES:
        img = square_crop(getattr(data, name)())
        small = cv2.resize(img, (args.size, args.size), interpolation=cv2.INTER_AREA)
        cv2.imwrite(str(out / f"{name}.png"), cv2.cvtColor(np.ascontiguousarray(small), cv2.COLOR_RGB2BGR))
        print(out / f"{name}.png")


if __name__ == "__main__":
    main()
