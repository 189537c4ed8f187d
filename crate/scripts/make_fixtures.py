#!/usr/bin/env python3
"""Regenerate the test photographs and text mask under assets/.

Sources are the sample photographs bundled with scikit-image (public-domain
or CC0 imagery shipped in the wheel), converted to 8-bit grayscale PGM at
desk scale. Color sources are reduced to luminance with the BT.601 weights,
matching the library's own conversion. Downscaling is a 2x2 box mean, so
the outputs are bit-reproducible for a given scikit-image release.

Usage: python3 scripts/make_fixtures.py [outdir]
"""

import os
import sys

import numpy as np
import skimage.data


def luminance(img):
    if img.ndim == 2:
        return img.astype(np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    return 0.299 * r + 0.587 * g + 0.114 * b


def box2(img):
    h, w = img.shape
    return img[: h - h % 2, : w - w % 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def to_u8(img):
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def write_pgm(path, img):
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())
    print(f"wrote {path} ({w}x{h})")


def text_mask(size=256):
    """Black text strokes on white: 255 = keep, 0 = missing."""
    from PIL import Image, ImageDraw, ImageFont

    small = Image.new("L", (size // 2, size // 2), 255)
    draw = ImageDraw.Draw(small)
    font = ImageFont.load_default()
    lines = [
        "THE QUICK BROWN FOX",
        "JUMPS OVER THE LAZY",
        "DOG 0123456789 #@!?",
        "PACK MY BOX WITH",
        "FIVE DOZEN JUGS",
        "SPHINX OF BLACK",
        "QUARTZ JUDGE MY VOW",
        "HOW VEXINGLY QUICK",
        "DAFT ZEBRAS JUMP",
        "WALTZ BAD NYMPH",
        "FOR QUICK JIGS VEX",
    ]
    for i, line in enumerate(lines):
        draw.text((2 + (i % 3) * 2, 2 + i * 11), line, fill=0, font=font)
    big = small.resize((size, size), Image.NEAREST)
    return np.array(big, dtype=np.uint8)


def main(outdir):
    os.makedirs(outdir, exist_ok=True)
    d = skimage.data

    # 512x512 grayscale sources, box-filtered to 256x256.
    write_pgm(os.path.join(outdir, "camera_256.pgm"), to_u8(box2(luminance(d.camera()))))
    write_pgm(os.path.join(outdir, "moon_256.pgm"), to_u8(box2(luminance(d.moon()))))
    write_pgm(
        os.path.join(outdir, "astronaut_256.pgm"),
        to_u8(box2(luminance(d.astronaut()))),
    )
    write_pgm(os.path.join(outdir, "brick_256.pgm"), to_u8(box2(luminance(d.brick()))))

    # Color photographs without a 512 square: 256x256 luminance crops.
    coffee = luminance(d.coffee())
    write_pgm(os.path.join(outdir, "coffee_256.pgm"), to_u8(coffee[72:328, 172:428]))
    chelsea = luminance(d.chelsea())
    write_pgm(os.path.join(outdir, "chelsea_256.pgm"), to_u8(chelsea[22:278, 100:356]))

    mask = text_mask(256)
    write_pgm(os.path.join(outdir, "text_mask_256.pgm"), mask)
    missing = float((mask < 128).mean())
    print(f"text mask missing fraction: {missing:.3f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "assets")
