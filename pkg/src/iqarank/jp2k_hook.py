"""Reference JPEG2000 encoder hook backed by Pillow's OpenJPEG plugin.

Usage: ``iqarank-jp2k INPUT.png OUTPUT.png VALUE``. Level-table values below
1 are read as bits per pixel of 8-bit RGB (compression ratio ``24 / VALUE``);
values of 1 and above are compression ratios. The decoded result is written
as PNG, as the hook protocol of :func:`iqarank.distort.run_jp2k_encoder`
expects.
"""
from __future__ import annotations

import io
import sys

from PIL import Image, features

BITS_PER_PIXEL = 24.0


def compression_ratio(value: float) -> float:
    if value <= 0:
        raise ValueError(f"JPEG2000 rate must be positive, got {value}")
    return BITS_PER_PIXEL / value if value < 1 else value


def round_trip(src, dst, value: float) -> None:
    if not features.check("jpg_2000"):
        raise RuntimeError("this Pillow build has no JPEG2000 support")
    with Image.open(src) as im:
        rgb = im.convert("RGB")
    buf = io.BytesIO()
    rgb.save(buf, "JPEG2000", quality_mode="rates", quality_layers=[compression_ratio(value)])
    buf.seek(0)
    with Image.open(buf) as decoded:
        decoded.convert("RGB").save(dst, "PNG")


def main(argv=None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if len(args) != 3:
        print("usage: iqarank-jp2k INPUT OUTPUT VALUE", file=sys.stderr)
        return 2
    try:
        round_trip(args[0], args[1], float(args[2]))
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"iqarank-jp2k: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
