"""Baseline JPEG at an arbitrary (possibly fractional) quality factor.

Quantisation tables are the example tables of ITU-T T.81 Annex K scaled with
the IJG quality convention; entropy coding is delegated to libjpeg through
Pillow with 4:2:0 chroma subsampling.
"""
from __future__ import annotations

import io
import math

import numpy as np
from PIL import Image as PILImage

from iqarank.imgcore import to_uint8

# T.81 Annex K tables K.1 / K.2 in natural (row-major) order
LUMA_TABLE = (
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
)
CHROMA_TABLE = (
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
)


def quality_scale(quality: float) -> float:
    """IJG percentage scale factor for a quality in ``[1, 100]``."""
    if not 1.0 <= quality <= 100.0:
        raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")
    if quality < 50.0:
        return 5000.0 / quality
    return 200.0 - 2.0 * quality


def scale_table(table, quality: float) -> list[int]:
    scale = quality_scale(quality)
    return [min(255, max(1, math.floor((q * scale + 50.0) / 100.0))) for q in table]


def quality_tables(quality: float) -> list[list[int]]:
    return [scale_table(LUMA_TABLE, quality), scale_table(CHROMA_TABLE, quality)]


def encode(img: np.ndarray, quality: float) -> bytes:
    """Encode ``img`` as a baseline JFIF stream."""
    buf = io.BytesIO()
    PILImage.fromarray(to_uint8(img), "RGB").save(
        buf, format="JPEG", qtables=quality_tables(quality), subsampling=2, optimize=False,
    )
    return buf.getvalue()


def decode(data: bytes) -> np.ndarray:
    with PILImage.open(io.BytesIO(data)) as pil:
        arr = np.asarray(pil.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def encode_decode(img: np.ndarray, quality: float) -> np.ndarray:
    return decode(encode(img, quality))
