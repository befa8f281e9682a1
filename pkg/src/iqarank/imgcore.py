"""Image representation, luma/chroma conversion and file I/O.

Images are ``numpy`` arrays of shape ``(H, W, 3)`` holding float64 samples
in ``[0, 1]``. Luma planes are ``(H, W)`` arrays in the same range.
"""
from __future__ import annotations

import io
import os

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

# Full-range BT.601 (JFIF) RGB -> YCbCr, chroma centred on zero.
_RGB_TO_YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168735891647856, -0.331264108352144, 0.5],
    [0.5, -0.418687589158345, -0.081312410841655],
])
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)
LUMA_WEIGHTS = _RGB_TO_YCC[0]
_LUMA_PERMILLE = np.array([299.0, 587.0, 114.0])


class ImageError(ValueError):
    """Raised for invalid, unreadable or unsupported images."""


def as_image(data, copy=False) -> np.ndarray:
    """Validate ``data`` as an image and return it as a float64 array.

    Accepts float arrays in ``[0, 1]`` or ``uint8`` arrays (scaled by 1/255).
    Grayscale ``(H, W)`` input is broadcast to three channels.
    """
    arr = np.asarray(data)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = np.array(arr, dtype=np.float64, copy=copy)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageError("image has a zero dimension")
    if not np.all(np.isfinite(arr)):
        raise ImageError("image contains non-finite samples")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ImageError("image samples must lie in [0, 1]")
    return arr


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Read a PNG or baseline JPEG file into an RGB float image."""
    path = os.fspath(path)
    try:
        with PILImage.open(path) as pil:
            fmt = pil.format
            if fmt not in ("PNG", "JPEG"):
                raise ImageError(f"unsupported image format {fmt!r}: {path}")
            pil = pil.convert("RGB")
            arr = np.asarray(pil, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    if arr.size == 0:
        raise ImageError(f"zero-dimension image: {path}")
    return arr.astype(np.float64) / 255.0


def save_image(img: np.ndarray, path, format: str = "PNG", quality: float = 75.0) -> None:
    """Write ``img`` as 8-bit PNG or as baseline JPEG at ``quality``.

    JPEG quantisation tables follow :func:`iqarank.jpeg.quality_tables`, so
    fractional qualities are honoured.
    """
    from iqarank import jpeg

    img = as_image(img)
    format = format.upper()
    if format in ("JPG", "JPEG"):
        data = jpeg.encode(img, quality)
        with open(path, "wb") as fh:
            fh.write(data)
    elif format == "PNG":
        PILImage.fromarray(to_uint8(img), "RGB").save(path, format="PNG", compress_level=1)
    else:
        raise ImageError(f"unsupported output format {format!r}")


def png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(to_uint8(img), "RGB").save(buf, format="PNG", compress_level=1)
    return buf.getvalue()


def rgb_to_ycbcr(img: np.ndarray) -> np.ndarray:
    """Full-range BT.601 conversion; Cb/Cr are centred on 0 (range about +-0.5)."""
    return img @ _RGB_TO_YCC.T


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    return ycc @ _YCC_TO_RGB.T


def extract_luma(img: np.ndarray) -> np.ndarray:
    """BT.601 luma ``0.299 R + 0.587 G + 0.114 B``."""
    # integer weights keep gray pixels exact (white -> 1.0, 0.5 gray -> 0.5)
    luma = (img @ _LUMA_PERMILLE) / 1000.0
    return np.clip(luma, 0.0, 1.0)


def replace_luma(img: np.ndarray, luma: np.ndarray) -> np.ndarray:
    """Substitute the luma of ``img`` by ``luma`` while keeping its chroma.

    Chroma is scaled down per pixel only as far as needed for the result to
    fit the RGB cube. Chroma carries zero luma, so the output luma equals
    ``luma`` up to rounding instead of being disturbed by a hard clamp.
    """
    luma = np.asarray(luma, dtype=np.float64)
    if luma.shape != img.shape[:2]:
        raise ImageError(f"luma plane shape {luma.shape} does not match image {img.shape[:2]}")
    luma = np.clip(luma, 0.0, 1.0)
    ycc = rgb_to_ycbcr(img)
    ycc[..., 0] = 0.0
    chroma_rgb = ycbcr_to_rgb(ycc)  # per-pixel RGB offset from the gray axis

    # largest t in [0, 1] with luma + t * chroma_rgb inside [0, 1] on every channel
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(chroma_rgb > 0, (1.0 - luma[..., None]) / chroma_rgb, np.inf)
        down = np.where(chroma_rgb < 0, -luma[..., None] / chroma_rgb, np.inf)
    t = np.minimum(1.0, np.minimum(up, down).min(axis=-1))
    out = luma[..., None] + t[..., None] * chroma_rgb
    return np.clip(out, 0.0, 1.0)


def psnr(reference: np.ndarray, test: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ImageError(f"shape mismatch {reference.shape} vs {test.shape}")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
