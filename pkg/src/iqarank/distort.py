"""Parametric degradation operators and their per-dataset level tables."""
from __future__ import annotations

import math
import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from scipy import ndimage, signal
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from iqarank import jpeg
from iqarank.imgcore import (
    LUMA_WEIGHTS, as_image, load_image, psnr, rgb_to_ycbcr, save_image, to_uint8, ycbcr_to_rgb,
)

DATASETS = ("live", "csiq", "tid2013", "livec")

# level 1 .. level 5 parameter rows per (dataset, kind)
_TABLE = {
    ("live", "JP"): (81.6, 61.5, 41.4, 21.3, 1.2),
    ("live", "JP2K"): (0.43, 0.33, 0.22, 0.12, 0.01),
    ("live", "WN"): (2.0 ** -12, 2.0 ** -9, 2.0 ** -6, 2.0 ** -3, 2.0 ** 0),
    ("live", "GB"): (19, 43, 67, 91, 115),

    ("csiq", "JP"): (42, 33, 24, 15, 6),
    ("csiq", "JP2K"): (0.40, 0.31, 0.22, 0.13, 0.04),
    ("csiq", "WN"): (0.005, 0.011, 0.017, 0.023, 0.029),
    ("csiq", "GB"): (14, 32, 50, 68, 86),
    ("csiq", "CTD"): (0.123, 0.207, 0.301, 0.395, 0.490),

    ("livec", "MB"): (6, 10.5, 15, 19.5, 24),
    ("livec", "GB"): (5, 8, 11, 14, 17),
    ("livec", "CA"): (4, 7, 10, 13, 16),
    ("livec", "CTD"): (0.11, 0.20, 0.29, 0.38, 0.47),
    ("livec", "JP"): (90, 84, 76, 67, 59),

    ("tid2013", "WN"): (0.0082, 0.019, 0.0298, 0.0406, 0.0514),
    ("tid2013", "NCC"): (0.016, 0.025, 0.034, 0.043, 0.052),
    ("tid2013", "SCN"): (0.0082, 0.019, 0.0298, 0.0406, 0.0514),
    ("tid2013", "IMP"): (0.008, 0.0185, 0.029, 0.0395, 0.050),
    ("tid2013", "QN"): (13, 10, 7, 4, 1),
    ("tid2013", "GB"): (19, 37, 55, 73, 91),
    ("tid2013", "DEN"): (0.008, 0.0185, 0.0290, 0.0395, 0.05),
    ("tid2013", "JP"): (42, 33, 24, 15, 6),
    # only four ratios are published; level 5 extends the last step (600 + 257)
    ("tid2013", "JP2K"): (52, 150, 343, 600, 857),
    ("tid2013", "NEPN"): (66, 120, 174, 228, 282),
    ("tid2013", "LBD"): (6, 12, 18, 24, 30),
    ("tid2013", "MS"): (21, 30, 39, 48, 57),
    ("tid2013", "CC"): (0.79, 0.70, 0.61, 0.52, 0.43),
    ("tid2013", "CSC"): (0.23, -0.025, -0.28, -0.535, -0.79),
    ("tid2013", "MGN"): (0.07, 0.10, 0.13, 0.16, 0.19),
    ("tid2013", "CQD"): (63, 48, 33, 18, 3),
    ("tid2013", "CA"): (4, 7, 10, 13, 16),
}
OPERATOR_TABLE = MappingProxyType(_TABLE)
N_LEVELS = 5

# synthetic-extension kinds per dataset, in table order
DATASET_KINDS = MappingProxyType({
    ds: tuple(kind for (d, kind) in _TABLE if d == ds) for ds in DATASETS
})

NEPN_PATCH = 15
NEPN_MAX_OFFSET = 16
LBD_PATCH = 32
# patch counts of NEPN/LBD are tabulated for TID2013's 512 x 384 frames
REFERENCE_AREA = 512 * 384
SCN_CUTOFF = 0.1  # fraction of Nyquist
SCN_ORDER = 2


class DistortionError(ValueError):
    """Invalid distortion request."""


class EncoderUnavailableError(RuntimeError):
    """The external JPEG2000 encoder hook is not configured or cannot run."""


@dataclass(frozen=True)
class DistortionSpec:
    """One fully resolved degradation: operator kind, level and parameters."""

    kind: str
    level: int
    params: dict = field(default_factory=dict)
    seed: int = 0
    dataset: str = ""


def table_values(dataset: str, kind: str) -> tuple:
    try:
        return OPERATOR_TABLE[(dataset, kind)]
    except KeyError:
        raise DistortionError(f"no level table for kind {kind!r} on dataset {dataset!r}") from None


def resolve(dataset: str, kind: str, level: int, seed: int = 0) -> DistortionSpec:
    """Build the :class:`DistortionSpec` for ``kind`` at ``level`` from the dataset table.

    Random choices that are fixed per series (motion angle, shift direction)
    come from ``seed`` only, so all levels of one series share them.
    """
    values = table_values(dataset, kind)
    if not 1 <= level <= len(values):
        raise DistortionError(f"level {level} outside 1..{len(values)} for {dataset}/{kind}")
    value = float(values[level - 1])
    rng = np.random.default_rng(seed)
    if kind == "MB":
        params = {"length": value, "angle": float(rng.uniform(0.0, 180.0))}
    elif kind == "GB":
        params = {"sigma": value}
    elif kind == "CA":
        params = {"shift": int(round(value))}
    elif kind == "CTD":
        params = {"amount": value}
    elif kind == "JP":
        params = {"quality": value}
    elif kind == "JP2K":
        params = {"ratio": value}
    elif kind in ("WN", "NCC", "SCN", "DEN", "MGN"):
        params = {"variance": value}
    elif kind == "IMP":
        params = {"density": value}
    elif kind in ("QN", "CQD"):
        params = {"levels": int(round(value))}
    elif kind in ("NEPN", "LBD"):
        params = {"count": int(round(value))}
    elif kind == "MS":
        params = {"shift": value / 255.0, "direction": 1 if rng.random() < 0.5 else -1}
    elif kind == "CC":
        params = {"factor": value, "direction": 1 if rng.random() < 0.5 else -1}
    elif kind == "CSC":
        # the table is an evenly spaced ramp of control factors; level 1 removes
        # |f1| of the saturation and every further step removes one more table step
        first = float(values[0])
        params = {"factor": value, "scale": max(0.0, 1.0 + value - 2.0 * first)}
    else:
        raise DistortionError(f"unknown distortion kind {kind!r}")
    return DistortionSpec(kind=kind, level=level, params=params, seed=seed, dataset=dataset)


# --- filters ---------------------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_axis(img, kernel, axis):
    r = len(kernel) // 2
    if len(kernel) <= 31:
        return ndimage.correlate1d(img, kernel, axis=axis, mode="reflect")
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="symmetric")
    shape = [1] * img.ndim
    shape[axis] = len(kernel)
    return signal.fftconvolve(padded, kernel.reshape(shape), mode="valid", axes=axis)


def gaussian_blur(img, sigma):
    """Separable Gaussian blur with radius ``ceil(3 sigma)``; not clamped."""
    if sigma <= 0:
        return np.array(img, dtype=np.float64)
    k = gaussian_kernel(sigma)
    return _filter_axis(_filter_axis(img, k, 0), k, 1)


def motion_kernel(length: float, angle_deg: float) -> np.ndarray:
    """Normalised line kernel of ``length`` pixels at ``angle_deg``, bilinearly rasterised."""
    radius = max(1, math.ceil(length / 2.0))
    size = 2 * radius + 1
    kernel = np.zeros((size, size))
    n = max(2, int(math.ceil(length)) * 8 + 1)
    t = np.linspace(-length / 2.0, length / 2.0, n)
    theta = math.radians(angle_deg)
    xs = radius + t * math.cos(theta)
    ys = radius - t * math.sin(theta)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    for dy, dx, w in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                      (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy = np.clip(y0 + dy, 0, size - 1)
        xx = np.clip(x0 + dx, 0, size - 1)
        np.add.at(kernel, (yy, xx), w)
    return kernel / kernel.sum()


def convolve2d(img, kernel):
    ry, rx = kernel.shape[0] // 2, kernel.shape[1] // 2
    padded = np.pad(img, ((ry, ry), (rx, rx), (0, 0)), mode="symmetric")
    return signal.fftconvolve(padded, kernel[:, :, None], mode="valid", axes=(0, 1))


def _channel_mean(img):
    return img.reshape(-1, 3).mean(axis=0)


def _bayer(n: int) -> np.ndarray:
    m = np.array([[0, 2], [3, 1]])
    while m.shape[0] < n:
        m = np.block([[4 * m, 4 * m + 2], [4 * m + 3, 4 * m + 1]])
    return (m + 0.5) / m.size


def _highpass_gain(shape):
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    f = np.hypot(fy, fx)
    cutoff = SCN_CUTOFF * 0.5
    with np.errstate(divide="ignore"):
        h = 1.0 / (1.0 + (cutoff / f) ** (2 * SCN_ORDER))
    h[0, 0] = 0.0
    return h


# --- operators: (img, params, rng) -> unclamped image -----------------------

def _op_mb(img, p, rng):
    return convolve2d(img, motion_kernel(p["length"], p["angle"]))


def _op_gb(img, p, rng):
    return gaussian_blur(img, p["sigma"])


def _op_ca(img, p, rng):
    s = p["shift"]
    w = img.shape[1]
    cols = np.arange(w)
    out = img.copy()
    out[:, :, 0] = img[:, np.clip(cols - s, 0, w - 1), 0]
    out[:, :, 2] = img[:, np.clip(cols + s, 0, w - 1), 2]
    return out


def _op_ctd(img, p, rng):
    mu = _channel_mean(img)
    return mu + (1.0 - p["amount"]) * (img - mu)


def _op_jp(img, p, rng):
    return jpeg.encode_decode(img, p["quality"])


def _op_wn(img, p, rng):
    return img + math.sqrt(p["variance"]) * rng.standard_normal(img.shape)


def _op_ncc(img, p, rng):
    ycc = rgb_to_ycbcr(img) + math.sqrt(p["variance"]) * rng.standard_normal(img.shape)
    return ycbcr_to_rgb(ycc)


def _op_scn(img, p, rng):
    h = _highpass_gain(img.shape[:2])
    noise = rng.standard_normal(img.shape)
    spectrum = np.fft.fft2(noise, axes=(0, 1)) * h[:, :, None]
    shaped = np.real(np.fft.ifft2(spectrum, axes=(0, 1)))
    shaped /= math.sqrt(float(np.mean(h ** 2)))
    return img + math.sqrt(p["variance"]) * shaped


def _op_imp(img, p, rng):
    hit = rng.random(img.shape) < p["density"]
    salt = rng.random(img.shape) < 0.5
    return np.where(hit, salt.astype(np.float64), img)


def _op_qn(img, p, rng):
    n = p["levels"]
    return np.rint(img * n) / n


def _op_den(img, p, rng):
    sd = math.sqrt(p["variance"])
    noisy = np.clip(img + sd * rng.standard_normal(img.shape), 0.0, 1.0)
    return gaussian_blur(noisy, 0.5 + 5.0 * sd)


def _patch_moves(rng, count, h, w, size):
    """Sequential draws so a smaller count is a prefix of a larger one."""
    size_y, size_x = min(size, h), min(size, w)
    span = 2 * NEPN_MAX_OFFSET + 1
    for _ in range(count):
        y = int(rng.integers(0, h - size_y + 1))
        x = int(rng.integers(0, w - size_x + 1))
        code = int(rng.integers(0, span * span - 1))
        code += code >= (span * span) // 2  # skip the zero offset
        dy, dx = divmod(code, span)
        dy -= NEPN_MAX_OFFSET
        dx -= NEPN_MAX_OFFSET
        ty = min(max(y + dy, 0), h - size_y)
        tx = min(max(x + dx, 0), w - size_x)
        yield (y, x), (ty, tx), (size_y, size_x)


def scaled_count(count: int, shape) -> int:
    """Patch count giving the same coverage density as ``count`` on a 512 x 384 frame."""
    return max(1, int(round(count * shape[0] * shape[1] / REFERENCE_AREA)))


def _op_nepn(img, p, rng):
    out = img.copy()
    h, w = img.shape[:2]
    count = scaled_count(p["count"], img.shape)
    # earlier patches keep their pixels, so a higher level only adds damage
    free = np.ones((h, w, 1), dtype=bool)
    for (y, x), (ty, tx), (sy, sx) in _patch_moves(rng, count, h, w, NEPN_PATCH):
        dst = (slice(ty, ty + sy), slice(tx, tx + sx))
        out[dst] = np.where(free[dst], img[y:y + sy, x:x + sx], out[dst])
        free[dst] = False
    return out


def _op_lbd(img, p, rng):
    out = img.copy()
    h, w = img.shape[:2]
    sy, sx = min(LBD_PATCH, h), min(LBD_PATCH, w)
    free = np.ones((h, w, 1), dtype=bool)
    for _ in range(scaled_count(p["count"], img.shape)):
        y = int(rng.integers(0, h - sy + 1))
        x = int(rng.integers(0, w - sx + 1))
        dst = (slice(y, y + sy), slice(x, x + sx))
        out[dst] = np.where(free[dst], rng.random(3), out[dst])
        free[dst] = False
    return out


def _op_ms(img, p, rng):
    return img + p["direction"] * p["shift"]


def _op_cc(img, p, rng):
    mu = _channel_mean(img)
    gain = p["factor"] if p["direction"] > 0 else 1.0 / p["factor"]
    return mu + gain * (img - mu)


def _op_csc(img, p, rng):
    luma = (img @ LUMA_WEIGHTS)[..., None]
    return luma + p["scale"] * (img - luma)


def _op_mgn(img, p, rng):
    return img * (1.0 + math.sqrt(p["variance"]) * rng.standard_normal(img.shape))


def _op_cqd(img, p, rng):
    n = p["levels"]
    h, w = img.shape[:2]
    bayer = _bayer(8)
    thresh = np.tile(bayer, (h // 8 + 1, w // 8 + 1))[:h, :w, None]
    return np.floor(img * n + thresh) / n


def _op_jp2k(img, p, rng, encoder=None):
    return run_jp2k_encoder(img, p["ratio"], encoder)


OPERATORS = MappingProxyType({
    "MB": _op_mb, "GB": _op_gb, "CA": _op_ca, "CTD": _op_ctd, "JP": _op_jp,
    "JP2K": _op_jp2k, "WN": _op_wn, "NCC": _op_ncc, "SCN": _op_scn, "IMP": _op_imp,
    "QN": _op_qn, "DEN": _op_den, "NEPN": _op_nepn, "LBD": _op_lbd, "MS": _op_ms,
    "CC": _op_cc, "CSC": _op_csc, "MGN": _op_mgn, "CQD": _op_cqd,
})
KINDS = tuple(OPERATORS)


def find_jp2k_encoder(encoder=None):
    """Resolve the encoder hook from the argument or ``IQARANK_JP2K_ENCODER``."""
    encoder = encoder or os.environ.get("IQARANK_JP2K_ENCODER")
    if not encoder:
        return None
    path = shutil.which(encoder)
    return path


def run_jp2k_encoder(img, ratio, encoder=None) -> np.ndarray:
    """Round-trip ``img`` through an external JPEG2000 codec.

    The hook is called as ``encoder INPUT.png OUTPUT RATIO`` and must leave a
    decoded image readable as PNG at ``OUTPUT``. ``RATIO`` is the table value
    passed through verbatim.
    """
    exe = find_jp2k_encoder(encoder)
    if exe is None:
        raise EncoderUnavailableError(
            "JPEG2000 encoder unavailable: pass --jp2k-encoder or set IQARANK_JP2K_ENCODER")
    with tempfile.TemporaryDirectory(prefix="iqarank-jp2k-") as tmp:
        src = os.path.join(tmp, "input.png")
        dst = os.path.join(tmp, "output.png")
        save_image(img, src)
        try:
            subprocess.run([exe, src, dst, repr(float(ratio))], check=True,
                           capture_output=True, timeout=300)
        except (OSError, subprocess.SubprocessError) as exc:
            raise EncoderUnavailableError(f"JPEG2000 encoder failed: {exc}") from exc
        out = load_image(dst)
    if out.shape != img.shape:
        raise EncoderUnavailableError(
            f"JPEG2000 encoder changed the image shape {img.shape} -> {out.shape}")
    return out


def apply_distortion(img, spec: DistortionSpec, jp2k_encoder=None, clip=True) -> np.ndarray:
    """Apply ``spec`` to ``img``. Stochastic operators draw only from ``spec.seed``."""
    img = as_image(img)
    try:
        op = OPERATORS[spec.kind]
    except KeyError:
        raise DistortionError(f"unknown distortion kind {spec.kind!r}") from None
    if spec.dataset:
        n = len(table_values(spec.dataset, spec.kind))
        if not 1 <= spec.level <= n:
            raise DistortionError(f"level {spec.level} outside 1..{n}")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "JP2K":
        out = op(img, spec.params, rng, encoder=jp2k_encoder)
    else:
        out = op(img, spec.params, rng)
    return np.clip(out, 0.0, 1.0) if clip else out


def jpeg_encode_decode(img, quality: float) -> np.ndarray:
    return jpeg.encode_decode(as_image(img), quality)


def distortion_monotonicity_check(img, dataset, kind, seed=0, levels=range(1, N_LEVELS + 1),
                                  jp2k_encoder=None, quantize=True) -> list[float]:
    """PSNR of each level of ``kind`` against ``img`` (``inf`` when unchanged).

    With ``quantize`` both sides are rounded to 8 bits first, i.e. the
    fidelity of what the extension pipeline actually stores is measured.
    """
    img = as_image(img)
    q = (lambda x: to_uint8(x) / 255.0) if quantize else (lambda x: x)
    ref = q(img)
    return [psnr(ref, q(apply_distortion(img, resolve(dataset, kind, k, seed), jp2k_encoder)))
            for k in levels]


class Distorter(TransformerMixin, BaseEstimator):
    """Apply one tabulated distortion to a batch of images.

    Parameters
    ----------
    dataset : str
        Level table to use (``live``, ``csiq``, ``tid2013`` or ``livec``).
    kind : str
        Operator id, e.g. ``"GB"`` or ``"JP"``.
    level : int
        Distortion level, 1 (mild) to 5 (strong).
    random_state : int
        Seed shared by every image in the batch.
    """

    def __init__(self, dataset="livec", kind="GB", level=1, random_state=0, jp2k_encoder=None):
        self.dataset = dataset
        self.kind = kind
        self.level = level
        self.random_state = random_state
        self.jp2k_encoder = jp2k_encoder

    def fit(self, X, y=None):
        self.spec_ = resolve(self.dataset, self.kind, self.level, self.random_state)
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        return [apply_distortion(img, self.spec_, self.jp2k_encoder) for img in X]
