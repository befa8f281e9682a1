"""Over- and under-exposure curves derived from an inverted Weber-Fechner law."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from iqarank.imgcore import extract_luma, replace_luma

DARKEST_LUMA = 1.0 / 255.0
VARIANTS = ("over", "under", "both")


@dataclass(frozen=True)
class ExposureParams:
    lambda1: float = 6.00e-3
    delta1: float = 3.15e-2
    gamma1: float = 3.02
    nu1: float = 2.42
    lambda2: float = -1.8e-3
    gamma2: float = -1.5e-4
    delta2: float = 2.1e-5
    nu2: float = -3.01
    K: int = 5

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")


DEFAULT_PARAMS = ExposureParams()


def _check_level(k, params):
    if not 1 <= k <= params.K:
        raise ValueError(f"distortion level {k} outside 1..{params.K}")


def overexpose_raw(L, k, params=DEFAULT_PARAMS):
    """Brightening curve before clamping."""
    L = np.asarray(L, dtype=np.float64)
    return L + params.lambda1 * k * k * L ** params.gamma1 + params.delta1 * k * L ** params.nu1


def underexpose_raw(L, k, params=DEFAULT_PARAMS):
    """Darkening curve before clamping; the log and negative power see ``max(L, 1/255)``."""
    L = np.asarray(L, dtype=np.float64)
    Lc = np.maximum(L, DARKEST_LUMA)
    return (L - params.lambda2 * k * k * np.log(Lc) - params.gamma2 * k * k
            - params.delta2 * k * Lc ** params.nu2)


def overexpose(L, k, params=DEFAULT_PARAMS):
    _check_level(k, params)
    return np.clip(overexpose_raw(L, k, params), 0.0, 1.0)


def underexpose(L, k, params=DEFAULT_PARAMS):
    _check_level(k, params)
    return np.clip(underexpose_raw(L, k, params), 0.0, 1.0)


def over_and_under(L, k, params=DEFAULT_PARAMS, threshold=0.5):
    """Brighten pixels with ``L >= threshold`` and darken the rest."""
    _check_level(k, params)
    L = np.asarray(L, dtype=np.float64)
    return np.where(L >= threshold, overexpose(L, k, params), underexpose(L, k, params))


def exposure_variants(img, k, params=DEFAULT_PARAMS):
    """Return the (over, under, both) exposure-distorted versions of ``img`` at level ``k``."""
    L = extract_luma(img)
    return (
        replace_luma(img, overexpose(L, k, params)),
        replace_luma(img, underexpose(L, k, params)),
        replace_luma(img, over_and_under(L, k, params)),
    )
