"""Controllable list-wise ranking loss and the fine-tuning regression loss.

Scores are handled in *canonical degradation orientation*: higher means worse
quality. MOS-style labels are mirrored with :func:`canonicalize` first. Every
loss returns ``(value, gradient)``. Kinks use the zero subgradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from iqarank.datasets import ScoreScale


@dataclass(frozen=True)
class LossConfig:
    lambda_r: float = 1.0
    lambda_b: float = 1.0
    lambda_w: float = 1.0
    tau_w: float = 100.0
    tau_b: float = 0.0
    K: int = 5

    def __post_init__(self):
        if min(self.lambda_r, self.lambda_b, self.lambda_w) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.K < 1:
            raise ValueError("K must be at least 1")

    @classmethod
    def for_scale(cls, scale: ScoreScale, **kw) -> "LossConfig":
        """Worst/best bounds of a dataset scale in canonical orientation."""
        return cls(tau_w=scale.hi, tau_b=scale.lo, **kw)

    def margin(self, y0c):
        return np.asarray(y0c, dtype=np.float64) / (self.K + 1)


def canonicalize(score, orientation: str, lo: float, hi: float):
    """Map a score so that higher always means more degraded."""
    if not lo < hi:
        raise ValueError("range must satisfy lo < hi")
    s = np.asarray(score, dtype=np.float64)
    if np.any(s < lo) or np.any(s > hi):
        raise ValueError(f"score {score} outside [{lo}, {hi}]")
    if orientation == "DMOS":
        out = s
    elif orientation == "MOS":
        out = hi - s + lo
    else:
        raise ValueError(f"orientation must be MOS or DMOS, got {orientation!r}")
    return float(out) if out.ndim == 0 else out


def uncanonicalize(score, orientation: str, lo: float, hi: float):
    s = np.asarray(score, dtype=np.float64)
    out = s if orientation == "DMOS" else hi - s + lo
    return float(out) if out.ndim == 0 else out


def _check_list(phi, cfg):
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape[-1] != cfg.K + 1:
        raise ValueError(f"expected {cfg.K + 1} scores per list, got {phi.shape[-1]}")
    return phi


def psi_r(phi, y0c, cfg=LossConfig()):
    """Sum over ordered pairs n < m of ``max(0, phi[n] - phi[m] + y0c / (K + 1))``."""
    phi = _check_list(phi, cfg)
    margin = y0c / (cfg.K + 1)
    value = 0.0
    grad = np.zeros_like(phi)
    n_items = len(phi)
    for n in range(n_items):
        for m in range(n + 1, n_items):
            arg = phi[n] - phi[m] + margin
            if arg > 0:
                value += arg
                grad[n] += 1.0
                grad[m] -= 1.0
    return value, grad


def psi_b(phi0, y0c):
    """``|phi0 - y0c|`` with gradient ``sign(phi0 - y0c)``."""
    d = float(phi0) - float(y0c)
    return abs(d), float(np.sign(d))


def psi_w(phi_last, cfg=LossConfig()):
    """Zero inside the dataset bounds, otherwise the distance to the worst score."""
    lo, hi = min(cfg.tau_w, cfg.tau_b), max(cfg.tau_w, cfg.tau_b)
    x = float(phi_last)
    if lo <= x <= hi:
        return 0.0, 0.0
    d = x - cfg.tau_w
    return abs(d), float(np.sign(d))


def loss_total(phi, y0c, cfg=LossConfig()):
    """Weighted sum of the three terms and its gradient w.r.t. the six scores."""
    phi = _check_list(phi, cfg)
    r, gr = psi_r(phi, y0c, cfg)
    b, gb = psi_b(phi[0], y0c)
    w, gw = psi_w(phi[-1], cfg)
    grad = cfg.lambda_r * gr
    grad[0] += cfg.lambda_b * gb
    grad[-1] += cfg.lambda_w * gw
    return cfg.lambda_r * r + cfg.lambda_b * b + cfg.lambda_w * w, grad


def loss_batch(phi, y0c, cfg=LossConfig()):
    """Vectorised :func:`loss_total` over a ``(G, K + 1)`` array of score lists.

    Returns ``(total, grad, parts)`` where ``total`` and each entry of ``parts``
    (``psi_r``, ``psi_b``, ``psi_w``) have shape ``(G,)``.
    """
    phi = np.atleast_2d(_check_list(phi, cfg))
    y0c = np.broadcast_to(np.asarray(y0c, dtype=np.float64), phi.shape[:1])
    n, m = np.triu_indices(phi.shape[1], k=1)
    args = phi[:, n] - phi[:, m] + (y0c / (cfg.K + 1))[:, None]
    active = (args > 0).astype(np.float64)
    r = np.sum(args * active, axis=1)
    grad = np.zeros_like(phi)
    for col in range(phi.shape[1]):
        grad[:, col] = active[:, n == col].sum(axis=1) - active[:, m == col].sum(axis=1)
    grad *= cfg.lambda_r

    d0 = phi[:, 0] - y0c
    b = np.abs(d0)
    grad[:, 0] += cfg.lambda_b * np.sign(d0)

    lo, hi = min(cfg.tau_w, cfg.tau_b), max(cfg.tau_w, cfg.tau_b)
    last = phi[:, -1]
    outside = (last < lo) | (last > hi)
    dw = last - cfg.tau_w
    w = np.where(outside, np.abs(dw), 0.0)
    grad[:, -1] += cfg.lambda_w * np.where(outside, np.sign(dw), 0.0)

    total = cfg.lambda_r * r + cfg.lambda_b * b + cfg.lambda_w * w
    return total, grad, {"psi_r": r, "psi_b": b, "psi_w": w}


def finetune_loss(pred, truth):
    """Mean absolute error, with gradient ``sign(pred - truth) / N``."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} targets")
    if pred.size == 0:
        raise ValueError("fine-tune loss needs at least one sample")
    d = pred - truth
    return float(np.mean(np.abs(d))), np.sign(d) / d.size


def rank_accuracy(phi) -> float:
    """Fraction of within-list pairs ordered correctly (``phi[m] > phi[n]`` for ``m > n``)."""
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    n, m = np.triu_indices(phi.shape[1], k=1)
    return float(np.mean(phi[:, m] > phi[:, n]))
