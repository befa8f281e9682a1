"""Desk-scale differentiable quality scorer.

A fixed 36-dimensional hand-crafted feature vector feeds a one-hidden-layer
perceptron (softplus units). The network output ``u`` is mapped to the score
scale as ``phi = score_offset + score_scale * u``. Training minimises the loss
divided by ``score_scale``, which makes the learning rate independent of the
dataset's score range.
"""
from __future__ import annotations

import math
import os
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from iqarank.datasets import ScoreScale
from iqarank.imgcore import LUMA_WEIGHTS, as_image, load_image, rgb_to_ycbcr
from iqarank.rankloss import (
    LossConfig, canonicalize, finetune_loss, loss_batch, rank_accuracy, uncanonicalize,
)

FEATURE_NAMES = (
    "mean_r", "mean_g", "mean_b", "var_r", "var_g", "var_b",
    *(f"grad_hist_{i}" for i in range(8)),
    "grad_mean", "grad_std",
    "local_contrast_mean", "local_contrast_std", "local_contrast_p10", "local_contrast_p90",
    "block_edge", "block_excess",
    "noise_sigma", "laplacian_var",
    "saturation_mean", "saturation_var",
    "luma_mean", "luma_std", "dark_fraction", "bright_fraction", "luma_entropy",
    "colorfulness", "luma_p05", "luma_p95", "chroma_std", "detail",
)
N_FEATURES = len(FEATURE_NAMES)
GRAD_EDGES = np.array([1, 2, 4, 8, 16, 32, 64]) / 255.0
_LAPLACIAN_NORM = math.sqrt(20.0)


def extract_features(img) -> np.ndarray:
    """Return the fixed feature vector of ``img``."""
    img = as_image(img)
    h, w = img.shape[:2]
    flat = img.reshape(-1, 3)
    luma = img @ LUMA_WEIGHTS

    if h > 1 and w > 1:
        gx = np.diff(luma, axis=1)[:-1, :]
        gy = np.diff(luma, axis=0)[:, :-1]
        grad = np.hypot(gx, gy)
    else:
        grad = np.zeros((1, 1))
    hist = np.bincount(np.searchsorted(GRAD_EDGES, grad.ravel(), side="right"),
                       minlength=8) / grad.size

    mean = ndimage.uniform_filter(luma, 7, mode="reflect")
    sq = ndimage.uniform_filter(luma * luma, 7, mode="reflect")
    local = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    local[local < 1e-7] = 0.0

    dx = np.abs(np.diff(luma, axis=1))
    dy = np.abs(np.diff(luma, axis=0))
    edge_parts, inner_parts = [], []
    for d in (dx, dy.T):
        if d.shape[1] >= 8:
            on = (np.arange(d.shape[1]) % 8) == 7
            edge_parts.append(d[:, on].mean())
            inner_parts.append(d[:, ~on].mean())
    block_edge = float(np.mean(edge_parts)) if edge_parts else 0.0
    block_excess = block_edge - float(np.mean(inner_parts)) if edge_parts else 0.0

    lap = ndimage.laplace(luma, mode="reflect")
    noise_sigma = 1.4826 * float(np.median(np.abs(lap))) / _LAPLACIAN_NORM

    cmax = flat.max(axis=1)
    cmin = flat.min(axis=1)
    sat = np.where(cmax > 0, (cmax - cmin) / np.where(cmax > 0, cmax, 1.0), 0.0)

    counts = np.bincount(np.minimum((np.clip(luma, 0, 1) * 32).astype(int), 31).ravel(),
                         minlength=32) / luma.size
    nz = counts[counts > 0]
    entropy = float(-np.sum(nz * np.log2(nz))) / 5.0

    rg = flat[:, 0] - flat[:, 1]
    yb = 0.5 * (flat[:, 0] + flat[:, 1]) - flat[:, 2]
    colorfulness = math.sqrt(rg.var() + yb.var()) + 0.3 * math.sqrt(
        float(np.mean(rg) ** 2 + np.mean(yb) ** 2))
    ycc = rgb_to_ycbcr(img)
    detail = float(np.mean(np.abs(luma - ndimage.gaussian_filter(luma, 1.0, mode="reflect"))))

    local_p10, local_p90 = np.percentile(local, [10, 90])
    luma_p05, luma_p95 = np.percentile(luma, [5, 95])
    feats = np.concatenate([
        flat.mean(axis=0), flat.var(axis=0), hist,
        [grad.mean(), grad.std()],
        [local.mean(), local.std(), local_p10, local_p90],
        [block_edge, block_excess],
        [noise_sigma, lap.var()],
        [sat.mean(), sat.var()],
        [luma.mean(), luma.std(), np.mean(luma <= 2 / 255), np.mean(luma >= 253 / 255), entropy],
        [colorfulness, luma_p05, luma_p95],
        [0.5 * (ycc[..., 1].std() + ycc[..., 2].std()), detail],
    ])
    # round away float noise so constant inputs give exact zeros
    feats[np.abs(feats) < 1e-12] = 0.0
    return feats


# --- model ------------------------------------------------------------------

@dataclass
class ScorerModel:
    W1: np.ndarray  # (hidden, D)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float = 0.0
    feature_mean: np.ndarray = None
    feature_scale: np.ndarray = None
    score_offset: float = 0.0
    score_scale: float = 1.0

    def __post_init__(self):
        d = self.W1.shape[1]
        if self.feature_mean is None:
            self.feature_mean = np.zeros(d)
        if self.feature_scale is None:
            self.feature_scale = np.ones(d)

    @classmethod
    def init(cls, n_features=N_FEATURES, hidden=16, seed=0, **kw) -> "ScorerModel":
        rng = np.random.default_rng(seed)
        return cls(
            W1=rng.normal(0.0, 1.0 / math.sqrt(n_features), (hidden, n_features)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, 1.0 / math.sqrt(hidden), hidden),
            **kw,
        )

    @property
    def n_features(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def copy(self) -> "ScorerModel":
        return replace(self, W1=self.W1.copy(), b1=self.b1.copy(), w2=self.w2.copy(),
                       feature_mean=self.feature_mean.copy(),
                       feature_scale=self.feature_scale.copy())

    # trainable parameters only
    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])

    def set_flat(self, flat) -> None:
        h, d = self.W1.shape
        flat = np.asarray(flat, dtype=np.float64)
        self.W1 = flat[:h * d].reshape(h, d).copy()
        self.b1 = flat[h * d:h * d + h].copy()
        self.w2 = flat[h * d + h:h * d + 2 * h].copy()
        self.b2 = float(flat[-1])

    def set_standardization(self, X) -> None:
        X = np.asarray(X, dtype=np.float64)
        self.feature_mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.feature_scale = np.where(sd > 1e-12, sd, 1.0)


def _hidden(model, X):
    z = (X - model.feature_mean) / model.feature_scale
    a = z @ model.W1.T + model.b1
    return z, a, np.logaddexp(0.0, a)


def _check_dims(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[-1]}")
    return X


def forward(model: ScorerModel, X):
    """Score for one feature vector (scalar) or a batch ``(n, D)`` (array)."""
    X = _check_dims(model, X)
    _, _, hid = _hidden(model, np.atleast_2d(X))
    out = model.score_offset + model.score_scale * (hid @ model.w2 + model.b2)
    return float(out[0]) if X.ndim == 1 else out


def backward(model: ScorerModel, X, upstream) -> np.ndarray:
    """Flat gradient of ``sum_i upstream[i] * forward(X[i])`` w.r.t. the trainable parameters."""
    X = _check_dims(model, X)
    X2 = np.atleast_2d(X)
    g = np.broadcast_to(np.asarray(upstream, dtype=np.float64), X2.shape[:1]) * model.score_scale
    z, a, hid = _hidden(model, X2)
    d_w2 = g @ hid
    d_b2 = g.sum()
    d_a = (g[:, None] * model.w2[None, :]) * expit(a)
    d_W1 = d_a.T @ z
    d_b1 = d_a.sum(axis=0)
    return np.concatenate([d_W1.ravel(), d_b1, d_w2, [d_b2]])


# --- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr_pretrain: float = 1e-4
    lr_finetune: float = 1e-5
    lr_decay: float = 0.1
    decay_every: int = 10
    crop_size: int = 224
    n_test_crops: int = 60
    train_fraction: float = 0.8
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lr_pretrain < 0 or self.lr_finetune < 0:
            raise ValueError("learning rates must be non-negative")
        if self.crop_size < 1 or self.n_test_crops < 1 or self.batch_size < 1:
            raise ValueError("crop size, crop count and batch size must be positive")

    def learning_rate(self, base: float, epoch: int) -> float:
        """Step schedule; ``epoch`` counts from 0."""
        return base * self.lr_decay ** (epoch // self.decay_every)


def crop_window(shape, crop, rng):
    """Random ``(y, x, h, w)`` window; axes shorter than ``crop`` are taken whole."""
    h, w = shape[:2]
    ch, cw = min(crop, h), min(crop, w)
    y = int(rng.integers(0, h - ch + 1)) if h > ch else 0
    x = int(rng.integers(0, w - cw + 1)) if w > cw else 0
    return y, x, ch, cw


def apply_window(img, window):
    y, x, h, w = window
    return img[y:y + h, x:x + w]


class ImageCache:
    """LRU of decoded images keyed by path, bounded by total bytes."""

    def __init__(self, max_bytes=512 * 2**20):
        self.max_bytes = max_bytes
        self._data = OrderedDict()
        self._bytes = 0

    def get(self, item):
        if not isinstance(item, (str, os.PathLike)):
            return as_image(item)
        key = os.fspath(item)
        img = self._data.get(key)
        if img is None:
            img = load_image(key)
            self._data[key] = img
            self._bytes += img.nbytes
            while self._bytes > self.max_bytes and len(self._data) > 1:
                self._bytes -= self._data.popitem(last=False)[1].nbytes
        else:
            self._data.move_to_end(key)
        return img


class FeatureCache:
    """Memoises features of whole images (windows that cover the full image)."""

    def __init__(self, images: ImageCache | None = None):
        self.images = images or ImageCache()
        self._feats = {}

    def features(self, item, crop, rng=None, window=None):
        img = self.images.get(item)
        if window is None:
            window = crop_window(img.shape, crop, rng) if rng is not None else (
                0, 0, min(crop, img.shape[0]), min(crop, img.shape[1]))
        key = None
        if window[2] == img.shape[0] and window[3] == img.shape[1]:
            # arrays are keyed by identity; the stored reference keeps the id alive
            key = os.fspath(item) if isinstance(item, (str, os.PathLike)) else id(item)
            hit = self._feats.get(key)
            if hit is not None and (isinstance(key, str) or hit[0] is item):
                return hit[1]
        f = extract_features(apply_window(img, window))
        if key is not None:
            self._feats[key] = (item, f)
        return f


def group_features(group_items, crop, rng, cache: FeatureCache) -> np.ndarray:
    """Features of a six-entry group under one shared random crop window."""
    first = cache.images.get(group_items[0])
    window = crop_window(first.shape, crop, rng)
    out = []
    for item in group_items:
        img = cache.images.get(item)
        win = window
        if img.shape[:2] != first.shape[:2]:
            win = crop_window(img.shape, crop, rng)
        out.append(cache.features(item, crop, window=win))
    return np.stack(out)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    psi_r: float
    psi_b: float
    psi_w: float
    rank_acc: float
    lr: float = 0.0


@dataclass
class PretrainResult:
    model: ScorerModel
    history: list = field(default_factory=list)


def pretrain(model: ScorerModel, groups, y0c, loss_cfg: LossConfig, train_cfg: TrainConfig,
             epochs: int, start_epoch: int = 0, cache: FeatureCache | None = None,
             callback=None) -> PretrainResult:
    """List-wise rank learning: one SGD step per six-entry group.

    ``groups`` is a sequence of six items (images or paths, level 0 first) and
    ``y0c`` the canonical anchor score of each group. Each epoch visits the
    groups in an order shuffled by ``(seed, epoch)``, so a run resumed at
    ``start_epoch`` continues exactly as an uninterrupted one.
    """
    groups = list(groups)
    if not groups:
        raise ValueError("pretraining needs at least one group")
    y0c = np.asarray(y0c, dtype=np.float64)
    if len(y0c) != len(groups):
        raise ValueError("one anchor score per group is required")
    model = model.copy()
    cache = cache or FeatureCache()
    history = []
    for epoch in range(start_epoch, start_epoch + epochs):
        rng = np.random.default_rng([train_cfg.seed, epoch])
        lr = train_cfg.learning_rate(train_cfg.lr_pretrain, epoch)
        order = rng.permutation(len(groups))
        totals = np.zeros(4)
        accs = []
        for gi in order:
            X = group_features(groups[gi], train_cfg.crop_size, rng, cache)
            phi = forward(model, X)
            total, grad, parts = loss_batch(phi[None, :], y0c[gi], loss_cfg)
            totals += [total[0], parts["psi_r"][0], parts["psi_b"][0], parts["psi_w"][0]]
            accs.append(rank_accuracy(phi[None, :]))
            if lr > 0:
                step = backward(model, X, grad[0] / model.score_scale)
                model.set_flat(model.get_flat() - lr * step)
        totals /= len(groups)
        stats = EpochStats(epoch + 1, *totals, float(np.mean(accs)), lr)
        history.append(stats)
        if callback is not None:
            callback(model, stats)
    return PretrainResult(model, history)


def concordance(pred, truth) -> float:
    """Fraction of pairs with distinct targets whose predictions are ordered the same way."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    i, j = np.triu_indices(len(pred), k=1)
    dt = np.sign(truth[i] - truth[j])
    keep = dt != 0
    if not np.any(keep):
        return float("nan")
    return float(np.mean(np.sign(pred[i] - pred[j])[keep] == dt[keep]))


def finetune(model: ScorerModel, items, targets, train_cfg: TrainConfig, epochs: int,
             start_epoch: int = 0, cache: FeatureCache | None = None, callback=None):
    """Minimise mean absolute error on labelled items in batches of ``batch_size``.

    ``targets`` are canonical scores. Returns the tuned model and one
    :class:`EpochStats` per epoch; ``mean_loss`` is the epoch's mean absolute
    error and ``rank_acc`` the pairwise concordance of the pre-update
    predictions (the ``psi_*`` fields are NaN).
    """
    items = list(items)
    if not items:
        raise ValueError("fine-tuning needs a non-empty labelled set")
    targets = np.asarray(targets, dtype=np.float64)
    if len(targets) != len(items):
        raise ValueError("one target per item is required")
    model = model.copy()
    cache = cache or FeatureCache()
    history = []
    nan = float("nan")
    for epoch in range(start_epoch, start_epoch + epochs):
        rng = np.random.default_rng([train_cfg.seed, 1_000_003, epoch])
        lr = train_cfg.learning_rate(train_cfg.lr_finetune, epoch)
        order = rng.permutation(len(items))
        epoch_loss = 0.0
        seen = np.empty(len(items))
        for start in range(0, len(items), train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            X = np.stack([cache.features(items[i], train_cfg.crop_size, rng) for i in idx])
            pred = forward(model, X)
            seen[idx] = pred
            loss, grad = finetune_loss(pred, targets[idx])
            epoch_loss += loss * len(idx)
            if lr > 0:
                step = backward(model, X, grad / model.score_scale)
                model.set_flat(model.get_flat() - lr * step)
        stats = EpochStats(epoch + 1, epoch_loss / len(items), nan, nan, nan,
                           concordance(seen, targets), lr)
        history.append(stats)
        if callback is not None:
            callback(model, stats)
    return model, history


def predict(model: ScorerModel, img, crop: int = 224, n_crops: int = 60, seed: int = 0) -> float:
    """Mean score over ``n_crops`` random windows (a single pass if the image fits one window)."""
    img = as_image(img)
    if img.shape[0] <= crop and img.shape[1] <= crop:
        return forward(model, extract_features(img))
    rng = np.random.default_rng(seed)
    X = np.stack([extract_features(apply_window(img, crop_window(img.shape, crop, rng)))
                  for _ in range(n_crops)])
    return float(np.mean(forward(model, X)))


# --- checkpoints ------------------------------------------------------------

CHECKPOINT_MAGIC = b"IQRKCKPT"
CHECKPOINT_VERSION = 1
HPARAM_NAMES = (
    "lr_pretrain", "lr_finetune", "lr_decay", "decay_every", "crop_size", "n_test_crops",
    "batch_size", "train_fraction", "seed", "lambda_r", "lambda_b", "lambda_w", "tau_w",
    "tau_b", "K", "score_lo", "score_hi", "orientation_mos", "epochs_pretrain",
    "epochs_finetune",
)
_HEADER = struct.Struct("<8sIIII")


class CheckpointError(ValueError):
    """The checkpoint is truncated, corrupt or of an unknown version."""


def save_checkpoint(path, model: ScorerModel, hparams: dict) -> None:
    """Write header, flat parameters and hyper-parameters as little-endian float64."""
    h, d = model.W1.shape
    values = np.concatenate([
        model.feature_mean, model.feature_scale, model.get_flat(),
        [model.score_offset, model.score_scale],
        [float(hparams.get(name, 0.0)) for name in HPARAM_NAMES],
    ]).astype("<f8")
    body = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, d, h, len(HPARAM_NAMES))
    body += values.tobytes()
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path) -> tuple[ScorerModel, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size + 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    magic, version, d, h, n_hp = _HEADER.unpack_from(body)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an iqarank checkpoint")
    if version != CHECKPOINT_VERSION or n_hp != len(HPARAM_NAMES):
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    values = np.frombuffer(body[_HEADER.size:], dtype="<f8").astype(np.float64)
    n_params = h * d + 2 * h + 1
    if values.size != 2 * d + n_params + 2 + n_hp:
        raise CheckpointError(f"{path}: parameter count does not match header")
    model = ScorerModel(np.zeros((h, d)), np.zeros(h), np.zeros(h),
                        feature_mean=values[:d].copy(), feature_scale=values[d:2 * d].copy())
    model.set_flat(values[2 * d:2 * d + n_params])
    model.score_offset, model.score_scale = (float(v) for v in values[2 * d + n_params:
                                                                     2 * d + n_params + 2])
    hp = dict(zip(HPARAM_NAMES, (float(v) for v in values[-n_hp:])))
    return model, hp


# --- estimator API ----------------------------------------------------------

class QualityFeatures(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping images (arrays or paths) to feature rows."""

    def fit(self, X, y=None):
        self.n_features_out_ = N_FEATURES
        return self

    def transform(self, X):
        cache = ImageCache()
        return np.stack([extract_features(cache.get(item)) for item in X])

    def get_feature_names_out(self, input_features=None):
        return np.asarray(FEATURE_NAMES, dtype=object)


class ListwiseRankScorer(RegressorMixin, BaseEstimator):
    """No-reference quality regressor pre-trained by list-wise ranking.

    ``pretrain`` learns from ranked groups (original plus five degraded
    versions and the original's score); ``fit`` fine-tunes on labelled images;
    ``predict`` averages the scores of ``n_test_crops`` random crops.
    Scores passed in and returned are in the dataset's own orientation.

    Parameters
    ----------
    orientation : {"MOS", "DMOS"}
        Whether higher labels mean better (MOS) or worse (DMOS) quality.
    score_range : tuple of float
        ``(lo, hi)`` of the dataset scale.
    hidden : int
        Width of the hidden layer.
    lr_pretrain, lr_finetune : float
        Initial SGD learning rates, multiplied by ``lr_decay`` every
        ``decay_every`` epochs.
    """

    def __init__(self, orientation="DMOS", score_range=(0.0, 100.0), hidden=16,
                 lr_pretrain=1e-4, lr_finetune=1e-5, lr_decay=0.1, decay_every=10,
                 pretrain_epochs=50, finetune_epochs=30, batch_size=32, crop_size=224,
                 n_test_crops=60, lambda_r=1.0, lambda_b=1.0, lambda_w=1.0, K=5,
                 random_state=0):
        self.orientation = orientation
        self.score_range = score_range
        self.hidden = hidden
        self.lr_pretrain = lr_pretrain
        self.lr_finetune = lr_finetune
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.pretrain_epochs = pretrain_epochs
        self.finetune_epochs = finetune_epochs
        self.batch_size = batch_size
        self.crop_size = crop_size
        self.n_test_crops = n_test_crops
        self.lambda_r = lambda_r
        self.lambda_b = lambda_b
        self.lambda_w = lambda_w
        self.K = K
        self.random_state = random_state

    # configuration helpers
    def _scale(self):
        return ScoreScale(self.orientation, float(self.score_range[0]), float(self.score_range[1]))

    def _train_config(self):
        return TrainConfig(self.lr_pretrain, self.lr_finetune, self.lr_decay, self.decay_every,
                           self.crop_size, self.n_test_crops, batch_size=self.batch_size,
                           seed=self.random_state)

    def _loss_config(self):
        return LossConfig.for_scale(self._scale(), lambda_r=self.lambda_r,
                                    lambda_b=self.lambda_b, lambda_w=self.lambda_w, K=self.K)

    def _canon(self, y):
        s = self._scale()
        return canonicalize(y, s.orientation, s.lo, s.hi)

    def _init_model(self, feature_rows):
        s = self._scale()
        model = ScorerModel.init(N_FEATURES, self.hidden, self.random_state,
                                 score_offset=s.lo, score_scale=s.span)
        model.set_standardization(feature_rows)
        return model

    def _ensure_model(self, feature_rows):
        if not hasattr(self, "model_"):
            self.model_ = self._init_model(feature_rows)
            self.pretrain_history_ = []
            self.finetune_history_ = []
            self.n_features_in_ = N_FEATURES
        return self.model_

    def pretrain(self, groups, y0, epochs=None, callback=None):
        """Rank-learn from ``groups`` (sequences of six images or paths) and anchors ``y0``.

        ``callback(model, stats)`` runs after every epoch.
        """
        groups = [list(g) for g in groups]
        for g in groups:
            if len(g) != self.K + 1:
                raise ValueError(f"each group needs {self.K + 1} entries")
        cfg = self._train_config()
        cache = FeatureCache()
        if not hasattr(self, "model_"):
            rng = np.random.default_rng([cfg.seed, 7])
            sample = rng.permutation(len(groups))[:256]
            self._ensure_model(np.concatenate([
                group_features(groups[i], cfg.crop_size, rng, cache) for i in sample]))
        start = len(self.pretrain_history_)
        result = pretrain(self.model_, groups, self._canon(np.asarray(y0, dtype=np.float64)),
                          self._loss_config(), cfg,
                          self.pretrain_epochs if epochs is None else epochs,
                          start_epoch=start, cache=cache, callback=callback)
        self.model_ = result.model
        self.pretrain_history_ = self.pretrain_history_ + result.history
        return self

    def fit(self, X, y, epochs=None, callback=None):
        """Fine-tune on labelled images ``X`` with scores ``y``."""
        X = list(X)
        y = np.asarray(y, dtype=np.float64)
        cfg = self._train_config()
        cache = FeatureCache()
        if not hasattr(self, "model_"):
            rng = np.random.default_rng([cfg.seed, 11])
            rows = np.stack([cache.features(item, cfg.crop_size, rng) for item in X])
            self._ensure_model(rows)
        start = len(self.finetune_history_)
        self.model_, history = finetune(self.model_, X, self._canon(y), cfg,
                                        self.finetune_epochs if epochs is None else epochs,
                                        start_epoch=start, cache=cache, callback=callback)
        self.finetune_history_ = self.finetune_history_ + history
        return self

    def predict_canonical(self, X):
        check_is_fitted(self, "model_")
        images = ImageCache()
        return np.array([predict(self.model_, images.get(item), self.crop_size,
                                 self.n_test_crops, seed=self.random_state) for item in X])

    def predict(self, X):
        s = self._scale()
        return np.asarray(uncanonicalize(self.predict_canonical(X), s.orientation, s.lo, s.hi),
                          dtype=np.float64).reshape(-1)

    def hyperparameters(self, **epochs) -> dict:
        """Checkpoint hyper-parameters; ``epochs_pretrain``/``epochs_finetune`` may be overridden."""
        s = self._scale()
        return {
            "lr_pretrain": self.lr_pretrain, "lr_finetune": self.lr_finetune,
            "lr_decay": self.lr_decay, "decay_every": self.decay_every,
            "crop_size": self.crop_size, "n_test_crops": self.n_test_crops,
            "batch_size": self.batch_size, "train_fraction": 0.8,
            "seed": self.random_state, "lambda_r": self.lambda_r, "lambda_b": self.lambda_b,
            "lambda_w": self.lambda_w, "tau_w": s.hi, "tau_b": s.lo, "K": self.K,
            "score_lo": s.lo, "score_hi": s.hi,
            "orientation_mos": 1.0 if s.orientation == "MOS" else 0.0,
            "epochs_pretrain": len(getattr(self, "pretrain_history_", [])),
            "epochs_finetune": len(getattr(self, "finetune_history_", [])),
        } | epochs

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_, self.hyperparameters())

    @classmethod
    def load(cls, path) -> "ListwiseRankScorer":
        model, hp = load_checkpoint(path)
        est = cls(
            orientation="MOS" if hp["orientation_mos"] else "DMOS",
            score_range=(hp["score_lo"], hp["score_hi"]), hidden=model.hidden,
            lr_pretrain=hp["lr_pretrain"], lr_finetune=hp["lr_finetune"],
            lr_decay=hp["lr_decay"], decay_every=int(hp["decay_every"]),
            batch_size=int(hp["batch_size"]), crop_size=int(hp["crop_size"]),
            n_test_crops=int(hp["n_test_crops"]), lambda_r=hp["lambda_r"],
            lambda_b=hp["lambda_b"], lambda_w=hp["lambda_w"], K=int(hp["K"]),
            random_state=int(hp["seed"]),
        )
        est.model_ = model
        est.n_features_in_ = model.n_features
        # placeholders keep resumed epoch counters (and the lr schedule) aligned
        est.pretrain_history_ = [None] * int(hp["epochs_pretrain"])
        est.finetune_history_ = [None] * int(hp["epochs_finetune"])
        return est
