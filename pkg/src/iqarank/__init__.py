"""Ranked image-quality dataset synthesis and list-wise rank training.

Public names are imported lazily so that lightweight entry points (such as the
JPEG2000 hook) start without loading scipy and scikit-learn.
"""
from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "datasets": ("SCALES", "ScoreScale", "read_score_file", "write_score_file"),
    "distort": ("DistortionSpec", "Distorter", "EncoderUnavailableError", "apply_distortion",
                "resolve"),
    "exposure": ("ExposureParams", "overexpose", "underexpose"),
    "imgcore": ("ImageError", "extract_luma", "load_image", "psnr", "replace_luma",
                "save_image"),
    "metrics": ("UndefinedCorrelationError", "plcc", "srocc"),
    "rankloss": ("LossConfig", "canonicalize", "finetune_loss", "loss_total"),
    "scorer": ("CheckpointError", "ListwiseRankScorer", "QualityFeatures"),
    "synth": ("Manifest", "RankedGroup", "extend_authentic", "extend_synthetic"),
}
_WHERE = {name: module for module, names in _EXPORTS.items() for name in names}

__all__ = sorted(_WHERE)


def __getattr__(name):
    try:
        module = _WHERE[name]
    except KeyError:
        raise AttributeError(f"module 'iqarank' has no attribute {name!r}") from None
    value = getattr(import_module(f"iqarank.{module}"), name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(list(globals()) + __all__)
