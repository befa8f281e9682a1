"""Command line interface: ``iqarank extend|pretrain|finetune|evaluate``.

Every flag can also be set through an environment variable named
``IQARANK_<COMMAND>_<FLAG>``, e.g. ``IQARANK_EXTEND_SEED=7``. All randomness
derives from ``--seed`` through the named sub-streams ``extend``, ``train``
and ``eval``. Commands write only below ``--out``.
"""
from __future__ import annotations

import csv
import logging
import math
import os

import click
import numpy as np

from iqarank.datasets import SCALES, ScoreFileError, ScoreScale, read_score_file
from iqarank.metrics import UndefinedCorrelationError, plcc, srocc
from iqarank.scorer import (
    CheckpointError, ListwiseRankScorer, save_checkpoint,
)
from iqarank.synth import (
    AUTHENTIC_DATASET, Manifest, extend_authentic, extend_synthetic, source_seed,
)

log = logging.getLogger("iqarank")

HISTORY_FIELDS = ("epoch", "mean_loss", "psi_r", "psi_b", "psi_w", "rank_acc")
PREDICTION_FIELDS = ("path", "score", "prediction")
SUMMARY_FIELDS = ("split", "n", "srocc", "plcc")
CHECKPOINT_NAME = "model.ckpt"
TRAIN_FRACTION = 0.8
EXIT_BAD_CHECKPOINT = 3


class BadCheckpoint(click.ClickException):
    exit_code = EXIT_BAD_CHECKPOINT


def substream(seed: int, name: str) -> int:
    """32-bit seed of the named sub-stream of ``seed`` (exact in a float64 checkpoint)."""
    return source_seed(seed, name) & 0xFFFFFFFF


def split_indices(n: int, seed: int, index: int, fraction: float = TRAIN_FRACTION):
    """Sorted train and test indices of random split ``index``."""
    perm = np.random.default_rng([substream(seed, "eval"), index]).permutation(n)
    n_train = min(n - 1, max(1, int(round(fraction * n))))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _fmt(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else f"{x:.10g}"


def _load_labels(root, scores, limit):
    """Parse the score file and check every referenced image exists."""
    try:
        scale, rows = read_score_file(scores)
    except (OSError, ScoreFileError, UnicodeDecodeError) as exc:
        raise click.BadParameter(str(exc), param_hint="--scores") from None
    if limit is not None:
        rows = rows[:limit]
    if not rows:
        raise click.BadParameter("score file lists no images", param_hint="--scores")
    paths = [os.path.join(root, p) for p, _ in rows]
    missing = [p for p in paths if not os.path.isfile(p)]
    if missing:
        more = f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""
        raise click.BadParameter(f"image not found: {missing[0]}{more}", param_hint="--in")
    return scale, paths, np.array([s for _, s in rows], dtype=np.float64)


def _load_estimator(path) -> ListwiseRankScorer:
    try:
        return ListwiseRankScorer.load(path)
    except CheckpointError as exc:
        raise BadCheckpoint(f"corrupt checkpoint: {exc}") from None


class _HistoryWriter:
    """Per-epoch CSV rows plus a checkpoint after every epoch."""

    def __init__(self, out, csv_name, est, epoch_key, append):
        self.csv_path = os.path.join(out, csv_name)
        self.ckpt_path = os.path.join(out, CHECKPOINT_NAME)
        self.est = est
        self.epoch_key = epoch_key
        if not (append and os.path.exists(self.csv_path)):
            with open(self.csv_path, "w", newline="", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerow(HISTORY_FIELDS)

    def __call__(self, model, stats):
        with open(self.csv_path, "a", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerow(
                [stats.epoch] + [_fmt(getattr(stats, f)) for f in HISTORY_FIELDS[1:]])
        save_checkpoint(self.ckpt_path, model,
                        self.est.hyperparameters(**{self.epoch_key: stats.epoch}))
        click.echo(f"epoch {stats.epoch} loss={stats.mean_loss:.6g} "
                   f"rank_acc={_fmt(stats.rank_acc) or 'nan'}")


# --- commands ---------------------------------------------------------------

_dir_in = click.Path(exists=True, file_okay=False)
_file_in = click.Path(exists=True, dir_okay=False)


@click.group(context_settings={"auto_envvar_prefix": "IQARANK", "show_default": True})
@click.option("-v", "--verbose", is_flag=True, help="Log progress at INFO level.")
def main(verbose):
    """Ranked image-quality dataset synthesis and list-wise rank training."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--dataset", required=True, type=click.Choice(sorted(SCALES)))
@click.option("--in", "root", required=True, type=_dir_in, help="Dataset root.")
@click.option("--scores", required=True, type=_file_in, help="Score file (paths relative to --in).")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, type=int)
@click.option("--jobs", default=os.cpu_count() or 1, type=click.IntRange(min=1))
@click.option("--limit", default=None, type=click.IntRange(min=1), help="Use the first N sources.")
@click.option("--jp2k-encoder", default=None, type=click.Path(),
              help="External JPEG2000 encoder (IN.png OUT.png RATIO).")
def extend(dataset, root, scores, out, seed, jobs, limit, jp2k_encoder):
    """Write ranked groups for every labelled source image."""
    scale, paths, y = _load_labels(root, scores, limit)
    if scale != SCALES[dataset]:
        log.warning("score file declares %s %g..%g; the %s convention is %s %g..%g",
                    scale.orientation, scale.lo, scale.hi, dataset,
                    SCALES[dataset].orientation, SCALES[dataset].lo, SCALES[dataset].hi)
    sources = list(zip(paths, y.tolist()))
    seed = substream(seed, "extend")
    if dataset == AUTHENTIC_DATASET:
        manifest = extend_authentic(sources, out, seed, scale, dataset, n_jobs=jobs)
    else:
        manifest = extend_synthetic(dataset, sources, out, seed, scale, jp2k_encoder, n_jobs=jobs)
    manifest.write(out)
    click.echo(f"sources={len(sources) - len(manifest.errors)} groups={len(manifest)} "
               f"images={manifest.n_images} skipped_jp2k={len(manifest.skipped)} "
               f"errors={len(manifest.errors)}")


def _train_options(lr_default, epochs_default):
    def wrap(fn):
        for opt in reversed([
            click.option("--out", required=True, type=click.Path(file_okay=False)),
            click.option("--seed", default=0, type=int),
            click.option("--lr", default=lr_default, type=click.FloatRange(min=0)),
            click.option("--epochs", default=epochs_default, type=click.IntRange(min=1)),
            click.option("--crop-size", default=224, type=click.IntRange(min=8)),
            click.option("--hidden", default=16, type=click.IntRange(min=1)),
        ]):
            fn = opt(fn)
        return fn
    return wrap


@main.command()
@click.option("--in", "manifest_dir", required=True, type=_dir_in,
              help="Directory holding manifest.csv and manifest.json.")
@click.option("--resume", default=None, type=_file_in, help="Continue from this checkpoint.")
@_train_options(1e-4, 50)
def pretrain(manifest_dir, resume, out, seed, lr, epochs, crop_size, hidden):
    """Rank-learn a scorer from an extended manifest."""
    try:
        manifest = Manifest.read(manifest_dir)
    except (OSError, ValueError, KeyError) as exc:
        raise click.BadParameter(f"unreadable manifest: {exc}", param_hint="--in") from None
    if not manifest.groups:
        raise click.BadParameter("manifest has no groups", param_hint="--in")
    groups = [[manifest.resolve(p) for p in g.paths] for g in manifest.groups]
    missing = [p for g in groups for p in g if not os.path.isfile(p)]
    if missing:
        raise click.BadParameter(f"image not found: {missing[0]}", param_hint="--in")
    if resume:
        est = _load_estimator(resume)
        est.set_params(lr_pretrain=lr, random_state=substream(seed, "train"))
    else:
        s = manifest.scale
        est = ListwiseRankScorer(orientation=s.orientation, score_range=(s.lo, s.hi),
                                 hidden=hidden, lr_pretrain=lr, crop_size=crop_size,
                                 random_state=substream(seed, "train"))
    os.makedirs(out, exist_ok=True)
    writer = _HistoryWriter(out, "pretrain.csv", est, "epochs_pretrain", append=bool(resume))
    est.pretrain(groups, [g.y0 for g in manifest.groups], epochs=epochs, callback=writer)
    est.save(writer.ckpt_path)


@main.command()
@click.option("--in", "root", required=True, type=_dir_in, help="Dataset root.")
@click.option("--scores", required=True, type=_file_in)
@click.option("--checkpoint", default=None, type=_file_in,
              help="Pre-trained (or partially fine-tuned) checkpoint to start from.")
@click.option("--limit", default=None, type=click.IntRange(min=1))
@click.option("--batch-size", default=32, type=click.IntRange(min=1))
@_train_options(1e-5, 30)
def finetune(root, scores, checkpoint, limit, batch_size, out, seed, lr, epochs, crop_size,
             hidden):
    """Fine-tune on the training part (80%) of split 0 of a labelled set."""
    scale, paths, y = _load_labels(root, scores, limit)
    if len(paths) < 2:
        raise click.BadParameter("need at least two labelled images", param_hint="--scores")
    if checkpoint:
        est = _load_estimator(checkpoint)
        ckpt_scale = ScoreScale(est.orientation, *est.score_range)
        if ckpt_scale != scale:
            raise click.BadParameter(
                f"checkpoint scale {ckpt_scale} does not match score file {scale}",
                param_hint="--scores")
        est.set_params(lr_finetune=lr, batch_size=batch_size,
                       random_state=substream(seed, "train"))
    else:
        est = ListwiseRankScorer(orientation=scale.orientation, score_range=(scale.lo, scale.hi),
                                 hidden=hidden, lr_finetune=lr, batch_size=batch_size,
                                 crop_size=crop_size, random_state=substream(seed, "train"))
    train, _ = split_indices(len(paths), seed, 0)
    os.makedirs(out, exist_ok=True)
    resumed = len(getattr(est, "finetune_history_", [])) > 0
    writer = _HistoryWriter(out, "finetune.csv", est, "epochs_finetune", append=resumed)
    est.fit([paths[i] for i in train], y[train], epochs=epochs, callback=writer)
    est.save(writer.ckpt_path)


def _summary_rows(paths, y, pred, seed, splits):
    if splits == 0:
        return [("all", len(y), srocc(pred, y), plcc(pred, y))]
    rows = []
    for r in range(splits):
        _, test = split_indices(len(paths), seed, r)
        rows.append((str(r), len(test), srocc(pred[test], y[test]), plcc(pred[test], y[test])))
    rows.append(("median", int(np.median([r[1] for r in rows])),
                 float(np.median([r[2] for r in rows])), float(np.median([r[3] for r in rows]))))
    return rows


@main.command()
@click.option("--in", "root", default=".", type=_dir_in, help="Dataset root.")
@click.option("--scores", default=None, type=_file_in)
@click.option("--checkpoint", default=None, type=_file_in)
@click.option("--predictions", default=None, type=_file_in,
              help="Score an existing predictions CSV (path,score,prediction) instead.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, type=int)
@click.option("--limit", default=None, type=click.IntRange(min=1))
@click.option("--splits", default=1, type=click.IntRange(min=0),
              help="Number of random 80/20 splits (test parts are scored); 0 scores every image.")
def evaluate(root, scores, checkpoint, predictions, out, seed, limit, splits):
    """Predict a labelled set and report SROCC and PLCC."""
    if predictions:
        try:
            with open(predictions, newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
            paths = [r["path"] for r in rows]
            y = np.array([float(r["score"]) for r in rows])
            pred = np.array([float(r["prediction"]) for r in rows])
        except (KeyError, ValueError, TypeError) as exc:
            raise click.BadParameter(f"malformed predictions file: {exc}",
                                     param_hint="--predictions") from None
        if limit is not None:
            paths, y, pred = paths[:limit], y[:limit], pred[:limit]
    else:
        if not (checkpoint and scores):
            raise click.UsageError("give --checkpoint and --scores, or --predictions")
        _, paths, y = _load_labels(root, scores, limit)
        est = _load_estimator(checkpoint)
        est.set_params(random_state=substream(seed, "eval"))
        pred = est.predict(paths)
        paths = [os.path.relpath(p, root) for p in paths]
    if splits and len(paths) < 2:
        raise click.BadParameter("splitting needs at least two images", param_hint="--splits")
    try:
        summary = _summary_rows(paths, y, pred, seed, splits)
    except UndefinedCorrelationError as exc:
        raise click.ClickException(f"correlation undefined: {exc}") from None

    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "predictions.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_FIELDS)
        w.writerows([p, _fmt(s), _fmt(q)] for p, s, q in zip(paths, y, pred))
    with open(os.path.join(out, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        w.writerows([name, n, _fmt(a), _fmt(b)] for name, n, a, b in summary)
    for name, n, a, b in summary:
        click.echo(f"split={name} n={n} srocc={a:.4f} plcc={b:.4f}")


if __name__ == "__main__":  # pragma: no cover
    main()
