"""Ranked dataset extension: authentic-distortion simulation and synthetic levels.

Every source image yields groups of six entries (the original as level 0 and
five increasingly degraded versions). Groups are written to a manifest made of
``manifest.csv`` (one row per group entry) and ``manifest.json`` (metadata).
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from iqarank import jpeg
from iqarank.datasets import SCALES, ScoreScale
from iqarank.distort import (
    DATASET_KINDS, N_LEVELS, EncoderUnavailableError, apply_distortion, find_jp2k_encoder,
    resolve, table_values,
)
from iqarank.exposure import DEFAULT_PARAMS, VARIANTS, exposure_variants
from iqarank.imgcore import ImageError, as_image, load_image, save_image

log = logging.getLogger(__name__)

FUSION_OPERATORS = ("MB", "GB", "CA", "CTD")
# non-empty subsets ordered by size, then lexicographically by operator index
OMEGA = tuple(
    subset
    for r in range(1, len(FUSION_OPERATORS) + 1)
    for subset in itertools.combinations(FUSION_OPERATORS, r)
)
AUTHENTIC_DATASET = "livec"
MANIFEST_FIELDS = ("group_id", "dataset", "source_path", "y0", "orientation", "variant",
                   "omega_index", "c_tag", "level", "image_path")


def omega_fuse(images) -> np.ndarray:
    """Pixel-wise mean of the operator outputs of one subset."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise ValueError("fusion needs at least one image")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise ImageError("fusion inputs must share dimensions")
    return np.mean(np.stack(images), axis=0)


def source_seed(seed: int, source_id: str, *extra: str) -> int:
    """Stable per-source seed, independent of processing order."""
    words = [int(seed) & 0xFFFFFFFF, zlib.crc32(source_id.encode("utf-8"))]
    words += [zlib.crc32(e.encode("utf-8")) for e in extra]
    return int(np.random.SeedSequence(words).generate_state(2, np.uint64)[0] >> np.uint64(1))


@dataclass
class AuthenticSample:
    variant: str
    omega_index: int  # 1..15, position in OMEGA
    level: int
    c_tag: int
    image: np.ndarray
    jpeg_bytes: bytes | None = None


def iter_authentic(img, seed: int, K: int = N_LEVELS, params=DEFAULT_PARAMS):
    """Yield the 3 x 15 x K simulated authentic distortions of ``img``.

    One Bernoulli(1/2) draw per source decides whether every output is JPEG
    compressed at the level's quality.
    """
    img = as_image(img)
    rng = np.random.default_rng(seed)
    c_tag = int(rng.integers(0, 2))
    op_seed = int(rng.integers(0, 2 ** 63 - 1))
    for k in range(1, K + 1):
        specs = {op: resolve(AUTHENTIC_DATASET, op, k, op_seed) for op in FUSION_OPERATORS}
        quality = table_values(AUTHENTIC_DATASET, "JP")[k - 1]
        for variant, t1 in zip(VARIANTS, exposure_variants(img, k, params)):
            outputs = {op: apply_distortion(t1, spec) for op, spec in specs.items()}
            for i, subset in enumerate(OMEGA, start=1):
                t2 = omega_fuse([outputs[op] for op in subset])
                if c_tag:
                    data = jpeg.encode(t2, quality)
                    yield AuthenticSample(variant, i, k, c_tag, jpeg.decode(data), data)
                else:
                    yield AuthenticSample(variant, i, k, c_tag, np.clip(t2, 0.0, 1.0))


def simulate_authentic(img, seed: int, K: int = N_LEVELS, params=DEFAULT_PARAMS):
    """List form of :func:`iter_authentic` (3 * 15 * K samples)."""
    return list(iter_authentic(img, seed, K, params))


# --- manifest ---------------------------------------------------------------

@dataclass
class RankedGroup:
    group_id: str
    dataset: str
    source_path: str
    y0: float
    orientation: str
    variant: str
    omega_index: int
    c_tag: int
    paths: list  # index = level, 0 is the original

    def rows(self):
        for level, path in enumerate(self.paths):
            yield {
                "group_id": self.group_id, "dataset": self.dataset,
                "source_path": self.source_path, "y0": f"{self.y0:.6g}",
                "orientation": self.orientation, "variant": self.variant,
                "omega_index": str(self.omega_index), "c_tag": str(self.c_tag),
                "level": str(level), "image_path": path,
            }


@dataclass
class Manifest:
    dataset: str
    scale: ScoreScale
    seed: int
    groups: list = field(default_factory=list)
    root: str = "."
    # run statistics, not serialised
    n_images: int = 0
    skipped: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def orientation(self) -> str:
        return self.scale.orientation

    def __len__(self):
        return len(self.groups)

    def n_rows(self) -> int:
        return sum(len(g.paths) for g in self.groups)

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.root, path))

    def write(self, directory) -> str:
        os.makedirs(directory, exist_ok=True)
        meta = {
            "dataset": self.dataset, "orientation": self.scale.orientation,
            "score_range": [self.scale.lo, self.scale.hi], "seed": self.seed,
            "fields": list(MANIFEST_FIELDS), "groups": len(self.groups),
        }
        with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        path = os.path.join(directory, "manifest.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
            w.writeheader()
            for g in self.groups:
                w.writerows(g.rows())
        return path

    @classmethod
    def read(cls, directory) -> "Manifest":
        with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
            meta = json.load(fh)
        lo, hi = meta["score_range"]
        manifest = cls(meta["dataset"], ScoreScale(meta["orientation"], lo, hi), meta["seed"],
                       root=os.fspath(directory))
        groups = {}
        with open(os.path.join(directory, "manifest.csv"), newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
                raise ValueError(f"unexpected manifest columns {reader.fieldnames}")
            for r in reader:
                g = groups.get(r["group_id"])
                if g is None:
                    g = groups[r["group_id"]] = RankedGroup(
                        r["group_id"], r["dataset"], r["source_path"], float(r["y0"]),
                        r["orientation"], r["variant"], int(r["omega_index"]), int(r["c_tag"]), {})
                g.paths[int(r["level"])] = r["image_path"]
        for g in groups.values():
            if sorted(g.paths) != list(range(N_LEVELS + 1)):
                raise ValueError(f"group {g.group_id} does not have levels 0..{N_LEVELS}")
            g.paths = [g.paths[i] for i in range(N_LEVELS + 1)]
        manifest.groups = list(groups.values())
        return manifest


# --- extension pipelines ----------------------------------------------------

def _unique_stems(paths):
    seen = {}
    stems = []
    for p in paths:
        stem = os.path.splitext(os.path.basename(p))[0]
        n = seen.get(stem, 0)
        seen[stem] = n + 1
        stems.append(stem if n == 0 else f"{stem}-{n}")
    return stems


def _write(out_dir, name, sample_image, jpeg_bytes=None):
    if jpeg_bytes is not None:
        path = os.path.join(out_dir, name + ".jpg")
        with open(path, "wb") as fh:
            fh.write(jpeg_bytes)
    else:
        path = os.path.join(out_dir, name + ".png")
        save_image(sample_image, path)
    return path


def _authentic_job(job):
    src, stem, seed, out_dir = job
    img = load_image(src)
    dest = os.path.join(out_dir, stem)
    os.makedirs(dest, exist_ok=True)
    written = {}
    for s in iter_authentic(img, source_seed(seed, stem)):
        path = _write(dest, f"{s.variant}_{s.omega_index:02d}_{s.level}", s.image, s.jpeg_bytes)
        written[(s.variant, s.omega_index, s.level)] = (os.path.relpath(path, out_dir), s.c_tag)
    return written


def _synthetic_job(job):
    src, stem, seed, out_dir, dataset, encoder = job
    img = load_image(src)
    dest = os.path.join(out_dir, stem)
    os.makedirs(dest, exist_ok=True)
    written, skipped = {}, []
    for kind in DATASET_KINDS[dataset]:
        if kind == "JP2K" and find_jp2k_encoder(encoder) is None:
            skipped.append(f"{stem}/JP2K: encoder unavailable")
            continue
        kind_seed = source_seed(seed, stem, kind)
        paths = []
        try:
            for k in range(1, N_LEVELS + 1):
                spec = resolve(dataset, kind, k, kind_seed)
                if kind == "JP":
                    data = jpeg.encode(img, spec.params["quality"])
                    path = _write(dest, f"{kind}_{k}", None, data)
                else:
                    path = _write(dest, f"{kind}_{k}", apply_distortion(img, spec, encoder))
                paths.append(os.path.relpath(path, out_dir))
        except EncoderUnavailableError as exc:
            skipped.append(f"{stem}/{kind}: {exc}")
            continue
        written[kind] = paths
    return written, skipped


def _run(fn, jobs, n_jobs):
    """Apply ``fn`` to every job; failures come back as exceptions, in order."""
    out = []
    if n_jobs is None or n_jobs <= 1 or len(jobs) <= 1:
        for j in jobs:
            try:
                out.append(fn(j))
            except Exception as exc:  # per-source failure is reported, not fatal
                out.append(exc)
        return out
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        for f in [pool.submit(fn, j) for j in jobs]:
            try:
                out.append(f.result())
            except Exception as exc:
                out.append(exc)
    return out


def _check_sources(sources, scale):
    for path, score in sources:
        if not scale.contains(score):
            raise ValueError(f"score {score} for {path} outside [{scale.lo}, {scale.hi}]")


def extend_authentic(sources, out_dir, seed: int = 0, scale: ScoreScale | None = None,
                     dataset: str = AUTHENTIC_DATASET, n_jobs: int = 1) -> Manifest:
    """Simulate authentic distortions for every ``(path, score)`` in ``sources``.

    Writes ``<out>/<stem>/<variant>_<omega>_<k>.png`` (``.jpg`` when the source
    drew JPEG compression) and returns the manifest of 45 groups per source.
    """
    scale = scale or SCALES[dataset]
    sources = list(sources)
    _check_sources(sources, scale)
    os.makedirs(out_dir, exist_ok=True)
    stems = _unique_stems([p for p, _ in sources])
    jobs = [(os.path.abspath(p), stem, seed, os.path.abspath(out_dir))
            for (p, _), stem in zip(sources, stems)]
    manifest = Manifest(dataset, scale, seed, root=os.fspath(out_dir))
    for (src, score), stem, result in zip(sources, stems, _run(_authentic_job, jobs, n_jobs)):
        if isinstance(result, Exception):
            log.error("skipping %s: %s", src, result)
            manifest.errors.append(f"{src}: {result}")
            continue
        src_rel = os.path.relpath(os.path.abspath(src), os.path.abspath(out_dir))
        for variant in VARIANTS:
            for i in range(1, len(OMEGA) + 1):
                entries = [result[(variant, i, k)] for k in range(1, N_LEVELS + 1)]
                manifest.groups.append(RankedGroup(
                    f"{stem}/{variant}_{i:02d}", dataset, src_rel, score, scale.orientation,
                    variant, i, entries[0][1], [src_rel] + [p for p, _ in entries]))
        manifest.n_images += len(result)
    return manifest


def extend_synthetic(dataset: str, sources, out_dir, seed: int = 0,
                     scale: ScoreScale | None = None, jp2k_encoder=None,
                     n_jobs: int = 1) -> Manifest:
    """Generate the five tabulated levels of every distortion kind of ``dataset``.

    JPEG2000 groups are skipped with a warning when no encoder hook is found.
    """
    if dataset not in DATASET_KINDS or dataset == AUTHENTIC_DATASET:
        raise ValueError(f"no synthetic distortion table for dataset {dataset!r}")
    scale = scale or SCALES[dataset]
    sources = list(sources)
    _check_sources(sources, scale)
    os.makedirs(out_dir, exist_ok=True)
    stems = _unique_stems([p for p, _ in sources])
    jobs = [(os.path.abspath(p), stem, seed, os.path.abspath(out_dir), dataset, jp2k_encoder)
            for (p, _), stem in zip(sources, stems)]
    manifest = Manifest(dataset, scale, seed, root=os.fspath(out_dir))
    for (src, score), stem, result in zip(sources, stems, _run(_synthetic_job, jobs, n_jobs)):
        if isinstance(result, Exception):
            log.error("skipping %s: %s", src, result)
            manifest.errors.append(f"{src}: {result}")
            continue
        written, skipped = result
        for msg in skipped:
            log.warning("skipped %s", msg)
        manifest.skipped.extend(skipped)
        src_rel = os.path.relpath(os.path.abspath(src), os.path.abspath(out_dir))
        for kind, paths in written.items():
            manifest.groups.append(RankedGroup(
                f"{stem}/{kind}", dataset, src_rel, score, scale.orientation, kind, 0, 0,
                [src_rel] + paths))
            manifest.n_images += len(paths)
    return manifest
