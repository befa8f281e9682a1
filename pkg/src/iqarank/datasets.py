"""Benchmark score conventions and the normalised score-file format.

A score file is delimited text. The first line names orientation and range::

    # orientation=MOS range=0,100
    path,score
    img001.png,63.2

Paths are relative to the dataset root given alongside the file.
"""
from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass


@dataclass(frozen=True)
class ScoreScale:
    orientation: str  # "MOS" (higher is better) or "DMOS" (higher is worse)
    lo: float
    hi: float

    def __post_init__(self):
        if self.orientation not in ("MOS", "DMOS"):
            raise ValueError(f"orientation must be MOS or DMOS, got {self.orientation!r}")
        if not self.lo < self.hi:
            raise ValueError("score range must satisfy lo < hi")

    @property
    def span(self) -> float:
        return self.hi - self.lo

    def contains(self, score: float) -> bool:
        return self.lo <= score <= self.hi


SCALES = {
    "live": ScoreScale("DMOS", 0.0, 100.0),
    "csiq": ScoreScale("DMOS", 0.0, 1.0),
    "tid2013": ScoreScale("MOS", 0.0, 9.0),
    "livec": ScoreScale("MOS", 0.0, 100.0),
}

_HEADER = re.compile(r"#\s*orientation\s*=\s*(\w+)\s+range\s*=\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)")


class ScoreFileError(ValueError):
    pass


def read_score_file(path) -> tuple[ScoreScale, list[tuple[str, float]]]:
    """Return the scale declared in the header and the ``(path, score)`` rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        header = fh.readline()
        m = _HEADER.match(header.strip())
        if not m:
            raise ScoreFileError(f"{path}: first line must be '# orientation=MOS|DMOS range=LO,HI'")
        try:
            scale = ScoreScale(m.group(1).upper(), float(m.group(2)), float(m.group(3)))
        except ValueError as exc:
            raise ScoreFileError(f"{path}: {exc}") from exc
        rows = []
        for i, rec in enumerate(csv.reader(fh)):
            if not rec or rec[0].startswith("#"):
                continue
            if i == 0 and rec[0].strip().lower() == "path":
                continue
            if len(rec) < 2:
                raise ScoreFileError(f"{path}: malformed row {rec!r}")
            try:
                score = float(rec[1])
            except ValueError:
                raise ScoreFileError(f"{path}: bad score {rec[1]!r}") from None
            if not scale.contains(score):
                raise ScoreFileError(f"{path}: score {score} outside [{scale.lo}, {scale.hi}]")
            rows.append((rec[0].strip(), score))
    return scale, rows


def write_score_file(path, scale: ScoreScale, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# orientation={scale.orientation} range={scale.lo:g},{scale.hi:g}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "score"])
        for p, s in rows:
            w.writerow([p, f"{s:.6g}"])


def resolve_paths(root, rows):
    return [(os.path.join(root, p) if root else p, s) for p, s in rows]
