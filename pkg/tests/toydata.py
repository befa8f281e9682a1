"""Procedural ordered groups and small natural-image fixtures for the tests."""
import numpy as np
from scipy import ndimage
from skimage import data as skdata

from iqarank.imgcore import as_image

NATURAL = ("astronaut", "coffee", "chelsea")


def make_toy_groups(n_groups, size=48, seed=0):
    """Smooth textures whose level-k copy adds ``0.03 k`` of shared noise.

    Contrast ``a ~ U(0.1, 0.5)`` sets a DMOS-like anchor ``10 + 100 (0.5 - a)``,
    so higher anchors go with flatter (worse) sources.
    """
    rng = np.random.default_rng(seed)
    groups, y0 = [], []
    for _ in range(n_groups):
        base = ndimage.gaussian_filter(rng.standard_normal((size, size, 3)), (3, 3, 0))
        base = (base - base.mean()) / base.std()
        a = rng.uniform(0.1, 0.5)
        src = np.clip(0.5 + a * 0.4 * base, 0, 1)
        z = rng.standard_normal(src.shape)
        groups.append([src] + [np.clip(src + 0.03 * k * z, 0, 1) for k in range(1, 6)])
        y0.append(10 + 100 * (0.5 - a))
    return groups, np.array(y0)


def natural_image(name, size=128):
    """Centre crop of a scikit-image sample photograph, as float RGB."""
    img = as_image(getattr(skdata, name)())
    h, w = img.shape[:2]
    top, left = (h - size) // 2, (w - size) // 2
    return img[top:top + size, left:left + size].copy()


def natural_tiles(n, size=48):
    """``n`` distinct tiles cut from the sample photographs, with made-up MOS labels."""
    tiles = []
    for name in ("astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry"):
        img = as_image(getattr(skdata, name)())
        for top in range(0, img.shape[0] - size + 1, 3 * size):
            for left in range(0, img.shape[1] - size + 1, 3 * size):
                tiles.append(img[top:top + size, left:left + size].copy())
    rng = np.random.default_rng(0)
    pick = rng.choice(len(tiles), n, replace=False)
    return [tiles[i] for i in pick], np.round(rng.uniform(20, 80, n), 1)


def write_labelled(root, images, scores, header="# orientation=MOS range=0,100"):
    """Save ``images`` as PNGs under ``root`` plus a ``scores.csv`` score file."""
    from iqarank.imgcore import save_image

    root.mkdir(parents=True, exist_ok=True)
    lines = [header, "path,score"]
    for i, (img, s) in enumerate(zip(images, scores)):
        save_image(img, root / f"img{i:03d}.png")
        lines.append(f"img{i:03d}.png,{s}")
    (root / "scores.csv").write_text("\n".join(lines) + "\n")
    return root / "scores.csv"


def write_toy_manifest(directory, groups, y0):
    """Store toy groups as PNGs with a DMOS 0..100 manifest readable by ``pretrain``."""
    from iqarank.datasets import ScoreScale
    from iqarank.imgcore import save_image
    from iqarank.synth import Manifest, RankedGroup

    manifest = Manifest("live", ScoreScale("DMOS", 0.0, 100.0), 0, root=str(directory))
    for g, (imgs, y) in enumerate(zip(groups, y0)):
        paths = []
        for k, img in enumerate(imgs):
            rel = f"g{g:03d}/{k}.png"
            (directory / f"g{g:03d}").mkdir(parents=True, exist_ok=True)
            save_image(img, directory / rel)
            paths.append(rel)
        manifest.groups.append(RankedGroup(f"g{g:03d}", "live", f"toy{g}.png", float(y), "DMOS",
                                           "noise", -1, -1, paths))
    manifest.write(directory)
    return directory
