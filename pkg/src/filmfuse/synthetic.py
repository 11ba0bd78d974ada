"""Deterministic synthetic source pairs for tests, fixtures and smoke training.

``scene`` draws a textured base image; ``make_pair`` derives the two sources
the way each task would see them:

* IVF: a thermal-like view (warm blobs on a cool background) and a textured
  visible view with the blobs barely visible.
* MEF: under- and over-exposed versions of one scene (gamma plus clipping).
* MFF: the same scene with the left or the right half defocused.
* MIF: two modalities with complementary structures (like IVF, sharper).
"""

from pathlib import Path

import cv2
import numpy as np

from .errors import ContractError
from .imaging import save_image


def scene(rng, size=64):
    h, w = (size, size) if np.isscalar(size) else size
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    img = 0.35 + 0.25 * np.sin(2 * np.pi * (rng.uniform(1, 3) * xx + rng.uniform(0, 1)))
    img = img * (0.8 + 0.2 * np.cos(2 * np.pi * rng.uniform(1, 3) * yy))
    for _ in range(int(rng.integers(3, 7))):
        x0, y0 = rng.integers(0, w - 4), rng.integers(0, h - 4)
        x1, y1 = x0 + rng.integers(4, max(5, w // 3)), y0 + rng.integers(4, max(5, h // 3))
        cv2.rectangle(img, (int(x0), int(y0)), (int(x1), int(y1)), float(rng.uniform(0, 1)), -1)
    img += 0.04 * rng.standard_normal((h, w))
    return np.clip(img, 0.0, 1.0)


def _blobs(rng, h, w, n):
    out = np.zeros((h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(0.05, 0.15) * max(h, w)
        out = np.maximum(out, np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)))
    return out


def make_pair(task, rng, size=64):
    """Return ``(i1, i2)`` float64 luma images in [0, 1]."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    base = scene(rng, size)
    h, w = base.shape
    if task in ("IVF", "MIF"):
        hot = _blobs(rng, h, w, int(rng.integers(2, 5)))
        sharp = 0.5 if task == "MIF" else 1.0
        ir = np.clip(0.15 + 0.8 * hot + 0.05 * cv2.GaussianBlur(base, (0, 0), 2.0 * sharp), 0, 1)
        vis = np.clip(base * (1.0 - 0.3 * hot), 0, 1)
        return ir, vis
    if task == "MEF":
        under = np.clip(0.45 * base ** 1.6, 0, 1)
        over = np.clip(1.6 * base ** 0.6 + 0.1, 0, 1)
        return under, over
    if task == "MFF":
        blurred = cv2.GaussianBlur(base, (0, 0), 2.5)
        left = np.zeros((h, w), dtype=bool)
        left[:, : w // 2] = True
        return np.where(left, base, blurred), np.where(left, blurred, base)
    raise ContractError(f"unknown task {task!r}")


def pairs(task, n, seed=0, size=64):
    """``n`` pairs, pair ``k`` drawn from ``default_rng([seed, k])``."""
    return [make_pair(task, np.random.default_rng([seed, k]), size) for k in range(n)]


def write_corpus(out_dir, task, n, seed=0, size=64):
    """Write ``pair_<k>/{1,2}.png`` and return the pair directories."""
    out_dir = Path(out_dir)
    dirs = []
    for k, (a, b) in enumerate(pairs(task, n, seed, size)):
        d = out_dir / f"pair_{k:03d}"
        save_image(d / "1.png", a)
        save_image(d / "2.png", b)
        dirs.append(d)
    return dirs
