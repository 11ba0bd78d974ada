"""Fusion quality metrics: EN, SD, SF, AG, VIF and Qabf.

All metrics work on the 8-bit scale (samples multiplied by 255). EN additionally
rounds to integer bins. Column order of every report follows
``COLUMNS = (EN, SD, SF, AG, VIF, Qabf)``.
"""

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import ContractError

log = logging.getLogger(__name__)

COLUMNS = ("EN", "SD", "SF", "AG", "VIF", "Qabf")

# Xydeas-Petrovic constants: (Gamma_g, kappa_g, sigma_g, Gamma_a, kappa_a, sigma_a)
QABF_CONSTS = (0.9994, -15.0, 0.5, 0.9879, -22.0, 0.8)

VIF_SIGMAS = (1.0, 2.0, 4.0, 8.0)
VIF_NOISE_VAR = 2.0
VIF_EPS = 1e-10
VIF_MIN_SIZE = 32


def _gray255(img, name="image"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ContractError(f"{name} must be single-channel, got shape {img.shape}")
    return img * 255.0


def _same_shape(f, i1, i2):
    if not (f.shape == i1.shape == i2.shape):
        raise ContractError(f"shape mismatch: {f.shape}, {i1.shape}, {i2.shape}")


def en(f):
    q = np.rint(np.clip(_gray255(f), 0.0, 255.0)).astype(np.int64).ravel()
    p = np.bincount(q, minlength=256) / q.size
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)) + 0.0)


def sd(f):
    x = _gray255(f)
    # shifting by one sample keeps flat images exactly at zero
    d = x - x.flat[0]
    return float(np.std(d))


def sf(f):
    x = _gray255(f)
    dh = np.diff(x, axis=1)
    dv = np.diff(x, axis=0)
    rf2 = float(np.mean(dh * dh)) if dh.size else 0.0
    cf2 = float(np.mean(dv * dv)) if dv.size else 0.0
    return math.sqrt(rf2 + cf2)


def ag(f):
    x = _gray255(f)
    if x.shape[0] < 2 or x.shape[1] < 2:
        return 0.0
    dx = x[:-1, 1:] - x[:-1, :-1]
    dy = x[1:, :-1] - x[:-1, :-1]
    return float(np.mean(np.sqrt((dx * dx + dy * dy) / 2.0)))


def gaussian_taps(sigma):
    r = int(math.ceil(2.0 * sigma))
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return g / g.sum()


def vif_single(ref, dist, backend=None):
    """Pixel-domain VIF of ``dist`` against ``ref`` (both on the 8-bit scale).

    Band ``k`` blurs both images with a Gaussian of width ``VIF_SIGMAS[k]``
    (band 0 uses the raw images) and estimates local moments with the same
    Gaussian, half-sample reflected at the borders.
    """
    num = 0.0
    den = 0.0
    for k, sigma in enumerate(VIF_SIGMAS):
        taps = gaussian_taps(sigma)
        if k > 0:
            r = kernels.correlate_separable(ref, taps, backend)
            d = kernels.correlate_separable(dist, taps, backend)
        else:
            r, d = ref, dist
        mu1 = kernels.correlate_separable(r, taps, backend)
        mu2 = kernels.correlate_separable(d, taps, backend)
        s1 = kernels.correlate_separable(r * r, taps, backend) - mu1 * mu1
        s2 = kernels.correlate_separable(d * d, taps, backend) - mu2 * mu2
        s12 = kernels.correlate_separable(r * d, taps, backend) - mu1 * mu2
        s1 = np.maximum(s1, 0.0)
        s2 = np.maximum(s2, 0.0)

        g = s12 / (s1 + VIF_EPS)
        sv = s2 - g * s12
        low1 = s1 < VIF_EPS
        g[low1] = 0.0
        sv[low1] = s2[low1]
        s1[low1] = 0.0
        low2 = s2 < VIF_EPS
        g[low2] = 0.0
        sv[low2] = 0.0
        neg = g < 0
        sv[neg] = s2[neg]
        g[neg] = 0.0
        sv = np.maximum(sv, VIF_EPS)

        num += float(np.sum(np.log10(1.0 + g * g * s1 / (sv + VIF_NOISE_VAR))))
        den += float(np.sum(np.log10(1.0 + s1 / VIF_NOISE_VAR)))
    if den == 0.0:
        # flat reference: nothing to preserve
        return 1.0
    return num / den


def vif(f, i1, i2, backend=None):
    f, i1, i2 = _gray255(f, "f"), _gray255(i1, "i1"), _gray255(i2, "i2")
    _same_shape(f, i1, i2)
    if min(f.shape) < VIF_MIN_SIZE:
        raise ContractError(f"VIF needs at least {VIF_MIN_SIZE}x{VIF_MIN_SIZE}, got {f.shape}")
    return 0.5 * (vif_single(i1, f, backend) + vif_single(i2, f, backend))


def edge_strength_orientation(x, backend=None):
    gx, gy = kernels.sobel(x, backend)
    g = np.sqrt(gx * gx + gy * gy)
    safe = np.where(gx == 0.0, 1.0, gx)
    a = np.where(gx == 0.0, math.pi / 2.0, np.arctan(gy / safe))
    return g, a


def qabf(f, i1, i2, backend=None):
    f, i1, i2 = _gray255(f, "f"), _gray255(i1, "i1"), _gray255(i2, "i2")
    _same_shape(f, i1, i2)
    ga, aa = edge_strength_orientation(i1, backend)
    gb, ab = edge_strength_orientation(i2, backend)
    gf, af = edge_strength_orientation(f, backend)
    qa = kernels.qabf_map(ga, aa, gf, af, QABF_CONSTS, backend)
    qb = kernels.qabf_map(gb, ab, gf, af, QABF_CONSTS, backend)
    den = float(np.sum(ga + gb))
    if den == 0.0:
        log.warning("Qabf undefined for two flat sources, returning 0")
        return 0.0
    return float(np.sum(qa * ga + qb * gb)) / den


@dataclass
class MetricReport:
    image_id: str
    en: float
    sd: float
    sf: float
    ag: float
    vif: float
    qabf: float

    def values(self):
        return (self.en, self.sd, self.sf, self.ag, self.vif, self.qabf)


def report(f, i1, i2, image_id=""):
    return MetricReport(image_id, en(f), sd(f), sf(f), ag(f), vif(f, i1, i2), qabf(f, i1, i2))


def report_many(items, workers=1):
    """``items``: iterable of ``(image_id, f, i1, i2)``; rows keep input order."""
    items = list(items)

    def one(item):
        image_id, f, i1, i2 = item
        return report(f, i1, i2, image_id)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]


def mean_report(rows, image_id="mean"):
    if not rows:
        raise ContractError("cannot average an empty report list")
    vals = np.mean([r.values() for r in rows], axis=0)
    return MetricReport(image_id, *(float(v) for v in vals))


def format_table(rows, mean=True, digits=2):
    """Aligned text table, one line per row plus an optional mean line."""
    rows = list(rows)
    if mean and rows:
        rows.append(mean_report(rows))
    width = max([5] + [len(r.image_id) for r in rows])
    head = "Image".ljust(width) + "".join(c.rjust(9) for c in COLUMNS)
    lines = [head]
    for r in rows:
        lines.append(r.image_id.ljust(width) + "".join(f"{v:9.{digits}f}" for v in r.values()))
    return "\n".join(lines)


def to_csv(rows, mean=True):
    rows = list(rows)
    if mean and rows:
        rows.append(mean_report(rows))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("image",) + COLUMNS)
    for r in rows:
        w.writerow((r.image_id,) + tuple(repr(v) for v in r.values()))
    return buf.getvalue()


def to_json(r):
    return json.dumps(asdict(r), sort_keys=True)
