"""Numpy fallback for the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def sobel(img):
    p = np.pad(img, 1, mode="edge")
    gx = (p[:-2, 2:] - p[:-2, :-2]) + 2.0 * (p[1:-1, 2:] - p[1:-1, :-2]) + (p[2:, 2:] - p[2:, :-2])
    gy = (p[2:, :-2] - p[:-2, :-2]) + 2.0 * (p[2:, 1:-1] - p[:-2, 1:-1]) + (p[2:, 2:] - p[:-2, 2:])
    return gx, gy


def correlate_separable(img, taps):
    k = taps.shape[0]
    r = k // 2
    h, w = img.shape
    p = np.pad(img, ((0, 0), (r, r)), mode="symmetric")
    tmp = np.zeros((h, w))
    for t in range(k):
        tmp += taps[t] * p[:, t:t + w]
    p = np.pad(tmp, ((r, r), (0, 0)), mode="symmetric")
    out = np.zeros((h, w))
    for t in range(k):
        out += taps[t] * p[t:t + h, :]
    return out


def qabf_map(gs, as_, gf, af, tg, kg, sg, ta, ka, sa):
    hi = np.maximum(gs, gf)
    lo = np.minimum(gs, gf)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(gs == gf, 1.0, lo / np.where(hi == 0, 1.0, hi))
    a = 1.0 - np.abs(as_ - af) / (np.pi / 2.0)
    qg = tg / (1.0 + np.exp(kg * (g - sg)))
    qa = ta / (1.0 + np.exp(ka * (a - sa)))
    return qg * qa
