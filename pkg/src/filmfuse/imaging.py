"""Image IO, luma/chroma handling and the Sobel operator.

Images are plain ``float64`` numpy arrays with samples in ``[0, 1]``:
``(H, W)`` for single-channel data and ``(H, W, 3)`` (RGB order) for color.
"""

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from . import kernels
from .errors import ContractError, FormatError

MIN_NET_SIZE = 8

# BT.601 full-range, chroma offset by 0.5
KR, KG, KB = 0.299, 0.587, 0.114
CB_SCALE = 2.0 * (1.0 - KB)
CR_SCALE = 2.0 * (1.0 - KR)

CHROMA_POLICIES = ("saturation", "first", "second")


@dataclass(frozen=True)
class GradientMap:
    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray


def check_image(img, name="image"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ContractError(f"{name} must be HxW or HxWx3, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ContractError(f"{name} contains non-finite samples")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ContractError(f"{name} samples must lie in [0, 1]")
    return img


def _read_netpbm(data):
    # binary P5 (gray) / P6 (rgb) with a single header, comments allowed
    fields = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated netpbm header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError as exc:
            raise FormatError("malformed netpbm header") from exc
    pos += 1  # single whitespace byte before the raster
    width, height, maxval = fields
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported netpbm maxval {maxval}")
    channels = 1 if data[:2] == b"P5" else 3
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    count = width * height * channels
    raw = data[pos:pos + count * dtype.itemsize]
    if len(raw) != count * dtype.itemsize:
        raise FormatError("truncated netpbm raster")
    arr = np.frombuffer(raw, dtype=dtype).astype(np.float64) / maxval
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, 3)


def load_image(path):
    """Read a PNG or binary PGM/PPM (8 or 16 bit) into a float image in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    data = path.read_bytes()
    if data[:2] in (b"P5", b"P6"):
        return _read_netpbm(data)
    if not data.startswith(b"\x89PNG\r\n\x1a\n"):
        raise FormatError(f"{path}: not a PNG or binary PGM/PPM file")
    arr = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise FormatError(f"{path}: corrupt or truncated PNG")
    if arr.dtype == np.uint8:
        scale = 255.0
    elif arr.dtype == np.uint16:
        scale = 65535.0
    else:
        raise FormatError(f"{path}: unsupported bit depth {arr.dtype}")
    if arr.ndim == 3:
        if arr.shape[2] != 3:
            raise FormatError(f"{path}: unsupported channel count {arr.shape[2]}")
        arr = arr[:, :, ::-1]
    return arr.astype(np.float64) / scale


def quantize8(img):
    """Scale to 8 bit with round-half-to-even."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, img):
    """Write 8-bit PNG (or PGM/PPM by extension)."""
    path = Path(path)
    q = quantize8(check_image(img))
    path.parent.mkdir(parents=True, exist_ok=True)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm"):
        magic = b"P5" if q.ndim == 2 else b"P6"
        header = b"%s\n%d %d\n255\n" % (magic, q.shape[1], q.shape[0])
        path.write_bytes(header + q.tobytes())
        return path
    if suffix != ".png":
        raise FormatError(f"unsupported output format {suffix!r}")
    if q.ndim == 3:
        q = q[:, :, ::-1]
    ok, buf = cv2.imencode(".png", np.ascontiguousarray(q))
    if not ok:
        raise FormatError(f"could not encode {path}")
    path.write_bytes(buf.tobytes())
    return path


def to_luma_chroma(img):
    """Split into BT.601 luma and (Cb, Cr) chroma; chroma is None for gray input."""
    img = check_image(img)
    if img.ndim == 2:
        return img, None
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    y = KR * r + KG * g + KB * b
    cb = 0.5 + (b - y) / CB_SCALE
    cr = 0.5 + (r - y) / CR_SCALE
    return y, (cb, cr)


def from_luma_chroma(y, cb, cr):
    r = y + CR_SCALE * (cr - 0.5)
    b = y + CB_SCALE * (cb - 0.5)
    g = (y - KR * r - KB * b) / KG
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def fuse_chroma(chroma_sources, policy="saturation"):
    """Combine per-source (Cb, Cr) pairs; sources without chroma are skipped."""
    if policy not in CHROMA_POLICIES:
        raise ContractError(f"unknown chroma policy {policy!r}")
    avail = [c for c in chroma_sources if c is not None]
    if not avail:
        return None
    if policy == "first":
        return avail[0]
    if policy == "second":
        return avail[-1]
    weights = [np.abs(cb - 0.5) + np.abs(cr - 0.5) for cb, cr in avail]
    total = sum(weights)
    cb = sum(w * c[0] for w, c in zip(weights, avail))
    cr = sum(w * c[1] for w, c in zip(weights, avail))
    flat = total == 0.0
    safe = np.where(flat, 1.0, total)
    return np.where(flat, 0.5, cb / safe), np.where(flat, 0.5, cr / safe)


def recompose(fused_luma, chroma_policy="saturation", chroma_sources=()):
    """Attach chroma to a fused luma plane.

    ``chroma_sources`` holds one ``(Cb, Cr)`` pair or ``None`` per source.
    Saturation weighting averages chroma with per-pixel weights
    ``|Cb - 0.5| + |Cr - 0.5|``; where every source is neutral the result is gray.
    """
    y = check_image(fused_luma, "fused_luma")
    if y.ndim != 2:
        raise ContractError("fused_luma must be single-channel")
    for c in chroma_sources:
        if c is None:
            continue
        if c[0].shape != y.shape or c[1].shape != y.shape:
            raise ContractError(f"chroma shape {c[0].shape} does not match luma {y.shape}")
    chroma = fuse_chroma(chroma_sources, chroma_policy)
    if chroma is None:
        return y
    return from_luma_chroma(y, *chroma)


def sobel(img):
    """Sobel gradients of a single-channel image (replicate border)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ContractError(f"sobel needs a single-channel image, got shape {img.shape}")
    gx, gy = kernels.sobel(img)
    return GradientMap(gx, gy, np.sqrt(gx * gx + gy * gy))
