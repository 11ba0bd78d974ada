"""Text features: the hermetic stub encoder, fusion by concatenation, and the
``.vlfe`` binary container.

A text feature is a float32 array of shape ``(L, D)``: one row per token.

``.vlfe`` layout (all little-endian)::

    offset  size   field
    0       4      magic  b"VLFE"
    4       2      version (u16, currently 1)
    6       4      L (u32, token count)
    10      4      D (u32, embedding dim)
    14      4*L*D  row-major float32 payload
"""

import hashlib
import struct
from pathlib import Path

import numpy as np

from ..errors import ContractError, FormatError

MAGIC = b"VLFE"
VERSION = 1
_HEADER = struct.Struct("<4sHII")
DEFAULT_DIM = 256


def check_feature(feat, name="text feature"):
    feat = np.asarray(feat)
    if feat.ndim != 2 or feat.shape[0] < 1 or feat.shape[1] < 1:
        raise ContractError(f"{name} must be a non-empty (L, D) matrix, got shape {feat.shape}")
    if not np.all(np.isfinite(feat)):
        raise ContractError(f"{name} has non-finite entries")
    return feat


def fuse_text_features(f1, f2):
    """Concatenate two token matrices along the token axis (``f1`` rows first)."""
    f1 = check_feature(f1, "f1")
    f2 = check_feature(f2, "f2")
    if f1.shape[1] != f2.shape[1]:
        raise ContractError(f"embedding dims differ: {f1.shape[1]} vs {f2.shape[1]}")
    return np.concatenate([f1, f2], axis=0)


def stub_embed(text, dim=DEFAULT_DIM, seed=0):
    """Deterministic stand-in for a frozen text encoder.

    Each whitespace-separated word at position ``i`` seeds a generator through
    a BLAKE2 hash of ``(seed, i, word)``; its row is a standard-normal draw
    scaled to unit L2 norm.
    """
    if dim < 8:
        raise ContractError(f"embedding dim must be >= 8, got {dim}")
    words = text.split()
    if not words:
        raise ContractError("cannot embed empty text")
    out = np.empty((len(words), dim), dtype=np.float32)
    for i, word in enumerate(words):
        digest = hashlib.blake2b(f"{seed}\x00{i}\x00{word}".encode(), digest_size=16).digest()
        row = np.random.default_rng(int.from_bytes(digest, "little")).standard_normal(dim)
        out[i] = row / np.linalg.norm(row)
    return out


def write_embedding(path, feat):
    feat = check_feature(feat)
    data = np.ascontiguousarray(feat, dtype="<f4")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_HEADER.pack(MAGIC, VERSION, data.shape[0], data.shape[1]) + data.tobytes())
    return path


def read_embedding(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = raw[_HEADER.size:]
    if n < 1 or d < 1 or len(payload) != 4 * n * d:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {4 * n * d}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float32)
