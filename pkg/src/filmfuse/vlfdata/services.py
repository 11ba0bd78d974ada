"""Clients for the caption / dense-caption / mask-summary / paragraph services.

Wire format (HTTP POST, JSON body, JSON response)::

    {caption_url}/caption        {"image": <b64 png>}              -> {"caption": str}
    {caption_url}/dense_caption  {"image": <b64 png>}              -> {"regions": [{"box": [x0, y0, x1, y1], "phrase": str}]}
    {caption_url}/mask_summary   {"image": <b64 png>}              -> {"regions": [str, ...]}
    {llm_url}/paragraph          {"prompt": str, "seed": int,
                                  "image": <b64 png, optional>}    -> {"paragraph": str}

``VLF_CAPTION_URL``, ``VLF_LLM_URL`` and ``VLF_API_KEY`` (sent as a bearer
token) configure :meth:`HttpClients.from_env`.
"""

import base64
import hashlib
import os
import random
from collections import Counter

import cv2
import numpy as np
import requests

from ..errors import FormatError, ServiceError
from ..imaging import quantize8

TIMEOUT = 30.0
ENDPOINTS = ("caption", "dense_caption", "mask_summary", "paragraph")


def encode_png_b64(img):
    q = quantize8(img)
    if q.ndim == 3:
        q = q[:, :, ::-1]
    ok, buf = cv2.imencode(".png", np.ascontiguousarray(q))
    if not ok:
        raise FormatError("could not encode image")
    return base64.b64encode(buf.tobytes()).decode("ascii")


def decode_png_b64(text):
    try:
        raw = base64.b64decode(text, validate=True)
    except (ValueError, TypeError) as exc:
        raise FormatError("image field is not base64") from exc
    arr = cv2.imdecode(np.frombuffer(raw, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise FormatError("image field is not a PNG")
    if arr.ndim == 3:
        arr = arr[:, :, ::-1]
    return arr.astype(np.float64) / (65535.0 if arr.dtype == np.uint16 else 255.0)


class HttpClients:
    def __init__(self, caption_url, llm_url, api_key=None, timeout=TIMEOUT, session=None, seed=0):
        self.caption_url = caption_url.rstrip("/") if caption_url else None
        self.llm_url = llm_url.rstrip("/") if llm_url else None
        self.timeout = timeout
        self.seed = seed
        self.session = session or requests.Session()
        self.headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.calls = Counter()

    @classmethod
    def from_env(cls, seed=0):
        return cls(os.environ.get("VLF_CAPTION_URL"), os.environ.get("VLF_LLM_URL"),
                   os.environ.get("VLF_API_KEY"), seed=seed)

    def _post(self, base, endpoint, body):
        if not base:
            raise ServiceError(f"no base URL configured for {endpoint}")
        self.calls[endpoint] += 1
        try:
            resp = self.session.post(f"{base}/{endpoint}", json=body, headers=self.headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ServiceError(f"{endpoint}: {exc}") from exc
        if resp.status_code != 200:
            raise ServiceError(f"{endpoint}: HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ServiceError(f"{endpoint}: response is not JSON") from exc

    def caption(self, img):
        return str(self._post(self.caption_url, "caption", {"image": encode_png_b64(img)})["caption"])

    def dense_caption(self, img):
        regions = self._post(self.caption_url, "dense_caption", {"image": encode_png_b64(img)})["regions"]
        return [(tuple(int(v) for v in r["box"]), str(r["phrase"])) for r in regions]

    def mask_summary(self, img):
        return [str(r) for r in self._post(self.caption_url, "mask_summary", {"image": encode_png_b64(img)})["regions"]]

    def paragraph(self, prompt, img=None):
        body = {"prompt": prompt, "seed": self.seed}
        if img is not None:
            body["image"] = encode_png_b64(img)
        return str(self._post(self.llm_url, "paragraph", body)["paragraph"])


def _luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img @ np.array([0.299, 0.587, 0.114])
    return img


def _level(v, names, cuts):
    for name, cut in zip(names, cuts):
        if v < cut:
            return name
    return names[-1]


_FILLERS = (
    "The overall composition keeps the main structures clearly separated from the background.",
    "Fine textures remain visible in the regions that carry most of the detail.",
    "Lighting across the frame is uneven, which changes how individual objects stand out.",
    "Edges between neighbouring regions are distinct enough to follow their outlines.",
    "Some areas are dominated by smooth gradients with little local variation.",
    "The spatial layout suggests a scene captured from a fixed, level viewpoint.",
    "Salient objects occupy a moderate share of the image area.",
    "Background regions provide context without competing with the foreground.",
    "Contrast is strongest where bright and dark structures meet.",
    "The scene as a whole reads as coherent and free of obvious artifacts.",
)


class MockClients:
    """Deterministic offline stand-ins for all four services."""

    def __init__(self, seed=0):
        self.seed = seed
        self.calls = Counter()

    def caption(self, img):
        self.calls["caption"] += 1
        return self._describe(img)

    @staticmethod
    def _describe(img):
        y = _luma(img)
        bright = _level(y.mean(), ("dark", "dim", "moderately lit", "bright"), (0.25, 0.45, 0.65))
        contrast = _level(y.std(), ("low", "moderate", "high"), (0.08, 0.2))
        return f"A {bright} scene with {contrast} contrast and several distinct structures."

    def dense_caption(self, img):
        self.calls["dense_caption"] += 1
        y = _luma(img)
        h, w = y.shape
        out = []
        for r0, r1 in ((0, h // 2), (h // 2, h)):
            for c0, c1 in ((0, w // 2), (w // 2, w)):
                patch = y[r0:r1, c0:c1]
                tone = _level(patch.mean(), ("dark", "mid-tone", "bright"), (0.35, 0.65))
                texture = "textured" if np.abs(np.diff(patch, axis=1)).mean() > 0.05 else "smooth"
                out.append(((c0, r0, c1, r1), f"{tone} {texture} region"))
        return out

    def mask_summary(self, img):
        self.calls["mask_summary"] += 1
        y = _luma(img)
        lo, hi = np.quantile(y, [1 / 3, 2 / 3])
        parts = (("shadow", y <= lo), ("midtone", (y > lo) & (y <= hi)), ("highlight", y > hi))
        return [f"{name} segment covering {100.0 * m.mean():.0f}% of the frame" for name, m in parts]

    def paragraph(self, prompt, img=None):
        self.calls["paragraph"] += 1
        digest = hashlib.sha256(f"{self.seed}\x00{prompt}".encode()).digest()
        rng = random.Random(int.from_bytes(digest[:8], "little"))
        facts = [line.strip(" -") for line in prompt.splitlines() if line.strip().startswith("-")]
        sentences = ["This image shows a scene that can be described at several levels of detail."]
        for fact in facts[:6]:
            fact = fact.rstrip(".")
            sentences.append(f"It contains {fact[0].lower() + fact[1:]}." if fact else "")
        if img is not None:
            sentences.append(self._describe(img))
        fillers = list(_FILLERS)
        rng.shuffle(fillers)
        need = max(0, 8 - len(sentences)) + rng.randint(0, 2)
        sentences.extend(fillers[:need])
        return " ".join(s for s in sentences if s)
