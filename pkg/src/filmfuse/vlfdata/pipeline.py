"""Description pipeline: caption -> dense caption -> mask summary -> paragraph.

``VARIANTS`` maps each ablation variant to the prompt stages it uses and
whether the paragraph (LLM) stage runs. Without the LLM the three captions
are joined by newlines and used verbatim.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from string import Template

from ..errors import PipelineError, ServiceError
from .embedding import DEFAULT_DIM, stub_embed, write_embedding
from .schema import VlfRecord, validate_description, write_manifest

log = logging.getLogger(__name__)

ATTEMPTS = 3
BACKOFF = 0.5

VARIANTS = {
    "full": {"stages": ("caption", "dense_caption", "mask_summary"), "llm": True},
    "no_sm": {"stages": ("caption", "dense_caption"), "llm": True},
    "no_dc_sm": {"stages": ("caption",), "llm": True},
    "no_caption": {"stages": (), "llm": True},
    "no_gpt": {"stages": ("caption", "dense_caption", "mask_summary"), "llm": False},
    "no_text": {"stages": (), "llm": False},
}


@dataclass
class PromptBundle:
    image_caption: str | None = None
    dense_captions: list = field(default_factory=list)
    semantic_mask_summary: list = field(default_factory=list)
    absent: tuple = ()

    def sections(self):
        out = []
        if self.image_caption is not None:
            out.append(f"Image caption:\n- {self.image_caption}")
        if "dense_caption" not in self.absent:
            lines = "\n".join(f"- {p} at {list(b)}" for b, p in self.dense_captions)
            out.append(f"Dense captions:\n{lines}")
        if "mask_summary" not in self.absent:
            lines = "\n".join(f"- {r}" for r in self.semantic_mask_summary)
            out.append(f"Semantic mask regions:\n{lines}")
        return out

    def joined(self):
        """Captions joined verbatim, one stage per line."""
        parts = []
        if self.image_caption is not None:
            parts.append(self.image_caption)
        if "dense_caption" not in self.absent:
            parts.append("; ".join(f"{p} at {list(b)}" for b, p in self.dense_captions))
        if "mask_summary" not in self.absent:
            parts.append("; ".join(self.semantic_mask_summary))
        return "\n".join(parts)


def load_template(name):
    return (resources.files("filmfuse.vlfdata") / "templates" / name).read_text(encoding="utf-8")


def call_with_retry(stage, fn, *args, attempts=ATTEMPTS, backoff=BACKOFF, sleep=time.sleep):
    """Run ``fn`` with exponential backoff on :class:`ServiceError`."""
    for attempt in range(attempts):
        try:
            return fn(*args)
        except ServiceError as exc:
            log.warning("%s attempt %d/%d failed: %s", stage, attempt + 1, attempts, exc)
            if attempt == attempts - 1:
                raise PipelineError(stage, str(exc)) from exc
            sleep(backoff * 2**attempt)


def prompt_bundle(img, clients, variant="full", sleep=time.sleep):
    stages = VARIANTS[variant]["stages"]
    b = PromptBundle(absent=tuple(s for s in ("caption", "dense_caption", "mask_summary") if s not in stages))
    if "caption" in stages:
        b.image_caption = call_with_retry("caption", clients.caption, img, sleep=sleep)
    if "dense_caption" in stages:
        b.dense_captions = call_with_retry("dense_caption", clients.dense_caption, img, sleep=sleep)
    if "mask_summary" in stages:
        b.semantic_mask_summary = call_with_retry("mask_summary", clients.mask_summary, img, sleep=sleep)
    return b


def describe(img, clients, variant="full", sleep=time.sleep):
    """One paragraph description for one image."""
    spec = VARIANTS[variant]
    if variant == "no_text":
        raise ValueError("the no_text variant has no descriptions")
    bundle = prompt_bundle(img, clients, variant, sleep)
    if not spec["llm"]:
        return bundle.joined()
    if not spec["stages"]:
        prompt = load_template("paragraph_prompt_image_only.txt")
        return call_with_retry("paragraph", clients.paragraph, prompt, img, sleep=sleep)
    prompt = Template(load_template("paragraph_prompt.txt")).substitute(sections="\n".join(bundle.sections()))
    return call_with_retry("paragraph", clients.paragraph, prompt, sleep=sleep)


def build_record(pair_id, img1, img2, clients, out_dir, task="IVF", source_dataset="synthetic",
                 variant="full", embed_dim=DEFAULT_DIM, seed=0, image_refs=("", ""), sleep=time.sleep):
    """Describe both images, embed the descriptions and return the record.

    Embeddings go to ``out_dir/embeddings/<variant>/<pair_id>_{1,2}.vlfe``;
    refs in the record are relative to ``out_dir``.
    """
    out_dir = Path(out_dir)
    d1 = describe(img1, clients, variant, sleep)
    d2 = describe(img2, clients, variant, sleep)
    refs = []
    for k, text in ((1, d1), (2, d2)):
        rel = Path("embeddings") / variant / f"{pair_id}_{k}.vlfe"
        write_embedding(out_dir / rel, stub_embed(text, embed_dim, seed))
        refs.append(rel.as_posix())
    validated = validate_description(d1).passed and validate_description(d2).passed
    return VlfRecord(pair_id, task, source_dataset, d1, d2, refs[0], refs[1],
                     image_refs[0], image_refs[1], validated, variant)


def build_dataset(pairs, clients, out_dir, manifest_name="manifest.vlf", workers=1, **kw):
    """``pairs``: iterable of ``(pair_id, img1, img2, (ref1, ref2))``. Writes the manifest.

    With ``workers > 1`` records are built concurrently; manifest order
    always follows ``pairs``.
    """
    out_dir = Path(out_dir)

    def one(item):
        pid, a, b, refs = item
        return build_record(pid, a, b, clients, out_dir, image_refs=refs, **kw)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(one, pairs))
    else:
        records = [one(item) for item in pairs]
    unvalidated = [r.pair_id for r in records if not r.validated]
    if unvalidated:
        log.info("%d records left unvalidated: %s", len(unvalidated), ", ".join(unvalidated[:5]))
    return write_manifest(out_dir / manifest_name, records), records
