"""VLF records, description validation and the line-delimited manifest.

Manifest format: UTF-8 text whose first line is ``vlf-manifest v1``; every
following non-empty line is one JSON object with the :class:`VlfRecord`
fields. Relative paths inside a record resolve against the manifest's folder.
"""

import json
import re
import statistics
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..errors import ContractError, FormatError
from .embedding import read_embedding

MANIFEST_HEADER = "vlf-manifest v1"
MIN_SENTENCES = 7
TASKS = ("IVF", "MIF", "MEF", "MFF")

_SENTENCE_BREAK = re.compile(r"[.!?]\s+")


@dataclass(frozen=True)
class ValidationReport:
    sentence_count: int
    word_count: int
    passed: bool


def validate_description(text, min_sentences=MIN_SENTENCES):
    """Count sentences (terminal ``.``/``!``/``?`` followed by whitespace) and words."""
    if not text or not text.strip():
        raise ContractError("description is empty")
    pieces = [p for p in _SENTENCE_BREAK.split(text.strip()) if p.strip()]
    words = len(text.split())
    return ValidationReport(len(pieces), words, len(pieces) >= min_sentences)


@dataclass
class VlfRecord:
    pair_id: str
    task: str
    source_dataset: str
    description_1: str
    description_2: str
    embedding_ref_1: str
    embedding_ref_2: str
    image_1: str = ""
    image_2: str = ""
    validated: bool = False
    variant: str = "full"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}")

    def check(self):
        """Raise if the record claims validation its descriptions do not meet."""
        if self.validated:
            for i, text in enumerate((self.description_1, self.description_2), 1):
                rep = validate_description(text)
                if not rep.passed:
                    raise FormatError(
                        f"record {self.pair_id}: description_{i} has {rep.sentence_count} sentences "
                        f"but is marked validated"
                    )

    def resolve(self, root, ref):
        p = Path(ref)
        return p if p.is_absolute() else Path(root) / p

    def load_embeddings(self, root):
        e1 = read_embedding(self.resolve(root, self.embedding_ref_1))
        e2 = read_embedding(self.resolve(root, self.embedding_ref_2))
        if e1.shape[1] != e2.shape[1]:
            raise FormatError(f"record {self.pair_id}: embedding dims {e1.shape[1]} and {e2.shape[1]} differ")
        return e1, e2


_FIELDS = {f.name for f in fields(VlfRecord)}


def write_manifest(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [MANIFEST_HEADER]
    for r in records:
        r.check()
        lines.append(json.dumps(asdict(r), sort_keys=True, ensure_ascii=False))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such manifest: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise FormatError(f"{path}: missing '{MANIFEST_HEADER}' header")
    out = []
    for n, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{n}: {exc}") from exc
        unknown = set(obj) - _FIELDS
        if unknown:
            raise FormatError(f"{path}:{n}: unknown fields {sorted(unknown)}")
        try:
            rec = VlfRecord(**obj)
        except (TypeError, ContractError) as exc:
            raise FormatError(f"{path}:{n}: {exc}") from exc
        rec.check()
        out.append(rec)
    return out


def corpus_stats(texts):
    """Sentence/word statistics over a collection of descriptions."""
    reports = [validate_description(t) for t in texts]
    if not reports:
        raise ContractError("empty corpus")
    return {
        "descriptions": len(reports),
        "passed": sum(r.passed for r in reports),
        "min_sentences": min(r.sentence_count for r in reports),
        "mean_sentences": statistics.fmean(r.sentence_count for r in reports),
        "mean_words": statistics.fmean(r.word_count for r in reports),
        "min_words": min(r.word_count for r in reports),
        "max_words": max(r.word_count for r in reports),
    }


def manifest_stats(path):
    recs = read_manifest(path)
    texts = [t for r in recs for t in (r.description_1, r.description_2)]
    stats = corpus_stats(texts)
    stats["records"] = len(recs)
    stats["validated_records"] = sum(r.validated for r in recs)
    return stats


def validate_manifest(path):
    """Check every record and its embedding files; returns a list of problems."""
    path = Path(path)
    problems = []
    root = path.parent
    for rec in read_manifest(path):
        try:
            rec.load_embeddings(root)
        except (OSError, FormatError) as exc:
            problems.append(f"{rec.pair_id}: {exc}")
        if not rec.validated:
            continue
        for i, text in enumerate((rec.description_1, rec.description_2), 1):
            rep = validate_description(text)
            if not rep.passed:
                problems.append(f"{rec.pair_id}: description_{i} has only {rep.sentence_count} sentences")
    return problems
