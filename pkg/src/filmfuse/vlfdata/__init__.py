"""VLF dataset: paired paragraph descriptions, their embeddings, and the
caption/LLM pipeline that produces them."""

from .embedding import (DEFAULT_DIM, check_feature, fuse_text_features, read_embedding, stub_embed,
                        write_embedding)
from .pipeline import VARIANTS, PromptBundle, build_dataset, build_record, call_with_retry, describe
from .schema import (MANIFEST_HEADER, MIN_SENTENCES, ValidationReport, VlfRecord, corpus_stats,
                     manifest_stats, read_manifest, validate_description, validate_manifest, write_manifest)
from .services import HttpClients, MockClients

__all__ = [
    "DEFAULT_DIM", "MANIFEST_HEADER", "MIN_SENTENCES", "VARIANTS",
    "HttpClients", "MockClients", "PromptBundle", "ValidationReport", "VlfRecord",
    "build_dataset", "build_record", "call_with_retry", "check_feature", "corpus_stats", "describe",
    "fuse_text_features", "manifest_stats", "read_embedding", "read_manifest", "stub_embed",
    "validate_description", "validate_manifest", "write_embedding", "write_manifest",
]
