"""Retrieval-augmented engine for visual quality question answering."""

__version__ = "0.1.0"

from .domain import (
    AnswerRecord,
    BoundingRegion,
    EvidenceSet,
    KnowledgeBundle,
    KnowledgeEntry,
    KnowledgeFlags,
    MediaInput,
    MediaMetadata,
    QualityQuestion,
    StructuredRequest,
)
from .pipeline import BatchResult, Engine, RunConfig

__all__ = [
    "AnswerRecord",
    "BatchResult",
    "BoundingRegion",
    "Engine",
    "EvidenceSet",
    "KnowledgeBundle",
    "KnowledgeEntry",
    "KnowledgeFlags",
    "MediaInput",
    "MediaMetadata",
    "QualityQuestion",
    "RunConfig",
    "StructuredRequest",
    "__version__",
]
