"""Stage 3: sentence segmentation, embedding index, and threshold retrieval.

Retrieval is an exact flat inner-product scan over unit-normalized vectors:
the per-question corpora are tens of sentences, so approximate indexing buys
nothing while exactness keeps the range-search semantics trivially right.
The index type is the seam where an approximate backend could plug in.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .backends.protocol import EmbedBackend
from .domain import (
    EmbeddingVector,
    EvidenceSet,
    KnowledgeBundle,
    KnowledgeEntry,
    QualityQuestion,
    ScoredEntry,
)
from .errors import DomainError

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.25

_MIN_TOKENS = 3
_TOKEN_RE = re.compile(r"[A-Za-z0-9]+")
_OPEN_BRACKETS = "([{"
_CLOSE_BRACKETS = ")]}"


def segment_sentences(text: str) -> list[str]:
    """Split on '.', '!', '?' followed by whitespace or end of text.

    Decimal points never match (the terminator must be followed by
    whitespace/end) and splits inside brackets are suppressed so coordinate
    lists survive. Segments with fewer than 3 alphanumeric tokens are dropped.
    """
    segments: list[str] = []
    depth = 0
    start = 0
    n = len(text)
    for i, c in enumerate(text):
        if c in _OPEN_BRACKETS:
            depth += 1
        elif c in _CLOSE_BRACKETS:
            depth = max(0, depth - 1)
        elif c in ".!?" and depth == 0:
            if i + 1 >= n or text[i + 1].isspace():
                segments.append(text[start : i + 1])
                start = i + 1
    if start < n:
        segments.append(text[start:])
    out = []
    for seg in segments:
        seg = seg.strip()
        if seg and len(_TOKEN_RE.findall(seg)) >= _MIN_TOKENS:
            out.append(seg)
    return out


def normalize(v: EmbeddingVector) -> EmbeddingVector:
    arr = np.asarray(v.values, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise DomainError("cannot normalize a zero vector")
    return EmbeddingVector.of(arr / norm)


@dataclass(frozen=True)
class FlatIndex:
    """Exact inner-product index: unit row vectors plus entry payloads."""

    vectors: np.ndarray
    payloads: tuple[KnowledgeEntry, ...]
    dropped: tuple[KnowledgeEntry, ...] = field(default=())

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.payloads):
            raise DomainError(
                f"{self.vectors.shape[0]} vectors for {len(self.payloads)} payloads"
            )
        if self.size:
            norms = np.linalg.norm(self.vectors, axis=1)
            if not np.all(np.abs(norms - 1.0) <= 1e-6):
                raise DomainError("index rows must be unit vectors")
        self.vectors.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.payloads)


def build_index(bundle: KnowledgeBundle, encoder: EmbedBackend) -> FlatIndex:
    """Embed all bundle entries in one batch and store unit rows in bundle order."""
    entries = bundle.entries
    if not entries:
        return FlatIndex(vectors=np.zeros((0, 0), dtype=np.float64), payloads=())
    raw = encoder.embed([e.text for e in entries])
    rows, payloads, dropped = [], [], []
    for entry, vec in zip(entries, raw):
        arr = np.asarray(vec.values, dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            logger.warning("dropping zero-vector embedding for entry: %s", entry.text)
            dropped.append(entry)
            continue
        rows.append(arr / norm)
        payloads.append(entry)
    if not rows:
        return FlatIndex(vectors=np.zeros((0, 0), dtype=np.float64), payloads=(), dropped=tuple(dropped))
    return FlatIndex(vectors=np.vstack(rows), payloads=tuple(payloads), dropped=tuple(dropped))


def range_search(
    index: FlatIndex,
    q: QualityQuestion,
    tau: float = DEFAULT_TAU,
    encoder: EmbedBackend | None = None,
    query_vector: EmbeddingVector | None = None,
) -> EvidenceSet:
    """Retain every entry with inner-product similarity >= tau, in index order."""
    if not (-1.0 <= tau <= 1.0):
        raise DomainError(f"tau must be in [-1, 1], got {tau}")
    if index.size == 0:
        return EvidenceSet(retained=(), threshold=tau)
    if query_vector is None:
        if encoder is None:
            raise DomainError("range_search needs an encoder or a precomputed query vector")
        query_vector = encoder.embed([q.text])[0]
    qv = np.asarray(normalize(query_vector).values, dtype=np.float64)
    scores = index.vectors @ qv
    retained = tuple(
        ScoredEntry(entry=entry, score=float(s))
        for entry, s in zip(index.payloads, scores)
        if s >= tau
    )
    return EvidenceSet(retained=retained, threshold=tau)


def to_paragraphs(ev: EvidenceSet) -> dict[tuple[str, int], str]:
    """Join retained entries into one paragraph per (source_db, media_slot)."""
    grouped: dict[tuple[str, int], list[str]] = {}
    for se in ev.retained:
        key = (se.entry.source_db.value, se.entry.media_slot)
        grouped.setdefault(key, []).append(se.entry.text)
    return {key: " ".join(texts) for key, texts in grouped.items()}


def entry_sentences(text: str) -> list[str]:
    """Segmentation entry point used by the knowledge builders."""
    return segment_sentences(text)
