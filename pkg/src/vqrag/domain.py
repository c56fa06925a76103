"""Shared value types used by every pipeline stage.

All types are immutable after construction and serialize to canonical JSON
(sorted keys, compact separators) so they can be hashed, cached, and sent
over the service boundary. NULL-able request fields use Python ``None``
internally; the literal strings "none"/"NULL" only appear at the wire
boundary (model replies and rendered prompts).
"""

from __future__ import annotations

import base64
import hashlib
import json
import string
from enum import Enum
from pathlib import Path
from typing import Any

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, field_serializer, field_validator, model_validator

from .errors import DomainError

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff"}


def canonical_json(data: Any) -> str:
    """Canonical JSON text: sorted keys, compact separators, no NaN."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    def to_json(self) -> str:
        return canonical_json(self.model_dump(mode="json"))

    @classmethod
    def from_json(cls, text: str):
        return cls.model_validate_json(text)


class MediaKind(str, Enum):
    image = "image"
    video = "video"


class MediaInput(FrozenModel):
    """A media file under assessment, identified by content digest."""

    kind: MediaKind
    path: str
    content_digest: str

    @classmethod
    def from_path(cls, path: str | Path, kind: MediaKind | None = None) -> "MediaInput":
        p = Path(path)
        if not p.is_file():
            raise DomainError(f"media path does not exist: {p}")
        data = p.read_bytes()
        if kind is None:
            kind = _sniff_kind(p)
        return cls(kind=kind, path=str(p), content_digest=sha256_hex(data))


def _sniff_kind(path: Path) -> MediaKind:
    if path.suffix.lower() in _IMAGE_SUFFIXES:
        return MediaKind.image
    # decodable as a still image counts as an image; everything else is video
    if cv2.imread(str(path)) is not None:
        return MediaKind.image
    return MediaKind.video


class QuestionOption(FrozenModel):
    label: str
    text: str

    @field_validator("label")
    @classmethod
    def _single_upper_letter(cls, v: str) -> str:
        if len(v) != 1 or v not in string.ascii_uppercase:
            raise ValueError(f"option label must be a single letter A..Z, got {v!r}")
        return v


class QualityQuestion(FrozenModel):
    """A quality-related question, optionally multiple-choice, spanning 1 or 2 inputs."""

    text: str
    options: tuple[QuestionOption, ...] = ()
    n_inputs: int = 1

    @field_validator("text")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("question text is empty")
        return v

    @field_validator("n_inputs")
    @classmethod
    def _one_or_two(cls, v: int) -> int:
        if v not in (1, 2):
            raise ValueError(f"n_inputs must be 1 or 2, got {v}")
        return v

    @model_validator(mode="after")
    def _labels_in_order(self) -> "QualityQuestion":
        labels = [o.label for o in self.options]
        expected = list(string.ascii_uppercase[: len(labels)])
        if labels != expected:
            raise ValueError(f"option labels must be A, B, ... in order, got {labels}")
        return self

    @classmethod
    def mcq(cls, text: str, option_texts: list[str] | tuple[str, ...], n_inputs: int = 1) -> "QualityQuestion":
        opts = tuple(
            QuestionOption(label=string.ascii_uppercase[i], text=t)
            for i, t in enumerate(option_texts)
        )
        return cls(text=text, options=opts, n_inputs=n_inputs)

    def rendered_text(self) -> str:
        """Question text with the option list appended, one option per line."""
        if not self.options:
            return self.text
        lines = [self.text] + [f"{o.label}. {o.text}" for o in self.options]
        return "\n".join(lines)

    def labels(self) -> tuple[str, ...]:
        return tuple(o.label for o in self.options)


def validate_question(text: str, options: list[str] | tuple[str, ...] = (), n_inputs: int = 1) -> QualityQuestion:
    """Build a validated question from raw fields; raises DomainError on violation."""
    try:
        return QualityQuestion.mcq(text, list(options), n_inputs)
    except (ValueError, TypeError) as exc:
        raise DomainError(str(exc)) from exc


class Scope(str, Enum):
    spatial = "spatial"
    temporal = "temporal"


class StructuredRequest(FrozenModel):
    """Four-field decomposition of a quality question; None marks an absent field."""

    subject: str | None = None
    dimension: str | None = None
    scope: Scope | None = None
    focus: str | None = None

    @classmethod
    def null(cls) -> "StructuredRequest":
        return cls()

    def is_null(self) -> bool:
        return self.subject is None and self.dimension is None and self.scope is None and self.focus is None


class BitrateTrend(str, Enum):
    increasing = "increasing"
    decreasing = "decreasing"
    constant_high = "constant_high"
    constant_low = "constant_low"

    def describe(self) -> str:
        return self.value.replace("_", " ")


class MediaMetadata(FrozenModel):
    """Technical attributes of one media input. Images carry only the resolution."""

    resolution: tuple[int, int]
    frame_rate: float | None = None
    duration: float | None = None
    avg_bitrate: float | None = None
    bitrate_trend: BitrateTrend | None = None

    @field_validator("avg_bitrate")
    @classmethod
    def _positive(cls, v: float | None) -> float | None:
        if v is not None and v <= 0:
            raise ValueError(f"avg_bitrate must be > 0 when present, got {v}")
        return v


class FrameSample(FrozenModel):
    """One decoded frame from the 1 fps sample set.

    Pixels are a HxWx3 uint8 array (BGR); the canonical JSON form carries them
    as base64 PNG so samples round-trip losslessly.
    """

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    timestamp: float
    index: int
    pixels: np.ndarray

    @field_validator("pixels", mode="before")
    @classmethod
    def _decode_pixels(cls, v):
        if isinstance(v, str):
            raw = base64.b64decode(v)
            arr = cv2.imdecode(np.frombuffer(raw, np.uint8), cv2.IMREAD_COLOR)
            if arr is None:
                raise ValueError("pixels field is not a decodable PNG")
            return arr
        if isinstance(v, np.ndarray):
            if v.ndim != 3 or v.shape[2] != 3 or v.dtype != np.uint8:
                raise ValueError("pixels must be a HxWx3 uint8 array")
            return v
        raise ValueError("pixels must be an ndarray or base64 PNG string")

    @field_serializer("pixels")
    def _encode_pixels(self, v: np.ndarray) -> str:
        ok, buf = cv2.imencode(".png", v)
        if not ok:
            raise ValueError("failed to encode pixels as PNG")
        return base64.b64encode(buf.tobytes()).decode("ascii")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FrameSample):
            return NotImplemented
        return (
            self.timestamp == other.timestamp
            and self.index == other.index
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


class BoundingRegion(FrozenModel):
    """Detector box in source-frame pixel coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float
    score: float
    label: str = ""

    @model_validator(mode="after")
    def _well_formed(self) -> "BoundingRegion":
        if not (0 <= self.x0 < self.x1):
            raise ValueError(f"require 0 <= x0 < x1, got x0={self.x0}, x1={self.x1}")
        if not (0 <= self.y0 < self.y1):
            raise ValueError(f"require 0 <= y0 < y1, got y0={self.y0}, y1={self.y1}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0,1], got {self.score}")
        return self

    def check_within(self, width: int, height: int) -> None:
        if self.x1 > width or self.y1 > height:
            raise DomainError(
                f"region ({self.x0},{self.y0},{self.x1},{self.y1}) exceeds frame {width}x{height}"
            )


class SourceDb(str, Enum):
    meta = "meta"
    loc = "loc"
    globalq = "globalq"
    localq = "localq"


DB_ORDER = (SourceDb.meta, SourceDb.loc, SourceDb.globalq, SourceDb.localq)


class KnowledgeEntry(FrozenModel):
    """One retrievable sentence of auxiliary knowledge."""

    text: str
    source_db: SourceDb
    media_slot: int = 1
    embedding: tuple[float, ...] | None = None

    @field_validator("text")
    @classmethod
    def _non_blank(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("entry text is empty after trim")
        return v

    @field_validator("media_slot")
    @classmethod
    def _slot(cls, v: int) -> int:
        if v not in (1, 2):
            raise ValueError(f"media_slot must be 1 or 2, got {v}")
        return v

    @field_validator("embedding")
    @classmethod
    def _unit_norm(cls, v):
        if v is not None:
            norm = float(np.linalg.norm(np.asarray(v, dtype=np.float64)))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"embedding must be unit length, norm={norm}")
        return v


class KnowledgeFlags(FrozenModel):
    """Which of the four databases are enabled (the ablation toggles)."""

    meta: bool = True
    loc: bool = True
    globalq: bool = True
    localq: bool = True

    def enabled(self, db: SourceDb) -> bool:
        return bool(getattr(self, db.value))

    def enabled_dbs(self) -> tuple[SourceDb, ...]:
        return tuple(db for db in DB_ORDER if self.enabled(db))

    @classmethod
    def none(cls) -> "KnowledgeFlags":
        return cls(meta=False, loc=False, globalq=False, localq=False)


class KnowledgeBundle(FrozenModel):
    """All candidate knowledge entries for one question, in database order."""

    entries: tuple[KnowledgeEntry, ...]
    request: StructuredRequest
    flags: KnowledgeFlags

    @model_validator(mode="after")
    def _ordered_and_enabled(self) -> "KnowledgeBundle":
        order = {db: i for i, db in enumerate(DB_ORDER)}
        last = -1
        for e in self.entries:
            if not self.flags.enabled(e.source_db):
                raise ValueError(f"entry from disabled database {e.source_db.value!r}")
            rank = order[e.source_db]
            if rank < last:
                raise ValueError("entries are not in meta->loc->globalq->localq order")
            last = rank
        return self


class ScoredEntry(FrozenModel):
    entry: KnowledgeEntry
    score: float


class EvidenceSet(FrozenModel):
    """Entries retained by range retrieval, with their similarity scores."""

    retained: tuple[ScoredEntry, ...]
    threshold: float

    @model_validator(mode="after")
    def _above_threshold(self) -> "EvidenceSet":
        for se in self.retained:
            if se.score < self.threshold - 1e-9:
                raise ValueError(f"score {se.score} below threshold {self.threshold}")
        return self


class EmbeddingVector(FrozenModel):
    values: tuple[float, ...]
    dim: int

    @model_validator(mode="after")
    def _consistent(self) -> "EmbeddingVector":
        if self.dim <= 0:
            raise ValueError("dim must be > 0")
        if len(self.values) != self.dim:
            raise ValueError(f"dim={self.dim} but got {len(self.values)} values")
        return self

    @classmethod
    def of(cls, values) -> "EmbeddingVector":
        vals = tuple(float(x) for x in values)
        return cls(values=vals, dim=len(vals))


class BackendCall(FrozenModel):
    """One logical backend invocation recorded in the audit trail."""

    role: str
    op: str
    purpose: str
    count: int = 1


class StageAudit(FrozenModel):
    name: str
    cache_hit: bool = False
    duration_ms: float = 0.0
    backend_calls: tuple[BackendCall, ...] = ()


class RunAudit(FrozenModel):
    """Operational record of one pipeline run: timings, cache hits, call log, config echo."""

    stages: tuple[StageAudit, ...] = ()
    config: dict[str, Any] = {}
    flags: dict[str, Any] = {}

    def stage(self, name: str) -> StageAudit:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def calls(self, purpose: str | None = None) -> list[BackendCall]:
        out = []
        for s in self.stages:
            for c in s.backend_calls:
                if purpose is None or c.purpose == purpose:
                    out.append(c)
        return out


class AnswerRecord(FrozenModel):
    """Final product of a run: assembled prompt, model output, parsed answer, audit."""

    prompt_text: str
    raw_output: str
    reasoning: str | None = None
    answer_text: str | None = None
    answer_letter: str | None = None
    audit: RunAudit = RunAudit()

    def payload_json(self) -> str:
        """Canonical JSON of the deterministic answer payload (audit excluded).

        Timings and cache-hit flags in the audit legitimately differ between
        runs; this projection is the surface the determinism guarantees cover.
        """
        data = self.model_dump(mode="json")
        data.pop("audit")
        return canonical_json(data)
