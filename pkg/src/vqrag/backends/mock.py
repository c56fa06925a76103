"""Deterministic stand-ins for the model backends.

Every mock is referentially transparent: output is a pure function of the
request (plus seed), so tests and the offline CLI mode are reproducible
byte-for-byte. All mocks record their requests in ``self.calls``.
"""

from __future__ import annotations

import base64
import json
import re
import zlib
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..domain import BoundingRegion, EmbeddingVector, sha256_hex
from ..errors import BackendError
from .protocol import (
    BackendSet,
    ChatBackend,
    ChatRequest,
    ChatResponse,
    DetectBackend,
    DetectRequest,
    DetectResponse,
    EmbedBackend,
    validate_detect_response,
)

MOCK_ENCODER_BINS = 4096

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class ScriptedChatBackend(ChatBackend):
    """Chat mock whose completions come from a responder function.

    The responder receives (request, sample_index) and must be pure; the
    default derives a short pseudo-reply from the request digest and seed.
    """

    def __init__(
        self,
        responder: Callable[[ChatRequest, int], str] | None = None,
        backend_id: str = "mock-chat",
    ):
        self.responder = responder or _digest_responder
        self.backend_id = backend_id
        self.calls: list[ChatRequest] = []

    def chat(self, req: ChatRequest) -> ChatResponse:
        self.calls.append(req)
        completions = tuple(self.responder(req, i) for i in range(req.n_samples))
        return ChatResponse(completions=completions, backend_id=self.backend_id)


def _digest_responder(req: ChatRequest, i: int) -> str:
    return f"mock-reply {req.digest()[:12]} seed={req.seed} sample={i}"


class FixtureReplayChatBackend(ChatBackend):
    """Replays recorded completions from ``<dir>/<request-digest>.json`` files."""

    def __init__(self, fixture_dir: str | Path, backend_id: str = "fixture-chat"):
        self.fixture_dir = Path(fixture_dir)
        self.backend_id = backend_id
        self.calls: list[ChatRequest] = []

    def chat(self, req: ChatRequest) -> ChatResponse:
        self.calls.append(req)
        path = self.fixture_dir / f"{req.digest()}.json"
        if not path.is_file():
            raise BackendError(f"no recorded fixture for request digest {req.digest()}")
        data = json.loads(path.read_text("utf-8"))
        return ChatResponse(completions=tuple(data["completions"]), backend_id=self.backend_id)

    def record(self, req: ChatRequest, completions: Sequence[str]) -> None:
        self.fixture_dir.mkdir(parents=True, exist_ok=True)
        path = self.fixture_dir / f"{req.digest()}.json"
        path.write_text(json.dumps({"completions": list(completions)}, indent=2), "utf-8")


class HashedVocabEncoder(EmbedBackend):
    """Token-frequency mock encoder over a fixed hashed vocabulary.

    Texts are lowercased and split into alphanumeric tokens; each token is
    hashed with crc32 into one of ``bins`` slots and the vector counts slot
    hits. Identical texts therefore embed identically, and overlapping
    vocabulary yields cosine similarity proportional to shared tokens.
    Vectors are raw counts; normalization is the caller's job.
    """

    def __init__(self, bins: int = MOCK_ENCODER_BINS, backend_id: str = "mock-encoder"):
        if bins <= 0:
            raise ValueError("bins must be > 0")
        self.bins = bins
        self.backend_id = backend_id
        self.calls: list[tuple[str, ...]] = []

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise BackendError("embed called with no texts")
        self.calls.append(tuple(texts))
        out = []
        for text in texts:
            if not text.strip():
                raise BackendError("embed called with an empty text")
            vec = np.zeros(self.bins, dtype=np.float64)
            for tok in _TOKEN_RE.findall(text.lower()):
                vec[zlib.crc32(tok.encode("utf-8")) % self.bins] += 1.0
            out.append(EmbeddingVector.of(vec))
        return out


class ScriptedDetector(DetectBackend):
    """Replays recorded boxes keyed by (image content digest, prompt).

    Unscripted queries return no regions (no-detection is not an error).
    Regions below the request's min_score are filtered out, matching the
    server-side contract.
    """

    def __init__(self, fixtures: dict[tuple[str, str], Sequence[BoundingRegion]] | None = None):
        self.fixtures = {k: tuple(v) for k, v in (fixtures or {}).items()}
        self.calls: list[DetectRequest] = []

    @staticmethod
    def image_key(image_b64: str) -> str:
        return sha256_hex(base64.b64decode(image_b64))

    def add(self, image_b64: str, prompt: str, regions: Sequence[BoundingRegion]) -> None:
        self.fixtures[(self.image_key(image_b64), prompt)] = tuple(regions)

    def detect(self, req: DetectRequest) -> DetectResponse:
        self.calls.append(req)
        key = (self.image_key(req.image.data_b64), req.prompt)
        regions = tuple(r for r in self.fixtures.get(key, ()) if r.score >= req.min_score)
        return validate_detect_response(req, DetectResponse(regions=regions))


class CannedPipelineResponder:
    """Routes chat requests to stage-appropriate canned replies.

    Recognition is keyed on fixed template substrings, so one chat mock can
    serve the organizer, global/local description, aggregation, and answer
    calls of a full offline pipeline run.
    """

    def __init__(
        self,
        decomposition: dict | None = None,
        global_text: str | None = None,
        local_text: str | None = None,
        aggregate_text: str | None = None,
        answer_text: str | None = None,
    ):
        self.decomposition = decomposition or {
            "subject": "none",
            "dimension": "overall perceptual quality",
            "scope": "spatial",
            "focus": "none",
        }
        self.global_text = global_text or (
            "The picture is generally sharp with stable contrast. "
            "Colors look natural and luminance is well balanced. "
            "Mild noise is visible in darker regions."
        )
        self.local_text = local_text or (
            "The subject region shows good clarity with minor softness at the edges."
        )
        self.aggregate_text = aggregate_text or (
            "The content is sharp overall with minor local blur and no strong artifacts."
        )
        self.answer_text = answer_text

    def __call__(self, req: ChatRequest, i: int) -> str:
        text = "\n".join(req.text_parts())
        if "structured quality-analysis schema" in text:
            return json.dumps(self.decomposition)
        if "ONE final visual quality description" in text:
            return self.aggregate_text
        if "overall perceptual quality description in terms of" in text:
            return self.global_text
        if "You are performing a visual quality understanding task" in text:
            if self.answer_text is not None:
                return self.answer_text
            letter = _first_option_letter(text)
            return (
                "<think>Based on the observed clarity and the reference descriptions, "
                "the quality evidence is consistent.</think>"
                f"<answer>{letter}</answer>"
            )
        return f"{self.local_text} (variant {req.seed})"


def _first_option_letter(prompt_text: str) -> str:
    m = re.search(r"^([A-Z])\. ", prompt_text, flags=re.MULTILINE)
    return m.group(1) if m else "A"


def mock_backend_set(
    responder: Callable[[ChatRequest, int], str] | None = None,
    detector_fixtures: dict[tuple[str, str], Sequence[BoundingRegion]] | None = None,
    encoder_bins: int = MOCK_ENCODER_BINS,
) -> BackendSet:
    """A fully offline, deterministic backend set for tests and --mock runs."""
    resp = responder or CannedPipelineResponder()
    return BackendSet(
        main=ScriptedChatBackend(resp, backend_id="mock-main"),
        aux=ScriptedChatBackend(resp, backend_id="mock-aux"),
        encoder=HashedVocabEncoder(bins=encoder_bins),
        detector=ScriptedDetector(detector_fixtures),
    )
