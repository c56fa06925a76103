"""Wire protocol for the four external model roles.

The engine is model-agnostic: every LMM/encoder/detector is reached through
POST /v1/chat, /v1/embed, /v1/detect carrying the JSON bodies defined here.
Adapters on the server side translate these to concrete models.
"""

from __future__ import annotations

import base64
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Annotated, Literal, Sequence

import cv2
import numpy as np
from pydantic import Field, field_validator, model_validator

from ..domain import BoundingRegion, EmbeddingVector, FrameSample, FrozenModel, canonical_json, sha256_hex
from ..errors import ProtocolError


class TextPart(FrozenModel):
    type: Literal["text"] = "text"
    text: str


class ImagePart(FrozenModel):
    type: Literal["image"] = "image"
    data_b64: str
    media_type: str = "image/png"


class FrameAttachment(FrozenModel):
    data_b64: str
    media_type: str = "image/png"
    timestamp: float = 0.0


class FramesPart(FrozenModel):
    type: Literal["frames"] = "frames"
    frames: tuple[FrameAttachment, ...]


MessagePart = Annotated[TextPart | ImagePart | FramesPart, Field(discriminator="type")]


class SamplingParams(FrozenModel):
    """Decoding controls; top_k=0 means hard top-k truncation is disabled."""

    temperature: float = 0.0
    top_p: float = 1.0
    top_k: int = 0
    max_tokens: int = 1024

    @field_validator("temperature")
    @classmethod
    def _temp(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"temperature must be >= 0, got {v}")
        return v

    @field_validator("top_p")
    @classmethod
    def _top_p(cls, v: float) -> float:
        if not (0 < v <= 1):
            raise ValueError(f"top_p must be in (0, 1], got {v}")
        return v


class ChatRequest(FrozenModel):
    role: Literal["main", "aux"]
    messages: tuple[MessagePart, ...]
    sampling: SamplingParams = SamplingParams()
    n_samples: int = 1
    seed: int | None = None

    @field_validator("n_samples")
    @classmethod
    def _at_least_one(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"n_samples must be >= 1, got {v}")
        return v

    @model_validator(mode="after")
    def _has_text(self) -> "ChatRequest":
        if not any(isinstance(p, TextPart) for p in self.messages):
            raise ValueError("chat request needs at least one text part")
        return self

    def text_parts(self) -> list[str]:
        return [p.text for p in self.messages if isinstance(p, TextPart)]

    def image_parts(self) -> list[ImagePart]:
        return [p for p in self.messages if isinstance(p, ImagePart)]

    def frames_parts(self) -> list[FramesPart]:
        return [p for p in self.messages if isinstance(p, FramesPart)]

    def digest(self) -> str:
        return sha256_hex(self.to_json().encode("utf-8"))


class ChatResponse(FrozenModel):
    completions: tuple[str, ...]
    backend_id: str


class EmbedRequest(FrozenModel):
    texts: tuple[str, ...]

    @field_validator("texts")
    @classmethod
    def _non_empty(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        if not v:
            raise ValueError("texts must be non-empty")
        for t in v:
            if not t.strip():
                raise ValueError("each text must be non-empty")
        return v

    def digest(self) -> str:
        return sha256_hex(self.to_json().encode("utf-8"))


class EmbedResponse(FrozenModel):
    vectors: tuple[tuple[float, ...], ...]
    dim: int
    backend_id: str


class DetectRequest(FrozenModel):
    image: ImagePart
    prompt: str
    min_score: float = 0.3

    @field_validator("min_score")
    @classmethod
    def _in_unit(cls, v: float) -> float:
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"min_score must be in [0,1], got {v}")
        return v

    def digest(self) -> str:
        return sha256_hex(self.to_json().encode("utf-8"))


class DetectResponse(FrozenModel):
    regions: tuple[BoundingRegion, ...]


def encode_pixels(pixels: np.ndarray) -> ImagePart:
    ok, buf = cv2.imencode(".png", pixels)
    if not ok:
        raise ProtocolError("failed to encode pixels as PNG")
    return ImagePart(data_b64=base64.b64encode(buf.tobytes()).decode("ascii"))


def decode_image(part: ImagePart) -> np.ndarray:
    raw = base64.b64decode(part.data_b64)
    arr = cv2.imdecode(np.frombuffer(raw, np.uint8), cv2.IMREAD_COLOR)
    if arr is None:
        raise ProtocolError("image attachment is not decodable")
    return arr


def frames_attachment(frames: Sequence[FrameSample]) -> FramesPart:
    out = []
    for f in frames:
        part = encode_pixels(f.pixels)
        out.append(FrameAttachment(data_b64=part.data_b64, timestamp=f.timestamp))
    return FramesPart(frames=tuple(out))


class ChatBackend(ABC):
    @abstractmethod
    def chat(self, req: ChatRequest) -> ChatResponse: ...


class EmbedBackend(ABC):
    @abstractmethod
    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


class DetectBackend(ABC):
    @abstractmethod
    def detect(self, req: DetectRequest) -> DetectResponse: ...


@dataclass
class BackendSet:
    """The four configured model roles the pipeline talks to."""

    main: ChatBackend
    aux: ChatBackend
    encoder: EmbedBackend
    detector: DetectBackend


def validate_chat_response(req: ChatRequest, resp: ChatResponse) -> ChatResponse:
    if len(resp.completions) != req.n_samples:
        raise ProtocolError(
            f"backend returned {len(resp.completions)} completions, requested {req.n_samples}"
        )
    return resp


def validate_detect_response(req: DetectRequest, resp: DetectResponse) -> DetectResponse:
    img = decode_image(req.image)
    height, width = img.shape[:2]
    for region in resp.regions:
        if region.score < req.min_score:
            raise ProtocolError(
                f"region score {region.score} below requested min_score {req.min_score}"
            )
        if region.x1 > width or region.y1 > height:
            raise ProtocolError(
                f"region ({region.x0},{region.y0},{region.x1},{region.y1}) "
                f"exceeds image {width}x{height}"
            )
    return resp


def request_digest(payload: dict) -> str:
    return sha256_hex(canonical_json(payload).encode("utf-8"))
