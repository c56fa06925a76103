"""Request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field, model_validator


class MediaRef(BaseModel):
    """A media input, either a server-visible path or inline bytes."""

    path: str | None = None
    data_b64: str | None = None
    kind: str | None = None  # image|video; required with data_b64
    filename: str | None = None

    @model_validator(mode="after")
    def _one_source(self) -> "MediaRef":
        if (self.path is None) == (self.data_b64 is None):
            raise ValueError("provide exactly one of path or data_b64")
        if self.data_b64 is not None and self.kind not in ("image", "video"):
            raise ValueError("inline media needs kind=image|video")
        return self


class ConfigOverrides(BaseModel):
    tau: float | None = None
    n_l: int | None = None
    seed: int | None = None
    fps: float | None = None
    main_resize: int | None = None
    detector_min_score: float | None = None
    meta: bool | None = None
    loc: bool | None = None
    globalq: bool | None = None
    localq: bool | None = None


class AskRequest(BaseModel):
    media: list[MediaRef] = Field(min_length=1, max_length=2)
    question: str
    options: list[str] = []
    config: ConfigOverrides | None = None


class HealthResponse(BaseModel):
    status: str
    version: str
