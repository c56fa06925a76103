from .http import HttpBackendConfig, HttpChatBackend, HttpDetectBackend, HttpEmbedBackend
from .mock import (
    CannedPipelineResponder,
    FixtureReplayChatBackend,
    HashedVocabEncoder,
    ScriptedChatBackend,
    ScriptedDetector,
    mock_backend_set,
)
from .protocol import (
    BackendSet,
    ChatBackend,
    ChatRequest,
    ChatResponse,
    DetectBackend,
    DetectRequest,
    DetectResponse,
    EmbedBackend,
    EmbedRequest,
    EmbedResponse,
    FrameAttachment,
    FramesPart,
    ImagePart,
    MessagePart,
    SamplingParams,
    TextPart,
    decode_image,
    encode_pixels,
    frames_attachment,
)

__all__ = [
    "BackendSet",
    "CannedPipelineResponder",
    "ChatBackend",
    "ChatRequest",
    "ChatResponse",
    "DetectBackend",
    "DetectRequest",
    "DetectResponse",
    "EmbedBackend",
    "EmbedRequest",
    "EmbedResponse",
    "FixtureReplayChatBackend",
    "FrameAttachment",
    "FramesPart",
    "HashedVocabEncoder",
    "HttpBackendConfig",
    "HttpChatBackend",
    "HttpDetectBackend",
    "HttpEmbedBackend",
    "ImagePart",
    "MessagePart",
    "SamplingParams",
    "ScriptedChatBackend",
    "ScriptedDetector",
    "TextPart",
    "decode_image",
    "encode_pixels",
    "frames_attachment",
    "mock_backend_set",
]
