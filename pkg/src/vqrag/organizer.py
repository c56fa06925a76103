"""Stage 1: decompose the quality question into a structured request.

The main LMM is prompted text-only with the decoupling template; its reply is
parsed leniently (markdown fences stripped, first balanced JSON object taken,
keys matched case-insensitively). Unparseable replies trigger up to two
re-asks with a correction instruction; after that the all-NULL request is
returned with a degraded flag rather than failing the run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import prompts
from .backends.protocol import ChatBackend, ChatRequest, SamplingParams, TextPart
from .domain import QualityQuestion, Scope, StructuredRequest

MAX_REASKS = 2

CORRECTION_INSTRUCTION = (
    "Your previous reply could not be parsed. Reply with ONLY a valid JSON object "
    'containing exactly the keys "subject", "dimension", "scope", and "focus".'
)

_NULL_STRINGS = {"", "none", "null"}

_SCOPE_MAP = {
    "spatial": Scope.spatial,
    "temporal": Scope.temporal,
    "time": Scope.temporal,
    "temporal quality": Scope.temporal,
}


@dataclass(frozen=True)
class DecouplingPrompt:
    template_id: str
    rendered: str


@dataclass(frozen=True)
class OrganizeResult:
    request: StructuredRequest
    degraded: bool
    attempts: int
    raw_reply: str


def render_decoupling(q: QualityQuestion) -> DecouplingPrompt:
    rendered = prompts.render(prompts.load("decoupling"), {"question": q.rendered_text()})
    return DecouplingPrompt(template_id="dec-v1", rendered=rendered)


def organize(q: QualityQuestion, main: ChatBackend, seed: int | None = None) -> OrganizeResult:
    """Run the text-only decoupling call and parse the structured request."""
    prompt = render_decoupling(q)
    messages: list[TextPart] = [TextPart(text=prompt.rendered)]
    for attempt in range(1, MAX_REASKS + 2):
        req = ChatRequest(
            role="main",
            messages=tuple(messages),
            sampling=SamplingParams(temperature=0.0, top_p=1.0, top_k=0),
            n_samples=1,
            seed=seed,
        )
        reply = main.chat(req).completions[0]
        fields = extract_json_object(reply)
        if fields is not None:
            return OrganizeResult(
                request=normalize_request(fields),
                degraded=False,
                attempts=attempt,
                raw_reply=reply,
            )
        messages = [TextPart(text=prompt.rendered + "\n\n" + CORRECTION_INSTRUCTION)]
    return OrganizeResult(
        request=StructuredRequest.null(),
        degraded=True,
        attempts=MAX_REASKS + 1,
        raw_reply=reply,
    )


def extract_json_object(reply: str) -> dict | None:
    """First balanced JSON object in the reply, fences stripped; None if absent."""
    text = strip_code_fences(reply)
    span = first_balanced_braces(text)
    if span is None:
        return None
    try:
        obj = json.loads(span)
    except ValueError:
        return None
    return obj if isinstance(obj, dict) else None


def strip_code_fences(text: str) -> str:
    """Drop markdown fence lines (``` or ```json), keeping their content."""
    if "```" not in text:
        return text
    kept = [line for line in text.splitlines() if not line.lstrip().startswith("```")]
    return "\n".join(kept)


def first_balanced_braces(text: str) -> str | None:
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    in_string = False
    escape = False
    for i in range(start, len(text)):
        c = text[i]
        if in_string:
            if escape:
                escape = False
            elif c == "\\":
                escape = True
            elif c == '"':
                in_string = False
            continue
        if c == '"':
            in_string = True
        elif c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def normalize_request(fields: dict) -> StructuredRequest:
    """Map raw extracted fields to the internal request (None = absent)."""
    lowered = { (k.lower() if isinstance(k, str) else k): v for k, v in fields.items() }
    return StructuredRequest(
        subject=_clean_text(lowered.get("subject")),
        dimension=_clean_text(lowered.get("dimension")),
        scope=_clean_scope(lowered.get("scope")),
        focus=_clean_text(lowered.get("focus")),
    )


def _clean_text(value) -> str | None:
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        parts = [_clean_text(v) for v in value]
        parts = [p for p in parts if p]
        return ", ".join(parts) if parts else None
    text = str(value).strip()
    if text.lower() in _NULL_STRINGS:
        return None
    return text


def _clean_scope(value) -> Scope | None:
    text = _clean_text(value)
    if text is None:
        return None
    return _SCOPE_MAP.get(text.lower())
