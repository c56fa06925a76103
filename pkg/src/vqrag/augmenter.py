"""Stage 2: build the four auxiliary knowledge databases.

Order and provenance are fixed: metadata sentences, subject localization
sentences, global quality summary sentences, then aggregated local quality
description sentences. Only flag-enabled databases run, and a disabled flag
means zero backend calls for that database.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

from . import prompts
from .backends.protocol import (
    BackendSet,
    ChatBackend,
    ChatRequest,
    DetectBackend,
    DetectRequest,
    MessagePart,
    SamplingParams,
    TextPart,
    encode_pixels,
    frames_attachment,
)
from .domain import (
    BackendCall,
    BoundingRegion,
    FrameSample,
    FrozenModel,
    KnowledgeBundle,
    KnowledgeEntry,
    KnowledgeFlags,
    MediaInput,
    MediaKind,
    MediaMetadata,
    QualityQuestion,
    SourceDb,
    StructuredRequest,
)
from .errors import BackendError, VqragError
from .mediaprobe import crop_subject
from .selector import entry_sentences

DEFAULT_N_LOCAL = 4
DEFAULT_DETECTOR_MIN_SCORE = 0.3

# nucleus sampling for the stochastic local descriptions; top_k=0 disables
# hard top-k truncation
LOCAL_SAMPLING = SamplingParams(temperature=1.0, top_p=0.95, top_k=0, max_tokens=1024)
GREEDY_SAMPLING = SamplingParams(temperature=0.0, top_p=1.0, top_k=0, max_tokens=1024)

NULL_DIMENSION = "overall perceptual quality"
NULL_SUBJECT = "main content"


class LocalQueryPlan(FrozenModel):
    """How the local quality description will be asked for and what it sees."""

    query_text: str
    visual_mode: Literal["cropped_regions", "full_frames"]
    inputs: int


class KnowledgeBuildError(VqragError):
    """One or more database builders failed; keyed by database name."""

    def __init__(self, failures: dict[str, Exception]):
        detail = "; ".join(f"{db}: {exc}" for db, exc in failures.items())
        super().__init__(f"knowledge build failed ({detail})")
        self.failures = failures


@dataclass
class SlotInputs:
    """Per-media-slot inputs to the builders (aux-role, original-resolution frames)."""

    media: MediaInput
    meta: MediaMetadata
    frames: list[FrameSample]


@dataclass
class AugmentOutcome:
    bundle: KnowledgeBundle
    calls: list[BackendCall] = field(default_factory=list)
    notes: dict = field(default_factory=dict)


def _ts(t: float) -> str:
    return f"{t:g}"


def build_meta_entries(meta: MediaMetadata, kind: MediaKind, slot: int = 1) -> list[KnowledgeEntry]:
    """One fixed-template sentence per present metadata field."""
    noun = "image" if kind is MediaKind.image else "video"
    w, h = meta.resolution
    sentences = [f"The {noun} resolution is {w}x{h}."]
    if meta.frame_rate is not None:
        sentences.append(f"The video frame rate is {meta.frame_rate:g} frames per second.")
    if meta.duration is not None:
        sentences.append(f"The video duration is {meta.duration:.1f} seconds.")
    if meta.avg_bitrate is not None:
        sentences.append(f"The video average bitrate is {meta.avg_bitrate / 1e6:.2f} Mbps.")
    if meta.bitrate_trend is not None:
        sentences.append(f"The bitrate trend over time is {meta.bitrate_trend.describe()}.")
    return [KnowledgeEntry(text=s, source_db=SourceDb.meta, media_slot=slot) for s in sentences]


def format_region(region: BoundingRegion, width: int, height: int) -> str:
    return (
        f"[{region.x0 / width:.2f},{region.y0 / height:.2f},"
        f"{region.x1 / width:.2f},{region.y1 / height:.2f}]"
    )


def build_localization(
    frames: Sequence[FrameSample],
    subject: str,
    detector: DetectBackend,
    min_score: float = DEFAULT_DETECTOR_MIN_SCORE,
    slot: int = 1,
) -> tuple[list[KnowledgeEntry], list[tuple[BoundingRegion, ...]]]:
    """Detect the subject on every sampled frame; one sentence per frame.

    Returns the entries plus the per-frame region tuples (used later for
    subject-centric crops). Zero detections is not an error.
    """
    entries: list[KnowledgeEntry] = []
    per_frame: list[tuple[BoundingRegion, ...]] = []
    for frame in frames:
        req = DetectRequest(image=encode_pixels(frame.pixels), prompt=subject, min_score=min_score)
        regions = detector.detect(req).regions
        per_frame.append(regions)
        if not regions:
            text = f"No {subject} detected at t={_ts(frame.timestamp)}s."
        else:
            n = len(regions)
            noun = "region" if n == 1 else "regions"
            boxes = ", ".join(format_region(r, frame.width, frame.height) for r in regions)
            text = f"{n} {noun} of the {subject} detected at t={_ts(frame.timestamp)}s: {boxes}."
        entries.append(KnowledgeEntry(text=text, source_db=SourceDb.loc, media_slot=slot))
    return entries, per_frame


def visual_parts(frames: Sequence[FrameSample], kind: MediaKind) -> list[MessagePart]:
    if kind is MediaKind.image:
        return [encode_pixels(frames[0].pixels)]
    return [frames_attachment(frames)]


def build_global_summary(
    frames: Sequence[FrameSample],
    kind: MediaKind,
    aux: ChatBackend,
    slot: int = 1,
    seed: int | None = None,
) -> list[KnowledgeEntry]:
    """One aux chat call with the fixed global quality query; reply split to sentences."""
    query = prompts.load("global")
    req = ChatRequest(
        role="aux",
        messages=tuple([TextPart(text=query), *visual_parts(frames, kind)]),
        sampling=GREEDY_SAMPLING,
        n_samples=1,
        seed=seed,
    )
    reply = aux.chat(req).completions[0]
    return [
        KnowledgeEntry(text=s, source_db=SourceDb.globalq, media_slot=slot)
        for s in entry_sentences(reply)
    ]


def plan_local_query(
    r: StructuredRequest,
    n_inputs: int,
    has_regions: bool = False,
) -> LocalQueryPlan:
    """Instantiate the local quality query and pick its visual inputs.

    Cropped regions apply only to spatial-scope queries with a localized
    subject; everything else (including temporal scope) keeps full frames.
    """
    template = prompts.load("local_single" if n_inputs == 1 else "local_pair")
    text = prompts.render(
        template,
        {
            "dimension": r.dimension or NULL_DIMENSION,
            "subject": r.subject or NULL_SUBJECT,
        },
    )
    if r.focus is not None:
        text += f" Pay attention to {r.focus}."
    cropped = r.scope is not None and r.scope.value == "spatial" and r.subject is not None and has_regions
    return LocalQueryPlan(
        query_text=text,
        visual_mode="cropped_regions" if cropped else "full_frames",
        inputs=n_inputs,
    )


def build_local_descriptions(
    plan: LocalQueryPlan,
    visuals: Sequence[MessagePart],
    aux: ChatBackend,
    n_l: int = DEFAULT_N_LOCAL,
    seed: int | None = None,
) -> tuple[list[KnowledgeEntry], dict]:
    """n_l stochastic descriptions consolidated by one aggregation call.

    Samples use nucleus sampling with distinct seeds 1..n_l; failed samples
    are skipped (degraded flag) as long as at least one survives.
    """
    messages = tuple([TextPart(text=plan.query_text), *visuals])
    descriptions: list[str] = []
    failures = 0
    last_error: Exception | None = None
    for i in range(1, n_l + 1):
        req = ChatRequest(
            role="aux", messages=messages, sampling=LOCAL_SAMPLING, n_samples=1, seed=i
        )
        try:
            descriptions.append(aux.chat(req).completions[0])
        except BackendError as exc:
            failures += 1
            last_error = exc
    if not descriptions:
        raise BackendError(f"all {n_l} local description samples failed: {last_error}")

    numbered = "\n".join(f"{i}. {d}" for i, d in enumerate(descriptions, start=1))
    agg_prompt = prompts.render(
        prompts.load("aggregate"),
        {"n": str(len(descriptions)), "numbered_descriptions": numbered},
    )
    agg_req = ChatRequest(
        role="aux",
        messages=(TextPart(text=agg_prompt),),
        sampling=GREEDY_SAMPLING,
        n_samples=1,
        seed=seed,
    )
    reply = aux.chat(agg_req).completions[0]
    entries = [
        KnowledgeEntry(text=s, source_db=SourceDb.localq, media_slot=1)
        for s in entry_sentences(reply)
    ]
    notes = {"samples": len(descriptions), "failed_samples": failures}
    return entries, notes


def local_visuals(
    plan: LocalQueryPlan,
    slots: Sequence[SlotInputs],
    per_slot_regions: Sequence[Sequence[tuple[BoundingRegion, ...]]],
) -> tuple[list[MessagePart], dict]:
    """Visual message parts for the local sampling calls.

    In cropped mode every image part is a crop_subject output (full-frame
    fallback on frames with no regions). Pair inputs are interleaved with
    "First input:" / "Second input:" text separators.
    """
    parts: list[MessagePart] = []
    fallbacks = 0
    separators = ["First input:", "Second input:"]
    for idx, slot in enumerate(slots):
        if len(slots) == 2:
            parts.append(TextPart(text=separators[idx]))
        if plan.visual_mode == "cropped_regions":
            regions = per_slot_regions[idx] if idx < len(per_slot_regions) else []
            for fi, frame in enumerate(slot.frames):
                frame_regions = regions[fi] if fi < len(regions) else ()
                crop = crop_subject(frame, frame_regions)
                fallbacks += int(crop.fallback)
                parts.append(encode_pixels(crop.pixels))
        else:
            parts.extend(visual_parts(slot.frames, slot.media.kind))
    return parts, {"crop_fallbacks": fallbacks}


def build_bundle(
    slots: Sequence[SlotInputs],
    q: QualityQuestion,
    r: StructuredRequest,
    flags: KnowledgeFlags,
    backends: BackendSet,
    n_l: int = DEFAULT_N_LOCAL,
    detector_min_score: float = DEFAULT_DETECTOR_MIN_SCORE,
    seed: int | None = None,
) -> AugmentOutcome:
    """Run the flag-enabled builders in database order and assemble the bundle."""
    if len(slots) != q.n_inputs:
        raise VqragError(f"{len(slots)} media slots for a {q.n_inputs}-input question")

    entries: list[KnowledgeEntry] = []
    calls: list[BackendCall] = []
    notes: dict = {}
    failures: dict[str, Exception] = {}
    per_slot_regions: list[list[tuple[BoundingRegion, ...]]] = [[] for _ in slots]

    if flags.meta:
        try:
            for i, slot in enumerate(slots, start=1):
                entries.extend(build_meta_entries(slot.meta, slot.media.kind, slot=i))
        except VqragError as exc:
            failures["meta"] = exc

    if flags.loc and r.subject is not None:
        try:
            for i, slot in enumerate(slots, start=1):
                loc_entries, regions = build_localization(
                    slot.frames, r.subject, backends.detector, detector_min_score, slot=i
                )
                entries.extend(loc_entries)
                per_slot_regions[i - 1] = regions
                calls.append(
                    BackendCall(
                        role="detector", op="detect", purpose="localize", count=len(slot.frames)
                    )
                )
        except VqragError as exc:
            failures["loc"] = exc

    if flags.globalq:
        try:
            for i, slot in enumerate(slots, start=1):
                entries.extend(
                    build_global_summary(slot.frames, slot.media.kind, backends.aux, slot=i, seed=seed)
                )
                calls.append(BackendCall(role="aux", op="chat", purpose="global_summary"))
        except VqragError as exc:
            failures["globalq"] = exc

    if flags.localq:
        try:
            has_regions = any(any(regions) for slot in per_slot_regions for regions in slot)
            plan = plan_local_query(r, q.n_inputs, has_regions=has_regions)
            visuals, visual_notes = local_visuals(plan, slots, per_slot_regions)
            local_entries, local_notes = build_local_descriptions(
                plan, visuals, backends.aux, n_l=n_l, seed=seed
            )
            entries.extend(local_entries)
            calls.append(
                BackendCall(role="aux", op="chat", purpose="local_sample", count=local_notes["samples"])
            )
            calls.append(BackendCall(role="aux", op="chat", purpose="aggregate"))
            notes["local_plan"] = plan.model_dump(mode="json")
            notes.update(visual_notes)
            notes.update(local_notes)
        except VqragError as exc:
            failures["localq"] = exc

    if failures:
        raise KnowledgeBuildError(failures)

    bundle = KnowledgeBundle(entries=tuple(entries), request=r, flags=flags)
    return AugmentOutcome(bundle=bundle, calls=calls, notes=notes)
