"""Orchestration: organize -> augment -> select -> generate, with caching.

Each stage's output is cached as one JSON file under
``<cache_dir>/<stage>/<key>.json``; the key hashes the media content digests,
the question, the stage name, the config subset the stage depends on, the
prompt-asset digests, and the upstream stage's output digest. A cache hit
skips every backend call of that stage, which is what makes ablation sweeps
cheap: toggling one database reuses all unaffected stages.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from pydantic import field_validator

from . import augmenter, generator, organizer, prompts, selector
from .backends.protocol import BackendSet
from .domain import (
    AnswerRecord,
    BackendCall,
    EvidenceSet,
    FrozenModel,
    KnowledgeBundle,
    KnowledgeFlags,
    MediaInput,
    QualityQuestion,
    RunAudit,
    StageAudit,
    StructuredRequest,
    canonical_json,
    sha256_hex,
)
from .errors import StageError, VqragError
from .mediaprobe import prepare_for_role, probe, sample_frames
from .organizer import OrganizeResult

logger = logging.getLogger(__name__)

STAGES = ("organize", "augment", "select", "generate")


class RunConfig(FrozenModel):
    """Run-time knobs; defaults follow the reference operating point."""

    tau: float = 0.25
    n_l: int = 4
    flags: KnowledgeFlags = KnowledgeFlags()
    fps: float = 1.0
    main_resize: int = 448
    detector_min_score: float = 0.3
    seed: int = 0
    cache_dir: str | None = None

    @field_validator("tau")
    @classmethod
    def _tau_range(cls, v: float) -> float:
        if not (-1.0 <= v <= 1.0):
            raise ValueError(f"tau must be in [-1, 1], got {v}")
        return v

    @field_validator("n_l")
    @classmethod
    def _n_l_min(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"n_l must be >= 1, got {v}")
        return v

    @field_validator("fps")
    @classmethod
    def _fps_fixed(cls, v: float) -> float:
        if v != 1.0:
            logger.warning("fps=%s deviates from the fixed 1 fps sampling policy", v)
        if v <= 0:
            raise ValueError(f"fps must be > 0, got {v}")
        return v


class StageCache:
    """One JSON document per stage output; atomic writes, concurrent readers."""

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root else None

    def enabled(self) -> bool:
        return self.root is not None

    def _path(self, stage: str, key: str) -> Path:
        return self.root / stage / f"{key}.json"

    def get(self, stage: str, key: str) -> str | None:
        if not self.enabled():
            return None
        path = self._path(stage, key)
        try:
            return path.read_text("utf-8")
        except FileNotFoundError:
            return None

    def put(self, stage: str, key: str, payload: str) -> None:
        if not self.enabled():
            return
        path = self._path(stage, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def clear(self) -> int:
        if not self.enabled() or not self.root.exists():
            return 0
        removed = 0
        for stage_dir in self.root.iterdir():
            if stage_dir.is_dir():
                for f in stage_dir.glob("*.json"):
                    f.unlink()
                    removed += 1
        return removed


def cache_key(material: dict) -> str:
    return sha256_hex(canonical_json(material).encode("utf-8"))


@dataclass
class BatchResult:
    """Per-item outcome of run_batch; failures are isolated, not raised."""

    index: int
    record: AnswerRecord | None = None
    error: str | None = None
    stage: str | None = None

    @property
    def ok(self) -> bool:
        return self.record is not None


class Engine:
    """Shared entry point used by both the CLI and the HTTP service."""

    def __init__(self, backends: BackendSet, config: RunConfig | None = None, probe_tool=None):
        self.backends = backends
        self.config = config or RunConfig()
        self.probe_tool = probe_tool
        self.cache = StageCache(self.config.cache_dir)

    # -- helpers ---------------------------------------------------------

    def _key_base(self, medias: Sequence[MediaInput], q: QualityQuestion) -> dict:
        return {
            "digests": [m.content_digest for m in medias],
            "question": q.model_dump(mode="json"),
        }

    def _stage(self, name: str, key_material: dict, compute, decode, encode):
        """Run one stage through the cache; returns (value, StageAudit)."""
        key = cache_key(key_material)
        started = time.perf_counter()
        cached = self.cache.get(name, key)
        if cached is not None:
            value = decode(cached)
            audit = StageAudit(
                name=name,
                cache_hit=True,
                duration_ms=(time.perf_counter() - started) * 1000,
            )
            return value, audit, cached
        try:
            value, calls = compute()
        except VqragError as exc:
            raise StageError(name, exc) from exc
        payload = encode(value)
        self.cache.put(name, key, payload)
        audit = StageAudit(
            name=name,
            cache_hit=False,
            duration_ms=(time.perf_counter() - started) * 1000,
            backend_calls=tuple(calls),
        )
        return value, audit, payload

    # -- the four stages ---------------------------------------------------

    def run(self, media_paths: Sequence[str | Path], q: QualityQuestion) -> AnswerRecord:
        cfg = self.config
        medias = [MediaInput.from_path(p) for p in media_paths]
        if len(medias) != q.n_inputs:
            raise VqragError(f"question spans {q.n_inputs} inputs but {len(medias)} media given")

        base = self._key_base(medias, q)
        flags_notes: dict[str, Any] = {}

        # frames are decoded at most once per run, and only if some stage misses
        frame_memo: dict[int, list] = {}

        def frames_for(i: int):
            if i not in frame_memo:
                frame_memo[i] = sample_frames(medias[i], fps=cfg.fps)
            return frame_memo[i]

        # organize ---------------------------------------------------------
        def compute_organize():
            result = organizer.organize(q, self.backends.main, seed=cfg.seed)
            calls = [
                BackendCall(role="main", op="chat", purpose="organize", count=result.attempts)
            ]
            return result, calls

        def encode_organize(res: OrganizeResult) -> str:
            return canonical_json(
                {
                    "request": res.request.model_dump(mode="json"),
                    "degraded": res.degraded,
                    "attempts": res.attempts,
                    "raw_reply": res.raw_reply,
                }
            )

        def decode_organize(text: str) -> OrganizeResult:
            data = json.loads(text)
            return OrganizeResult(
                request=StructuredRequest.model_validate(data["request"]),
                degraded=data["degraded"],
                attempts=data["attempts"],
                raw_reply=data["raw_reply"],
            )

        organize_key = dict(
            base,
            stage="organize",
            seed=cfg.seed,
            asset=prompts.digest("decoupling"),
        )
        organized, organize_audit, organize_payload = self._stage(
            "organize", organize_key, compute_organize, decode_organize, encode_organize
        )
        if organized.degraded:
            flags_notes["organizer_degraded"] = True

        # augment ------------------------------------------------------------
        def compute_augment():
            slots = []
            for i, media in enumerate(medias):
                meta = probe(media, tool=self.probe_tool)
                slots.append(
                    augmenter.SlotInputs(media=media, meta=meta, frames=frames_for(i))
                )
            outcome = augmenter.build_bundle(
                slots,
                q,
                organized.request,
                cfg.flags,
                self.backends,
                n_l=cfg.n_l,
                detector_min_score=cfg.detector_min_score,
                seed=cfg.seed,
            )
            flags_notes.update(outcome.notes)
            return outcome.bundle, outcome.calls

        augment_key = dict(
            base,
            stage="augment",
            flags=cfg.flags.model_dump(mode="json"),
            n_l=cfg.n_l,
            detector_min_score=cfg.detector_min_score,
            fps=cfg.fps,
            seed=cfg.seed,
            assets={n: prompts.digest(n) for n in ("global", "local_single", "local_pair", "aggregate")},
            upstream=sha256_hex(organize_payload.encode("utf-8")),
        )
        bundle, augment_audit, augment_payload = self._stage(
            "augment",
            augment_key,
            compute_augment,
            lambda t: KnowledgeBundle.from_json(t),
            lambda b: b.to_json(),
        )

        # select ------------------------------------------------------------
        def compute_select():
            index = selector.build_index(bundle, self.backends.encoder)
            calls = []
            if index.size or index.dropped:
                calls.append(
                    BackendCall(
                        role="encoder", op="embed", purpose="embed_batch", count=len(bundle.entries)
                    )
                )
            if index.size:
                evidence = selector.range_search(
                    index, q, tau=cfg.tau, encoder=self.backends.encoder
                )
                calls.append(BackendCall(role="encoder", op="embed", purpose="embed_question"))
            else:
                evidence = EvidenceSet(retained=(), threshold=cfg.tau)
            return evidence, calls

        select_key = dict(
            base,
            stage="select",
            tau=cfg.tau,
            upstream=sha256_hex(augment_payload.encode("utf-8")),
        )
        evidence, select_audit, select_payload = self._stage(
            "select",
            select_key,
            compute_select,
            lambda t: EvidenceSet.from_json(t),
            lambda e: e.to_json(),
        )
        paragraphs = selector.to_paragraphs(evidence)

        # generate ------------------------------------------------------------
        def compute_generate():
            visuals = []
            for i, media in enumerate(medias):
                main_frames = prepare_for_role(frames_for(i), "main", size=cfg.main_resize)
                visuals.extend(augmenter.visual_parts(main_frames, media.kind))
            output = generator.generate(
                q, organized.request, paragraphs, visuals, self.backends.main, seed=cfg.seed
            )
            calls = [BackendCall(role="main", op="chat", purpose="generate")]
            return output, calls

        def encode_generate(out: generator.GenerateOutput) -> str:
            return canonical_json(
                {
                    "prompt_text": out.prompt_text,
                    "raw_output": out.raw_output,
                    "reasoning": out.reasoning,
                    "answer_text": out.answer_text,
                    "answer_letter": out.answer_letter,
                }
            )

        def decode_generate(text: str) -> generator.GenerateOutput:
            data = json.loads(text)
            return generator.GenerateOutput(**data)

        generate_key = dict(
            base,
            stage="generate",
            seed=cfg.seed,
            main_resize=cfg.main_resize,
            assets={n: prompts.digest(n) for n in ("answer_single", "answer_pair")},
            upstream={
                "organize": sha256_hex(organize_payload.encode("utf-8")),
                "select": sha256_hex(select_payload.encode("utf-8")),
            },
        )
        output, generate_audit, _ = self._stage(
            "generate", generate_key, compute_generate, decode_generate, encode_generate
        )

        audit = RunAudit(
            stages=(organize_audit, augment_audit, select_audit, generate_audit),
            config=cfg.model_dump(mode="json"),
            flags=flags_notes,
        )
        return AnswerRecord(
            prompt_text=output.prompt_text,
            raw_output=output.raw_output,
            reasoning=output.reasoning,
            answer_text=output.answer_text,
            answer_letter=output.answer_letter,
            audit=audit,
        )

    def run_batch(
        self,
        items: Sequence[tuple[Sequence[str | Path], QualityQuestion]],
        parallelism: int = 1,
    ) -> list[BatchResult]:
        """Run items concurrently; results keep input order, failures isolated."""
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")

        def one(idx_item):
            idx, (paths, question) = idx_item
            try:
                return BatchResult(index=idx, record=self.run(paths, question))
            except StageError as exc:
                return BatchResult(index=idx, error=str(exc.cause), stage=exc.stage)
            except Exception as exc:  # noqa: BLE001 - batch isolation is the contract
                return BatchResult(index=idx, error=str(exc))

        if parallelism == 1:
            return [one(pair) for pair in enumerate(items)]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(one, enumerate(items)))
