"""Desk-scale evaluation protocols: MCQ accuracy and seeded pairwise comparison.

Benchmark items are JSON-lines, one object per line:

    {"media": ["a.mp4"], "question": "...", "options": ["...", "..."],
     "gold": "A", "tags": {"question_type": "Yes-or-No"}, "score": 3.2}

``gold`` and ``score`` are optional (MCQ grading needs gold; pairwise
construction needs score). Subjective-score ties are excluded from pairwise
denominators; a predicted zero difference counts as incorrect.
"""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Sequence

from pydantic import field_validator, model_validator

from .domain import AnswerRecord, FrozenModel, QualityQuestion
from .errors import VqragError

PAIR_QUESTION = {
    "image": "Which image has better visual quality?",
    "video": "Which video has better visual quality?",
}
PAIR_OPTIONS = {
    "image": ("The first image", "The second image"),
    "video": ("The first video", "The second video"),
}


class BenchmarkItem(FrozenModel):
    media: tuple[str, ...]
    question: str
    options: tuple[str, ...] = ()
    gold: str | None = None
    tags: dict[str, str] = {}
    score: float | None = None

    @field_validator("media")
    @classmethod
    def _arity(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        if len(v) not in (1, 2):
            raise ValueError(f"items span 1 or 2 media, got {len(v)}")
        return v

    @model_validator(mode="after")
    def _gold_in_options(self) -> "BenchmarkItem":
        if self.gold is not None:
            labels = [chr(ord("A") + i) for i in range(len(self.options))]
            if self.gold not in labels:
                raise ValueError(f"gold {self.gold!r} not among option labels {labels}")
        return self

    def to_question(self) -> QualityQuestion:
        return QualityQuestion.mcq(self.question, list(self.options), n_inputs=len(self.media))


class Pair(FrozenModel):
    first: int
    second: int
    # "first" / "second", or None when the subjective scores tie
    gold_winner: str | None

    @model_validator(mode="after")
    def _distinct(self) -> "Pair":
        if self.first == self.second:
            raise ValueError("pair members must differ")
        return self


class PairSet(FrozenModel):
    seed: int
    pairs: tuple[Pair, ...]

    def non_tie(self) -> list[Pair]:
        return [p for p in self.pairs if p.gold_winner is not None]


def load_items(path: str | Path) -> list[BenchmarkItem]:
    items = []
    for line_no, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            items.append(BenchmarkItem.model_validate(json.loads(line)))
        except ValueError as exc:
            raise VqragError(f"{path}:{line_no}: bad benchmark item: {exc}") from exc
    return items


def build_pairs(items: Sequence[BenchmarkItem], seed: int) -> PairSet:
    """For each item in order, draw a distinct partner uniformly with the
    seeded generator; the higher subjective score wins, equal scores tie."""
    if len(items) < 2:
        raise VqragError("pair construction needs at least 2 items")
    for i, item in enumerate(items):
        if item.score is None:
            raise VqragError(f"item {i} has no subjective score")
    rng = random.Random(seed)
    pairs = []
    n = len(items)
    for i in range(n):
        j = rng.randrange(n - 1)
        if j >= i:
            j += 1
        si, sj = items[i].score, items[j].score
        if si == sj:
            winner = None
        else:
            winner = "first" if si > sj else "second"
        pairs.append(Pair(first=i, second=j, gold_winner=winner))
    return PairSet(seed=seed, pairs=tuple(pairs))


def score_mcq(records: Sequence[AnswerRecord], items: Sequence[BenchmarkItem]) -> dict:
    """Overall and per-tag accuracies; a missing letter counts as incorrect."""
    if len(records) != len(items):
        raise VqragError(f"{len(records)} records for {len(items)} items")
    graded = [(r, it) for r, it in zip(records, items) if it.gold is not None]
    correct = [r.answer_letter == it.gold for r, it in graded]

    def pct(flags: list[bool]) -> float | None:
        if not flags:
            return None
        return round(100.0 * sum(flags) / len(flags), 2)

    by_tag: dict[str, float | None] = {}
    tag_keys = sorted({f"{k}:{v}" for _, it in graded for k, v in it.tags.items()})
    for key in tag_keys:
        axis, _, value = key.partition(":")
        flags = [ok for ok, (_, it) in zip(correct, graded) if it.tags.get(axis) == value]
        by_tag[key] = pct(flags)
    return {
        "total": len(graded),
        "correct": sum(correct),
        "overall": pct(correct),
        "by_tag": by_tag,
    }


def score_pairwise(records: Sequence[AnswerRecord], pairset: PairSet) -> dict:
    """Accuracy over non-tie pairs: A maps to the first item, B to the second."""
    pairs = pairset.non_tie()
    if len(records) != len(pairs):
        raise VqragError(f"{len(records)} records for {len(pairs)} non-tie pairs")
    correct = 0
    for record, pair in zip(records, pairs):
        predicted = {"A": "first", "B": "second"}.get(record.answer_letter or "")
        if predicted == pair.gold_winner:
            correct += 1
    total = len(pairs)
    return {
        "total": total,
        "correct": correct,
        "accuracy": round(100.0 * correct / total, 2) if total else None,
        "ties_excluded": len(pairset.pairs) - total,
    }


def score_scalar_method(scores: Sequence[float], pairset: PairSet) -> dict:
    """Pairwise accuracy of a scalar scorer: predicted winner is the sign of
    the score difference; zero difference counts as incorrect."""
    n_items = max(max(p.first, p.second) for p in pairset.pairs) + 1
    if len(scores) < n_items:
        raise VqragError(f"need {n_items} scores, got {len(scores)}")
    pairs = pairset.non_tie()
    correct = 0
    for pair in pairs:
        diff = scores[pair.first] - scores[pair.second]
        if diff == 0:
            continue
        predicted = "first" if diff > 0 else "second"
        if predicted == pair.gold_winner:
            correct += 1
    total = len(pairs)
    return {
        "total": total,
        "correct": correct,
        "accuracy": round(100.0 * correct / total, 2) if total else None,
        "ties_excluded": len(pairset.pairs) - total,
    }


def comparison_question(kind: str) -> QualityQuestion:
    """The fixed binary-choice comparison question for a media kind."""
    if kind not in PAIR_QUESTION:
        raise VqragError(f"unknown media kind {kind!r}")
    return QualityQuestion.mcq(PAIR_QUESTION[kind], list(PAIR_OPTIONS[kind]), n_inputs=2)
