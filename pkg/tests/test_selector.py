from __future__ import annotations

import math
import random

import numpy as np
import pytest

from vqrag.backends.mock import HashedVocabEncoder
from vqrag.domain import (
    EmbeddingVector,
    EvidenceSet,
    KnowledgeBundle,
    KnowledgeEntry,
    KnowledgeFlags,
    QualityQuestion,
    ScoredEntry,
    SourceDb,
    StructuredRequest,
)
from vqrag.errors import DomainError
from vqrag.selector import FlatIndex, build_index, normalize, range_search, segment_sentences, to_paragraphs

WORDS = (
    "blur noise sharp grain contrast color banding flicker block artifact "
    "motion stutter exposure shadow highlight texture detail edge frame scene "
    "bright dark smooth rough clean dirty stable shaky crisp soft"
).split()


def _bundle(texts, db=SourceDb.globalq):
    entries = tuple(KnowledgeEntry(text=t, source_db=db) for t in texts)
    return KnowledgeBundle(entries=entries, request=StructuredRequest.null(), flags=KnowledgeFlags())


def brute_force_range(rows: list[list[float]], query: list[float], tau: float):
    """Independent oracle: plain-Python normalization and inner products."""

    def unit(v):
        n = math.sqrt(math.fsum(x * x for x in v))
        return [x / n for x in v]

    uq = unit(query)
    out = []
    for i, row in enumerate(rows):
        ur = unit(row)
        score = math.fsum(a * b for a, b in zip(ur, uq))
        if score >= tau:
            out.append((i, score))
    return out


class TestSegmentation:
    def test_short_segment_dropped(self):
        assert segment_sentences("Sharp. Low noise overall.") == ["Low noise overall."]

    def test_decimal_point_guarded(self):
        assert segment_sentences("Bitrate is 3.5 Mbps on average.") == [
            "Bitrate is 3.5 Mbps on average."
        ]

    def test_empty(self):
        assert segment_sentences("") == []

    def test_multiple_terminators(self):
        got = segment_sentences("Is it sharp enough? The noise is strong! Blur is mild everywhere.")
        assert got == ["Is it sharp enough?", "The noise is strong!", "Blur is mild everywhere."]

    def test_brackets_never_split(self):
        text = "2 regions of the child detected at t=0s: [0.00,0.10,0.50,0.90], [0.10,0.20,0.30,0.40]."
        assert segment_sentences(text) == [text]

    def test_no_terminator_tail_kept(self):
        assert segment_sentences("no trailing punctuation here") == ["no trailing punctuation here"]


class TestNormalize:
    def test_three_four_five(self):
        v = normalize(EmbeddingVector.of([3.0, 4.0, 0.0]))
        assert v.values == pytest.approx((0.6, 0.8, 0.0))

    def test_unit_fixed_point(self):
        v = normalize(EmbeddingVector.of([0.0, 1.0]))
        assert v.values == pytest.approx((0.0, 1.0))

    def test_zero_vector_error(self):
        with pytest.raises(DomainError, match="zero"):
            normalize(EmbeddingVector.of([0.0, 0.0]))


class TestBuildIndex:
    def test_cardinality(self):
        enc = HashedVocabEncoder(bins=64)
        texts = [f"sentence number {i} about blur and noise" for i in range(7)]
        index = build_index(_bundle(texts), enc)
        assert index.size == 7

    def test_empty_bundle(self):
        enc = HashedVocabEncoder(bins=64)
        bundle = KnowledgeBundle(entries=(), request=StructuredRequest.null(), flags=KnowledgeFlags())
        assert build_index(bundle, enc).size == 0

    def test_rebuild_identical(self):
        enc = HashedVocabEncoder(bins=64)
        bundle = _bundle(["the sky is clear", "heavy noise in shadows", "crisp edges everywhere"])
        a = build_index(bundle, enc)
        b = build_index(bundle, enc)
        assert np.array_equal(a.vectors, b.vectors)

    def test_zero_vector_entry_dropped(self):
        enc = HashedVocabEncoder(bins=64)
        bundle = _bundle(["real words here", "???"])
        index = build_index(bundle, enc)
        assert index.size == 1
        assert [e.text for e in index.dropped] == ["???"]

    def test_rows_are_unit(self):
        enc = HashedVocabEncoder(bins=64)
        index = build_index(_bundle(["one two three", "four five six seven"]), enc)
        assert np.linalg.norm(index.vectors, axis=1) == pytest.approx([1.0, 1.0])

    def test_index_rejects_non_unit_rows(self):
        with pytest.raises(DomainError, match="unit"):
            FlatIndex(
                vectors=np.array([[3.0, 4.0]]),
                payloads=(KnowledgeEntry(text="a b c", source_db=SourceDb.meta),),
            )


class TestRangeSearch:
    def test_identical_text_scores_one(self):
        enc = HashedVocabEncoder(bins=64)
        q = QualityQuestion(text="is the image blurry or sharp")
        bundle = _bundle(["is the image blurry or sharp", "totally unrelated words xyz"])
        index = build_index(bundle, enc)
        ev = range_search(index, q, tau=0.25, encoder=enc)
        assert ev.retained[0].score == pytest.approx(1.0)
        assert ev.retained[0].entry.text == q.text

    def test_tau_minus_one_retains_all(self):
        enc = HashedVocabEncoder(bins=64)
        q = QualityQuestion(text="anything about quality")
        texts = [f"sentence {i} words tokens" for i in range(9)]
        index = build_index(_bundle(texts), enc)
        ev = range_search(index, q, tau=-1.0, encoder=enc)
        assert len(ev.retained) == 9

    def test_matches_brute_force_small(self):
        rng = random.Random(7)
        enc = HashedVocabEncoder(bins=32)
        texts = [" ".join(rng.choices(WORDS, k=rng.randint(3, 8))) for _ in range(200)]
        q = QualityQuestion(text="blur noise sharp frame")
        index = build_index(_bundle(texts), enc)
        raw_entries = enc.embed(texts)
        raw_q = enc.embed([q.text])[0]
        expected = brute_force_range(
            [list(v.values) for v in raw_entries], list(raw_q.values), 0.25
        )
        got = range_search(index, q, tau=0.25, encoder=enc)
        assert [index.payloads.index(se.entry) for se in got.retained] == [i for i, _ in expected]
        for se, (_, score) in zip(got.retained, expected):
            assert se.score == pytest.approx(score, abs=1e-6)

    def test_monotonicity(self):
        rng = random.Random(3)
        enc = HashedVocabEncoder(bins=32)
        texts = [" ".join(rng.choices(WORDS, k=5)) for _ in range(60)]
        q = QualityQuestion(text="noise grain dark shadow")
        index = build_index(_bundle(texts), enc)
        prev = None
        for tau in (-1.0, 0.0, 0.25, 0.9):
            kept = {se.entry.text for se in range_search(index, q, tau=tau, encoder=enc).retained}
            if prev is not None:
                assert kept <= prev
            prev = kept

    def test_order_preserved(self):
        enc = HashedVocabEncoder(bins=64)
        texts = ["blur blur blur", "crisp and clean detail", "blur on the edge area"]
        q = QualityQuestion(text="blur")
        index = build_index(_bundle(texts), enc)
        ev = range_search(index, q, tau=-1.0, encoder=enc)
        assert [se.entry.text for se in ev.retained] == texts

    def test_scores_in_cosine_range(self):
        rng = random.Random(11)
        enc = HashedVocabEncoder(bins=16)
        texts = [" ".join(rng.choices(WORDS, k=4)) for _ in range(40)]
        q = QualityQuestion(text="sharp detail")
        index = build_index(_bundle(texts), enc)
        for se in range_search(index, q, tau=-1.0, encoder=enc).retained:
            assert -1.0 - 1e-6 <= se.score <= 1.0 + 1e-6

    def test_bad_tau_rejected(self):
        enc = HashedVocabEncoder(bins=16)
        index = build_index(_bundle(["a b c"]), enc)
        with pytest.raises(DomainError, match="tau"):
            range_search(index, QualityQuestion(text="q"), tau=1.5, encoder=enc)

    def test_empty_index(self):
        bundle = KnowledgeBundle(entries=(), request=StructuredRequest.null(), flags=KnowledgeFlags())
        enc = HashedVocabEncoder(bins=16)
        ev = range_search(build_index(bundle, enc), QualityQuestion(text="q"), tau=0.25, encoder=enc)
        assert ev.retained == ()


class TestToParagraphs:
    def _entry(self, text, db, slot=1, score=0.5):
        return ScoredEntry(entry=KnowledgeEntry(text=text, source_db=db, media_slot=slot), score=score)

    def test_join_with_spaces(self):
        ev = EvidenceSet(
            retained=(
                self._entry("Sharp edges overall.", SourceDb.globalq),
                self._entry("Noise in the corners.", SourceDb.globalq),
            ),
            threshold=0.25,
        )
        assert to_paragraphs(ev) == {("globalq", 1): "Sharp edges overall. Noise in the corners."}

    def test_absent_group_absent_key(self):
        ev = EvidenceSet(retained=(self._entry("Meta sentence here.", SourceDb.meta),), threshold=0.0)
        paragraphs = to_paragraphs(ev)
        assert ("loc", 1) not in paragraphs

    def test_empty_evidence(self):
        assert to_paragraphs(EvidenceSet(retained=(), threshold=0.25)) == {}

    def test_slots_kept_separate(self):
        ev = EvidenceSet(
            retained=(
                self._entry("First input meta.", SourceDb.meta, slot=1),
                self._entry("Second input meta.", SourceDb.meta, slot=2),
            ),
            threshold=0.0,
        )
        paragraphs = to_paragraphs(ev)
        assert paragraphs[("meta", 1)] == "First input meta."
        assert paragraphs[("meta", 2)] == "Second input meta."
