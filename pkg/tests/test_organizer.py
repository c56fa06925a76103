from __future__ import annotations

import json

import pytest

from parsing_corpus import ORGANIZER_FIXTURES
from vqrag import prompts
from vqrag.backends.mock import ScriptedChatBackend
from vqrag.domain import QualityQuestion, Scope, StructuredRequest
from vqrag.organizer import (
    CORRECTION_INSTRUCTION,
    extract_json_object,
    first_balanced_braces,
    normalize_request,
    organize,
    render_decoupling,
    strip_code_fences,
)


def _q(text="Is the sky noisy?", options=()):
    return QualityQuestion.mcq(text, list(options))


class TestRenderDecoupling:
    def test_question_substituted(self):
        prompt = render_decoupling(_q("Is the sky noisy?"))
        assert "Here is the question:\nIs the sky noisy?" in prompt.rendered
        assert "[question]" not in prompt.rendered

    def test_options_appended_verbatim(self):
        prompt = render_decoupling(_q("Which is better?", ["first", "second"]))
        assert "Which is better?\nA. first\nB. second" in prompt.rendered

    def test_deterministic(self):
        a = render_decoupling(_q()).rendered
        b = render_decoupling(_q()).rendered
        assert a == b

    def test_template_outside_slot_fixed(self):
        template = prompts.load("decoupling")
        rendered = render_decoupling(_q("XQX")).rendered
        assert rendered == template.replace("[question]", "XQX")


class TestOrganize:
    def test_direct_parse(self):
        reply = '{"subject":"child","dimension":"clarity","scope":"spatial","focus":"the child\'s face"}'
        backend = ScriptedChatBackend(lambda req, i: reply)
        result = organize(_q(), backend)
        assert result.request == StructuredRequest(
            subject="child", dimension="clarity", scope=Scope.spatial, focus="the child's face"
        )
        assert not result.degraded
        assert result.attempts == 1

    def test_fenced_reply(self):
        reply = '```json\n{"subject":"child","dimension":"clarity","scope":"spatial","focus":"none"}\n```'
        backend = ScriptedChatBackend(lambda req, i: reply)
        result = organize(_q(), backend)
        assert result.request.subject == "child"

    def test_none_subject_becomes_null(self):
        reply = '{"subject":"none","dimension":"noise","scope":"spatial","focus":"none"}'
        backend = ScriptedChatBackend(lambda req, i: reply)
        result = organize(_q(), backend)
        assert result.request.subject is None
        assert result.request.focus is None

    def test_reask_appends_correction_then_succeeds(self):
        replies = iter(["garbage", '{"subject":"cat","dimension":null,"scope":null,"focus":null}'])
        seen = []

        def responder(req, i):
            seen.append(req.text_parts()[0])
            return next(replies)

        backend = ScriptedChatBackend(responder)
        result = organize(_q(), backend)
        assert result.attempts == 2
        assert not result.degraded
        assert result.request.subject == "cat"
        assert CORRECTION_INSTRUCTION not in seen[0]
        assert CORRECTION_INSTRUCTION in seen[1]

    def test_exhausted_reasks_degraded_all_null(self):
        backend = ScriptedChatBackend(lambda req, i: "never json")
        result = organize(_q(), backend)
        assert result.degraded
        assert result.request == StructuredRequest.null()
        assert result.attempts == 3
        assert len(backend.calls) == 3  # 1 initial + 2 re-asks

    def test_text_only_contract(self):
        backend = ScriptedChatBackend(lambda req, i: '{"subject":"none"}')
        organize(_q(), backend)
        for req in backend.calls:
            assert req.image_parts() == []
            assert req.frames_parts() == []

    def test_parsing_is_total_over_corpus(self):
        # every fixture either parses to its expected request or degrades cleanly
        for reply, expected in ORGANIZER_FIXTURES:
            backend = ScriptedChatBackend(lambda req, i, r=reply: r)
            result = organize(_q(), backend)
            if expected is None:
                assert result.degraded
                assert result.request == StructuredRequest.null()
            else:
                subject, dimension, scope, focus = expected
                assert result.request.subject == subject, reply
                assert result.request.dimension == dimension, reply
                assert result.request.scope == scope, reply
                assert result.request.focus == focus, reply


class TestNormalizeRequest:
    def test_scope_case_fold(self):
        assert normalize_request({"scope": "Temporal"}).scope is Scope.temporal

    def test_subject_trimmed(self):
        assert normalize_request({"subject": "  road "}).subject == "road"

    def test_unmapped_scope_null(self):
        assert normalize_request({"scope": "global"}).scope is None

    def test_missing_keys_null(self):
        assert normalize_request({}) == StructuredRequest.null()

    def test_list_dimension_joined(self):
        assert normalize_request({"dimension": ["blur", "noise"]}).dimension == "blur, noise"


class TestReplyScanning:
    def test_strip_fences_keeps_content(self):
        text = "prefix\n```json\n{\"a\": 1}\n```\nsuffix"
        assert json.loads(first_balanced_braces(strip_code_fences(text))) == {"a": 1}

    def test_balanced_braces_with_nested_strings(self):
        text = 'noise {"focus": "a \\"quoted\\" brace }", "n": {"x": 1}} trailing'
        span = first_balanced_braces(text)
        assert json.loads(span) == {"focus": 'a "quoted" brace }', "n": {"x": 1}}

    def test_no_braces(self):
        assert first_balanced_braces("nothing here") is None

    def test_array_not_an_object(self):
        assert extract_json_object('["a", "b"]') is None
