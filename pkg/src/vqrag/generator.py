"""Stage 4: assemble the answer prompt, call the main LMM, parse the reply."""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import prompts
from .backends.protocol import (
    ChatBackend,
    ChatRequest,
    MessagePart,
    SamplingParams,
    TextPart,
)
from .domain import QualityQuestion, StructuredRequest

# only the localization slot has a defined empty form (literal NULL); the
# other slots get an explicit placeholder so the prompt shape never changes
NULL_SLOT = "NULL"
EMPTY_SLOT = "(no reference available)"
NULL_FOCUS = "the queried content"

GREEDY_SAMPLING = SamplingParams(temperature=0.0, top_p=1.0, top_k=0, max_tokens=2048)

_THINK_RE = re.compile(r"<think>(.*?)</think>", re.IGNORECASE | re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.IGNORECASE | re.DOTALL)


@dataclass(frozen=True)
class GenerateOutput:
    prompt_text: str
    raw_output: str
    reasoning: str | None
    answer_text: str | None
    answer_letter: str | None


def _slot(paragraphs: dict[tuple[str, int], str], db: str, slot: int, empty: str) -> str:
    # the templates put a period right after each slot; drop the paragraph's
    # final period so the rendered text does not read "...."
    value = paragraphs.get((db, slot), empty)
    return value[:-1] if value.endswith(".") else value


def render_answer_prompt(
    q: QualityQuestion,
    r: StructuredRequest,
    paragraphs: dict[tuple[str, int], str],
    n_inputs: int,
) -> str:
    """Fill the single or pair answer template from the evidence paragraphs."""
    focus = r.focus if r.focus is not None else NULL_FOCUS
    question = q.rendered_text()
    if n_inputs == 1:
        return prompts.render(
            prompts.load("answer_single"),
            {
                "visual_token": "[attached below]",
                "metadata": _slot(paragraphs, "meta", 1, EMPTY_SLOT),
                "localization": _slot(paragraphs, "loc", 1, NULL_SLOT),
                "global_summary": _slot(paragraphs, "globalq", 1, EMPTY_SLOT),
                "local_description": _slot(paragraphs, "localq", 1, EMPTY_SLOT),
                "question": question,
                "focus": focus,
            },
        )
    return prompts.render(
        prompts.load("answer_pair"),
        {
            "visual_token_1": "[first input attached below]",
            "visual_token_2": "[second input attached below]",
            "metadata_1": _slot(paragraphs, "meta", 1, EMPTY_SLOT),
            "metadata_2": _slot(paragraphs, "meta", 2, EMPTY_SLOT),
            "localization_1": _slot(paragraphs, "loc", 1, NULL_SLOT),
            "localization_2": _slot(paragraphs, "loc", 2, NULL_SLOT),
            "global_summary_1": _slot(paragraphs, "globalq", 1, EMPTY_SLOT),
            "global_summary_2": _slot(paragraphs, "globalq", 2, EMPTY_SLOT),
            "local_description": _slot(paragraphs, "localq", 1, EMPTY_SLOT),
            "question": question,
            "focus": focus,
        },
    )


def parse_tagged_answer(
    raw: str, options: tuple[str, ...]
) -> tuple[str | None, str | None, str | None]:
    """(reasoning, answer_text, answer_letter) from a think/answer-tagged reply.

    Total on any input: missing tags fall back to scanning the whole text for
    a standalone option letter; nothing found means an absent letter.
    """
    think = _THINK_RE.search(raw)
    reasoning = think.group(1).strip() if think else None
    answer = _ANSWER_RE.search(raw)
    answer_text = answer.group(1).strip() if answer else None
    scan_target = answer_text if answer_text is not None else raw
    letter = _first_option_letter(scan_target, options)
    return reasoning, answer_text, letter


def _first_option_letter(text: str, options: tuple[str, ...]) -> str | None:
    if not options:
        return None
    allowed = {o.upper() for o in options}
    for m in re.finditer(r"(?<![A-Za-z0-9])([A-Za-z])(?![A-Za-z0-9])", text):
        letter = m.group(1).upper()
        if letter in allowed:
            return letter
    return None


def generate(
    q: QualityQuestion,
    r: StructuredRequest,
    paragraphs: dict[tuple[str, int], str],
    visuals: list[MessagePart],
    main: ChatBackend,
    seed: int | None = None,
) -> GenerateOutput:
    """One greedy main-LMM call over the assembled prompt plus prepared visuals."""
    prompt_text = render_answer_prompt(q, r, paragraphs, q.n_inputs)
    req = ChatRequest(
        role="main",
        messages=tuple([TextPart(text=prompt_text), *visuals]),
        sampling=GREEDY_SAMPLING,
        n_samples=1,
        seed=seed,
    )
    raw = main.chat(req).completions[0]
    reasoning, answer_text, letter = parse_tagged_answer(raw, q.labels())
    return GenerateOutput(
        prompt_text=prompt_text,
        raw_output=raw,
        reasoning=reasoning,
        answer_text=answer_text,
        answer_letter=letter,
    )
