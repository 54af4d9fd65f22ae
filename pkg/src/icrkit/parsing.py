"""Extractors that decompose raw model outputs into the fields rewards score.

The output formats these invert are the training-time answer formats:
"Answer:" / "The answer is:" lines, comma-separated "[DOC i]" ID lists
(with "[DOC -1]" as the explicit no-relevant-documents sentinel),
"Relevant documents:" content blocks, and numbered Quote lines.

Extractors are total: malformed input never raises, it surfaces as a
format flag on the result. The only exception type here is the judge
verdict parser, whose callers are expected to handle a bad verdict
explicitly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .matching import token_count

__all__ = [
    "ParsedOutput",
    "JudgeVerdict",
    "VerdictParseError",
    "FLAG_NO_ANSWER_MARKER",
    "FLAG_MALFORMED_IDS",
    "FLAG_OVERLONG_QUOTE",
    "FLAG_EMPTY_SECTIONS",
    "extract_answer",
    "extract_doc_ids",
    "extract_contents",
    "extract_quotes",
    "extract_citations",
    "parse_judge_verdict",
    "extract_doc_spans",
]

FLAG_NO_ANSWER_MARKER = "no_answer_marker"
FLAG_MALFORMED_IDS = "malformed_ids"
FLAG_OVERLONG_QUOTE = "overlong_quote"
FLAG_EMPTY_SECTIONS = "empty_sections"

DEFAULT_QUOTE_TOKEN_LIMIT = 30

# Longest alternative first so the most specific marker wins at a position.
_ANSWER_MARKER_RE = re.compile(
    r"(?:the\s+correct\s+answer\s+is|the\s+answer\s+is\s*:|answer\s*:)",
    re.IGNORECASE,
)
_DOC_TAG_RE = re.compile(r"\[DOC\s+(-?\d+)\]")
# A line consisting solely of comma-separated [DOC n] tags, with an optional
# "Relevant Document IDs:" header.
_ID_LINE_RE = re.compile(
    r"^\s*(?:relevant\s+document\s+ids\s*:)?\s*"
    r"\[DOC\s+-?\d+\]\s*(?:,\s*\[DOC\s+-?\d+\]\s*)*,?\s*$",
    re.IGNORECASE,
)
_CONTENT_HEADER_RE = re.compile(r"^\s*relevant\s+documents\s*:\s*$", re.IGNORECASE)
_TAG_LINE_RE = re.compile(r"^\s*\[DOC\s+(-?\d+)\]\s*$")
_QUOTE_RE = re.compile(r"Quote\s*\d+\s*:\s*[\"\u201c](.*?)[\"\u201d]", re.IGNORECASE)
_BOXED_CRITERION_RE = re.compile(
    r"\\?boxed\{\s*Criterion\s*(\d+)\s*:\s*(\d+)\s*\}", re.IGNORECASE
)
_SPAN_TAG_RE = re.compile(r"^\[DOC (\d+)\] ", re.MULTILINE)


class VerdictParseError(ValueError):
    """A judge response did not contain exactly the three boxed criteria."""


@dataclass
class ParsedOutput:
    """Structured view of one model output.

    Fields are populated only by the extractors a given reward kind runs;
    unused ones stay ``None``. ``format_flags`` records every anomaly the
    extractors met, so scoring can degrade to zero instead of erroring.
    """

    answer: Optional[str] = None
    doc_ids: Optional[set[int]] = None
    contents: Optional[dict[int, str]] = None
    quotes: Optional[list[str]] = None
    citations: Optional[set[int]] = None
    format_flags: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        out: dict = {"format_flags": sorted(self.format_flags)}
        if self.answer is not None:
            out["answer"] = self.answer
        if self.doc_ids is not None:
            out["doc_ids"] = sorted(self.doc_ids)
        if self.contents is not None:
            out["contents"] = {str(k): v for k, v in sorted(self.contents.items())}
        if self.quotes is not None:
            out["quotes"] = list(self.quotes)
        if self.citations is not None:
            out["citations"] = sorted(self.citations)
        return out


@dataclass(frozen=True)
class JudgeVerdict:
    """The three binary rubric criteria a judge response must carry."""

    reasoning_quality: int
    document_grounding: int
    answer_correctness: int
    raw: str


def extract_answer(y: str) -> tuple[str, set[str]]:
    """Text after the last answer marker, up to end of line.

    Returns ``(answer, flags)``; a missing marker yields ``""`` plus the
    ``no_answer_marker`` flag.
    """
    last = None
    for m in _ANSWER_MARKER_RE.finditer(y):
        last = m
    if last is None:
        return "", {FLAG_NO_ANSWER_MARKER}
    tail = y[last.end() :]
    tail = tail.lstrip(" \t")
    tail = tail.lstrip(":").lstrip(" \t")
    newline = tail.find("\n")
    if newline != -1:
        tail = tail[:newline]
    return tail.strip(), set()


def extract_doc_ids(y: str) -> tuple[set[int], set[str]]:
    """Parse the declared relevant-document ID set.

    ID declarations are lines made up entirely of comma-separated
    ``[DOC n]`` tags (optionally behind a "Relevant Document IDs:" header);
    a bare tag line such as the one opening a content block counts. All
    declaration lines are unioned. ``[DOC -1]`` alone means "none relevant"
    (empty set, no flag); mixed with real IDs it is malformed. No
    declaration line at all is malformed too.
    """
    ids: set[int] = set()
    saw_line = False
    saw_sentinel = False
    for line in y.splitlines():
        if not _ID_LINE_RE.match(line):
            continue
        saw_line = True
        for tag in _DOC_TAG_RE.finditer(line):
            value = int(tag.group(1))
            if value == -1:
                saw_sentinel = True
            elif value < 0:
                return set(), {FLAG_MALFORMED_IDS}
            else:
                ids.add(value)
    if not saw_line:
        return set(), {FLAG_MALFORMED_IDS}
    if saw_sentinel and ids:
        return set(), {FLAG_MALFORMED_IDS}
    if saw_sentinel:
        return set(), set()
    return ids, set()


def extract_contents(y: str) -> tuple[dict[int, str], set[str]]:
    """Invert the "Relevant documents:" section into ``{doc index: block}``.

    Each block starts at a bare ``[DOC X]`` line and runs until the next
    tag line, an answer-marker line, or end of text. A missing header
    yields an empty map plus the ``empty_sections`` flag.
    """
    lines = y.splitlines()
    start = None
    for i, line in enumerate(lines):
        if _CONTENT_HEADER_RE.match(line):
            start = i + 1
            break
    if start is None:
        return {}, {FLAG_EMPTY_SECTIONS}

    contents: dict[int, str] = {}
    current: Optional[int] = None
    block: list[str] = []

    def close() -> None:
        if current is not None:
            contents[current] = "\n".join(block).strip()

    for line in lines[start:]:
        tag = _TAG_LINE_RE.match(line)
        if tag is not None:
            close()
            idx = int(tag.group(1))
            current = idx if idx >= 0 else None
            block = []
            continue
        if _ANSWER_MARKER_RE.match(line.strip()):
            break
        if current is not None:
            block.append(line)
    close()
    return contents, set()


def extract_quotes(
    y: str, token_limit: int = DEFAULT_QUOTE_TOKEN_LIMIT
) -> tuple[list[str], set[str]]:
    """Quoted spans from ``Quote N: "..."`` lines, in order of appearance.

    Straight and curly double quotes are both accepted. Quotes longer than
    ``token_limit`` whitespace tokens are still returned but set the
    ``overlong_quote`` flag.
    """
    quotes = [m.group(1) for m in _QUOTE_RE.finditer(y)]
    flags: set[str] = set()
    if any(token_count(q) > token_limit for q in quotes):
        flags.add(FLAG_OVERLONG_QUOTE)
    return quotes, flags


def extract_citations(y: str) -> set[int]:
    """Every non-negative index cited as ``[DOC X]`` anywhere in the output."""
    return {int(m.group(1)) for m in _DOC_TAG_RE.finditer(y) if int(m.group(1)) >= 0}


def parse_judge_verdict(text: str) -> JudgeVerdict:
    """Parse the three boxed rubric criteria of a judge response.

    Raises :class:`VerdictParseError` if any criterion is missing,
    duplicated, or outside {0, 1}.
    """
    seen: dict[int, int] = {}
    for m in _BOXED_CRITERION_RE.finditer(text):
        criterion = int(m.group(1))
        value = int(m.group(2))
        if criterion in seen:
            raise VerdictParseError(f"criterion {criterion} appears more than once")
        seen[criterion] = value
    if sorted(seen) != [1, 2, 3]:
        raise VerdictParseError(
            f"expected criteria 1..3 exactly once, found {sorted(seen)}"
        )
    if any(v not in (0, 1) for v in seen.values()):
        raise VerdictParseError(f"criterion values must be 0 or 1, got {seen}")
    return JudgeVerdict(
        reasoning_quality=seen[1],
        document_grounding=seen[2],
        answer_correctness=seen[3],
        raw=text,
    )


def extract_doc_spans(context: str) -> list[tuple[int, int, int]]:
    """Locate document bodies in a tagged context.

    Returns ``(doc index, body start, body end)`` character triples for a
    context of newline-joined ``[DOC i] <text>`` entries. Spans are
    disjoint, in order of appearance, and cover each body exactly
    (excluding the joining newline).
    """
    tags = list(_SPAN_TAG_RE.finditer(context))
    spans: list[tuple[int, int, int]] = []
    for pos, tag in enumerate(tags):
        start = tag.end()
        if pos + 1 < len(tags):
            end = tags[pos + 1].start() - 1  # drop the newline separator
        else:
            end = len(context)
        spans.append((int(tag.group(1)), start, end))
    return spans
