"""The five verifiable reward functions.

Each reward is a sum of binary indicators over the parsed output:

- answer-only: correct answer
- id: exact relevant-ID set, plus answer
- id+content: IDs, faithful reproduction of every gold document, answer
- id+quote: IDs, short quotes drawn verbatim from gold documents, answer
- reasoning+judge: two rubric criteria from an LLM judge, plus answer

Scoring never raises on malformed model output: every parse failure
degrades the corresponding indicator to 0, because a reward stream must
be total over arbitrary rollouts.
"""

from __future__ import annotations

import enum
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import parsing
from .corpus import ContextInstance
from .matching import (
    DEFAULT_RULES,
    EmptyGoldError,
    NormalizationRules,
    sub_exact_match,
    token_count,
)
from .parsing import ParsedOutput, VerdictParseError

__all__ = [
    "RewardKind",
    "RewardResult",
    "RewardSettings",
    "JudgeClient",
    "JudgeTransportError",
    "ConfigurationError",
    "JUDGE_PROMPT_TEMPLATE",
    "r_ao",
    "r_id",
    "r_id_c",
    "r_id_q",
    "r_judge",
    "compute_reward",
    "judge_payload",
    "render_judge_prompt",
]

FLAG_JUDGE_VERDICT_UNPARSEABLE = "judge_verdict_unparseable"


class ConfigurationError(ValueError):
    """A reward was requested without the pieces it needs (e.g. no judge)."""


class RewardKind(enum.Enum):
    AO = "AO"
    ID = "ID"
    ID_C = "ID_C"
    ID_Q = "ID_Q"
    R_JUDGE = "R_JUDGE"

    @classmethod
    def parse(cls, name: str) -> "RewardKind":
        key = name.strip().upper().replace("+", "_").replace("-", "_")
        aliases = {"IDC": "ID_C", "IDQ": "ID_Q", "RJUDGE": "R_JUDGE", "JUDGE": "R_JUDGE"}
        key = aliases.get(key.replace("_", ""), key)
        try:
            return cls[key]
        except KeyError:
            raise ConfigurationError(f"unknown reward kind: {name!r}") from None


@dataclass(frozen=True)
class RewardSettings:
    """Scoring knobs shared by every reward kind."""

    rules: NormalizationRules = DEFAULT_RULES
    quote_token_limit: int = parsing.DEFAULT_QUOTE_TOKEN_LIMIT


DEFAULT_SETTINGS = RewardSettings()


@dataclass
class RewardResult:
    """Total reward plus the indicator breakdown for one (instance, output)."""

    kind: RewardKind
    total: int
    answer_indicator: int
    id_indicator: Optional[int] = None
    content_indicator: Optional[int] = None
    quote_indicator: Optional[int] = None
    judge_score: Optional[int] = None
    judge_answer_criterion: Optional[int] = None
    parsed: ParsedOutput = field(default_factory=ParsedOutput)
    flags: list[str] = field(default_factory=list)

    def components(self) -> dict[str, int]:
        out = {"answer_indicator": self.answer_indicator}
        if self.id_indicator is not None:
            out["id_indicator"] = self.id_indicator
        if self.content_indicator is not None:
            out["content_indicator"] = self.content_indicator
        if self.quote_indicator is not None:
            out["quote_indicator"] = self.quote_indicator
        if self.judge_score is not None:
            out["judge_score"] = self.judge_score
        return out

    def to_dict(self) -> dict:
        diagnostics = self.parsed.to_dict()
        if self.judge_answer_criterion is not None:
            diagnostics["judge_answer_criterion"] = self.judge_answer_criterion
        return {
            "kind": self.kind.value,
            "total": float(self.total),
            "components": self.components(),
            "flags": list(self.flags),
            "diagnostics": diagnostics,
        }


JUDGE_PROMPT_TEMPLATE = """You are an expert evaluator assessing AI model answers to questions using supporting documents.

[Question]: {question}
[Relevant Documents]: {gold_docs}
[Correct Answer]: {answer}
[AI Model Solution]: {solution}

Evaluate the solution on three criteria and answer each with a boxed binary score:

Reasoning Quality Justification: [Your explanation]
\\boxed{{Criterion 1: 1 or 0}}

Document Grounding Justification: [Your explanation]
\\boxed{{Criterion 2: 1 or 0}}

Answer Correctness Justification: [Your explanation]
\\boxed{{Criterion 3: 1 or 0}}
"""


class JudgeTransportError(RuntimeError):
    """The judge endpoint could not be reached (retryable)."""


class JudgeClient:
    """Bridge to an external LLM judge.

    ``mode="recorded"`` replays fixture responses keyed by a SHA-256 digest
    of the canonical request payload; this is the only mode tests use.
    ``mode="live"`` POSTs the payload to an HTTP endpoint returning
    ``{"text": ...}``.
    """

    def __init__(
        self,
        mode: str = "recorded",
        endpoint: str = "",
        timeout: float = 30.0,
        retries: int = 2,
        fixtures: Optional[dict[str, str]] = None,
        max_in_flight: int = 8,
    ):
        if mode not in ("live", "recorded"):
            raise ConfigurationError(f"judge mode must be live|recorded, got {mode!r}")
        if mode == "live" and not endpoint:
            raise ConfigurationError("live judge mode requires an endpoint")
        self.mode = mode
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.fixtures = dict(fixtures or {})
        self._gate = threading.Semaphore(max(1, max_in_flight))

    @staticmethod
    def digest(payload: dict) -> str:
        canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def from_fixture_file(cls, path: str | Path, **kwargs) -> "JudgeClient":
        """Load a recorded client from JSON-lines {request_digest, response_text}."""
        fixtures: dict[str, str] = {}
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                fixtures[obj["request_digest"]] = obj["response_text"]
        return cls(mode="recorded", fixtures=fixtures, **kwargs)

    def complete(self, payload: dict) -> str:
        with self._gate:
            if self.mode == "recorded":
                key = self.digest(payload)
                if key not in self.fixtures:
                    raise JudgeTransportError(
                        f"no recorded response for request digest {key}"
                    )
                return self.fixtures[key]
            return self._complete_live(payload)

    def _complete_live(self, payload: dict) -> str:
        import httpx

        last_error: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            try:
                response = httpx.post(self.endpoint, json=payload, timeout=self.timeout)
                response.raise_for_status()
                return response.json()["text"]
            except Exception as exc:  # transport and protocol errors alike
                last_error = exc
                if attempt < self.retries:
                    time.sleep(min(2.0**attempt * 0.1, 2.0))
        raise JudgeTransportError(f"judge endpoint failed: {last_error}") from last_error


def _answer_indicator(
    inst: ContextInstance, parsed: ParsedOutput, settings: RewardSettings
) -> int:
    answer = parsed.answer or ""
    for alias in inst.answers:
        try:
            if sub_exact_match(answer, alias, settings.rules):
                return 1
        except EmptyGoldError:
            continue  # alias normalizes to nothing; it cannot be matched
    return 0


def r_ao(
    inst: ContextInstance, y: str, settings: RewardSettings = DEFAULT_SETTINGS
) -> RewardResult:
    """Answer-only reward: 1 iff the extracted answer sub-exact-matches an alias."""
    parsed = ParsedOutput()
    parsed.answer, flags = parsing.extract_answer(y)
    parsed.format_flags |= flags
    answer = _answer_indicator(inst, parsed, settings)
    return RewardResult(
        kind=RewardKind.AO,
        total=answer,
        answer_indicator=answer,
        parsed=parsed,
        flags=sorted(parsed.format_flags),
    )


def _id_indicator(inst: ContextInstance, parsed: ParsedOutput) -> int:
    return 1 if parsed.doc_ids == inst.gold_ids else 0


def r_id(
    inst: ContextInstance, y: str, settings: RewardSettings = DEFAULT_SETTINGS
) -> RewardResult:
    """ID reward: exact gold-ID set equality plus the answer indicator."""
    parsed = ParsedOutput()
    parsed.answer, answer_flags = parsing.extract_answer(y)
    parsed.doc_ids, id_flags = parsing.extract_doc_ids(y)
    parsed.format_flags |= answer_flags | id_flags
    answer = _answer_indicator(inst, parsed, settings)
    ids = _id_indicator(inst, parsed)
    return RewardResult(
        kind=RewardKind.ID,
        total=ids + answer,
        answer_indicator=answer,
        id_indicator=ids,
        parsed=parsed,
        flags=sorted(parsed.format_flags),
    )


def r_id_c(
    inst: ContextInstance, y: str, settings: RewardSettings = DEFAULT_SETTINGS
) -> RewardResult:
    """ID+content reward: IDs, verbatim gold reproduction, and answer.

    The content indicator demands the reproduced block set to cover the
    gold ids exactly, with each gold text contained (sub-exact) in its
    block.
    """
    parsed = ParsedOutput()
    parsed.answer, answer_flags = parsing.extract_answer(y)
    parsed.doc_ids, id_flags = parsing.extract_doc_ids(y)
    parsed.contents, content_flags = parsing.extract_contents(y)
    parsed.format_flags |= answer_flags | id_flags | content_flags
    answer = _answer_indicator(inst, parsed, settings)
    ids = _id_indicator(inst, parsed)

    content = 0
    if set(parsed.contents) == inst.gold_ids:
        content = 1
        for i in sorted(inst.gold_ids):
            try:
                if not sub_exact_match(
                    parsed.contents[i], inst.documents[i].text, settings.rules
                ):
                    content = 0
                    break
            except EmptyGoldError:
                content = 0
                break
    return RewardResult(
        kind=RewardKind.ID_C,
        total=ids + content + answer,
        answer_indicator=answer,
        id_indicator=ids,
        content_indicator=content,
        parsed=parsed,
        flags=sorted(parsed.format_flags),
    )


def r_id_q(
    inst: ContextInstance, y: str, settings: RewardSettings = DEFAULT_SETTINGS
) -> RewardResult:
    """ID+quote reward: IDs, short gold-grounded quotes, and answer.

    Quotes must be non-empty as a list, each within the token limit, and
    each contained (after normalization) in at least one gold document.
    """
    parsed = ParsedOutput()
    parsed.answer, answer_flags = parsing.extract_answer(y)
    parsed.doc_ids, id_flags = parsing.extract_doc_ids(y)
    parsed.quotes, quote_flags = parsing.extract_quotes(y, settings.quote_token_limit)
    parsed.format_flags |= answer_flags | id_flags | quote_flags
    answer = _answer_indicator(inst, parsed, settings)
    ids = _id_indicator(inst, parsed)

    gold_texts = [d.text for d in inst.gold_documents()]
    quote = 1 if parsed.quotes else 0
    for q in parsed.quotes:
        if token_count(q) > settings.quote_token_limit:
            quote = 0
            break
        if not _quote_in_any(q, gold_texts, settings.rules):
            quote = 0
            break
    return RewardResult(
        kind=RewardKind.ID_Q,
        total=ids + quote + answer,
        answer_indicator=answer,
        id_indicator=ids,
        quote_indicator=quote,
        parsed=parsed,
        flags=sorted(parsed.format_flags),
    )


def _quote_in_any(quote: str, gold_texts: list[str], rules: NormalizationRules) -> bool:
    for text in gold_texts:
        try:
            if sub_exact_match(text, quote, rules):
                return True
        except EmptyGoldError:
            return False  # a quote that normalizes to nothing grounds nothing
    return False


def r_judge(
    inst: ContextInstance,
    y: str,
    judge: JudgeClient,
    settings: RewardSettings = DEFAULT_SETTINGS,
) -> RewardResult:
    """Reasoning reward: judged rubric score (criteria 1+2) plus answer.

    The rubric's third criterion (answer correctness) is recorded as a
    diagnostic but kept out of the total, which already adds the verifiable
    answer indicator; counting it twice would double-weight the answer.
    """
    parsed = ParsedOutput()
    parsed.answer, answer_flags = parsing.extract_answer(y)
    parsed.citations = parsing.extract_citations(y)
    parsed.format_flags |= answer_flags
    answer = _answer_indicator(inst, parsed, settings)

    payload = judge_payload(inst, y)
    response = judge.complete(payload)
    flags = set(parsed.format_flags)
    judge_answer: Optional[int] = None
    try:
        verdict = parsing.parse_judge_verdict(response)
        score = verdict.reasoning_quality + verdict.document_grounding
        judge_answer = verdict.answer_correctness
    except VerdictParseError:
        score = 0
        flags.add(FLAG_JUDGE_VERDICT_UNPARSEABLE)
    return RewardResult(
        kind=RewardKind.R_JUDGE,
        total=score + answer,
        answer_indicator=answer,
        judge_score=score,
        judge_answer_criterion=judge_answer,
        parsed=parsed,
        flags=sorted(flags),
    )


def judge_payload(inst: ContextInstance, y: str) -> dict:
    """Template slots sent to the judge.

    Gold documents are listed sorted by text so the payload (and therefore
    the fixture digest) is invariant under document reordering.
    """
    return {
        "question": inst.question,
        "gold_docs": sorted(d.text for d in inst.gold_documents()),
        "answer": inst.answers[0],
        "solution": y,
    }


def render_judge_prompt(payload: dict) -> str:
    """Fill the judge prompt template; used by the live client only."""
    return JUDGE_PROMPT_TEMPLATE.format(
        question=payload["question"],
        gold_docs="\n".join(payload["gold_docs"]),
        answer=payload["answer"],
        solution=payload["solution"],
    )


def compute_reward(
    inst: ContextInstance,
    y: str,
    kind: RewardKind,
    judge: Optional[JudgeClient] = None,
    settings: RewardSettings = DEFAULT_SETTINGS,
) -> RewardResult:
    """Dispatch to the reward function for ``kind``."""
    if kind is RewardKind.AO:
        return r_ao(inst, y, settings)
    if kind is RewardKind.ID:
        return r_id(inst, y, settings)
    if kind is RewardKind.ID_C:
        return r_id_c(inst, y, settings)
    if kind is RewardKind.ID_Q:
        return r_id_q(inst, y, settings)
    if kind is RewardKind.R_JUDGE:
        if judge is None:
            raise ConfigurationError("R_JUDGE rewards require a judge client")
        return r_judge(inst, y, judge, settings)
    raise ConfigurationError(f"unhandled reward kind: {kind}")
