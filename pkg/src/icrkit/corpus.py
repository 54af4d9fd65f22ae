"""Construction of long-context training instances.

An instance embeds a handful of gold passages in a large pool of hard
negatives. Building one runs: near-duplicate promotion (fuzzy similarity
against golds), judge filtering of the promotions, deterministic
shuffling, ``[DOC i]`` tagging, and a token-budget gate. Everything is a
pure function of (inputs, seed) so corpora are bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Protocol, Sequence

from .matching import char_f1, jaccard_similarity, ngram_overlap

__all__ = [
    "Document",
    "ContextInstance",
    "BuildConfig",
    "PromotionCandidate",
    "TokenCounter",
    "WhitespaceTokenCounter",
    "InstanceError",
    "chunk_article",
    "tag_documents",
    "shuffle_instance",
    "promote_hard_negatives",
    "judge_filter",
    "filter_by_length",
    "instance_token_count",
    "split_dataset",
    "read_instances",
    "write_instances",
    "read_candidates",
    "read_token_sidecar",
]

ORIGIN_GOLD = "gold"
ORIGIN_HARD_NEGATIVE = "hard_negative"
ORIGIN_PROMOTED = "promoted"
_ORIGINS = (ORIGIN_GOLD, ORIGIN_HARD_NEGATIVE, ORIGIN_PROMOTED)


class InstanceError(ValueError):
    """An instance or document list violates a structural invariant."""


@dataclass(frozen=True)
class Document:
    """One passage at position ``index`` in an instance's context."""

    index: int
    text: str
    origin: str = ORIGIN_HARD_NEGATIVE

    def __post_init__(self) -> None:
        if self.index < 0:
            raise InstanceError(f"document index must be >= 0, got {self.index}")
        if not self.text:
            raise InstanceError("document text must be non-empty")
        if self.origin not in _ORIGINS:
            raise InstanceError(f"unknown document origin: {self.origin!r}")


@dataclass
class ContextInstance:
    """A question, its answer aliases, the ordered context, and the gold set."""

    id: str
    question: str
    answers: list[str]
    documents: list[Document]
    gold_ids: set[int]
    source: str = ""

    def validate(self) -> "ContextInstance":
        if not self.answers:
            raise InstanceError(f"{self.id}: answers must be non-empty")
        indices = [d.index for d in self.documents]
        if indices != list(range(len(self.documents))):
            raise InstanceError(f"{self.id}: document indices must be 0..p-1 in order")
        if not self.gold_ids:
            raise InstanceError(f"{self.id}: gold_ids must be non-empty")
        if not self.gold_ids <= set(indices):
            raise InstanceError(f"{self.id}: gold_ids outside document range")
        for i in self.gold_ids:
            if self.documents[i].origin == ORIGIN_HARD_NEGATIVE:
                raise InstanceError(
                    f"{self.id}: gold id {i} points at a hard negative"
                )
        return self

    def gold_documents(self) -> list[Document]:
        return [self.documents[i] for i in sorted(self.gold_ids)]


@dataclass(frozen=True)
class BuildConfig:
    """Knobs of the data-construction pipeline."""

    max_context_tokens: int = 32768
    shuffle_seed: int = 0
    retriever_top_k: int = 500
    fuzzy_threshold: float = 0.6
    chunk_unit: str = "words"  # "words" or "tokens"; both split on whitespace
    chunk_size: int = 100
    ngram_n: int = 3
    split_ratio: float = 0.95

    def __post_init__(self) -> None:
        if not 0.0 <= self.fuzzy_threshold <= 1.0:
            raise ValueError("fuzzy_threshold must be in [0, 1]")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.max_context_tokens < 1:
            raise ValueError("max_context_tokens must be >= 1")
        if self.retriever_top_k < 1:
            raise ValueError("retriever_top_k must be >= 1")
        if self.chunk_unit not in ("words", "tokens"):
            raise ValueError("chunk_unit must be 'words' or 'tokens'")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0, 1)")


class TokenCounter(Protocol):
    def count(self, text: str) -> int: ...


class WhitespaceTokenCounter:
    """Default budget counter: whitespace-delimited units.

    Model-exact budgeting is supported by supplying a per-instance token
    sidecar file instead (see :func:`read_token_sidecar`).
    """

    def count(self, text: str) -> int:
        return len(text.split())


def chunk_article(text: str, cfg: BuildConfig) -> list[str]:
    """Split an article into passages of ``cfg.chunk_size`` whitespace units.

    The last passage may be shorter; single-space joining the passages
    reproduces the unit sequence of the input. Empty text gives ``[]``.
    """
    units = text.split()
    if not units:
        return []
    size = cfg.chunk_size
    return [" ".join(units[i : i + size]) for i in range(0, len(units), size)]


def tag_documents(docs: Sequence[Document]) -> str:
    """Serialize documents as newline-joined ``[DOC i] <text>`` entries."""
    indices = [d.index for d in docs]
    if indices != list(range(len(docs))):
        raise InstanceError(f"document indices must be contiguous from 0, got {indices}")
    return "\n".join(f"[DOC {d.index}] {d.text}" for d in docs)


def _derive_rng(seed: int, instance_id: str) -> random.Random:
    # Mersenne Twister seeded from a SHA-256 of (seed, id): stable across
    # platforms and independent of PYTHONHASHSEED.
    digest = hashlib.sha256(f"{seed}:{instance_id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def shuffle_instance(inst: ContextInstance, seed: int) -> ContextInstance:
    """Deterministically permute the documents and remap gold ids.

    The permutation is a pure function of ``(seed, inst.id)``.
    """
    order = list(range(len(inst.documents)))
    _derive_rng(seed, inst.id).shuffle(order)
    documents = [
        replace(inst.documents[old], index=new) for new, old in enumerate(order)
    ]
    gold_ids = {new for new, old in enumerate(order) if old in inst.gold_ids}
    return ContextInstance(
        id=inst.id,
        question=inst.question,
        answers=list(inst.answers),
        documents=documents,
        gold_ids=gold_ids,
        source=inst.source,
    )


@dataclass
class PromotionCandidate:
    """Stage-1 refinement verdict for one hard negative."""

    negative_index: int
    negative_text: str
    matched_gold_index: int
    matched_gold_text: str
    jaccard: float
    char_f1: float
    ngram: float
    max_similarity: float
    promoted: bool
    question: str = ""


def promote_hard_negatives(
    golds: Sequence[Document],
    negatives: Sequence[Document],
    cfg: BuildConfig,
    question: str = "",
) -> list[PromotionCandidate]:
    """Score every negative against every gold and promote near-duplicates.

    A negative is promoted iff the max over golds of
    max(jaccard, char F1, n-gram overlap) reaches ``cfg.fuzzy_threshold``
    (inclusive). Any single metric clearing the bar is enough: the stage
    is meant for recall, the judge filter handles precision. Ties between
    golds attribute the lowest gold index.
    """
    if not golds:
        raise InstanceError("promotion requires at least one gold document")
    report = []
    for neg in negatives:
        best_gold = golds[0]
        best = (-1.0, -1.0, -1.0, -1.0)
        for gold in sorted(golds, key=lambda d: d.index):
            j = jaccard_similarity(neg.text, gold.text)
            c = char_f1(neg.text, gold.text)
            g = ngram_overlap(neg.text, gold.text, n=cfg.ngram_n)
            score = max(j, c, g)
            if score > best[0]:
                best = (score, j, c, g)
                best_gold = gold
        score, j, c, g = best
        report.append(
            PromotionCandidate(
                negative_index=neg.index,
                negative_text=neg.text,
                matched_gold_index=best_gold.index,
                matched_gold_text=best_gold.text,
                jaccard=j,
                char_f1=c,
                ngram=g,
                max_similarity=score,
                promoted=score >= cfg.fuzzy_threshold,
                question=question,
            )
        )
    return report


def judge_filter(promotions: Sequence[PromotionCandidate], judge) -> list[dict]:
    """Second refinement stage: keep only judge-confirmed promotions.

    ``judge`` is a :class:`icrkit.rewards.JudgeClient`. Returns one decision
    record per promoted candidate: the candidate, the raw judge response,
    and whether it was kept. Unparseable verdicts reject the promotion and
    are flagged.
    """
    decisions = []
    for cand in promotions:
        if not cand.promoted:
            continue
        payload = {
            "task": "promotion_filter",
            "question": cand.question,
            "gold_doc": cand.matched_gold_text,
            "candidate": cand.negative_text,
        }
        response = judge.complete(payload)
        kept, parse_ok = _parse_relevance(response)
        decisions.append(
            {
                "candidate": cand,
                "response": response,
                "kept": kept,
                "verdict_parsed": parse_ok,
            }
        )
    return decisions


def _parse_relevance(text: str) -> tuple[bool, bool]:
    """Map a free-text judge response to keep/drop; second value is parse success."""
    lowered = text.lower()
    if re.search(r"\b(irrelevant|not relevant)\b", lowered):
        return False, True
    if re.search(r"\brelevant\b", lowered):
        return True, True
    if re.search(r"\byes\b", lowered):
        return True, True
    if re.search(r"\bno\b", lowered):
        return False, True
    return False, False


def instance_token_count(inst: ContextInstance, counter: TokenCounter) -> int:
    """Budgeted size of an instance: tagged context plus question."""
    return counter.count(tag_documents(inst.documents)) + counter.count(inst.question)


def filter_by_length(
    inst: ContextInstance, counter: TokenCounter, cfg: BuildConfig
) -> bool:
    """True iff the instance fits the context budget (limit inclusive)."""
    return instance_token_count(inst, counter) <= cfg.max_context_tokens


def split_dataset(
    instances: Sequence[ContextInstance], ratio: float, seed: int
) -> tuple[list[ContextInstance], list[ContextInstance]]:
    """Deterministic train/dev partition with ``|train| = round(ratio * n)``.

    Selection is seeded; both halves keep the input's relative order.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    n = len(instances)
    if n == 0:
        return [], []
    n_train = int(round(ratio * n))
    picked = set(random.Random(seed).sample(range(n), n_train))
    train = [instances[i] for i in range(n) if i in picked]
    dev = [instances[i] for i in range(n) if i not in picked]
    return train, dev


# --- JSON-lines interfaces -------------------------------------------------


def instance_to_dict(inst: ContextInstance) -> dict:
    return {
        "id": inst.id,
        "question": inst.question,
        "answers": list(inst.answers),
        "docs": [{"text": d.text, "origin": d.origin} for d in inst.documents],
        "gold_ids": sorted(inst.gold_ids),
        "source": inst.source,
    }


def instance_from_dict(data: dict) -> ContextInstance:
    docs = [
        Document(index=i, text=d["text"], origin=d.get("origin", ORIGIN_HARD_NEGATIVE))
        for i, d in enumerate(data["docs"])
    ]
    return ContextInstance(
        id=str(data["id"]),
        question=data["question"],
        answers=list(data["answers"]),
        documents=docs,
        gold_ids=set(data["gold_ids"]),
        source=data.get("source", ""),
    ).validate()


def read_instances(path: str | Path) -> list[ContextInstance]:
    return [instance_from_dict(obj) for obj in _iter_jsonl(path)]


def write_instances(path: str | Path, instances: Iterable[ContextInstance]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(json.dumps(instance_to_dict(inst), ensure_ascii=False) + "\n")


@dataclass
class CandidateRecord:
    """One line of the pre-retrieved ingestion file."""

    id: str
    question: str
    answers: list[str]
    gold_docs: list[str]
    retrieved: list[str]


def read_candidates(path: str | Path) -> Iterator[tuple[int, Optional[CandidateRecord], Optional[str]]]:
    """Yield ``(line number, record, error)`` for each non-empty line.

    Malformed lines yield ``record=None`` plus an error message so the
    caller can log and count them instead of dying mid-file.
    """
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                record = CandidateRecord(
                    id=str(obj["id"]),
                    question=obj["question"],
                    answers=[str(a) for a in obj["answers"]],
                    gold_docs=[str(d) for d in obj["gold_docs"]],
                    retrieved=[str(d) for d in obj.get("retrieved", [])],
                )
                if not record.answers:
                    raise ValueError("answers must be non-empty")
            except (KeyError, TypeError, ValueError) as exc:
                yield lineno, None, f"{type(exc).__name__}: {exc}"
                continue
            yield lineno, record, None


def read_token_sidecar(path: str | Path) -> dict[str, int]:
    """Load a ``{"id", "tokens"}`` JSON-lines sidecar into a mapping."""
    counts: dict[str, int] = {}
    for obj in _iter_jsonl(path):
        counts[str(obj["id"])] = int(obj["tokens"])
    return counts


def _iter_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)
