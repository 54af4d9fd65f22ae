"""Benchmark scoring and the aggregate analyses.

Covers per-output metrics (sub-exact match, multiple-choice accuracy,
ROUGE-L), attention-based document ranking with NDCG, top-k KV-retention
simulation, compression drop tables, and Pearson correlation.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .matching import (
    EmptyGoldError,
    NormalizationRules,
    normalize,
    sub_exact_match,
)

__all__ = [
    "AttentionRecord",
    "EvalReport",
    "CorrelationError",
    "subem_score",
    "mc_accuracy",
    "extract_mc_choice",
    "rouge_l",
    "doc_attention_scores",
    "ndcg_at_k",
    "simulate_topk_retention",
    "drop_table",
    "pearson",
    "aggregate",
    "read_attention_dump",
]

# ROUGE tokenization keeps articles: "the" is a real token for overlap.
ROUGE_RULES = NormalizationRules(remove_articles=False)

_MC_LETTER_RE = re.compile(r"^\(?([A-D])\)?(?:$|[.:,)\s])", re.IGNORECASE)
_MC_MARKER_RE = re.compile(
    r"(?:the\s+correct\s+answer\s+is|the\s+answer\s+is|answer)\s*:?\s*", re.IGNORECASE
)


class CorrelationError(ValueError):
    """Correlation is undefined for the given vectors."""


def subem_score(prediction: str, answers: Sequence[str]) -> int:
    """1 iff any gold alias sub-exact-matches the raw prediction."""
    if not answers:
        raise ValueError("answers must be non-empty")
    for alias in answers:
        try:
            if sub_exact_match(prediction, alias):
                return 1
        except EmptyGoldError:
            continue
    return 0


def extract_mc_choice(prediction: str, choices: Sequence[str]) -> Optional[str]:
    """Best-effort letter extraction for multiple-choice outputs.

    Cascade: answer-marker tail, then a leading option letter like "(B)",
    "B." or a bare "B", then unique containment of one choice's normalized
    text. Returns the letter or None when nothing extractable.
    """
    tails = [m.end() for m in _MC_MARKER_RE.finditer(prediction)]
    candidates = [prediction[tails[-1] :]] if tails else []
    candidates.append(prediction)
    for text in candidates:
        text = text.strip()
        m = _MC_LETTER_RE.match(text)
        if m:
            return m.group(1).upper()
    # fall back to matching a choice's text
    pred_norm = normalize(prediction)
    hits = []
    for i, choice in enumerate(choices):
        choice_norm = normalize(choice)
        if choice_norm and choice_norm in pred_norm:
            hits.append(chr(ord("A") + i))
    if len(hits) == 1:
        return hits[0]
    return None


def mc_accuracy(prediction: str, choices: Sequence[str], gold_letter: str) -> int:
    """1 iff the extracted option (letter or unique choice text) equals gold."""
    gold = gold_letter.strip().upper()
    if gold not in ("A", "B", "C", "D"):
        raise ValueError(f"gold_letter must be one of A-D, got {gold_letter!r}")
    extracted = extract_mc_choice(prediction, choices)
    return 1 if extracted == gold else 0


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, ytok in enumerate(b, start=1):
            if x == ytok:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(prediction: str, reference: str) -> float:
    """LCS F-measure over normalized word tokens (articles kept).

    Computed as 2*LCS / (|pred| + |ref|), the algebraic form of
    2PR/(P+R); exact for clean ratios.
    """
    pred = normalize(prediction, ROUGE_RULES).split()
    ref = normalize(reference, ROUGE_RULES).split()
    lcs = _lcs_length(pred, ref)
    if lcs == 0:
        return 0.0
    return 2.0 * lcs / (len(pred) + len(ref))


@dataclass
class AttentionRecord:
    """Per-token attention mass over a tagged context, with document spans.

    ``doc_spans`` holds ``(doc index, token start, token end)`` half-open
    ranges; produced by an external inference harness.
    """

    instance_id: str
    doc_spans: list[tuple[int, int, int]]
    token_scores: list[float]

    def validate(self) -> "AttentionRecord":
        n = len(self.token_scores)
        for s in self.token_scores:
            if not math.isfinite(s) or s < 0:
                raise ValueError(f"{self.instance_id}: token scores must be finite, >= 0")
        spans = sorted(self.doc_spans, key=lambda t: t[1])
        prev_end = 0
        for doc, start, end in spans:
            if not (0 <= start < end <= n):
                raise ValueError(
                    f"{self.instance_id}: span ({doc},{start},{end}) outside [0,{n})"
                )
            if start < prev_end:
                raise ValueError(f"{self.instance_id}: overlapping spans")
            prev_end = end
        return self


def read_attention_dump(path: str | Path) -> list[AttentionRecord]:
    """Load JSON-lines {"id", "doc_spans": [[doc,start,end]], "token_scores"}."""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(
                AttentionRecord(
                    instance_id=str(obj["id"]),
                    doc_spans=[tuple(s) for s in obj["doc_spans"]],
                    token_scores=[float(s) for s in obj["token_scores"]],
                ).validate()
            )
    return records


def doc_attention_scores(
    rec: AttentionRecord, per_token_mean: bool = False
) -> list[tuple[int, float]]:
    """Rank documents by attention mass over their span, descending.

    Cumulative sums by default; ``per_token_mean`` divides by span length
    for length-sensitivity checks. Score ties break by ascending doc index.
    """
    scored = []
    for doc, start, end in rec.doc_spans:
        score = sum(rec.token_scores[start:end])
        if per_token_mean:
            score /= end - start
        scored.append((doc, score))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored


def ndcg_at_k(ranking: Sequence[int], relevant: set[int], k: int = 10) -> float:
    """Binary-gain NDCG: gain 1 for relevant docs, discount 1/log2(rank+1)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    dcg = 0.0
    for pos, doc in enumerate(ranking[:k], start=1):
        if doc in relevant:
            dcg += 1.0 / math.log2(pos + 1)
    ideal = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(k, len(relevant)) + 1))
    return dcg / ideal


def simulate_topk_retention(
    rec: AttentionRecord, budget: int
) -> tuple[list[bool], dict[int, float]]:
    """Retain the ``budget`` most-attended tokens; report per-doc survival.

    Ties break by ascending token position, so retained sets are nested
    across growing budgets. Survival is retained-span-tokens / span-length.
    """
    n = len(rec.token_scores)
    if not 0 <= budget <= n:
        raise ValueError(f"budget must be in [0, {n}], got {budget}")
    order = sorted(range(n), key=lambda i: (-rec.token_scores[i], i))
    mask = [False] * n
    for i in order[:budget]:
        mask[i] = True
    survival = {}
    for doc, start, end in rec.doc_spans:
        survival[doc] = sum(mask[start:end]) / (end - start)
    return mask, survival


def drop_table(
    full: Mapping[str, float], compressed: Mapping[str, float]
) -> dict[str, float]:
    """Signed performance drop (%) per shared key, one decimal, plus Avg.

    drop = (compressed - full) / full * 100. The Avg entry is the
    arithmetic mean of the per-task drops (computed over the reported
    one-decimal values, matching how the source tables average).
    """
    keys = [k for k in full if k in compressed]
    if not keys:
        raise ValueError("no shared keys between full and compressed maps")
    drops: dict[str, float] = {}
    for key in keys:
        if full[key] <= 0:
            raise ValueError(f"full value for {key!r} must be > 0")
        drops[key] = round((compressed[key] - full[key]) / full[key] * 100.0, 1)
    drops["Avg"] = round(sum(drops[k] for k in keys) / len(keys), 1)
    return drops


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Sample Pearson r with a two-sided p from the t distribution (df = n-2)."""
    n = len(x)
    if n != len(y):
        raise CorrelationError("vectors must have equal length")
    if n < 3:
        raise CorrelationError("need at least 3 points")
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        raise CorrelationError("zero variance input")
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    r = sxy / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt(n - 2) / math.sqrt(1.0 - r * r)
    from scipy import stats

    p = 2.0 * float(stats.t.sf(abs(t), n - 2))
    return r, p


@dataclass
class EvalReport:
    """Aggregated metric tables for one evaluation run."""

    run_id: str
    metric: str
    per_instance: list[dict] = field(default_factory=list)
    group_means: dict[str, float] = field(default_factory=dict)
    average: float = 0.0
    ndcg: Optional[dict] = None
    retention: Optional[list[dict]] = None
    drop: Optional[dict] = None
    correlation: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {
            "run_id": self.run_id,
            "metric": self.metric,
            "average": self.average,
            "group_means": self.group_means,
            "per_instance": self.per_instance,
        }
        if self.ndcg is not None:
            out["ndcg"] = self.ndcg
        if self.retention is not None:
            out["retention"] = self.retention
        if self.drop is not None:
            out["drop"] = self.drop
        if self.correlation is not None:
            out["correlation"] = self.correlation
        return out


def aggregate(
    run_id: str,
    metric: str,
    groups: Mapping[str, Sequence[float]],
    per_instance: Optional[Iterable[dict]] = None,
) -> EvalReport:
    """Per-group means plus the overall mean-of-group-means average."""
    for key, scores in groups.items():
        if not scores:
            raise ValueError(f"group {key!r} is empty")
    group_means = {key: sum(v) / len(v) for key, v in sorted(groups.items())}
    average = sum(group_means.values()) / len(group_means) if group_means else 0.0
    return EvalReport(
        run_id=run_id,
        metric=metric,
        per_instance=sorted(per_instance or [], key=lambda d: str(d.get("id", ""))),
        group_means=group_means,
        average=average,
    )
