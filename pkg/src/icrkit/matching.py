"""Text normalization and string-similarity primitives.

Everything downstream (reward indicators, hard-negative refinement,
benchmark metrics) compares text through this module so that "the same
answer up to lexical noise" means one thing everywhere.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass

__all__ = [
    "NormalizationRules",
    "DEFAULT_RULES",
    "SIMILARITY_RULES",
    "normalize",
    "sub_exact_match",
    "jaccard_similarity",
    "char_f1",
    "ngram_overlap",
    "token_count",
    "EmptyGoldError",
]

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")


class EmptyGoldError(ValueError):
    """Raised when a gold string normalizes to nothing, making a match undefined."""


@dataclass(frozen=True)
class NormalizationRules:
    """Which cleanup steps :func:`normalize` applies. All on by default."""

    lowercase: bool = True
    strip_punctuation: bool = True
    remove_articles: bool = True
    collapse_whitespace: bool = True

    def to_dict(self) -> dict:
        return {
            "lowercase": self.lowercase,
            "strip_punctuation": self.strip_punctuation,
            "remove_articles": self.remove_articles,
            "collapse_whitespace": self.collapse_whitespace,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationRules":
        return cls(**{k: bool(v) for k, v in data.items()})


DEFAULT_RULES = NormalizationRules()

# Near-duplicate scoring treats articles as real tokens; dropping them is a
# QA-answer convention, not a similarity one.
SIMILARITY_RULES = NormalizationRules(remove_articles=False)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def normalize(s: str, rules: NormalizationRules = DEFAULT_RULES) -> str:
    """Apply the configured cleanup steps; idempotent, never returns
    leading/trailing whitespace."""
    if rules.lowercase:
        s = s.lower()
    if rules.strip_punctuation:
        s = "".join(ch for ch in s if not _is_punct(ch))
    if rules.remove_articles:
        s = _ARTICLE_RE.sub(" ", s)
    if rules.collapse_whitespace:
        s = " ".join(s.split())
    return s.strip()


def sub_exact_match(
    prediction: str, gold: str, rules: NormalizationRules = DEFAULT_RULES
) -> bool:
    """True iff the normalized gold string is a contiguous substring of the
    normalized prediction.

    Raises :class:`EmptyGoldError` if the gold string normalizes to "".
    """
    gold_norm = normalize(gold, rules)
    if not gold_norm:
        raise EmptyGoldError(f"gold string normalizes to empty: {gold!r}")
    return gold_norm in normalize(prediction, rules)


def jaccard_similarity(
    a: str, b: str, rules: NormalizationRules = SIMILARITY_RULES
) -> float:
    """Jaccard similarity over normalized word-token sets. Two empty sets
    compare as identical (1.0)."""
    ta = set(normalize(a, rules).split())
    tb = set(normalize(b, rules).split())
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


def char_f1(a: str, b: str, rules: NormalizationRules = SIMILARITY_RULES) -> float:
    """F1 over the non-whitespace character multisets of the normalized strings.

    precision = overlap / len(a), recall = overlap / len(b); both empty -> 1.
    Whitespace is excluded so disjoint-vocabulary strings score 0.
    """
    na = "".join(normalize(a, rules).split())
    nb = "".join(normalize(b, rules).split())
    if not na and not nb:
        return 1.0
    if not na or not nb:
        return 0.0
    overlap = sum((Counter(na) & Counter(nb)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(na)
    recall = overlap / len(nb)
    return 2 * precision * recall / (precision + recall)


def ngram_overlap(
    a: str, b: str, n: int = 3, rules: NormalizationRules = SIMILARITY_RULES
) -> float:
    """Jaccard over word n-gram sets of the normalized strings.

    If either side has fewer than ``n`` tokens, ``n`` falls back to the
    smaller token count (floored at 1) so short strings still compare.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    ta = normalize(a, rules).split()
    tb = normalize(b, rules).split()
    if not ta and not tb:
        return 1.0
    n_eff = max(1, min(n, len(ta), len(tb)))
    ga = {tuple(ta[i : i + n_eff]) for i in range(len(ta) - n_eff + 1)}
    gb = {tuple(tb[i : i + n_eff]) for i in range(len(tb) - n_eff + 1)}
    if not ga and not gb:
        return 1.0
    if not ga or not gb:
        return 0.0
    return len(ga & gb) / len(ga | gb)


def token_count(s: str) -> int:
    """Number of whitespace-delimited units of the raw (non-normalized) string."""
    return len(s.split())
