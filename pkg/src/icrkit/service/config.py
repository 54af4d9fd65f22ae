"""Run configuration: file-based with ICRKIT_* environment overrides."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..matching import DEFAULT_RULES, NormalizationRules

ENV_PREFIX = "ICRKIT_"


@dataclass
class RunConfig:
    corpus_paths: list[str] = field(default_factory=list)
    normalization: NormalizationRules = DEFAULT_RULES
    fuzzy_threshold: float = 0.6
    ngram_n: int = 3
    quote_token_limit: int = 30
    ndcg_k: int = 10
    judge_mode: str = "recorded"
    judge_endpoint: str = ""
    judge_fixtures: str = ""
    judge_timeout: float = 30.0
    judge_retries: int = 2
    judge_max_in_flight: int = 8
    workers: int = 8
    seed: int = 0
    split_ratio: float = 0.95
    max_context_tokens: int = 32768
    retriever_top_k: int = 500
    output_dir: str = "runs"

    def to_dict(self) -> dict:
        data = asdict(self)
        data["normalization"] = self.normalization.to_dict()
        return data

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def validate_paths(self) -> None:
        for path in [*self.corpus_paths, self.judge_fixtures]:
            if path and not Path(path).exists():
                raise FileNotFoundError(f"configured path does not exist: {path}")

    @classmethod
    def load(
        cls, path: Optional[str] = None, env: Optional[dict] = None, **overrides
    ) -> "RunConfig":
        """Build a config from (defaults < file < environment < overrides)."""
        data: dict = {}
        if path:
            with open(path, "r", encoding="utf-8") as f:
                data.update(json.load(f))
        env = dict(os.environ if env is None else env)
        for f_ in fields(cls):
            key = ENV_PREFIX + f_.name.upper()
            if key in env:
                data[f_.name] = _coerce(f_.name, env[key])
        for key, value in overrides.items():
            if value is not None:
                data[key] = value
        if isinstance(data.get("normalization"), dict):
            data["normalization"] = NormalizationRules.from_dict(data["normalization"])
        known = {f_.name for f_ in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def _coerce(name: str, raw: str):
    if name == "corpus_paths":
        return [p for p in raw.split(os.pathsep) if p]
    if name == "normalization":
        return json.loads(raw)
    if name in ("fuzzy_threshold", "judge_timeout", "split_ratio"):
        return float(raw)
    if name in (
        "ngram_n",
        "quote_token_limit",
        "ndcg_k",
        "judge_retries",
        "judge_max_in_flight",
        "workers",
        "seed",
        "max_context_tokens",
        "retriever_top_k",
    ):
        return int(raw)
    return raw
