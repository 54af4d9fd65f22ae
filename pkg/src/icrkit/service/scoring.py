"""Request-level reward scoring shared by the batch CLI, the stream server,
and the HTTP API, so every surface returns field-identical results."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from ..corpus import ContextInstance, InstanceError, instance_from_dict, read_instances
from ..rewards import (
    ConfigurationError,
    JudgeClient,
    JudgeTransportError,
    RewardKind,
    RewardSettings,
    compute_reward,
)
from .config import RunConfig


class RequestError(ValueError):
    """A reward request is structurally invalid or unresolvable."""


def build_judge(config: RunConfig) -> Optional[JudgeClient]:
    if config.judge_mode == "live" and config.judge_endpoint:
        return JudgeClient(
            mode="live",
            endpoint=config.judge_endpoint,
            timeout=config.judge_timeout,
            retries=config.judge_retries,
            max_in_flight=config.judge_max_in_flight,
        )
    if config.judge_fixtures:
        return JudgeClient.from_fixture_file(
            config.judge_fixtures,
            timeout=config.judge_timeout,
            retries=config.judge_retries,
            max_in_flight=config.judge_max_in_flight,
        )
    return None


class RewardScorer:
    """Immutable corpus + settings; stateless per request, safe to share."""

    def __init__(
        self,
        config: Optional[RunConfig] = None,
        instances: Optional[dict[str, ContextInstance]] = None,
        judge: Optional[JudgeClient] = None,
    ):
        self.config = config or RunConfig()
        self.instances: dict[str, ContextInstance] = dict(instances or {})
        if config is not None:
            for path in config.corpus_paths:
                for inst in read_instances(path):
                    self.instances[inst.id] = inst
        self.settings = RewardSettings(
            rules=self.config.normalization,
            quote_token_limit=self.config.quote_token_limit,
        )
        self.judge = judge if judge is not None else build_judge(self.config)

    def resolve_instance(self, request: dict) -> ContextInstance:
        inline = request.get("instance")
        ref = request.get("instance_id")
        if (inline is None) == (ref is None):
            raise RequestError("exactly one of instance / instance_id is required")
        if inline is not None:
            try:
                return instance_from_dict(inline)
            except (KeyError, TypeError, InstanceError) as exc:
                raise RequestError(f"invalid inline instance: {exc}") from exc
        if ref not in self.instances:
            raise RequestError(f"unknown instance_id: {ref!r}")
        return self.instances[ref]

    def score_request(self, request: dict) -> dict:
        """Score one wire-format request; errors come back as error objects."""
        request_id = request.get("request_id")
        try:
            if not isinstance(request_id, str) or not request_id:
                raise RequestError("request_id is required")
            output_text = request.get("output_text")
            if not isinstance(output_text, str):
                raise RequestError("output_text is required")
            kind = RewardKind.parse(str(request.get("kind", "")))
            inst = self.resolve_instance(request)
            if kind is RewardKind.R_JUDGE and self.judge is None:
                raise ConfigurationError("R_JUDGE requested but no judge configured")
            result = compute_reward(
                inst, output_text, kind, judge=self.judge, settings=self.settings
            )
        except (RequestError, ConfigurationError) as exc:
            return {"request_id": request_id, "error": str(exc)}
        except JudgeTransportError as exc:
            return {"request_id": request_id, "error": f"judge unavailable: {exc}"}
        return {"request_id": request_id, **result.to_dict()}
