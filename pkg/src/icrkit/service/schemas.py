"""Pydantic models for the HTTP reward API.

These mirror the newline-delimited JSON wire schema one-to-one, so a
response body from the HTTP surface is byte-compatible with a stream
response line for the same request.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field, model_validator


class DocumentPayload(BaseModel):
    text: str
    origin: str = "hard_negative"


class InstancePayload(BaseModel):
    id: str
    question: str
    answers: list[str]
    docs: list[DocumentPayload]
    gold_ids: list[int]
    source: str = ""


class RewardRequestModel(BaseModel):
    request_id: str
    output_text: str
    kind: str
    instance: Optional[InstancePayload] = None
    instance_id: Optional[str] = None

    @model_validator(mode="after")
    def _exactly_one_instance(self) -> "RewardRequestModel":
        if (self.instance is None) == (self.instance_id is None):
            raise ValueError("exactly one of instance / instance_id is required")
        return self

    def to_wire(self) -> dict:
        wire: dict = {
            "request_id": self.request_id,
            "output_text": self.output_text,
            "kind": self.kind,
        }
        if self.instance is not None:
            wire["instance"] = self.instance.model_dump()
        else:
            wire["instance_id"] = self.instance_id
        return wire


class RewardResponseModel(BaseModel):
    request_id: Optional[str]
    kind: Optional[str] = None
    total: Optional[float] = None
    components: Optional[dict[str, int]] = None
    flags: Optional[list[str]] = None
    diagnostics: Optional[dict] = None
    error: Optional[str] = None


class BatchRewardRequest(BaseModel):
    requests: list[RewardRequestModel] = Field(min_length=1)


class BatchRewardResponse(BaseModel):
    responses: list[RewardResponseModel]


class HealthResponse(BaseModel):
    status: str
    version: str
    instances: int


class InstanceSummary(BaseModel):
    id: str
    question: str
    num_documents: int
    gold_ids: list[int]
    source: str
