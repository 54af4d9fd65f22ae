"""HTTP reward service: a FastAPI app wrapping the scoring core."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__
from .config import RunConfig
from .scoring import RewardScorer
from .schemas import (
    BatchRewardRequest,
    BatchRewardResponse,
    HealthResponse,
    InstanceSummary,
    RewardRequestModel,
    RewardResponseModel,
)


def create_app(
    config: Optional[RunConfig] = None, scorer: Optional[RewardScorer] = None
) -> FastAPI:
    scorer = scorer or RewardScorer(config or RunConfig())
    app = FastAPI(title="icrkit reward service", version=__version__)
    app.state.scorer = scorer

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            status="ok", version=__version__, instances=len(scorer.instances)
        )

    @app.get("/instances/{instance_id}", response_model=InstanceSummary)
    def instance_summary(instance_id: str) -> InstanceSummary:
        inst = scorer.instances.get(instance_id)
        if inst is None:
            raise HTTPException(status_code=404, detail=f"unknown instance: {instance_id}")
        return InstanceSummary(
            id=inst.id,
            question=inst.question,
            num_documents=len(inst.documents),
            gold_ids=sorted(inst.gold_ids),
            source=inst.source,
        )

    @app.post("/reward", response_model=RewardResponseModel, response_model_exclude_none=True)
    def reward(request: RewardRequestModel):
        response = scorer.score_request(request.to_wire())
        if "error" in response:
            return JSONResponse(status_code=400, content=response)
        return response

    @app.post("/reward/batch", response_model=BatchRewardResponse, response_model_exclude_none=True)
    def reward_batch(batch: BatchRewardRequest) -> BatchRewardResponse:
        responses = [
            RewardResponseModel(**scorer.score_request(req.to_wire()))
            for req in batch.requests
        ]
        return BatchRewardResponse(responses=responses)

    return app
