"""Operational surface: configuration, reward scoring service, batch CLI."""

from .config import RunConfig
from .scoring import RewardScorer

__all__ = ["RunConfig", "RewardScorer"]
