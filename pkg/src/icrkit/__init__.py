"""icrkit: verifiable rewards and retrieval evaluation for long-context QA.

The package builds hard-negative training corpora, scores model outputs
with five verifiable reward functions, and reproduces the attention
ranking / KV-retention / drop-table analyses over externally produced
prediction and attention files.
"""

__version__ = "0.1.0"

from . import corpus, evaluation, matching, parsing, rewards

__all__ = ["corpus", "evaluation", "matching", "parsing", "rewards", "__version__"]
