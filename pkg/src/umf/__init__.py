"""Budgeted tree-search decoding for masked-diffusion sequence models."""

from .core import (
    Action,
    MaskedState,
    NfeLedger,
    Vocabulary,
    residual_mask_ratio,
    state_digest,
)
from .denoiser import (
    CountingDenoiser,
    DenoiserOutput,
    DenoiserRegistry,
    ExactPosteriorDenoiser,
    PlantedSkillDenoiser,
    tempered_distribution,
)
from .remask import DEFAULT_SCHEDULE, RatioSchedule, RemaskDecision
from .search import RolloutCache, SearchResult, TreeNode, run, uct_score

__version__ = "0.1.0"

__all__ = [
    "Action",
    "CountingDenoiser",
    "DEFAULT_SCHEDULE",
    "DenoiserOutput",
    "DenoiserRegistry",
    "ExactPosteriorDenoiser",
    "MaskedState",
    "NfeLedger",
    "PlantedSkillDenoiser",
    "RatioSchedule",
    "RemaskDecision",
    "RolloutCache",
    "SearchResult",
    "TreeNode",
    "Vocabulary",
    "residual_mask_ratio",
    "run",
    "state_digest",
    "tempered_distribution",
    "uct_score",
    "__version__",
]
