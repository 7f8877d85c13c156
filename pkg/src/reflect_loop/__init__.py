"""Closed-loop multi-agent pipeline for multimodal empathetic response generation."""

from .core import (
    AuditFeedback,
    CandidateResponse,
    DialogueContext,
    EmotionForecast,
    EvalTuple,
    IterationRecord,
    PerceptionEvidence,
    PragmaticPlan,
    RunHistory,
    StageId,
    Turn,
)
from .loop import LoopConfig, run_closed_loop, select_final

__all__ = [
    "AuditFeedback",
    "CandidateResponse",
    "DialogueContext",
    "EmotionForecast",
    "EvalTuple",
    "IterationRecord",
    "LoopConfig",
    "PerceptionEvidence",
    "PragmaticPlan",
    "RunHistory",
    "StageId",
    "Turn",
    "run_closed_loop",
    "select_final",
]

__version__ = "0.1.0"
