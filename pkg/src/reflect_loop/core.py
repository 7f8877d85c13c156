"""Domain types shared by every module.

All types are immutable values after construction and validate their own
invariants in ``__post_init__``; anything downstream can assume a constructed
object is well formed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from . import labels
from .errors import ReflectLoopError


class InvariantError(ReflectLoopError):
    """A domain type was constructed with inconsistent fields."""


class StageId(enum.IntEnum):
    """Pipeline stages in architectural priority order."""

    PERCEPTION = 0
    EMOTION = 1
    STRATEGY = 2
    RESPONSE = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "StageId":
        try:
            return cls[label.upper()]
        except KeyError:
            raise InvariantError(f"unknown stage {label!r}") from None


STAGES = tuple(StageId)


@dataclass(frozen=True, slots=True)
class Turn:
    """One conversation turn: speaker, utterance, optional keyframe images."""

    speaker_id: str
    utterance: str
    keyframes: tuple[str, ...] = ()
    turn_index: int = 1

    def __post_init__(self):
        if not self.utterance.strip():
            raise InvariantError("utterance must be non-empty after trimming")
        if self.turn_index < 1:
            raise InvariantError("turn_index must be >= 1")
        object.__setattr__(self, "keyframes", tuple(self.keyframes))

    def to_dict(self) -> dict:
        return {
            "speaker_id": self.speaker_id,
            "utterance": self.utterance,
            "keyframes": list(self.keyframes),
            "turn_index": self.turn_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Turn":
        return cls(
            speaker_id=d["speaker_id"],
            utterance=d["utterance"],
            keyframes=tuple(d.get("keyframes", ())),
            turn_index=d["turn_index"],
        )


@dataclass(frozen=True, slots=True)
class DialogueContext:
    """Conversation history plus the reference next turn, when labelled.

    The last turn is the one to respond to; ``gold_emotion`` and
    ``gold_response`` describe the reference next turn.
    """

    dialogue_id: str
    turns: tuple[Turn, ...]
    target_speaker: str
    label_set_id: str
    gold_emotion: str | None = None
    gold_response: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise InvariantError(f"{self.dialogue_id}: dialogue needs at least one turn")
        indices = [t.turn_index for t in self.turns]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise InvariantError(f"{self.dialogue_id}: turn_index must be strictly increasing")
        if self.gold_emotion is not None and self.gold_emotion not in labels.label_set(self.label_set_id):
            raise InvariantError(
                f"{self.dialogue_id}: gold emotion {self.gold_emotion!r} "
                f"not in label set {self.label_set_id!r}"
            )

    @property
    def keyframes(self) -> tuple[str, ...]:
        return tuple(k for t in self.turns for k in t.keyframes)

    def to_dict(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "turns": [t.to_dict() for t in self.turns],
            "target_speaker": self.target_speaker,
            "label_set_id": self.label_set_id,
            "gold_emotion": self.gold_emotion,
            "gold_response": self.gold_response,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DialogueContext":
        return cls(
            dialogue_id=d["dialogue_id"],
            turns=tuple(Turn.from_dict(t) for t in d["turns"]),
            target_speaker=d["target_speaker"],
            label_set_id=d["label_set_id"],
            gold_emotion=d.get("gold_emotion"),
            gold_response=d.get("gold_response"),
        )


@dataclass(frozen=True, slots=True)
class PerceptionEvidence:
    """Concrete visual and textual cues extracted from the context."""

    visual_observations: tuple[str, ...]
    textual_observations: tuple[str, ...]
    raw_text: str

    def __post_init__(self):
        object.__setattr__(self, "visual_observations", tuple(self.visual_observations))
        object.__setattr__(self, "textual_observations", tuple(self.textual_observations))
        if not self.raw_text:
            raise InvariantError("perception raw_text must be non-empty")
        if not self.visual_observations and not self.textual_observations:
            raise InvariantError("perception needs at least one observation")

    def to_dict(self) -> dict:
        return {
            "visual_observations": list(self.visual_observations),
            "textual_observations": list(self.textual_observations),
            "raw_text": self.raw_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerceptionEvidence":
        return cls(
            visual_observations=tuple(d["visual_observations"]),
            textual_observations=tuple(d["textual_observations"]),
            raw_text=d["raw_text"],
        )


@dataclass(frozen=True, slots=True)
class EmotionForecast:
    """Predicted emotion for the next-turn response."""

    label: str
    rationale: str
    raw_text: str
    label_set_id: str

    def __post_init__(self):
        if self.label not in labels.label_set(self.label_set_id):
            raise InvariantError(f"emotion {self.label!r} not in label set {self.label_set_id!r}")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "rationale": self.rationale,
            "raw_text": self.raw_text,
            "label_set_id": self.label_set_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmotionForecast":
        return cls(d["label"], d["rationale"], d["raw_text"], d["label_set_id"])


@dataclass(frozen=True, slots=True)
class PragmaticPlan:
    """How the response should be delivered: goal, stance, tactic, tone.

    All four fields are open-vocabulary strings; styles are emergent, not a
    closed set.
    """

    goal: str
    stance: str
    tactic: str
    tone: str
    raw_text: str

    def __post_init__(self):
        for name in ("goal", "stance", "tactic", "tone"):
            if not getattr(self, name).strip():
                raise InvariantError(f"plan field {name!r} must be non-empty")

    def to_dict(self) -> dict:
        return {
            "goal": self.goal,
            "stance": self.stance,
            "tactic": self.tactic,
            "tone": self.tone,
            "raw_text": self.raw_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PragmaticPlan":
        return cls(d["goal"], d["stance"], d["tactic"], d["tone"], d["raw_text"])


@dataclass(frozen=True, slots=True)
class CandidateResponse:
    """A generated next-turn response."""

    text: str
    raw_text: str

    def __post_init__(self):
        if not self.text.strip():
            raise InvariantError("response text must be non-empty after trimming")

    def to_dict(self) -> dict:
        return {"text": self.text, "raw_text": self.raw_text}

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateResponse":
        return cls(d["text"], d["raw_text"])


@dataclass(frozen=True, slots=True)
class AuditFeedback:
    """Reflection agent verdict: one binary check per stage plus a critique.

    ``is_valid`` and ``attributed_stage`` are always recomputed from the
    checks; an inconsistent model claim can never survive construction.
    """

    checks: tuple[bool, bool, bool, bool]
    is_valid: bool
    attributed_stage: StageId | None
    critique: str
    raw_text: str
    inconclusive: bool = False

    def __post_init__(self):
        object.__setattr__(self, "checks", tuple(bool(c) for c in self.checks))
        if len(self.checks) != len(STAGES):
            raise InvariantError(f"expected {len(STAGES)} checks, got {len(self.checks)}")
        if self.is_valid != all(self.checks):
            raise InvariantError("is_valid must equal the conjunction of all checks")
        expected = earliest_failure(self.checks)
        if self.attributed_stage != expected:
            raise InvariantError(
                f"attributed_stage {self.attributed_stage} does not match earliest false check {expected}"
            )

    @classmethod
    def from_checks(
        cls,
        checks: tuple[bool, bool, bool, bool],
        critique: str = "",
        raw_text: str = "",
        inconclusive: bool = False,
    ) -> "AuditFeedback":
        """Build a consistent feedback object from the checks alone."""
        checks = tuple(bool(c) for c in checks)
        return cls(
            checks=checks,
            is_valid=all(checks),
            attributed_stage=earliest_failure(checks),
            critique=critique,
            raw_text=raw_text,
            inconclusive=inconclusive,
        )

    def to_dict(self) -> dict:
        return {
            "checks": [bool(c) for c in self.checks],
            "is_valid": self.is_valid,
            "attributed_stage": self.attributed_stage.label if self.attributed_stage is not None else None,
            "critique": self.critique,
            "raw_text": self.raw_text,
            "inconclusive": self.inconclusive,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditFeedback":
        stage = d.get("attributed_stage")
        return cls(
            checks=tuple(d["checks"]),
            is_valid=d["is_valid"],
            attributed_stage=StageId.from_label(stage) if stage is not None else None,
            critique=d.get("critique", ""),
            raw_text=d.get("raw_text", ""),
            inconclusive=d.get("inconclusive", False),
        )


def earliest_failure(checks: tuple[bool, ...]) -> StageId | None:
    """Stage of the first false check, or None when all pass."""
    for stage, ok in zip(STAGES, checks):
        if not ok:
            return stage
    return None


@dataclass(frozen=True, slots=True)
class IterationRecord:
    """Everything one loop iteration produced."""

    t: int
    perception: PerceptionEvidence
    emotion: EmotionForecast
    plan: PragmaticPlan
    response: CandidateResponse
    feedback: AuditFeedback
    regenerated_from: StageId | None = None

    def __post_init__(self):
        if self.t < 1:
            raise InvariantError("iteration index must be >= 1")
        if (self.regenerated_from is None) != (self.t == 1):
            raise InvariantError("regenerated_from must be absent exactly at t=1")

    def stage_output(self, stage: StageId):
        return {
            StageId.PERCEPTION: self.perception,
            StageId.EMOTION: self.emotion,
            StageId.STRATEGY: self.plan,
            StageId.RESPONSE: self.response,
        }[stage]

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "perception": self.perception.to_dict(),
            "emotion": self.emotion.to_dict(),
            "plan": self.plan.to_dict(),
            "response": self.response.to_dict(),
            "feedback": self.feedback.to_dict(),
            "regenerated_from": self.regenerated_from.label if self.regenerated_from is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        regen = d.get("regenerated_from")
        return cls(
            t=d["t"],
            perception=PerceptionEvidence.from_dict(d["perception"]),
            emotion=EmotionForecast.from_dict(d["emotion"]),
            plan=PragmaticPlan.from_dict(d["plan"]),
            response=CandidateResponse.from_dict(d["response"]),
            feedback=AuditFeedback.from_dict(d["feedback"]),
            regenerated_from=StageId.from_label(regen) if regen is not None else None,
        )


@dataclass(frozen=True, slots=True)
class RunHistory:
    """Complete refinement history for one dialogue plus the selected response."""

    dialogue_id: str
    records: tuple[IterationRecord, ...]
    selected_t: int
    final_response: str

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise InvariantError("history needs at least one record")
        for i, rec in enumerate(self.records):
            if rec.t != i + 1:
                raise InvariantError(f"record {i} has t={rec.t}, expected {i + 1}")
        if not (1 <= self.selected_t <= len(self.records)):
            raise InvariantError(f"selected_t {self.selected_t} out of range")
        if self.final_response != self.records[self.selected_t - 1].response.text:
            raise InvariantError("final_response must equal the selected record's response text")

    def to_dict(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "records": [r.to_dict() for r in self.records],
            "selected_t": self.selected_t,
            "final_response": self.final_response,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunHistory":
        return cls(
            dialogue_id=d["dialogue_id"],
            records=tuple(IterationRecord.from_dict(r) for r in d["records"]),
            selected_t=d["selected_t"],
            final_response=d["final_response"],
        )


@dataclass(frozen=True, slots=True)
class EvalTuple:
    """Lexicographic quality tuple for one iteration: checks then -t.

    Larger is better; true beats false on each check and, on fully tied
    checks, the earlier iteration wins via the -t component.
    """

    checks: tuple[bool, bool, bool, bool]
    neg_t: int

    def key(self) -> tuple[int, ...]:
        return tuple(int(c) for c in self.checks) + (self.neg_t,)

    def __lt__(self, other: "EvalTuple") -> bool:
        return self.key() < other.key()

    def __le__(self, other: "EvalTuple") -> bool:
        return self.key() <= other.key()

    def __gt__(self, other: "EvalTuple") -> bool:
        return self.key() > other.key()

    def __ge__(self, other: "EvalTuple") -> bool:
        return self.key() >= other.key()
