"""Shared fixtures: dialogue factories and deterministic agent-reply builders."""

from __future__ import annotations

import json

import pytest

from reflect_loop.agents import load_templates
from reflect_loop.backend import ChatResponse, HashingEmbedder
from reflect_loop.core import DialogueContext, StageId, Turn


def make_ctx(
    dialogue_id: str = "d1",
    label_set_id: str = "iemocap",
    gold_emotion: str | None = "sad",
    gold_response: str | None = "I understand.",
    n_turns: int = 2,
) -> DialogueContext:
    turns = tuple(
        Turn(
            speaker_id="A" if i % 2 == 0 else "B",
            utterance=f"utterance {i + 1} of {dialogue_id}",
            turn_index=i + 1,
        )
        for i in range(n_turns)
    )
    return DialogueContext(
        dialogue_id=dialogue_id,
        turns=turns,
        target_speaker=turns[-1].speaker_id,
        label_set_id=label_set_id,
        gold_emotion=gold_emotion,
        gold_response=gold_response,
    )


def mpa_reply(tag: str = "0") -> str:
    return json.dumps(
        {
            "visual_observations": [f"slumped posture ({tag})"],
            "textual_observations": [f"mentions a loss ({tag})"],
        }
    )


def caef_reply(label: str = "sad", tag: str = "0") -> str:
    return json.dumps({"emotion": label, "rationale": f"evidence agrees ({tag})"})


def psp_reply(tag: str = "0") -> str:
    return json.dumps(
        {"goal": f"comfort ({tag})", "stance": "supportive", "tactic": "validate feelings", "tone": "gentle"}
    )


def sgrg_reply(text: str = "I'm so sorry, that sounds really hard.") -> str:
    return json.dumps({"response": text})


def gra_reply(checks=(True, True, True, True), critique: str = "") -> str:
    return json.dumps(
        {
            "perception_ok": checks[0],
            "emotion_ok": checks[1],
            "strategy_ok": checks[2],
            "response_ok": checks[3],
            "critique": critique,
        }
    )


def checks_failing_at(stage: StageId | None):
    """All-pass when stage is None, else false exactly at that stage."""
    if stage is None:
        return (True, True, True, True)
    return tuple(s != stage for s in StageId)


class ScheduleBackend:
    """Role-aware backend whose audits follow a failure schedule.

    Pipeline agents get fresh, call-numbered replies (so regenerated outputs
    differ byte-wise from previous ones); the reflection agent pops the next
    entry from ``schedule``, each entry a stage to fail at or None for
    all-pass. Exhausted schedules audit all-pass.
    """

    model_name = "schedule"

    def __init__(self, schedule=(), emotions=("sad",)):
        self.schedule = list(schedule)
        self.emotions = list(emotions)
        self.counts = {role: 0 for role in ("mpa", "caef", "psp", "sgrg", "gra")}
        self.requests = []
        self._audit_i = 0

    def chat(self, request) -> ChatResponse:
        role = request.agent_role
        self.requests.append(request)
        self.counts[role] += 1
        n = self.counts[role]
        if role == "mpa":
            text = mpa_reply(tag=str(n))
        elif role == "caef":
            text = caef_reply(self.emotions[(n - 1) % len(self.emotions)], tag=str(n))
        elif role == "psp":
            text = psp_reply(tag=str(n))
        elif role == "sgrg":
            text = sgrg_reply(f"candidate reply number {n}.")
        elif role == "gra":
            stage = self.schedule[self._audit_i] if self._audit_i < len(self.schedule) else None
            self._audit_i += 1
            text = gra_reply(checks_failing_at(stage), critique=f"fix {stage.label}" if stage else "")
        else:
            raise AssertionError(f"unexpected role {role}")
        return ChatResponse(text=text, model_name=self.model_name, latency_ms=0)

    def embed(self, text: str):
        return HashingEmbedder().embed(text)

    @property
    def embedder_id(self) -> str:
        return HashingEmbedder().embedder_id


@pytest.fixture(scope="session")
def templates():
    return load_templates()
