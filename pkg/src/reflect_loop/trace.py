"""Append-only run persistence: one JSONL trace per dialogue plus a run manifest.

A run directory looks like::

    run_dir/
      run.json                 # manifest: run id, config, per-dialogue entries
      traces/<dialogue_id>.jsonl

Each trace line is one event (stage_output, audit, selection, error) in
pipeline order. Only stages that actually executed are written; retained
stage outputs of a re-run are reconstructed from the prior record on load,
so a loaded history is bit-equal to the in-memory original. Timestamps are
excluded from equality everywhere.
"""

from __future__ import annotations

import datetime
import json
import logging
import threading
from pathlib import Path

from .core import (
    AuditFeedback,
    CandidateResponse,
    EmotionForecast,
    IterationRecord,
    PerceptionEvidence,
    PragmaticPlan,
    RunHistory,
    StageId,
)
from .errors import TraceError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EVENT_KINDS = ("stage_output", "audit", "selection", "error")

_STAGE_TYPES = {
    StageId.PERCEPTION: PerceptionEvidence,
    StageId.EMOTION: EmotionForecast,
    StageId.STRATEGY: PragmaticPlan,
    StageId.RESPONSE: CandidateResponse,
}
STAGE_AGENT_ROLES = {
    StageId.PERCEPTION: "mpa",
    StageId.EMOTION: "caef",
    StageId.STRATEGY: "psp",
    StageId.RESPONSE: "sgrg",
}


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class RunWriter:
    """Owns a run directory; hands out one trace writer per dialogue.

    Manifest updates are serialized; distinct dialogues may write their
    trace files concurrently.
    """

    def __init__(self, run_dir: str | Path, run_id: str, config: dict | None = None):
        self.run_dir = Path(run_dir)
        self.run_id = run_id
        (self.run_dir / "traces").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._manifest = {
            "schema_version": SCHEMA_VERSION,
            "run_id": run_id,
            "created": _now(),
            "config": config or {},
            "dialogues": {},
        }
        self._flush_manifest()

    def _flush_manifest(self):
        tmp = self.run_dir / "run.json.tmp"
        tmp.write_text(json.dumps(self._manifest, indent=2), encoding="utf-8")
        tmp.replace(self.run_dir / "run.json")

    def dialogue_writer(self, ctx) -> "DialogueTraceWriter":
        with self._lock:
            self._manifest["dialogues"][ctx.dialogue_id] = {
                "trace_file": f"traces/{ctx.dialogue_id}.jsonl",
                "label_set_id": ctx.label_set_id,
                "gold_emotion": ctx.gold_emotion,
                "gold_response": ctx.gold_response,
                "status": "running",
            }
            self._flush_manifest()
        return DialogueTraceWriter(self, ctx.dialogue_id)

    def set_status(self, dialogue_id: str, status: str):
        with self._lock:
            self._manifest["dialogues"][dialogue_id]["status"] = status
            self._flush_manifest()


class DialogueTraceWriter:
    """Single-writer event sink for one dialogue; implements the loop observer."""

    def __init__(self, run: RunWriter, dialogue_id: str):
        self._run = run
        self.dialogue_id = dialogue_id
        self.path = run.run_dir / "traces" / f"{dialogue_id}.jsonl"
        self.path.write_text("", encoding="utf-8")

    def append(self, kind: str, t: int, payload: dict):
        if kind not in EVENT_KINDS:
            raise TraceError(f"unknown event kind {kind!r}")
        event = {
            "schema_version": SCHEMA_VERSION,
            "run_id": self._run.run_id,
            "dialogue_id": self.dialogue_id,
            "kind": kind,
            "t": t,
            "payload": payload,
            "timestamp": _now(),
        }
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")

    # loop observer protocol
    def on_stage(self, t: int, stage: StageId, output, regenerated_from: StageId | None):
        self.append(
            "stage_output",
            t,
            {
                "stage": stage.label,
                "data": output.to_dict(),
                "regenerated_from": regenerated_from.label if regenerated_from else None,
            },
        )

    def on_audit(self, t: int, feedback: AuditFeedback):
        self.append("audit", t, feedback.to_dict())

    def on_selection(self, selected_t: int, final_response: str):
        self.append("selection", selected_t, {"selected_t": selected_t, "final_response": final_response})

    def on_error(self, t: int, stage: str, message: str):
        self.append("error", t, {"stage": stage, "message": message})


def read_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / "run.json"
    if not path.is_file():
        raise TraceError(f"not a run directory (no run.json): {run_dir}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_events(trace_path: str | Path, lenient: bool = False) -> list[dict]:
    events = []
    with open(trace_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as exc:
                if lenient:
                    logger.warning("%s:%d: skipping corrupt trace line (%s)", trace_path, lineno, exc)
                    continue
                raise TraceError(f"{trace_path}:{lineno}: corrupt trace line") from exc
    return events


def _history_from_events(dialogue_id: str, events: list[dict]) -> RunHistory | None:
    """Rebuild a RunHistory; None when the dialogue never reached selection."""
    stage_outputs: dict[int, dict[StageId, object]] = {}
    regen: dict[int, StageId | None] = {}
    audits: dict[int, AuditFeedback] = {}
    selection: dict | None = None
    for ev in events:
        kind = ev["kind"]
        t = ev["t"]
        payload = ev["payload"]
        if kind == "stage_output":
            stage = StageId.from_label(payload["stage"])
            stage_outputs.setdefault(t, {})[stage] = _STAGE_TYPES[stage].from_dict(payload["data"])
            regen[t] = StageId.from_label(payload["regenerated_from"]) if payload["regenerated_from"] else None
        elif kind == "audit":
            audits[t] = AuditFeedback.from_dict(payload)
        elif kind == "selection":
            selection = payload
    if selection is None or not audits:
        return None
    records: list[IterationRecord] = []
    for t in sorted(audits):
        outputs = dict(stage_outputs.get(t, {}))
        if records:
            prev = records[-1]
            for stage in _STAGE_TYPES:
                outputs.setdefault(stage, prev.stage_output(stage))
        missing = [s.label for s in _STAGE_TYPES if s not in outputs]
        if missing:
            raise TraceError(f"{dialogue_id}: t={t} missing stage outputs: {missing}")
        records.append(
            IterationRecord(
                t=t,
                perception=outputs[StageId.PERCEPTION],
                emotion=outputs[StageId.EMOTION],
                plan=outputs[StageId.STRATEGY],
                response=outputs[StageId.RESPONSE],
                feedback=audits[t],
                regenerated_from=regen.get(t),
            )
        )
    return RunHistory(
        dialogue_id=dialogue_id,
        records=tuple(records),
        selected_t=selection["selected_t"],
        final_response=selection["final_response"],
    )


def load_run(run_dir: str | Path, lenient: bool = False) -> list[RunHistory]:
    """Load every completed dialogue history from a run directory."""
    manifest = read_manifest(run_dir)
    histories = []
    for dialogue_id, entry in manifest["dialogues"].items():
        events = load_events(Path(run_dir) / entry["trace_file"], lenient=lenient)
        history = _history_from_events(dialogue_id, events)
        if history is not None:
            histories.append(history)
    return histories


def replay_scripts(run_dir: str | Path, dialogue_id: str | None = None) -> dict[str, list[str]]:
    """Per-agent reply queues reconstructed from recorded raw texts.

    With ``dialogue_id`` None, all dialogues contribute in manifest order,
    matching a sequential re-run over the same corpus slice.
    """
    manifest = read_manifest(run_dir)
    entries = manifest["dialogues"]
    if dialogue_id is not None:
        if dialogue_id not in entries:
            raise TraceError(f"dialogue {dialogue_id!r} not in run manifest")
        entries = {dialogue_id: entries[dialogue_id]}
    scripts: dict[str, list[str]] = {role: [] for role in ("mpa", "caef", "psp", "sgrg", "gra")}
    for did, entry in entries.items():
        events = load_events(Path(run_dir) / entry["trace_file"])
        for ev in events:
            if ev["kind"] == "stage_output":
                stage = StageId.from_label(ev["payload"]["stage"])
                scripts[STAGE_AGENT_ROLES[stage]].append(ev["payload"]["data"]["raw_text"])
            elif ev["kind"] == "audit":
                scripts["gra"].append(ev["payload"]["raw_text"])
    if all(not replies for replies in scripts.values()):
        raise TraceError(f"no replayable events found under {run_dir}")
    return scripts
