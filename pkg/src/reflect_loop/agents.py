"""Prompt construction and structured-output parsing for the five agents.

Each agent is a stateless function over (inputs, backend). Prompt rendering
is pure: identical inputs produce byte-identical prompts. Every agent asks
the model for one JSON object; parsing tolerates surrounding prose and code
fences and re-asks up to ``PARSE_RETRIES`` times with a format reminder.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import labels
from .backend import ChatRequest
from .core import (
    AuditFeedback,
    CandidateResponse,
    DialogueContext,
    EmotionForecast,
    InvariantError,
    PerceptionEvidence,
    PragmaticPlan,
    StageId,
)
from .errors import ConfigError, StageError

AGENT_ROLES = ("mpa", "caef", "psp", "sgrg", "gra")
PARSE_RETRIES = 2
FORMAT_REMINDER = (
    "\n\nYour previous reply could not be parsed. "
    "Reply with exactly one valid JSON object matching the requested schema, nothing else."
)

# Stage-specific preamble prepended to the reflection critique when a stage
# is re-run with a correction instruction.
CORRECTION_PREAMBLES = {
    StageId.PERCEPTION: "A reviewer rejected the previous evidence extraction. Fix this problem:",
    StageId.EMOTION: "A reviewer rejected the previous emotion forecast. Fix this problem:",
    StageId.STRATEGY: "A reviewer rejected the previous delivery plan. Fix this problem:",
    StageId.RESPONSE: "A reviewer rejected the previous reply. Fix this problem:",
}


@dataclass(frozen=True)
class PromptTemplate:
    agent_role: str
    system_text: str
    user_skeleton: str
    output_schema_text: str

    def render(self, **values: str) -> tuple[str, str]:
        """Return (system_prompt, user_prompt); raises on missing placeholders."""
        try:
            user = (self.user_skeleton + "\n" + self.output_schema_text).format(**values)
        except KeyError as exc:
            raise ConfigError(f"template {self.agent_role}: missing placeholder {exc}") from None
        return self.system_text, user


@dataclass(frozen=True)
class ParseOutcome:
    ok: bool
    value: dict | None
    diagnostics: str


def _split_sections(text: str) -> dict[str, str]:
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped in ("[system]", "[user]", "[output]"):
            current = sections.setdefault(stripped[1:-1], [])
        elif current is not None:
            current.append(line)
    return {name: "\n".join(lines).strip() for name, lines in sections.items()}


def load_templates(template_dir: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Load one template per agent role from a directory (package defaults when None)."""
    out: dict[str, PromptTemplate] = {}
    for role in AGENT_ROLES:
        if template_dir is not None:
            path = Path(template_dir) / f"{role}.txt"
            if not path.is_file():
                raise ConfigError(f"missing template file: {path}")
            text = path.read_text(encoding="utf-8")
        else:
            text = resources.files("reflect_loop.templates").joinpath(f"{role}.txt").read_text("utf-8")
        sections = _split_sections(text)
        for required in ("system", "user", "output"):
            if required not in sections:
                raise ConfigError(f"template {role}: missing [{required}] section")
        out[role] = PromptTemplate(
            agent_role=role,
            system_text=sections["system"],
            user_skeleton=sections["user"],
            output_schema_text=sections["output"],
        )
    return out


_FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)


def parse_structured(reply: str, expected_fields: tuple[str, ...]) -> ParseOutcome:
    """Extract the first well-formed JSON object from a model reply.

    Fenced code blocks are tried first, then any balanced object in the raw
    text. Keys are matched case-insensitively; all ``expected_fields`` must
    be present.
    """
    candidates: list[str] = [m.group(1) for m in _FENCE_RE.finditer(reply)]
    candidates.append(reply)
    decoder = json.JSONDecoder()
    for candidate in candidates:
        pos = candidate.find("{")
        while pos != -1:
            try:
                obj, _ = decoder.raw_decode(candidate, pos)
            except ValueError:
                pos = candidate.find("{", pos + 1)
                continue
            if isinstance(obj, dict):
                normalized = {str(k).strip().lower(): v for k, v in obj.items()}
                missing = [f for f in expected_fields if f not in normalized]
                if missing:
                    return ParseOutcome(False, None, f"missing fields: {', '.join(missing)}")
                return ParseOutcome(True, normalized, "")
            pos = candidate.find("{", pos + 1)
    return ParseOutcome(False, None, "no JSON object found in reply")


def _as_str_list(value) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,) if value.strip() else ()
    if isinstance(value, list):
        return tuple(str(v) for v in value if str(v).strip())
    return (str(value),)


_TRUE_WORDS = {"true", "pass", "yes", "ok", "1", "valid"}
_FALSE_WORDS = {"false", "fail", "no", "0", "invalid"}


def _as_bool(value) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return bool(value)
    if isinstance(value, str):
        word = value.strip().lower()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
    return None


def _dialogue_text(ctx: DialogueContext, max_turns: int | None = None) -> str:
    turns = ctx.turns if max_turns is None else ctx.turns[-max_turns:]
    return "\n".join(f"{t.speaker_id}: {t.utterance}" for t in turns)


def _keyframes_note(ctx: DialogueContext) -> str:
    n = len(ctx.keyframes)
    if n == 0:
        return "No keyframe images are available for this dialogue."
    return f"{n} keyframe image(s) from the conversation are attached."


def _correction_block(stage: StageId, critique: str) -> str:
    if not critique:
        return ""
    return f"{CORRECTION_PREAMBLES[stage]}\n{critique}\n"


def _evidence_text(z_p: PerceptionEvidence) -> str:
    lines = [f"- [visual] {o}" for o in z_p.visual_observations]
    lines += [f"- [textual] {o}" for o in z_p.textual_observations]
    return "\n".join(lines)


def _exemplar_block(exemplars) -> str:
    if not exemplars:
        return ""
    parts = ["Reference exemplars from similar conversations:"]
    for i, ex in enumerate(exemplars, 1):
        parts.append(f"Exemplar {i} context:\n{ex.context_text}")
        parts.append(f"Exemplar {i} reply:\n{ex.response_text}")
    return "\n".join(parts) + "\n"


def _ask_parsed(backend, template, values, expected_fields, image_refs=()):
    """Chat with up to PARSE_RETRIES re-asks; returns (parsed dict or None, last raw text)."""
    raw = ""
    for attempt in range(PARSE_RETRIES + 1):
        parsed, raw = _ask_parsed_once(backend, template, values, expected_fields, image_refs, attempt)
        if parsed is not None:
            return parsed, raw
    return None, raw


def run_mpa(
    ctx: DialogueContext,
    backend,
    templates: dict[str, PromptTemplate],
    correction: str = "",
) -> PerceptionEvidence:
    """Extract visual and textual evidence from the multimodal context."""
    values = {
        "dialogue": _dialogue_text(ctx),
        "keyframes_note": _keyframes_note(ctx),
        "target_speaker": ctx.target_speaker,
        "correction": _correction_block(StageId.PERCEPTION, correction),
    }
    fields = ("visual_observations", "textual_observations")
    parsed, raw = _ask_parsed(backend, templates["mpa"], values, fields, ctx.keyframes)
    if parsed is None:
        raise StageError("perception", "unparseable evidence reply after retries", raw)
    try:
        return PerceptionEvidence(
            visual_observations=_as_str_list(parsed["visual_observations"]),
            textual_observations=_as_str_list(parsed["textual_observations"]),
            raw_text=raw,
        )
    except InvariantError as exc:
        raise StageError("perception", str(exc), raw) from exc


def run_caef(
    ctx: DialogueContext,
    z_p: PerceptionEvidence,
    backend,
    templates: dict[str, PromptTemplate],
    correction: str = "",
) -> EmotionForecast:
    """Forecast the emotion for the reply, weighing cross-modal agreement."""
    values = {
        "dialogue": _dialogue_text(ctx),
        "keyframes_note": _keyframes_note(ctx),
        "evidence": _evidence_text(z_p),
        "target_speaker": ctx.target_speaker,
        "label_set": ", ".join(sorted(labels.label_set(ctx.label_set_id))),
        "correction": _correction_block(StageId.EMOTION, correction),
    }
    template = templates["caef"]
    raw = ""
    for attempt in range(PARSE_RETRIES + 1):
        parsed, raw = _ask_parsed_once(backend, template, values, ("emotion",), ctx.keyframes, attempt)
        if parsed is None:
            continue
        label = labels.normalize_label(str(parsed["emotion"]), ctx.label_set_id)
        if label is None:
            continue
        return EmotionForecast(
            label=label,
            rationale=str(parsed.get("rationale", "")),
            raw_text=raw,
            label_set_id=ctx.label_set_id,
        )
    raise StageError("emotion", "no in-vocabulary emotion label after retries", raw)


def _ask_parsed_once(backend, template, values, expected_fields, image_refs, attempt):
    """Single chat + parse; the caller owns the retry loop and its policy."""
    system, user = template.render(**values)
    if attempt:
        user += FORMAT_REMINDER
    request = ChatRequest(
        model_name=getattr(backend, "model_name", ""),
        system_prompt=system,
        user_prompt=user,
        image_refs=tuple(image_refs),
        format_hint="structured",
        agent_role=template.agent_role,
    )
    reply = backend.chat(request)
    outcome = parse_structured(reply.text, expected_fields)
    return (outcome.value if outcome.ok else None), reply.text


def run_psp(
    ctx: DialogueContext,
    z_p: PerceptionEvidence,
    z_e: EmotionForecast,
    backend,
    templates: dict[str, PromptTemplate],
    correction: str = "",
) -> PragmaticPlan:
    """Plan goal, stance, tactic, and tone for the reply."""
    values = {
        "dialogue": _dialogue_text(ctx),
        "evidence": _evidence_text(z_p),
        "emotion": z_e.label,
        "emotion_rationale": z_e.rationale or "(none given)",
        "target_speaker": ctx.target_speaker,
        "correction": _correction_block(StageId.STRATEGY, correction),
    }
    fields = ("goal", "stance", "tactic", "tone")
    parsed, raw = _ask_parsed(backend, templates["psp"], values, fields)
    if parsed is None:
        raise StageError("strategy", "unparseable plan reply after retries", raw)
    try:
        return PragmaticPlan(
            goal=str(parsed["goal"]),
            stance=str(parsed["stance"]),
            tactic=str(parsed["tactic"]),
            tone=str(parsed["tone"]),
            raw_text=raw,
        )
    except InvariantError as exc:
        raise StageError("strategy", str(exc), raw) from exc


def run_sgrg(
    ctx: DialogueContext,
    z_p: PerceptionEvidence,
    z_e: EmotionForecast,
    z_s: PragmaticPlan,
    exemplars,
    backend,
    templates: dict[str, PromptTemplate],
    correction: str = "",
) -> CandidateResponse:
    """Realize the plan as the actual reply text."""
    values = {
        "dialogue": _dialogue_text(ctx),
        "keyframes_note": _keyframes_note(ctx),
        "evidence": _evidence_text(z_p),
        "emotion": z_e.label,
        "goal": z_s.goal,
        "stance": z_s.stance,
        "tactic": z_s.tactic,
        "tone": z_s.tone,
        "exemplars": _exemplar_block(exemplars),
        "target_speaker": ctx.target_speaker,
        "correction": _correction_block(StageId.RESPONSE, correction),
    }
    parsed, raw = _ask_parsed(backend, templates["sgrg"], values, ("response",), ctx.keyframes)
    if parsed is None:
        raise StageError("response", "unparseable reply after retries", raw)
    try:
        return CandidateResponse(text=str(parsed["response"]), raw_text=raw)
    except InvariantError as exc:
        raise StageError("response", str(exc), raw) from exc


GRA_CHECK_FIELDS = ("perception_ok", "emotion_ok", "strategy_ok", "response_ok")


def run_gra(
    ctx: DialogueContext,
    z_p: PerceptionEvidence,
    z_e: EmotionForecast,
    z_s: PragmaticPlan,
    r: CandidateResponse,
    backend,
    templates: dict[str, PromptTemplate],
) -> AuditFeedback:
    """Audit the four stage outputs in order.

    Validity and attribution are recomputed locally from the four checks, so
    an inconsistent model claim cannot leak out. An unparseable audit after
    retries degrades to an all-pass feedback flagged ``inconclusive``, which
    terminates the loop instead of looping on garbage.
    """
    values = {
        "dialogue": _dialogue_text(ctx),
        "keyframes_note": _keyframes_note(ctx),
        "evidence": _evidence_text(z_p),
        "emotion": z_e.label,
        "emotion_rationale": z_e.rationale or "(none given)",
        "goal": z_s.goal,
        "stance": z_s.stance,
        "tactic": z_s.tactic,
        "tone": z_s.tone,
        "response": r.text,
    }
    template = templates["gra"]
    raw = ""
    for attempt in range(PARSE_RETRIES + 1):
        parsed, raw = _ask_parsed_once(backend, template, values, GRA_CHECK_FIELDS, ctx.keyframes, attempt)
        if parsed is None:
            continue
        checks = tuple(_as_bool(parsed[f]) for f in GRA_CHECK_FIELDS)
        if any(c is None for c in checks):
            continue
        return AuditFeedback.from_checks(
            checks=checks,
            critique=str(parsed.get("critique", "")),
            raw_text=raw,
        )
    return AuditFeedback.from_checks(
        checks=(True, True, True, True),
        critique="",
        raw_text=raw,
        inconclusive=True,
    )
