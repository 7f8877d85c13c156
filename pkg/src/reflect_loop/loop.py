"""Closed-loop controller: initial pass, audit, targeted re-generation, selection.

The initial pass is iteration t=1; refinements are t=2..(t_max+1). A re-run
keeps every stage output before the attributed stage byte-identical to the
previous iteration and re-executes the attributed stage (with the critique
injected into its prompt) plus everything downstream. The loop exits at the
first all-pass audit or when the refinement budget is spent; the final
response is then picked lexicographically from the whole history.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import agents, memory
from .core import (
    AuditFeedback,
    DialogueContext,
    EvalTuple,
    IterationRecord,
    RunHistory,
    StageId,
)
from .errors import ConfigError, StageError


@dataclass(frozen=True)
class LoopConfig:
    t_max: int = 2
    retrieval_top_k: int = 1
    selection_enabled: bool = True

    def __post_init__(self):
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if self.retrieval_top_k < 0:
            raise ConfigError("retrieval_top_k must be >= 0")


def attribute(f: AuditFeedback) -> StageId | None:
    """Stage to re-run: earliest false check, or None when the audit passed."""
    return f.attributed_stage


def eval_tuple(f: AuditFeedback, t: int) -> EvalTuple:
    if t < 1:
        raise ConfigError("iteration index must be >= 1")
    return EvalTuple(checks=f.checks, neg_t=-t)


def _record_tuple(records: tuple[IterationRecord, ...], i: int) -> EvalTuple:
    """Evaluation tuple for record i.

    An inconclusive audit carries no real signal, so its tuple borrows the
    checks of the last conclusive audit before it (all-False when there is
    none), keeping garbage audits from winning the selection.
    """
    rec = records[i]
    if not rec.feedback.inconclusive:
        return eval_tuple(rec.feedback, rec.t)
    for j in range(i - 1, -1, -1):
        if not records[j].feedback.inconclusive:
            return EvalTuple(checks=records[j].feedback.checks, neg_t=-rec.t)
    return EvalTuple(checks=(False, False, False, False), neg_t=-rec.t)


def select_final(records: tuple[IterationRecord, ...], selection_enabled: bool = True) -> tuple[int, str]:
    """Pick (t*, response text) from the history.

    With selection disabled the last record wins unconditionally; otherwise
    the lexicographic maximum of the evaluation tuples, which ties toward
    earlier iterations.
    """
    if not records:
        raise ConfigError("cannot select from an empty history")
    if not selection_enabled:
        last = records[-1]
        return last.t, last.response.text
    best_i = max(range(len(records)), key=lambda i: _record_tuple(records, i).key())
    best = records[best_i]
    return best.t, best.response.text


def _retrieve(ctx, cfg, backend, memory_index):
    if cfg.retrieval_top_k == 0:
        return []
    if memory_index is None:
        raise ConfigError("retrieval_top_k > 0 requires a memory index")
    return memory.query(memory_index, ctx, cfg.retrieval_top_k, backend)


def rerun_from(
    k: StageId,
    prev: IterationRecord,
    critique: str,
    ctx: DialogueContext,
    backend,
    templates,
    exemplars,
):
    """Re-execute the pipeline from stage k, retaining everything before it.

    The critique (with its stage preamble) goes only into the stage-k prompt;
    downstream stages are re-driven by the corrected upstream outputs alone.
    Returns (perception, emotion, plan, response).
    """
    if k != prev.feedback.attributed_stage:
        raise ConfigError(f"re-run stage {k.label} does not match attribution")
    perception = prev.perception
    emotion = prev.emotion
    plan = prev.plan
    if k <= StageId.PERCEPTION:
        perception = agents.run_mpa(
            ctx, backend, templates, correction=critique if k == StageId.PERCEPTION else ""
        )
    if k <= StageId.EMOTION:
        emotion = agents.run_caef(
            ctx, perception, backend, templates,
            correction=critique if k == StageId.EMOTION else "",
        )
    if k <= StageId.STRATEGY:
        plan = agents.run_psp(
            ctx, perception, emotion, backend, templates,
            correction=critique if k == StageId.STRATEGY else "",
        )
    response = agents.run_sgrg(
        ctx, perception, emotion, plan, exemplars, backend, templates,
        correction=critique if k == StageId.RESPONSE else "",
    )
    return perception, emotion, plan, response


def run_closed_loop(
    ctx: DialogueContext,
    cfg: LoopConfig,
    backend,
    memory_index: memory.MemoryIndex | None = None,
    templates=None,
    observer=None,
) -> RunHistory:
    """Run the full pipeline with reflective refinement on one dialogue.

    ``observer``, when given, receives stage/audit/selection events for
    trace persistence. A stage error during the initial pass aborts the run;
    one during refinement truncates the history, which is still selected
    over (graceful degradation).
    """
    if templates is None:
        templates = agents.load_templates()
    exemplars = _retrieve(ctx, cfg, backend, memory_index)

    def notify(method, *args):
        if observer is not None:
            getattr(observer, method)(*args)

    try:
        perception = agents.run_mpa(ctx, backend, templates)
        notify("on_stage", 1, StageId.PERCEPTION, perception, None)
        emotion = agents.run_caef(ctx, perception, backend, templates)
        notify("on_stage", 1, StageId.EMOTION, emotion, None)
        plan = agents.run_psp(ctx, perception, emotion, backend, templates)
        notify("on_stage", 1, StageId.STRATEGY, plan, None)
        response = agents.run_sgrg(ctx, perception, emotion, plan, exemplars, backend, templates)
        notify("on_stage", 1, StageId.RESPONSE, response, None)
    except StageError as exc:
        notify("on_error", 1, exc.stage, str(exc))
        raise

    feedback = agents.run_gra(ctx, perception, emotion, plan, response, backend, templates)
    notify("on_audit", 1, feedback)
    records = [
        IterationRecord(
            t=1, perception=perception, emotion=emotion, plan=plan,
            response=response, feedback=feedback,
        )
    ]

    for _ in range(cfg.t_max):
        prev = records[-1]
        if prev.feedback.is_valid:
            break
        k = attribute(prev.feedback)
        t = prev.t + 1
        try:
            perception, emotion, plan, response = rerun_from(
                k, prev, prev.feedback.critique, ctx, backend, templates, exemplars
            )
        except StageError as exc:
            # keep the partial history; selection still runs over it
            notify("on_error", t, exc.stage, str(exc))
            break
        # only stages actually re-executed are persisted; retained ones are
        # reconstructed from the prior record on load
        for stage, output in zip(
            (StageId.PERCEPTION, StageId.EMOTION, StageId.STRATEGY, StageId.RESPONSE),
            (perception, emotion, plan, response),
        ):
            if stage >= k:
                notify("on_stage", t, stage, output, k)
        feedback = agents.run_gra(ctx, perception, emotion, plan, response, backend, templates)
        notify("on_audit", t, feedback)
        records.append(
            IterationRecord(
                t=t, perception=perception, emotion=emotion, plan=plan,
                response=response, feedback=feedback, regenerated_from=k,
            )
        )

    selected_t, final_response = select_final(tuple(records), cfg.selection_enabled)
    notify("on_selection", selected_t, final_response)
    return RunHistory(
        dialogue_id=ctx.dialogue_id,
        records=tuple(records),
        selected_t=selected_t,
        final_response=final_response,
    )
