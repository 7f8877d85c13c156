"""Automatic evaluation and trace analytics.

Distinct-n is computed corpus-level (pooled over all responses, n-grams
never crossing response boundaries), not averaged per response. Ratios are
stored in [0, 1]; the CLI formats them x100.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from . import trace as trace_mod
from .core import RunHistory, StageId
from .errors import MetricError

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass
class EvalReport:
    dist1: float
    dist2: float
    emotion_acc: float | None
    n_dialogues: int
    avg_selected_refinement: float
    attribution_counts: dict[str, int] = field(default_factory=dict)
    # reserved for external scoring tools to merge in
    ppl: float | None = None
    bert_score_f1: float | None = None

    def to_dict(self) -> dict:
        return {
            "dist1": self.dist1,
            "dist2": self.dist2,
            "emotion_acc": self.emotion_acc,
            "n_dialogues": self.n_dialogues,
            "avg_selected_refinement": self.avg_selected_refinement,
            "attribution_counts": self.attribution_counts,
            "ppl": self.ppl,
            "bert_score_f1": self.bert_score_f1,
        }

    def render(self) -> str:
        def pct(v):
            return f"{v * 100:.2f}" if v is not None else "-"

        lines = [
            f"dialogues:  {self.n_dialogues}",
            f"Dist-1:     {pct(self.dist1)}",
            f"Dist-2:     {pct(self.dist2)}",
            f"Acc.:       {pct(self.emotion_acc)}",
            f"avg t*:     {self.avg_selected_refinement:.2f} (refinements past the initial pass)",
            "attributions:",
        ]
        for stage in StageId:
            lines.append(f"  {stage.label}: {self.attribution_counts.get(stage.label, 0)}")
        return "\n".join(lines)


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def distinct_n(responses: list[str], n: int) -> float:
    """Corpus-level distinct n-gram ratio over the pooled responses."""
    if n not in (1, 2):
        raise MetricError("distinct-n supports n in {1, 2}")
    ngrams: Counter[tuple[str, ...]] = Counter()
    total = 0
    for response in responses:
        tokens = tokenize(response)
        for i in range(len(tokens) - n + 1):
            ngrams[tuple(tokens[i : i + n])] += 1
            total += 1
    if total == 0:
        raise MetricError(f"no {n}-grams in any response; distinct-{n} undefined")
    return len(ngrams) / total


def emotion_accuracy(preds: list[str], golds: list[str]) -> float:
    if len(preds) != len(golds):
        raise MetricError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise MetricError("emotion accuracy undefined for empty input")
    return sum(p == g for p, g in zip(preds, golds)) / len(preds)


def selected_prediction(history: RunHistory) -> str:
    """Emotion prediction of the selected iteration."""
    return history.records[history.selected_t - 1].emotion.label


def report_from_histories(histories: list[RunHistory], golds: dict[str, str] | None = None) -> EvalReport:
    """Aggregate metrics over loaded run histories.

    ``golds`` maps dialogue_id to gold emotion; accuracy is computed over
    the dialogues present in the map and is None when none are.
    """
    if not histories:
        raise MetricError("no run histories to evaluate")
    responses = [h.final_response for h in histories]
    attribution: Counter[str] = Counter()
    refinement_sum = 0.0
    for h in histories:
        refinement_sum += h.selected_t - 1
        for rec in h.records:
            if not rec.feedback.is_valid:
                attribution[rec.feedback.attributed_stage.label] += 1
    acc = None
    if golds:
        pairs = [(selected_prediction(h), golds[h.dialogue_id]) for h in histories if h.dialogue_id in golds]
        if pairs:
            acc = emotion_accuracy([p for p, _ in pairs], [g for _, g in pairs])
    return EvalReport(
        dist1=distinct_n(responses, 1),
        dist2=distinct_n(responses, 2),
        emotion_acc=acc,
        n_dialogues=len(histories),
        avg_selected_refinement=refinement_sum / len(histories),
        attribution_counts=dict(attribution),
    )


def analyze_traces(run_dir: str | Path) -> EvalReport:
    """Evaluate a recorded run directory end to end."""
    manifest = trace_mod.read_manifest(run_dir)
    histories = trace_mod.load_run(run_dir)
    if not histories:
        raise MetricError(f"no completed run histories under {run_dir}")
    golds = {
        did: entry["gold_emotion"]
        for did, entry in manifest["dialogues"].items()
        if entry.get("gold_emotion")
    }
    return report_from_histories(histories, golds)


def per_dialogue_rows(run_dir: str | Path) -> list[dict]:
    """One row per dialogue, for CSV export."""
    manifest = trace_mod.read_manifest(run_dir)
    rows = []
    for h in trace_mod.load_run(run_dir):
        entry = manifest["dialogues"].get(h.dialogue_id, {})
        rows.append(
            {
                "dialogue_id": h.dialogue_id,
                "iterations": len(h.records),
                "selected_t": h.selected_t,
                "predicted_emotion": selected_prediction(h),
                "gold_emotion": entry.get("gold_emotion") or "",
                "final_response": h.final_response,
            }
        )
    return rows
