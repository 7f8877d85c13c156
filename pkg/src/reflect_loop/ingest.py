"""Corpus loading and validation.

A corpus is a JSON manifest plus a dialogue-per-line JSONL file::

    corpus_dir/
      manifest.json     # dataset_id, label_set_id, split, dialogues, keyframe_root
      dialogues.jsonl   # one DialogueContext document per line

Keyframes are pre-extracted image files referenced by path relative to
``keyframe_root``. The last turn of each dialogue is the one to respond to;
gold_emotion / gold_response describe the reference next turn.
"""

from __future__ import annotations

import collections
import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import DialogueContext, InvariantError, Turn
from .errors import CorpusError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CorpusManifest:
    dataset_id: str
    label_set_id: str
    split: str
    dialogues: int
    keyframe_root: str

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dataset_id": self.dataset_id,
            "label_set_id": self.label_set_id,
            "split": self.split,
            "dialogues": self.dialogues,
            "keyframe_root": self.keyframe_root,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        return cls(
            dataset_id=d["dataset_id"],
            label_set_id=d["label_set_id"],
            split=d["split"],
            dialogues=d["dialogues"],
            keyframe_root=d.get("keyframe_root", "."),
        )


@dataclass
class ValidationReport:
    corpus_path: str
    dialogue_count: int = 0
    manifest_count: int = 0
    label_histogram: dict[str, int] = field(default_factory=dict)
    missing_frames: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.errors and not self.missing_frames

    def render(self) -> str:
        lines = [
            f"corpus: {self.corpus_path}",
            f"dialogues: {self.dialogue_count} (manifest says {self.manifest_count})",
            "label histogram:",
        ]
        for label, count in sorted(self.label_histogram.items()):
            lines.append(f"  {label}: {count}")
        if self.missing_frames:
            lines.append(f"missing keyframe files ({len(self.missing_frames)}):")
            lines += [f"  {p}" for p in self.missing_frames]
        if self.errors:
            lines.append(f"errors ({len(self.errors)}):")
            lines += [f"  {e}" for e in self.errors]
        lines.append("status: " + ("OK" if self.valid else "INVALID"))
        return "\n".join(lines)


def read_manifest(corpus_dir: str | Path) -> CorpusManifest:
    path = Path(corpus_dir) / "manifest.json"
    if not path.is_file():
        raise CorpusError(f"missing corpus manifest: {path}")
    try:
        return CorpusManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError) as exc:
        raise CorpusError(f"{path}: bad manifest ({exc})") from exc


def _parse_dialogue(doc: dict, manifest: CorpusManifest, keyframe_root: Path, allow_missing_frames: bool):
    dialogue_id = doc.get("dialogue_id", "<unknown>")
    turns = []
    missing: list[str] = []
    for i, td in enumerate(doc.get("turns", []), 1):
        refs = []
        for ref in td.get("keyframes", []):
            resolved = keyframe_root / ref
            if not resolved.is_file():
                missing.append(str(resolved))
                if not allow_missing_frames:
                    raise CorpusError(f"{dialogue_id}: missing keyframe file {resolved}")
                continue
            refs.append(str(resolved))
        try:
            turns.append(
                Turn(
                    speaker_id=td["speaker_id"],
                    utterance=td["utterance"],
                    keyframes=tuple(refs),
                    turn_index=td.get("turn_index", i),
                )
            )
        except (KeyError, InvariantError) as exc:
            raise CorpusError(f"{dialogue_id}: turn {i}: {exc}") from exc
    try:
        ctx = DialogueContext(
            dialogue_id=dialogue_id,
            turns=tuple(turns),
            target_speaker=doc.get("target_speaker") or (turns[-1].speaker_id if turns else ""),
            label_set_id=doc.get("label_set_id", manifest.label_set_id),
            gold_emotion=doc.get("gold_emotion"),
            gold_response=doc.get("gold_response"),
        )
    except (InvariantError, KeyError) as exc:
        raise CorpusError(f"{dialogue_id}: {exc}") from exc
    return ctx, missing


def load_corpus(corpus_dir: str | Path, allow_missing_frames: bool = False) -> list[DialogueContext]:
    """Load and validate every dialogue; raises CorpusError on the first violation."""
    corpus_dir = Path(corpus_dir)
    manifest = read_manifest(corpus_dir)
    jsonl = corpus_dir / "dialogues.jsonl"
    if not jsonl.is_file():
        raise CorpusError(f"missing dialogue file: {jsonl}")
    keyframe_root = corpus_dir / manifest.keyframe_root
    contexts = []
    with open(jsonl, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{jsonl}:{lineno}: bad JSON ({exc})") from exc
            ctx, _ = _parse_dialogue(doc, manifest, keyframe_root, allow_missing_frames)
            contexts.append(ctx)
    return contexts


def validate_corpus(corpus_dir: str | Path) -> ValidationReport:
    """Non-fatal sweep: counts, label histogram, missing-frame list."""
    corpus_dir = Path(corpus_dir)
    report = ValidationReport(corpus_path=str(corpus_dir))
    try:
        manifest = read_manifest(corpus_dir)
    except CorpusError as exc:
        report.errors.append(str(exc))
        return report
    report.manifest_count = manifest.dialogues
    jsonl = corpus_dir / "dialogues.jsonl"
    if not jsonl.is_file():
        report.errors.append(f"missing dialogue file: {jsonl}")
        return report
    keyframe_root = corpus_dir / manifest.keyframe_root
    histogram: collections.Counter[str] = collections.Counter()
    with open(jsonl, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                report.errors.append(f"line {lineno}: bad JSON ({exc})")
                continue
            try:
                ctx, missing = _parse_dialogue(doc, manifest, keyframe_root, allow_missing_frames=True)
            except CorpusError as exc:
                report.errors.append(str(exc))
                continue
            report.dialogue_count += 1
            report.missing_frames.extend(missing)
            if ctx.gold_emotion:
                histogram[ctx.gold_emotion] += 1
    report.label_histogram = dict(histogram)
    if report.manifest_count != report.dialogue_count:
        report.errors.append(
            f"manifest declares {report.manifest_count} dialogues, file has {report.dialogue_count}"
        )
    return report


def write_corpus(corpus_dir: str | Path, manifest: CorpusManifest, contexts: list[DialogueContext]) -> None:
    """Serialize a corpus in the documented layout (used by tests and fixtures)."""
    corpus_dir = Path(corpus_dir)
    corpus_dir.mkdir(parents=True, exist_ok=True)
    (corpus_dir / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2), encoding="utf-8")
    with open(corpus_dir / "dialogues.jsonl", "w", encoding="utf-8") as fh:
        for ctx in contexts:
            fh.write(json.dumps(ctx.to_dict()) + "\n")
