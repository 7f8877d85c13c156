"""Exemplar retrieval library: build once before evaluation, query top-k.

The index is an exact brute-force cosine scan over L2-normalized vectors;
corpora here are at most a few thousand exemplars, so approximate indexing
is rejected complexity. Built strictly before evaluation from a disjoint
split, never updated online.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DialogueContext
from .errors import ConfigError, CorpusError

CONTEXT_WINDOW_TURNS = 6
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Exemplar:
    context_text: str
    response_text: str
    source_id: str
    emotion: str | None = None

    def __post_init__(self):
        if not self.context_text.strip() or not self.response_text.strip():
            raise CorpusError(f"exemplar {self.source_id}: context and response must be non-empty")

    def to_dict(self) -> dict:
        return {
            "context_text": self.context_text,
            "response_text": self.response_text,
            "source_id": self.source_id,
            "emotion": self.emotion,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Exemplar":
        return cls(d["context_text"], d["response_text"], d["source_id"], d.get("emotion"))


class MemoryIndex:
    """Immutable embedded exemplar store; concurrent queries are safe."""

    def __init__(self, exemplars: list[Exemplar], vectors: np.ndarray, embedder_id: str):
        if len(exemplars) != len(vectors):
            raise ConfigError("exemplar/vector count mismatch")
        self.exemplars = tuple(exemplars)
        self.vectors = np.asarray(vectors, dtype=np.float32)
        self.embedder_id = embedder_id

    def __len__(self) -> int:
        return len(self.exemplars)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1] if len(self.exemplars) else 0


def flatten_context(ctx: DialogueContext) -> str:
    """Retrieval key: the last few turns as SPEAKER: utterance lines."""
    turns = ctx.turns[-CONTEXT_WINDOW_TURNS:]
    return "\n".join(f"{t.speaker_id}: {t.utterance}" for t in turns)


def build(corpus: list[DialogueContext], embedder) -> MemoryIndex:
    """One exemplar per dialogue; every dialogue must carry a gold response."""
    exemplars: list[Exemplar] = []
    rows: list[np.ndarray] = []
    for ctx in corpus:
        if not ctx.gold_response:
            raise CorpusError(f"dialogue {ctx.dialogue_id} has no gold_response; cannot index")
        context_text = flatten_context(ctx)
        exemplars.append(
            Exemplar(
                context_text=context_text,
                response_text=ctx.gold_response,
                source_id=ctx.dialogue_id,
                emotion=ctx.gold_emotion,
            )
        )
        vec = embedder.embed(context_text).as_array()
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec = vec / norm
        rows.append(vec.astype(np.float32))
    vectors = np.stack(rows) if rows else np.zeros((0, 0), dtype=np.float32)
    return MemoryIndex(exemplars, vectors, embedder.embedder_id)


def query(idx: MemoryIndex, ctx: DialogueContext, k: int, embedder) -> list[Exemplar]:
    """Top-k exemplars by descending cosine similarity, ties by ascending source_id."""
    if k < 0:
        raise ConfigError("k must be >= 0")
    if embedder.embedder_id != idx.embedder_id:
        raise ConfigError(
            f"embedder mismatch: index built with {idx.embedder_id!r}, "
            f"queried with {embedder.embedder_id!r}"
        )
    if k == 0 or len(idx) == 0:
        return []
    qvec = embedder.embed(flatten_context(ctx)).as_array()
    norm = np.linalg.norm(qvec)
    if norm > 0:
        qvec = qvec / norm
    sims = idx.vectors @ qvec.astype(np.float32)
    order = sorted(range(len(idx)), key=lambda i: (-float(sims[i]), idx.exemplars[i].source_id))
    return [idx.exemplars[i] for i in order[: min(k, len(idx))]]


def save(idx: MemoryIndex, out_dir: str | Path) -> None:
    """Persist as a two-file pair: JSONL exemplar document + raw float32 vectors."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "exemplars.jsonl", "w", encoding="utf-8") as fh:
        header = {
            "schema_version": SCHEMA_VERSION,
            "embedder_id": idx.embedder_id,
            "dim": idx.dim,
            "count": len(idx),
        }
        fh.write(json.dumps(header) + "\n")
        for ex in idx.exemplars:
            fh.write(json.dumps(ex.to_dict()) + "\n")
    idx.vectors.astype("<f4").tofile(out / "vectors.f32")


def load(in_dir: str | Path) -> MemoryIndex:
    src = Path(in_dir)
    doc = src / "exemplars.jsonl"
    if not doc.is_file():
        raise CorpusError(f"missing exemplar file: {doc}")
    with open(doc, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        exemplars = [Exemplar.from_dict(json.loads(line)) for line in fh if line.strip()]
    if len(exemplars) != header["count"]:
        raise CorpusError(f"{doc}: header count {header['count']} != {len(exemplars)} exemplars")
    raw = np.fromfile(src / "vectors.f32", dtype="<f4")
    dim = header["dim"]
    if dim:
        vectors = raw.reshape(len(exemplars), dim)
    else:
        vectors = np.zeros((0, 0), dtype=np.float32)
    return MemoryIndex(exemplars, vectors, header["embedder_id"])
