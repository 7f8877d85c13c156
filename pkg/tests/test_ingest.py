import json

import pytest

from reflect_loop import ingest
from reflect_loop.errors import CorpusError


def _write_corpus(tmp_path, dialogues, manifest_overrides=None, keyframe_files=()):
    corpus = tmp_path / "corpus"
    frames = corpus / "frames"
    frames.mkdir(parents=True)
    for name in keyframe_files:
        (frames / name).write_bytes(b"\x89PNG fake")
    manifest = {
        "schema_version": 1,
        "dataset_id": "testset",
        "label_set_id": "iemocap",
        "split": "test",
        "dialogues": len(dialogues),
        "keyframe_root": "frames",
    }
    manifest.update(manifest_overrides or {})
    (corpus / "manifest.json").write_text(json.dumps(manifest))
    with open(corpus / "dialogues.jsonl", "w") as fh:
        for d in dialogues:
            fh.write(json.dumps(d) + "\n")
    return corpus


def _dialogue(dialogue_id="d1", gold_emotion="sad", keyframes=None):
    return {
        "dialogue_id": dialogue_id,
        "turns": [
            {"speaker_id": "A", "utterance": "hello there", "turn_index": 1},
            {"speaker_id": "B", "utterance": "hi, rough day", "turn_index": 2,
             "keyframes": keyframes or []},
        ],
        "target_speaker": "B",
        "gold_emotion": gold_emotion,
        "gold_response": "want to talk about it?",
    }


def test_load_well_formed_corpus(tmp_path):
    corpus = _write_corpus(tmp_path, [_dialogue("d1"), _dialogue("d2")])
    contexts = ingest.load_corpus(corpus)
    assert [c.dialogue_id for c in contexts] == ["d1", "d2"]
    assert contexts[0].gold_emotion == "sad"


def test_load_rejects_wrong_label_set(tmp_path):
    corpus = _write_corpus(tmp_path, [_dialogue(gold_emotion="joy")])
    with pytest.raises(CorpusError, match="d1"):
        ingest.load_corpus(corpus)


def test_load_rejects_missing_keyframe_strict(tmp_path):
    corpus = _write_corpus(tmp_path, [_dialogue(keyframes=["gone.png"])])
    with pytest.raises(CorpusError, match="gone.png"):
        ingest.load_corpus(corpus)


def test_load_allows_missing_keyframe_when_asked(tmp_path):
    corpus = _write_corpus(tmp_path, [_dialogue(keyframes=["gone.png"])])
    contexts = ingest.load_corpus(corpus, allow_missing_frames=True)
    assert contexts[0].turns[-1].keyframes == ()


def test_load_resolves_existing_keyframes(tmp_path):
    corpus = _write_corpus(tmp_path, [_dialogue(keyframes=["f1.png"])], keyframe_files=["f1.png"])
    contexts = ingest.load_corpus(corpus)
    assert contexts[0].turns[-1].keyframes[0].endswith("f1.png")


def test_validate_clean_corpus(tmp_path):
    corpus = _write_corpus(tmp_path, [_dialogue("d1"), _dialogue("d2", gold_emotion="angry")])
    report = ingest.validate_corpus(corpus)
    assert report.valid
    assert report.dialogue_count == report.manifest_count == 2
    assert report.label_histogram == {"sad": 1, "angry": 1}
    assert sum(report.label_histogram.values()) == 2


def test_validate_lists_missing_frames(tmp_path):
    dialogues = [
        _dialogue("d1", keyframes=["a.png", "b.png"]),
        _dialogue("d2", keyframes=["c.png"]),
    ]
    corpus = _write_corpus(tmp_path, dialogues)
    report = ingest.validate_corpus(corpus)
    assert not report.valid
    assert len(report.missing_frames) == 3


def test_validate_flags_count_mismatch(tmp_path):
    corpus = _write_corpus(tmp_path, [_dialogue()], manifest_overrides={"dialogues": 5})
    report = ingest.validate_corpus(corpus)
    assert not report.valid
    assert any("manifest declares 5" in e for e in report.errors)


def test_validated_clean_corpus_always_loads(tmp_path):
    corpus = _write_corpus(tmp_path, [_dialogue("d1")])
    assert ingest.validate_corpus(corpus).valid
    assert len(ingest.load_corpus(corpus)) == 1


def test_write_then_load_roundtrip(tmp_path):
    corpus = _write_corpus(tmp_path, [_dialogue("d1")])
    contexts = ingest.load_corpus(corpus)
    manifest = ingest.read_manifest(corpus)
    out = tmp_path / "copy"
    ingest.write_corpus(out, manifest, contexts)
    # keyframe_root differs; reuse the original root for resolution
    reloaded = ingest.load_corpus(out, allow_missing_frames=True)
    assert [c.to_dict() for c in reloaded] == [c.to_dict() for c in contexts]
