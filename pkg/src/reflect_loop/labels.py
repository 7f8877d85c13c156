"""Emotion label sets and normalization.

Label sets are configuration data keyed by a ``label_set_id`` so that dataset
or backbone swaps need no code change. Two sets ship as builtins; more can be
registered from a run config.
"""

from __future__ import annotations

import string

from .errors import ConfigError

_LABEL_SETS: dict[str, frozenset[str]] = {
    "iemocap": frozenset({"angry", "happy", "sad", "neutral", "excited", "frustrated"}),
    "meld": frozenset({"anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise"}),
}

# One synonym map per label set, applied after lowercasing and punctuation strip.
_SYNONYMS: dict[str, dict[str, str]] = {
    "iemocap": {
        "anger": "angry",
        "happiness": "happy",
        "joy": "happy",
        "sadness": "sad",
        "frustration": "frustrated",
        "excitement": "excited",
    },
    "meld": {
        "angry": "anger",
        "happy": "joy",
        "happiness": "joy",
        "sad": "sadness",
        "afraid": "fear",
        "surprised": "surprise",
        "disgusted": "disgust",
    },
}

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def register_label_set(label_set_id: str, labels: list[str], synonyms: dict[str, str] | None = None) -> None:
    """Register (or replace) a label set under ``label_set_id``."""
    if not labels:
        raise ConfigError(f"label set {label_set_id!r} must not be empty")
    _LABEL_SETS[label_set_id] = frozenset(l.lower() for l in labels)
    _SYNONYMS[label_set_id] = {k.lower(): v.lower() for k, v in (synonyms or {}).items()}


def label_set(label_set_id: str) -> frozenset[str]:
    try:
        return _LABEL_SETS[label_set_id]
    except KeyError:
        raise ConfigError(f"unknown label set {label_set_id!r}") from None


def normalize_label(text: str, label_set_id: str) -> str | None:
    """Map raw model text to a label in the set, or None when out of vocabulary.

    Normalization is lowercase + punctuation strip + synonym lookup, then an
    exact match against the set.
    """
    cleaned = text.strip().lower().translate(_PUNCT_TABLE).strip()
    cleaned = _SYNONYMS.get(label_set_id, {}).get(cleaned, cleaned)
    return cleaned if cleaned in label_set(label_set_id) else None
