"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ReflectLoopError(Exception):
    """Base class for all package errors."""


class ConfigError(ReflectLoopError):
    """Invalid configuration: bad config file, missing script entry, mismatched embedder."""


class BackendError(ReflectLoopError):
    """Transport-level failure talking to a model server."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ScriptExhaustedError(ConfigError):
    """A scripted backend ran out of recorded replies."""


class StageError(ReflectLoopError):
    """An agent stage failed to produce a usable output after retries."""

    def __init__(self, stage: str, message: str, raw_text: str = ""):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.raw_text = raw_text


class CorpusError(ReflectLoopError):
    """Corpus file failed to load or validate."""


class TraceError(ReflectLoopError):
    """Trace file failed to load or parse."""


class MetricError(ReflectLoopError):
    """A metric is undefined for the given inputs."""
