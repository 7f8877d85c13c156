"""Model service clients: live Ollama-compatible HTTP plus deterministic test doubles.

Three chat backends share one interface:

* :class:`OllamaBackend` talks to an Ollama-compatible REST server.
* :class:`ScriptedBackend` replays a flat list of replies in call order.
* :class:`KeyedScriptedBackend` replays per-agent reply queues, keyed by the
  agent role carried on the request; this is what trace replay uses.

Embeddings come either from the live server or from :class:`HashingEmbedder`,
a seeded feature-hashing embedder that keeps memory tests model-free.
"""

from __future__ import annotations

import base64
import hashlib
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .errors import BackendError, ConfigError, ScriptExhaustedError

DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_TOKENS = 1024
DEFAULT_RETRIES = 2
RETRY_BASE_SECONDS = 0.25


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call."""

    model_name: str
    system_prompt: str
    user_prompt: str
    image_refs: tuple[str, ...] = ()
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    format_hint: str | None = None
    agent_role: str | None = None

    def __post_init__(self):
        if not self.system_prompt or not self.user_prompt:
            raise ConfigError("chat prompts must be non-empty")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ConfigError("max_tokens must be > 0")
        object.__setattr__(self, "image_refs", tuple(self.image_refs))
        for ref in self.image_refs:
            if not os.path.isfile(ref):
                raise ConfigError(f"image file not found: {ref}")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    model_name: str
    latency_ms: int


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.dim <= 0 or len(self.values) != self.dim:
            raise ConfigError("embedding dim mismatch")
        if not all(np.isfinite(self.values)):
            raise ConfigError("embedding contains non-finite values")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float32)


class OllamaBackend:
    """Client for an Ollama-compatible REST server.

    Transport errors are retried with exponential backoff; parse-level
    problems are the caller's concern. Safe for concurrent in-flight
    requests up to ``connection_limit``.
    """

    def __init__(
        self,
        base_url: str,
        model_name: str,
        embed_model: str | None = None,
        timeout: float = 120.0,
        retries: int = DEFAULT_RETRIES,
        connection_limit: int = 4,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.embed_model = embed_model or model_name
        self.timeout = timeout
        self.retries = retries
        self._slots = threading.BoundedSemaphore(connection_limit)
        self._session = requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(RETRY_BASE_SECONDS * (2 ** (attempt - 1)))
            try:
                with self._slots:
                    resp = self._session.post(url, json=payload, timeout=self.timeout)
                if resp.status_code >= 500:
                    last_error = BackendError(f"{url} returned {resp.status_code}")
                    continue
                if resp.status_code >= 400:
                    raise BackendError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
                return resp.json()
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
        raise BackendError(
            f"{url} unreachable after {self.retries + 1} attempts: {last_error}",
            attempts=self.retries + 1,
        )

    def chat(self, request: ChatRequest) -> ChatResponse:
        messages = [{"role": "system", "content": request.system_prompt}]
        user_msg: dict = {"role": "user", "content": request.user_prompt}
        if request.image_refs:
            images = []
            for ref in request.image_refs:
                with open(ref, "rb") as fh:
                    images.append(base64.b64encode(fh.read()).decode("ascii"))
            user_msg["images"] = images
        messages.append(user_msg)
        payload = {
            "model": request.model_name or self.model_name,
            "messages": messages,
            "stream": False,
            "options": {
                "temperature": request.temperature,
                "num_predict": request.max_tokens,
            },
        }
        start = time.monotonic()
        body = self._post("/api/chat", payload)
        latency = int((time.monotonic() - start) * 1000)
        text = body.get("message", {}).get("content", "")
        return ChatResponse(text=text, model_name=payload["model"], latency_ms=latency)

    def embed(self, text: str) -> EmbeddingVector:
        if not text:
            raise ConfigError("cannot embed empty text")
        body = self._post("/api/embed", {"model": self.embed_model, "input": text})
        vectors = body.get("embeddings") or []
        if not vectors:
            raise BackendError("embeddings endpoint returned no vectors")
        values = vectors[0]
        return EmbeddingVector(values=tuple(values), dim=len(values))

    @property
    def embedder_id(self) -> str:
        return f"ollama:{self.embed_model}"


class ScriptedBackend:
    """Replays a flat list of replies in strict call order.

    A pure function of (script, call index): two runs over the same script
    yield identical reply sequences. Must not be shared across concurrent
    dialogues.
    """

    def __init__(self, replies: list[str], model_name: str = "scripted"):
        self._replies = list(replies)
        self._cursor = 0
        self.model_name = model_name
        self.calls: list[ChatRequest] = []

    def chat(self, request: ChatRequest) -> ChatResponse:
        self.calls.append(request)
        if self._cursor >= len(self._replies):
            raise ScriptExhaustedError(
                f"scripted backend exhausted after {len(self._replies)} replies"
            )
        text = self._replies[self._cursor]
        self._cursor += 1
        return ChatResponse(text=text, model_name=self.model_name, latency_ms=0)

    def embed(self, text: str) -> EmbeddingVector:
        return HashingEmbedder().embed(text)

    @property
    def embedder_id(self) -> str:
        return HashingEmbedder().embedder_id


class KeyedScriptedBackend:
    """Replays per-agent reply queues.

    Each incoming request must carry an ``agent_role``; the nth call for a
    role receives the nth recorded reply for that role. All roles that will
    be called must be present at construction.
    """

    def __init__(self, scripts: dict[str, list[str]], model_name: str = "scripted"):
        if not scripts:
            raise ConfigError("scripted backend needs at least one agent script")
        self._scripts = {role: list(replies) for role, replies in scripts.items()}
        self._cursors = {role: 0 for role in scripts}
        self.model_name = model_name
        self.calls: list[ChatRequest] = []

    @classmethod
    def from_trace(cls, run_dir: str, dialogue_id: str | None = None) -> "KeyedScriptedBackend":
        """Build a backend that replays the recorded replies of a prior run."""
        from .trace import replay_scripts

        return cls(replay_scripts(run_dir, dialogue_id))

    def chat(self, request: ChatRequest) -> ChatResponse:
        self.calls.append(request)
        role = request.agent_role
        if role not in self._scripts:
            raise ConfigError(f"no recorded replies for agent role {role!r}")
        cursor = self._cursors[role]
        replies = self._scripts[role]
        if cursor >= len(replies):
            raise ScriptExhaustedError(
                f"scripted backend exhausted for role {role!r} after {len(replies)} replies"
            )
        self._cursors[role] = cursor + 1
        return ChatResponse(text=replies[cursor], model_name=self.model_name, latency_ms=0)

    def embed(self, text: str) -> EmbeddingVector:
        return HashingEmbedder().embed(text)

    @property
    def embedder_id(self) -> str:
        return HashingEmbedder().embedder_id


@dataclass(frozen=True)
class HashingEmbedder:
    """Seeded feature-hashing of word tokens into a fixed-dim unit vector."""

    dim: int = 256
    seed: int = 0

    def embed(self, text: str) -> EmbeddingVector:
        if not text:
            raise ConfigError("cannot embed empty text")
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in text.lower().split():
            # token plus its character trigrams: several active dims per word,
            # so distinct words collide with negligible probability
            padded = f"#{token}#"
            features = [token] + [padded[i : i + 3] for i in range(len(padded) - 2)]
            for feat in features:
                digest = hashlib.sha256(f"{self.seed}:{feat}".encode()).digest()
                index = int.from_bytes(digest[:4], "little") % self.dim
                sign = 1.0 if digest[4] % 2 == 0 else -1.0
                vec[index] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return EmbeddingVector(values=tuple(vec), dim=self.dim)

    @property
    def embedder_id(self) -> str:
        return f"hash-v1:{self.dim}:{self.seed}"
