"""Run configuration: TOML file, environment overrides, CLI flags win last.

Environment variables REFLECT_LOOP_BASE_URL and REFLECT_LOOP_MODEL override
the file; CLI flags override both.
"""

from __future__ import annotations

import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, replace
from pathlib import Path

from . import labels
from .errors import ConfigError

ENV_BASE_URL = "REFLECT_LOOP_BASE_URL"
ENV_MODEL = "REFLECT_LOOP_MODEL"


@dataclass(frozen=True)
class AppConfig:
    base_url: str = "http://localhost:11434"
    model: str = "qwen3.5:27b"
    embed_model: str = "hash"
    timeout: float = 120.0
    retries: int = 2
    connection_limit: int = 4
    t_max: int = 2
    retrieval_top_k: int = 1
    selection_enabled: bool = True
    parallel: int = 2
    template_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "base_url": self.base_url,
            "model": self.model,
            "embed_model": self.embed_model,
            "timeout": self.timeout,
            "retries": self.retries,
            "connection_limit": self.connection_limit,
            "t_max": self.t_max,
            "retrieval_top_k": self.retrieval_top_k,
            "selection_enabled": self.selection_enabled,
            "parallel": self.parallel,
            "template_dir": self.template_dir,
        }


def load_config(path: str | Path | None = None) -> AppConfig:
    cfg = AppConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: bad TOML ({exc})") from exc
        backend = data.get("backend", {})
        loop = data.get("loop", {})
        run = data.get("run", {})
        cfg = replace(
            cfg,
            base_url=backend.get("base_url", cfg.base_url),
            model=backend.get("model", cfg.model),
            embed_model=backend.get("embed_model", cfg.embed_model),
            timeout=backend.get("timeout", cfg.timeout),
            retries=backend.get("retries", cfg.retries),
            connection_limit=backend.get("connection_limit", cfg.connection_limit),
            t_max=loop.get("t_max", cfg.t_max),
            retrieval_top_k=loop.get("top_k", cfg.retrieval_top_k),
            selection_enabled=loop.get("selection", cfg.selection_enabled),
            parallel=run.get("parallel", cfg.parallel),
            template_dir=run.get("template_dir", cfg.template_dir),
        )
        for set_id, spec in data.get("label_sets", {}).items():
            labels.register_label_set(set_id, spec.get("labels", []), spec.get("synonyms"))
    if os.environ.get(ENV_BASE_URL):
        cfg = replace(cfg, base_url=os.environ[ENV_BASE_URL])
    if os.environ.get(ENV_MODEL):
        cfg = replace(cfg, model=os.environ[ENV_MODEL])
    return cfg
