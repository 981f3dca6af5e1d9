"""Flat JSON configuration mirroring the config dataclasses' field names."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .fsww import FsswConfig
from .orchestrator import OrchestratorConfig
from .retrieval import RetrievalConfig

# "lambda" is a Python keyword, the dataclass calls it ``lam``
_FSWW_KEYS = {"alpha", "beta", "gamma", "lambda", "epsilon", "delta", "max_guard_iters", "shrink"}
_RETRIEVAL_KEYS = {"top_k", "heuristic_weight", "use_fsww"}
_ORCH_KEYS = {"retry_limit", "max_parallel", "step_timeout"}


@dataclass(frozen=True)
class Settings:
    fsww: FsswConfig = field(default_factory=FsswConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)

    def to_dict(self) -> dict:
        out = {("lambda" if f.name == "lam" else f.name): getattr(self.fsww, f.name) for f in fields(self.fsww)}
        out.update({k: getattr(self.retrieval, k) for k in sorted(_RETRIEVAL_KEYS)})
        out.update({k: getattr(self.orchestrator, k) for k in sorted(_ORCH_KEYS)})
        return out


def settings_from_dict(data: dict) -> Settings:
    unknown = set(data) - _FSWW_KEYS - _RETRIEVAL_KEYS - _ORCH_KEYS
    if unknown:
        raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
    fsww = FsswConfig(**{("lam" if k == "lambda" else k): v for k, v in data.items() if k in _FSWW_KEYS})
    retrieval = RetrievalConfig(fsww=fsww, **{k: v for k, v in data.items() if k in _RETRIEVAL_KEYS})
    orch = OrchestratorConfig(**{k: v for k, v in data.items() if k in _ORCH_KEYS})
    return Settings(fsww, retrieval, orch)


def load_settings(path: str | Path | None) -> Settings:
    if path is None:
        return Settings()
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: configuration must be a JSON object")
    return settings_from_dict(data)

