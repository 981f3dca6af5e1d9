"""Tool metadata registry with tag indexes and a canonical JSONL format."""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .embedding import EmbedderSpec, embed_text, is_unit
from .errors import DimMismatch, ParseError

FIELDS = ("name", "description", "environment", "summary", "entityTags", "capabilityTags", "embedding")
REQUIRED = ("name", "description", "environment", "summary", "entityTags", "capabilityTags")


def normalize_tags(tags: Iterable[str]) -> list[str]:
    out: list[str] = []
    for t in tags:
        t = t.strip().lower()
        if t and t not in out:
            out.append(t)
    return out


def tool_text(summary: str, description: str) -> str:
    """Text a tool is embedded from."""
    return f"{summary} {description}"


@dataclass
class ToolRecord:
    name: str
    description: str
    environment: str
    summary: str
    entity_tags: list[str]
    capability_tags: list[str]
    embedding: np.ndarray

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise ValueError("tool name must be non-empty")
        self.entity_tags = normalize_tags(self.entity_tags)
        self.capability_tags = normalize_tags(self.capability_tags)
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        if self.embedding.ndim != 1 or not is_unit(self.embedding):
            raise ValueError(f"embedding of {self.name!r} must be a unit vector")

    @classmethod
    def build(
        cls,
        embedder: EmbedderSpec,
        name: str,
        description: str,
        environment: str = "",
        summary: str = "",
        entity_tags: Iterable[str] = (),
        capability_tags: Iterable[str] = (),
    ) -> ToolRecord:
        vec = embed_text(embedder, tool_text(summary, description))
        return cls(name, description, environment, summary, list(entity_tags), list(capability_tags), vec)

    @property
    def dim(self) -> int:
        return int(self.embedding.size)

    @property
    def tags(self) -> set[str]:
        return set(self.entity_tags) | set(self.capability_tags)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ToolRecord):
            return NotImplemented
        return (
            self.name == other.name
            and self.description == other.description
            and self.environment == other.environment
            and self.summary == other.summary
            and self.entity_tags == other.entity_tags
            and self.capability_tags == other.capability_tags
            and self.embedding.shape == other.embedding.shape
            and bool(np.all(np.abs(self.embedding - other.embedding) <= 1e-12))
        )

    def to_json_line(self) -> str:
        """Canonical serialization: fixed key order, floats at 17 significant digits."""
        parts = [
            f'"name": {json.dumps(self.name, ensure_ascii=False)}',
            f'"description": {json.dumps(self.description, ensure_ascii=False)}',
            f'"environment": {json.dumps(self.environment, ensure_ascii=False)}',
            f'"summary": {json.dumps(self.summary, ensure_ascii=False)}',
            f'"entityTags": {json.dumps(self.entity_tags, ensure_ascii=False)}',
            f'"capabilityTags": {json.dumps(self.capability_tags, ensure_ascii=False)}',
            '"embedding": [' + ", ".join(format(float(x), ".17g") for x in self.embedding) + "]",
        ]
        return "{" + ", ".join(parts) + "}"


class Registry:
    """Name-keyed tool collection plus an inverted tag index.

    Writers take an exclusive lock; readers work on whatever is committed, and
    ``snapshot`` hands out a consistent copy for long-running scans.
    """

    def __init__(self, dim: int, tools: Iterable[ToolRecord] = ()):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._tools: dict[str, ToolRecord] = {}
        self._tag_index: dict[str, set[str]] = {}
        self._lock = threading.RLock()
        self._matrix: np.ndarray | None = None
        for t in tools:
            self.register(t)

    def __len__(self) -> int:
        return len(self._tools)

    def __iter__(self) -> Iterator[ToolRecord]:
        return iter(list(self._tools.values()))

    def __contains__(self, name: object) -> bool:
        return name in self._tools

    def __getitem__(self, name: str) -> ToolRecord:
        return self._tools[name]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Registry):
            return NotImplemented
        return self.dim == other.dim and list(self._tools.items()) == list(other._tools.items())

    @property
    def names(self) -> list[str]:
        return list(self._tools)

    @property
    def tag_index(self) -> dict[str, set[str]]:
        with self._lock:
            return {tag: set(names) for tag, names in self._tag_index.items()}

    def register(self, record: ToolRecord) -> Registry:
        if record.dim != self.dim:
            raise DimMismatch(f"tool {record.name!r} has dim {record.dim}, registry has {self.dim}")
        with self._lock:
            old = self._tools.get(record.name)
            if old is not None:
                for tag in old.tags:
                    holders = self._tag_index.get(tag)
                    if holders is not None:
                        holders.discard(record.name)
                        if not holders:
                            del self._tag_index[tag]
            self._tools[record.name] = record
            for tag in record.tags:
                self._tag_index.setdefault(tag, set()).add(record.name)
            self._matrix = None
        return self

    def lookup_by_tag(self, tag: str) -> set[str]:
        with self._lock:
            return set(self._tag_index.get(tag.strip().lower(), ()))

    def rebuild_tag_index(self) -> dict[str, set[str]]:
        index: dict[str, set[str]] = {}
        for t in self._tools.values():
            for tag in t.tags:
                index.setdefault(tag, set()).add(t.name)
        return index

    def embedding_matrix(self) -> tuple[list[str], np.ndarray]:
        """Names and stacked embeddings (rows), cached until the next write."""
        with self._lock:
            if self._matrix is None:
                self._matrix = (
                    np.stack([t.embedding for t in self._tools.values()])
                    if self._tools
                    else np.zeros((0, self.dim))
                )
            return list(self._tools), self._matrix

    def snapshot(self) -> Registry:
        with self._lock:
            return Registry(self.dim, list(self._tools.values()))

    def save_jsonl(self, path: str | Path) -> None:
        with self._lock:
            lines = [t.to_json_line() for t in self._tools.values()]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def load_jsonl(
        cls,
        path: str | Path,
        dim: int | None = None,
        embedder: EmbedderSpec | None = None,
    ) -> Registry:
        """Load a registry; records without an ``embedding`` are embedded with ``embedder``."""
        records = list(read_records(path, embedder))
        if dim is None:
            if records:
                dim = records[0].dim
            elif embedder is not None:
                dim = embedder.dim
            else:
                raise ParseError(f"{path}: empty registry file and no dimension given")
        reg = cls(dim)
        for lineno, rec in enumerate(records, 1):
            try:
                reg.register(rec)
            except DimMismatch as exc:
                raise ParseError(str(exc), line=lineno, field="embedding") from exc
        return reg


def _parse_record(obj: object, lineno: int, embedder: EmbedderSpec | None) -> ToolRecord:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", line=lineno)
    for key in REQUIRED:
        if key not in obj:
            raise ParseError(f"missing required field {key!r}", line=lineno, field=key)
    for key in ("name", "description", "environment", "summary"):
        if not isinstance(obj[key], str):
            raise ParseError(f"field {key!r} must be a string", line=lineno, field=key)
    for key in ("entityTags", "capabilityTags"):
        if not isinstance(obj[key], list) or not all(isinstance(t, str) for t in obj[key]):
            raise ParseError(f"field {key!r} must be a list of strings", line=lineno, field=key)

    if "embedding" in obj:
        emb = obj["embedding"]
        if (
            not isinstance(emb, list)
            or not emb
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in emb)
            or not all(math.isfinite(x) for x in emb)
        ):
            raise ParseError("field 'embedding' must be a non-empty list of numbers", line=lineno, field="embedding")
        vec = np.asarray(emb, dtype=np.float64)
        if not is_unit(vec):
            raise ParseError("field 'embedding' is not unit-norm", line=lineno, field="embedding")
    elif embedder is not None:
        vec = embed_text(embedder, tool_text(obj["summary"], obj["description"]))
    else:
        raise ParseError("missing required field 'embedding'", line=lineno, field="embedding")

    try:
        return ToolRecord(
            obj["name"], obj["description"], obj["environment"], obj["summary"],
            obj["entityTags"], obj["capabilityTags"], vec,
        )
    except ValueError as exc:
        raise ParseError(str(exc), line=lineno, field="name") from exc


def read_records(path: str | Path, embedder: EmbedderSpec | None = None) -> Iterator[ToolRecord]:
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
        yield _parse_record(obj, lineno, embedder)

