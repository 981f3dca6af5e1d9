"""Dual-track tool filtering: FSWW-enhanced semantic ranking fused with tag heuristics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .embedding import EmbedderSpec, embed_text, normalize
from .errors import DimMismatch, EmptyRegistry
from .fsww import FsswConfig, FsswTrace, fsww_enhance
from .intent import ParsedIntent, PlanStep
from .registry import Registry


@dataclass(frozen=True)
class RankedTool:
    name: str
    semantic_score: float
    heuristic_score: float
    combined_score: float
    rank: int

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "name": self.name,
            "semantic": self.semantic_score,
            "heuristic": self.heuristic_score,
            "combined": self.combined_score,
        }


@dataclass(frozen=True)
class RetrievalConfig:
    top_k: int = 5
    heuristic_weight: float = 0.2
    fsww: FsswConfig = field(default_factory=FsswConfig)
    use_fsww: bool = True

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0.0 <= self.heuristic_weight <= 1.0:
            raise ValueError("heuristic_weight must lie in [0, 1]")


def score_semantic(query_vec: np.ndarray, reg: Registry) -> list[tuple[str, float]]:
    """Exact cosine of ``query_vec`` against every tool, in registry order."""
    if len(reg) == 0:
        raise EmptyRegistry("registry has no tools")
    names, matrix = reg.embedding_matrix()
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (reg.dim,):
        raise DimMismatch(f"query has dim {q.size}, registry has {reg.dim}")
    q = normalize(q)
    # tool rows are unit vectors; divide anyway so the score is a true cosine
    scores = (matrix @ q) / np.linalg.norm(matrix, axis=1)
    return [(n, float(min(1.0, max(-1.0, s)))) for n, s in zip(names, scores)]


def _heuristic(keywords: Iterable[str], target: str, reg: Registry) -> list[tuple[str, float]]:
    kws = [k.strip().lower() for k in keywords if k.strip()]
    target = target.strip().lower()
    out = []
    for tool in reg:
        entity = set(tool.entity_tags)
        capability = set(tool.capability_tags)
        score = sum(k in entity for k in kws) + sum(k in capability for k in kws)
        if target and target in tool.name.lower():
            score += 2
        out.append((tool.name, float(score)))
    return out


def score_heuristic(
    intent: ParsedIntent, reg: Registry, step: PlanStep | None = None
) -> list[tuple[str, float]]:
    """Tag and name rule score per tool.

    +1 per keyword present in the entity tags, +1 per keyword present in the
    capability tags, +2 when the target object is a substring of the tool name.
    With ``step`` the step's own keywords and target are used.
    """
    if step is not None:
        return _heuristic(step.keywords, step.target_object or intent.target_object, reg)
    return _heuristic(intent.keywords, intent.target_object, reg)


def rank(
    semantic: Sequence[tuple[str, float]],
    heuristic: Sequence[tuple[str, float]],
    heuristic_weight: float,
    top_k: int | None,
) -> list[RankedTool]:
    heur = dict(heuristic)
    top = max(heur.values(), default=0.0)
    scale = top if top > 0 else 1.0
    rows = []
    for name, sem in semantic:
        h = heur.get(name, 0.0)
        combined = (1.0 - heuristic_weight) * sem + heuristic_weight * (h / scale)
        rows.append((name, sem, h, combined))
    rows.sort(key=lambda r: (-r[3], r[0]))
    if top_k is not None:
        rows = rows[:top_k]
    return [RankedTool(n, s, h, c, i) for i, (n, s, h, c) in enumerate(rows, 1)]


@dataclass
class QueryVectors:
    """Raw and (optionally) enhanced statement vectors of one retrieval."""

    raw: np.ndarray
    enhanced: np.ndarray
    trace: FsswTrace | None = None


def query_vectors(
    intent: ParsedIntent,
    step: PlanStep | None,
    embedder: EmbedderSpec,
    cfg: RetrievalConfig,
) -> QueryVectors:
    text = step.description if step is not None else intent.query
    keywords = step.keywords if step is not None else intent.keywords
    raw = embed_text(embedder, text)
    if not cfg.use_fsww:
        return QueryVectors(raw, raw)
    kw_vecs = [embed_text(embedder, k) for k in keywords]
    enhanced, trace = fsww_enhance(raw, kw_vecs, cfg.fsww)
    return QueryVectors(raw, enhanced, trace)


def retrieve(
    intent: ParsedIntent,
    step: PlanStep | None,
    reg: Registry,
    cfg: RetrievalConfig,
    embedder: EmbedderSpec,
) -> list[RankedTool]:
    if len(reg) == 0:
        raise EmptyRegistry("registry has no tools")
    if reg.dim != embedder.dim:
        raise DimMismatch(f"registry dim {reg.dim} != embedder dim {embedder.dim}")
    vecs = query_vectors(intent, step, embedder, cfg)
    semantic = score_semantic(vecs.enhanced, reg)
    heuristic = score_heuristic(intent, reg, step)
    return rank(semantic, heuristic, cfg.heuristic_weight, cfg.top_k)


def retrieve_plan(
    intent: ParsedIntent,
    reg: Registry,
    cfg: RetrievalConfig,
    embedder: EmbedderSpec,
) -> dict[str, list[RankedTool]]:
    """One retrieval per plan step (the whole query when the plan is empty)."""
    if not intent.plan.steps:
        return {"": retrieve(intent, None, reg, cfg, embedder)}
    return {s.id: retrieve(intent, s, reg, cfg, embedder) for s in intent.plan.steps}
