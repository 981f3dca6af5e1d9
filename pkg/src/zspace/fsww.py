"""Fused Subspace with Word Weights (FSWW) semantic enhancement.

Pulls a statement embedding toward the semantic directions of its keywords
while keeping it close to the original statement.  The pipeline is:

1. keyword weights: clamped cosine between statement and each keyword
2. ridge-regularized projection onto the weight-scaled keyword span
3. weighted keyword centroid
4. weighted differential (semantic increment) direction
5. linear fusion of statement, projection, centroid and differential
6. gated residual blend whose gate grows with the mean keyword weight
7. semantic guard: shrink the fusion coefficients until the output stays
   within ``delta`` cosine of the statement, else fall back to the statement
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedding import as_vector, cosine, normalize, solve_spd
from .errors import (
    DegenerateDifferential,
    DegenerateFusion,
    DimMismatch,
    NoEffectiveKeywords,
    NotPositiveDefinite,
)

log = logging.getLogger(__name__)

WEIGHT_EPS = 1e-9
DEGENERATE_NORM = 1e-9


@dataclass(frozen=True)
class FsswConfig:
    alpha: float = 0.5
    beta: float = 0.1
    gamma: float = 0.6
    lam: float = 0.6
    epsilon: float = 0.001
    delta: float = 0.9
    max_guard_iters: int = 8
    shrink: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be non-negative")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if self.max_guard_iters < 1:
            raise ValueError("max_guard_iters must be >= 1")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")


@dataclass
class FsswTrace:
    """Every intermediate of one enhancement run."""

    statement: np.ndarray
    weights: list[float] = field(default_factory=list)
    mean_weight: float = 0.0
    projection: np.ndarray | None = None
    centroid: np.ndarray | None = None
    differential: np.ndarray | None = None
    fused: np.ndarray | None = None
    gate: float = 0.0
    output: np.ndarray | None = None
    guard_iterations: int = 0
    guard_satisfied: bool = True
    fallback: bool = False
    degenerate_fusion: bool = False
    clamped: int = 0
    coefficients: list[tuple[float, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        def vec(v):
            return None if v is None else [float(x) for x in v]

        return {
            "statement": vec(self.statement),
            "weights": [float(w) for w in self.weights],
            "mean_weight": float(self.mean_weight),
            "projection": vec(self.projection),
            "centroid": vec(self.centroid),
            "differential": vec(self.differential),
            "fused": vec(self.fused),
            "gate": float(self.gate),
            "output": vec(self.output),
            "guard_iterations": self.guard_iterations,
            "guard_satisfied": self.guard_satisfied,
            "fallback": self.fallback,
            "degenerate_fusion": self.degenerate_fusion,
            "clamped": self.clamped,
            "coefficients": [list(c) for c in self.coefficients],
        }


@dataclass(frozen=True)
class Components:
    projection: np.ndarray | None = None
    centroid: np.ndarray | None = None
    differential: np.ndarray | None = None


def _check_dims(statement: np.ndarray, keywords: Sequence[np.ndarray]) -> None:
    for i, w in enumerate(keywords):
        if w.shape != statement.shape:
            raise DimMismatch(f"keyword {i} has dim {w.size}, statement has {statement.size}")


def word_weights(statement: np.ndarray, keywords: Sequence[np.ndarray]) -> list[float]:
    """Cosine attention of each keyword against the statement, clamped at 0."""
    statement = as_vector(statement)
    keywords = [as_vector(w) for w in keywords]
    _check_dims(statement, keywords)
    return [max(0.0, cosine(statement, w)) for w in keywords]


def _retained(keywords, weights):
    if len(keywords) != len(weights):
        raise ValueError(f"{len(keywords)} keywords but {len(weights)} weights")
    kept = [(normalize(w), float(om)) for w, om in zip(keywords, weights) if om > WEIGHT_EPS]
    if not kept:
        raise NoEffectiveKeywords("all keyword weights are zero")
    units = np.stack([u for u, _ in kept])
    omegas = np.array([om for _, om in kept])
    return units, omegas


def weighted_projection(
    statement: np.ndarray,
    keywords: Sequence[np.ndarray],
    weights: Sequence[float],
    epsilon: float,
) -> np.ndarray:
    """Ridge projection ``S (S^T S + eps I)^-1 S^T a`` with columns ``w_j * unit(k_j)``.

    Keywords whose weight is at most 1e-9 are dropped before ``S`` is built.
    """
    statement = as_vector(statement)
    units, omegas = _retained([as_vector(w) for w in keywords], weights)
    s = (units * omegas[:, None]).T  # dim x k
    gram = s.T @ s + epsilon * np.eye(s.shape[1])
    rhs = s.T @ statement
    try:
        coef = solve_spd(gram, rhs)
    except NotPositiveDefinite:
        log.warning("ridge system not positive definite; falling back to least squares")
        coef = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    return s @ coef


def word_center(keywords: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    units, omegas = _retained([as_vector(w) for w in keywords], weights)
    return normalize((omegas[:, None] * units).sum(axis=0) / omegas.sum())


def differential_vector(
    statement: np.ndarray, keywords: Sequence[np.ndarray], weights: Sequence[float]
) -> np.ndarray:
    statement = as_vector(statement)
    units, omegas = _retained([as_vector(w) for w in keywords], weights)
    total = (omegas[:, None] * (units - statement)).sum(axis=0)
    if np.linalg.norm(total) <= DEGENERATE_NORM:
        raise DegenerateDifferential("keyword increments cancel out")
    return normalize(total)


def fuse(
    statement: np.ndarray,
    components: Components,
    alpha: float,
    beta: float,
    gamma: float,
) -> np.ndarray:
    """Normalized blend ``(1-a) s + a P + b E + g W``; absent parts contribute 0."""
    total = (1.0 - alpha) * statement
    if components.projection is not None:
        total = total + alpha * components.projection
    if components.centroid is not None:
        total = total + beta * components.centroid
    if components.differential is not None:
        total = total + gamma * components.differential
    if np.linalg.norm(total) <= DEGENERATE_NORM:
        raise DegenerateFusion("fusion forces cancel out")
    return normalize(total)


def gate_value(mean_weight: float, lam: float) -> float:
    return lam * (0.3 + 0.7 * mean_weight)


def gated_residual(
    statement: np.ndarray, fused: np.ndarray, mean_weight: float, lam: float
) -> tuple[np.ndarray, float]:
    gate = gate_value(mean_weight, lam)
    f = fused / np.linalg.norm(fused)
    blended = (1.0 - gate) * statement + gate * f
    n = np.linalg.norm(blended)
    if n <= DEGENERATE_NORM:
        # only reachable for gate=0.5 with fused = -statement
        return statement.copy(), gate
    return blended / n, gate


def components_for(
    statement: np.ndarray, keywords: Sequence[np.ndarray], weights: Sequence[float], epsilon: float
) -> Components:
    try:
        projection = weighted_projection(statement, keywords, weights, epsilon)
    except NoEffectiveKeywords:
        return Components()
    centroid = word_center(keywords, weights)
    try:
        differential = differential_vector(statement, keywords, weights)
    except DegenerateDifferential:
        differential = None
    return Components(projection, centroid, differential)


def fsww_enhance(
    statement: np.ndarray,
    keywords: Sequence[np.ndarray],
    config: FsswConfig | None = None,
    *,
    weights: Sequence[float] | None = None,
) -> tuple[np.ndarray, FsswTrace]:
    """Enhance ``statement`` with ``keywords``; returns the unit output and its trace.

    ``weights`` overrides the attention weights (used to probe the guard with
    adversarial inputs); normally they are computed from the keywords.
    """
    config = config or FsswConfig()
    a = normalize(statement)
    keywords = [as_vector(w) for w in keywords]
    _check_dims(a, keywords)
    trace = FsswTrace(statement=a)

    if not keywords:
        trace.gate = gate_value(0.0, config.lam)
        trace.fused = a.copy()
        trace.output = a.copy()
        return trace.output, trace

    if weights is None:
        raw = [cosine(a, w) for w in keywords]
        trace.clamped = sum(1 for r in raw if r < 0)
        if trace.clamped:
            log.debug("clamped %d negative keyword weights", trace.clamped)
        omega = [max(0.0, r) for r in raw]
    else:
        if len(weights) != len(keywords):
            raise ValueError("weights must align with keywords")
        omega = [float(w) for w in weights]
    trace.weights = omega
    trace.mean_weight = float(np.mean(omega))

    comps = components_for(a, keywords, omega, config.epsilon)
    trace.projection = comps.projection
    trace.centroid = comps.centroid
    trace.differential = comps.differential

    if comps.projection is None:
        # nothing survives the weight cut: the statement passes through untouched
        trace.gate = gate_value(trace.mean_weight, config.lam)
        trace.fused = a.copy()
        trace.output = a.copy()
        return trace.output, trace

    alpha, beta, gamma = config.alpha, config.beta, config.gamma
    for it in range(config.max_guard_iters + 1):
        trace.coefficients.append((alpha, beta, gamma))
        trace.guard_iterations = it
        try:
            fused = fuse(a, comps, alpha, beta, gamma)
            trace.degenerate_fusion = False
        except DegenerateFusion:
            fused = a.copy()
            trace.degenerate_fusion = True
        v, gate = gated_residual(a, fused, trace.mean_weight, config.lam)
        trace.fused, trace.gate, trace.output = fused, gate, v
        if cosine(a, v) >= config.delta:
            trace.guard_satisfied = True
            return v, trace
        if it < config.max_guard_iters:
            alpha, beta, gamma = (config.shrink * c for c in (alpha, beta, gamma))

    trace.guard_satisfied = False
    trace.fallback = True
    trace.output = a.copy()
    return trace.output, trace

