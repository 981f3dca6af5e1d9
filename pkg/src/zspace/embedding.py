"""Vectors, similarity, linear solves and text embedders.

Vectors are plain 1-D ``float64`` numpy arrays.  The deterministic embedder is
specified algorithmically (FNV-1a keyed splitmix64 stream, Irwin-Hall normal
approximation) so that its output is bit-stable across platforms.
"""

from __future__ import annotations

import json
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
from scipy import linalg as sla

from .errors import DimMismatch, EmptyText, NotPositiveDefinite, ServiceError, ZeroVector

ZERO_NORM = 1e-12
DEFAULT_DIM = 64

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_TOKEN_RE = re.compile(r"[^\W_]+")


def as_vector(values: Sequence[float] | np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    return v


def normalize(v: Sequence[float] | np.ndarray) -> np.ndarray:
    """Return ``v / ||v||``; the input is left untouched."""
    v = as_vector(v)
    n = float(np.linalg.norm(v))
    if not np.isfinite(n) or n < ZERO_NORM:
        raise ZeroVector(f"cannot normalize vector with norm {n:.3g}")
    return v / n


def is_unit(v: np.ndarray, tol: float = 1e-9) -> bool:
    return abs(float(np.linalg.norm(v)) - 1.0) <= tol


def cosine(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.size} vs {b.size}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < ZERO_NORM or nb < ZERO_NORM:
        raise ZeroVector("cosine of a zero vector is undefined")
    c = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, c))


def solve_spd(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``m x = b`` for symmetric positive definite ``m`` via Cholesky.

    One step of iterative refinement is applied so the residual stays at
    round-off level even for moderately ill-conditioned ridge systems.
    """
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    k = m.shape[0]
    if m.shape != (k, k) or k < 1:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if b.shape != (k,):
        raise DimMismatch(f"rhs has shape {b.shape}, expected ({k},)")
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-9):
        raise ValueError("matrix is not symmetric")
    try:
        factor = sla.cho_factor(m, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    x = sla.cho_solve(factor, b)
    x = x + sla.cho_solve(factor, b - m @ x)
    return x


# -- deterministic embedder ---------------------------------------------------


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace, punctuation and underscores."""
    return _TOKEN_RE.findall(text.lower())


def hash64(seed: int, token: str) -> int:
    """FNV-1a over the 8 little-endian seed bytes followed by the UTF-8 token."""
    h = _FNV_OFFSET
    for byte in (seed & _MASK64).to_bytes(8, "little") + token.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _splitmix_stream(key: int, n: int) -> np.ndarray:
    counters = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(key) + counters * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@lru_cache(maxsize=65536)
def _token_vector(seed: int, dim: int, token: str) -> np.ndarray:
    raw = _splitmix_stream(hash64(seed, token), 12 * dim)
    uniforms = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53
    vec = uniforms.reshape(dim, 12).sum(axis=1) - 6.0
    vec.setflags(write=False)
    return vec


def token_vector(seed: int, dim: int, token: str) -> np.ndarray:
    """Un-normalized pseudo-random vector assigned to one token."""
    return _token_vector(seed, dim, token)


@dataclass(frozen=True)
class EmbedderSpec:
    kind: Literal["deterministic-hash", "external-service"] = "deterministic-hash"
    dim: int = DEFAULT_DIM
    seed: int = 0
    endpoint: str | None = None
    timeout: float = 10.0

    def __post_init__(self) -> None:
        if self.kind not in ("deterministic-hash", "external-service"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.kind == "external-service" and not self.endpoint:
            raise ValueError("external-service embedder needs an endpoint")


def embed_text(spec: EmbedderSpec, text: str) -> np.ndarray:
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    if spec.kind == "external-service":
        return _embed_remote(spec, text)
    tokens = tokenize(text)
    if not tokens:
        raise EmptyText(f"no tokens in {text!r}")
    total = np.zeros(spec.dim)
    for tok in tokens:
        total += _token_vector(spec.seed, spec.dim, tok)
    return normalize(total)


def embed_many(spec: EmbedderSpec, texts: Sequence[str]) -> np.ndarray:
    return np.stack([embed_text(spec, t) for t in texts]) if texts else np.zeros((0, spec.dim))


# urllib openers are thread-safe, but keep a lock so a misbehaving server cannot
# interleave partial reads between concurrent callers.
_remote_lock = threading.Lock()


def _embed_remote(spec: EmbedderSpec, text: str) -> np.ndarray:
    body = json.dumps({"text": text}).encode("utf-8")
    req = urllib.request.Request(
        spec.endpoint, data=body, method="POST", headers={"Content-Type": "application/json"}
    )
    try:
        with _remote_lock, urllib.request.urlopen(req, timeout=spec.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        raise ServiceError(f"embedding service returned HTTP {exc.code}") from exc
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise ServiceError(f"embedding service unreachable: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ServiceError("embedding service returned invalid JSON") from exc

    values = payload.get("embedding") if isinstance(payload, dict) else None
    if not isinstance(values, list) or len(values) != spec.dim:
        got = len(values) if isinstance(values, list) else "no"
        raise ServiceError(f"expected {spec.dim}-dim embedding, got {got} values")
    try:
        return normalize(np.asarray(values, dtype=np.float64))
    except (TypeError, ValueError) as exc:
        raise ServiceError(f"bad embedding payload: {exc}") from exc
