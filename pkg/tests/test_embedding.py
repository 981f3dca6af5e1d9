import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zspace.embedding import (
    EmbedderSpec,
    cosine,
    embed_text,
    hash64,
    normalize,
    solve_spd,
    tokenize,
)
from zspace.errors import DimMismatch, EmptyText, NotPositiveDefinite, ServiceError, ZeroVector

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)
vectors = st.lists(finite, min_size=2, max_size=12).filter(lambda v: math.sqrt(sum(x * x for x in v)) > 1e-3)


# -- normalize / cosine ----------------------------------------------------------


def test_normalize_examples():
    np.testing.assert_allclose(normalize([3, 4]), [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(normalize([1, 0, 0]), [1, 0, 0])
    with pytest.raises(ZeroVector):
        normalize([0, 0])


def test_normalize_leaves_input_alone():
    v = np.array([3.0, 4.0])
    normalize(v)
    np.testing.assert_array_equal(v, [3.0, 4.0])


@given(vectors)
def test_normalize_idempotent(v):
    once = normalize(v)
    np.testing.assert_allclose(normalize(once), once, atol=1e-12)
    assert abs(np.linalg.norm(once) - 1.0) <= 1e-9


def test_cosine_examples():
    assert cosine([1, 0], [1, 0]) == 1.0
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 1], [1, 0]) == pytest.approx(0.7071, abs=1e-4)


def test_cosine_errors():
    with pytest.raises(DimMismatch):
        cosine([1, 0], [1, 0, 0])
    with pytest.raises(ZeroVector):
        cosine([0, 0], [1, 0])


def test_cosine_clamped_to_unit_interval():
    v = np.array([0.1, 0.7, 0.3]) * 1e5
    assert -1.0 <= cosine(v, v) <= 1.0
    assert cosine(v, -v) == -1.0


@given(st.integers(2, 10).flatmap(lambda n: st.tuples(
    st.lists(finite, min_size=n, max_size=n), st.lists(finite, min_size=n, max_size=n))),
    st.floats(min_value=1e-3, max_value=1e3))
def test_cosine_symmetric_and_scale_invariant(pair, c):
    a, b = (np.array(x) for x in pair)
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    assert cosine(a, b) == pytest.approx(cosine(b, a), abs=1e-12)
    assert cosine(c * a, b) == pytest.approx(cosine(a, b), abs=1e-9)


# -- solve_spd ------------------------------------------------------------------------


def gauss_solve(m, b):
    """Textbook Gaussian elimination with partial pivoting, in plain Python."""
    n = len(b)
    a = [list(map(float, row)) + [float(bi)] for row, bi in zip(m, b)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        a[col], a[piv] = a[piv], a[col]
        for r in range(col + 1, n):
            f = a[r][col] / a[col][col]
            for c in range(col, n + 1):
                a[r][c] -= f * a[col][c]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (a[r][n] - sum(a[r][c] * x[c] for c in range(r + 1, n))) / a[r][r]
    return np.array(x)


def test_solve_spd_examples():
    np.testing.assert_allclose(solve_spd(np.eye(2), np.array([3.0, 5.0])), [3, 5], atol=1e-15)
    np.testing.assert_allclose(solve_spd(np.array([[2.0, 0], [0, 4.0]]), np.array([2.0, 8.0])), [1, 2], atol=1e-15)


def test_solve_spd_matches_elimination_oracle(rng):
    for _ in range(50):
        a = rng.normal(size=(5, 5))
        m = a.T @ a + 0.001 * np.eye(5)
        b = rng.normal(size=5)
        np.testing.assert_allclose(solve_spd(m, b), gauss_solve(m, b), atol=1e-8)


def test_solve_spd_residual_bound(rng):
    for _ in range(1000):
        k = int(rng.integers(1, 17))
        a = rng.normal(size=(int(rng.integers(1, 20)), k))
        m = a.T @ a + 0.001 * np.eye(k)
        b = rng.normal(size=k) * 10 ** rng.uniform(-3, 3)
        x = solve_spd(m, b)
        assert np.max(np.abs(m @ x - b)) <= 1e-8 * max(1.0, np.max(np.abs(b)))


def test_solve_spd_rejects_indefinite_and_asymmetric():
    with pytest.raises(NotPositiveDefinite):
        solve_spd(np.array([[1.0, 0], [0, -1.0]]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        solve_spd(np.array([[1.0, 2.0], [0.0, 1.0]]), np.array([1.0, 1.0]))


# -- deterministic embedder ---------------------------------------------------------------


M64 = (1 << 64) - 1


def reference_token_vector(seed, dim, token):
    """Pure-integer FNV-1a / splitmix64 / Irwin-Hall, written without numpy."""
    h = 0xCBF29CE484222325
    for byte in (seed & M64).to_bytes(8, "little") + token.encode():
        h = ((h ^ byte) * 0x100000001B3) & M64
    out = []
    for i in range(dim):
        s = 0.0
        for j in range(12):
            z = (h + (12 * i + j + 1) * 0x9E3779B97F4A7C15) & M64
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
            z ^= z >> 31
            s += (z >> 11) * 2.0**-53
        out.append(s - 6.0)
    return np.array(out)


def test_embed_matches_manual_token_sum():
    spec = EmbedderSpec(dim=8, seed=42)
    total = reference_token_vector(42, 8, "create") + reference_token_vector(42, 8, "coupon")
    np.testing.assert_allclose(embed_text(spec, "Create, COUPON!"), total / np.linalg.norm(total), atol=1e-12)


def test_repeated_token_same_direction():
    spec = EmbedderSpec(dim=8, seed=42)
    np.testing.assert_allclose(embed_text(spec, "coupon coupon"), embed_text(spec, "coupon"), atol=1e-12)


def test_embed_is_bitwise_deterministic(rng):
    spec = EmbedderSpec(dim=8, seed=42)
    assert embed_text(spec, "create coupon").tobytes() == embed_text(spec, "create coupon").tobytes()
    alphabet = list("abcdefghij klmnop,._-")
    texts = ["".join(rng.choice(alphabet, size=int(rng.integers(1, 30)))) + "x" for _ in range(1000)]
    first = [embed_text(spec, t).tobytes() for t in texts]
    second = [embed_text(EmbedderSpec(dim=8, seed=42), t).tobytes() for t in texts]
    assert first == second


def test_seed_changes_vectors():
    a = embed_text(EmbedderSpec(dim=16, seed=1), "order")
    b = embed_text(EmbedderSpec(dim=16, seed=2), "order")
    assert abs(cosine(a, b)) < 0.99


def test_empty_text_rejected():
    spec = EmbedderSpec(dim=8)
    for text in ("", "   ", "?!"):
        with pytest.raises(EmptyText):
            embed_text(spec, text)


def test_tokenize_and_hash():
    assert tokenize("Create a TEST_coupon, then go!") == ["create", "a", "test", "coupon", "then", "go"]
    assert hash64(0, "a") != hash64(1, "a")
    assert hash64(0, "a") == hash64(0, "a")


def test_spec_validation():
    with pytest.raises(ValueError):
        EmbedderSpec(dim=1)
    with pytest.raises(ValueError):
        EmbedderSpec(kind="external-service")


# -- external service ------------------------------------------------------------------------


class _EmbedHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        n = len(body["text"])
        payload = json.dumps({"embedding": [float(n), 1.0] + [0.0] * (self.server.dim - 2)}).encode()
        self.send_response(self.server.status)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


@pytest.fixture
def embed_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _EmbedHandler)
    server.dim, server.status = 4, 200
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    yield server
    server.shutdown()
    server.server_close()


def _remote_spec(server, dim=4):
    host, port = server.server_address[:2]
    return EmbedderSpec(kind="external-service", dim=dim, endpoint=f"http://{host}:{port}/embed", timeout=5)


def test_external_service_normalizes(embed_server):
    v = embed_text(_remote_spec(embed_server), "abc")
    np.testing.assert_allclose(v, normalize([3.0, 1.0, 0.0, 0.0]))


def test_external_service_concurrent_calls(embed_server):
    spec = _remote_spec(embed_server)
    texts = ["x" * n for n in range(1, 21)]
    with ThreadPoolExecutor(8) as pool:
        got = list(pool.map(lambda t: embed_text(spec, t), texts))
    for t, v in zip(texts, got):
        np.testing.assert_allclose(v, normalize([len(t), 1.0, 0.0, 0.0]))


def test_external_service_wrong_dim(embed_server):
    with pytest.raises(ServiceError):
        embed_text(_remote_spec(embed_server, dim=8), "abc")


def test_external_service_http_error(embed_server):
    embed_server.status = 503
    with pytest.raises(ServiceError):
        embed_text(_remote_spec(embed_server), "abc")


def test_external_service_unreachable():
    spec = EmbedderSpec(kind="external-service", dim=4, endpoint="http://127.0.0.1:9/embed", timeout=1)
    with pytest.raises(ServiceError):
        embed_text(spec, "abc")
