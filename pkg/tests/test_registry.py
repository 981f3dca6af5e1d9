import json
import threading

import numpy as np
import pytest

from zspace.embedding import EmbedderSpec, embed_text
from zspace.errors import DimMismatch, ParseError
from zspace.evaluation import generate_scenario
from zspace.registry import Registry, ToolRecord, tool_text

from conftest import make_tool


def test_register_and_index(embedder):
    reg = Registry(embedder.dim)
    reg.register(make_tool(embedder, "issue_coupon", ["Coupon", "coupon "], ["create"]))
    assert len(reg) == 1
    assert reg["issue_coupon"].entity_tags == ["coupon"]
    assert reg.tag_index == {"coupon": {"issue_coupon"}, "create": {"issue_coupon"}}


def test_reregister_replaces_tags(embedder):
    reg = Registry(embedder.dim)
    reg.register(make_tool(embedder, "a", ["coupon"], ["create"]))
    reg.register(make_tool(embedder, "b", ["order"], ["create"]))
    reg.register(make_tool(embedder, "a", ["user"], ["query"]))
    assert reg.lookup_by_tag("coupon") == set()
    assert reg.lookup_by_tag("create") == {"b"}
    assert reg.lookup_by_tag("user") == {"a"}
    assert reg.tag_index == reg.rebuild_tag_index()


def test_lookup_by_tag(small_registry):
    assert small_registry.lookup_by_tag("order") == {"create_order", "advance_order_status"}
    assert small_registry.lookup_by_tag("ORDER") == {"create_order", "advance_order_status"}
    assert small_registry.lookup_by_tag("nonexistent") == set()


def test_index_consistency_random_sequence(embedder, rng):
    reg = Registry(embedder.dim)
    tags = ["coupon", "order", "user", "shop", "create", "query", "update"]
    for _ in range(300):
        name = f"tool{int(rng.integers(0, 25))}"
        ent = list(rng.choice(tags, size=int(rng.integers(0, 3)), replace=False))
        cap = list(rng.choice(tags, size=int(rng.integers(0, 3)), replace=False))
        reg.register(make_tool(embedder, name, ent, cap))
        assert reg.tag_index == reg.rebuild_tag_index()


def test_dim_mismatch(embedder):
    reg = Registry(embedder.dim + 1)
    with pytest.raises(DimMismatch):
        reg.register(make_tool(embedder, "a"))


def test_record_validation(embedder):
    with pytest.raises(ValueError):
        ToolRecord("", "d", "e", "s", [], [], embed_text(embedder, "x"))
    with pytest.raises(ValueError):
        ToolRecord("a", "d", "e", "s", [], [], np.ones(embedder.dim))


def test_embedding_comes_from_summary_and_description(embedder):
    t = make_tool(embedder, "a", summary="issue coupon", description="issue a coupon to a user")
    np.testing.assert_array_equal(t.embedding, embed_text(embedder, "issue coupon issue a coupon to a user"))
    assert tool_text("s", "d") == "s d"


def test_round_trip(small_registry, tmp_path):
    path = tmp_path / "reg.jsonl"
    small_registry.save_jsonl(path)
    loaded = Registry.load_jsonl(path)
    assert loaded == small_registry
    for t in small_registry:
        assert np.max(np.abs(loaded[t.name].embedding - t.embedding)) <= 1e-12
    again = tmp_path / "again.jsonl"
    loaded.save_jsonl(again)
    assert path.read_bytes() == again.read_bytes()


def test_round_trip_541_tools(tmp_path):
    reg = generate_scenario(541, 1, seed=7).tools
    assert len(reg) == 541
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    reg.save_jsonl(p1)
    Registry.load_jsonl(p1).save_jsonl(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_jsonl_schema_keys(small_registry, tmp_path):
    path = tmp_path / "reg.jsonl"
    small_registry.save_jsonl(path)
    first = json.loads(path.read_text().splitlines()[0])
    assert list(first) == ["name", "description", "environment", "summary", "entityTags", "capabilityTags",
                           "embedding"]


def _line(**overrides):
    rec = {"name": "a", "description": "d", "environment": "e", "summary": "s",
           "entityTags": [], "capabilityTags": [], "embedding": [1.0, 0.0]}
    rec.update(overrides)
    return json.dumps({k: v for k, v in rec.items() if v is not None})


def test_parse_errors(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(_line() + "\n{not json\n")
    with pytest.raises(ParseError) as err:
        Registry.load_jsonl(path)
    assert err.value.line == 2

    path.write_text(_line(name=None) + "\n")
    with pytest.raises(ParseError) as err:
        Registry.load_jsonl(path)
    assert err.value.field == "name" and "name" in str(err.value)

    path.write_text(_line(embedding=[3.0, 4.0]) + "\n")
    with pytest.raises(ParseError) as err:
        Registry.load_jsonl(path)
    assert err.value.field == "embedding"

    path.write_text(_line() + "\n" + _line(name="b", embedding=[1.0, 0.0, 0.0]) + "\n")
    with pytest.raises(ParseError) as err:
        Registry.load_jsonl(path)
    assert err.value.line == 2


def test_missing_embedding_uses_embedder(tmp_path):
    spec = EmbedderSpec(dim=8)
    path = tmp_path / "raw.jsonl"
    path.write_text(_line(embedding=None) + "\n")
    with pytest.raises(ParseError):
        Registry.load_jsonl(path)
    reg = Registry.load_jsonl(path, embedder=spec)
    np.testing.assert_array_equal(reg["a"].embedding, embed_text(spec, "s d"))


def test_concurrent_writers_and_readers(embedder):
    reg = Registry(embedder.dim)
    tools = [make_tool(embedder, f"t{i}", [f"e{i % 7}"], [f"c{i % 3}"]) for i in range(200)]

    def writer(chunk):
        for t in chunk:
            reg.register(t)

    def reader():
        for _ in range(200):
            names, matrix = reg.embedding_matrix()
            assert matrix.shape == (len(names), embedder.dim)

    threads = [threading.Thread(target=writer, args=(tools[i::4],)) for i in range(4)]
    threads += [threading.Thread(target=reader) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(reg) == 200
    assert reg.tag_index == reg.rebuild_tag_index()
