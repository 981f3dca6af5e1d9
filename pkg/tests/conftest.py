import numpy as np
import pytest

from zspace import EmbedderSpec, Registry, ToolRecord

ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects the one-line verdict each acceptance criterion prints."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def embedder():
    return EmbedderSpec(dim=32, seed=3)


def make_tool(embedder, name, entity=(), capability=(), summary=None, description=None):
    return ToolRecord.build(
        embedder,
        name=name,
        description=description or f"{name.replace('_', ' ')} tool",
        environment="daily",
        summary=summary or name.replace("_", " "),
        entity_tags=list(entity),
        capability_tags=list(capability),
    )


@pytest.fixture
def small_registry(embedder):
    reg = Registry(embedder.dim)
    reg.register(make_tool(embedder, "issue_coupon", ["coupon"], ["create", "marketing"]))
    reg.register(make_tool(embedder, "query_user_detail", ["user"], ["query", "member"]))
    reg.register(make_tool(embedder, "create_order", ["order"], ["create", "trade"]))
    reg.register(make_tool(embedder, "advance_order_status", ["order"], ["update", "trade"]))
    reg.register(make_tool(embedder, "create_test_product", ["product"], ["create", "catalog"]))
    return reg
