import json
import random
import threading

import pytest

from zspace.errors import CyclicPlan, UnassignedStep
from zspace.intent import ExecutionPlan, ParsedIntent, PlanStep
from zspace.orchestrator import (
    STEP_KEY,
    EventChannel,
    OrchestratorConfig,
    ProgressEvent,
    SimulatedExecutor,
    execute_plan,
    start_plan,
    stream_events,
    synthesize_report,
)


def plan_of(*steps):
    return ExecutionPlan(tuple(PlanStep(sid, f"step {sid}", tuple(deps), role) for sid, deps, role in steps))


def tools_for(plan):
    return {s.id: f"tool_{s.id}" for s in plan.steps}


def intent_for(plan):
    return ParsedIntent("test query", "query", "query", "order", ("order",), plan)


def test_independent_auxiliary_steps_share_a_tick():
    plan = plan_of(("a", [], "auxiliary"), ("b", [], "auxiliary"))
    report = execute_plan(plan, tools_for(plan), SimulatedExecutor(), OrchestratorConfig(max_parallel=2))
    assert report.makespan == 1
    assert report.steps["a"].start == report.steps["b"].start == 0


@pytest.mark.parametrize("n", [1, 3, 8])
def test_makespan_scales_with_pool(n):
    plan = plan_of(*[(f"s{i}", [], "auxiliary") for i in range(n)])
    wide = execute_plan(plan, tools_for(plan), SimulatedExecutor(), OrchestratorConfig(max_parallel=n))
    narrow = execute_plan(plan, tools_for(plan), SimulatedExecutor(), OrchestratorConfig(max_parallel=1))
    assert wide.makespan == 1
    assert narrow.makespan == n


def test_retries_then_success():
    plan = plan_of(("A", [], "core"), ("B", ["A"], "core"), ("C", ["B"], "core"))
    ex = SimulatedExecutor(fail_first={"tool_A": 2})
    report = execute_plan(plan, tools_for(plan), ex, OrchestratorConfig(retry_limit=2))
    assert report.steps["A"].attempts == 3
    assert report.statuses() == {"A": "ok", "B": "ok", "C": "ok"}
    assert report.success
    assert report.makespan == 5


def test_terminal_failure_skips_dependents():
    plan = plan_of(("A", [], "core"), ("B", ["A"], "core"), ("X", [], "core"))
    report = execute_plan(plan, tools_for(plan), SimulatedExecutor(fail_first={"tool_A": 9}))
    assert report.statuses() == {"A": "failed", "B": "skipped", "X": "ok"}
    assert report.steps["A"].attempts == 3
    assert report.steps["B"].attempts == 0
    assert not report.success


def test_staged_outputs_flow_to_dependents():
    plan = plan_of(("u", [], "auxiliary"), ("c", ["u"], "core"))
    report = execute_plan(plan, tools_for(plan), SimulatedExecutor(), inputs={"c": {"amount": 5}})
    assert report.steps["c"].staged_outputs["upstream"] == ["amount", "u"]


class RecordingExecutor:
    def __init__(self):
        self.seen = []
        self.lock = threading.Lock()

    def execute(self, tool_name, inputs):
        with self.lock:
            self.seen.append(dict(inputs))
        if len([s for s in self.seen if s[STEP_KEY] == inputs[STEP_KEY]]) == 1:
            raise RuntimeError("first attempt fails")
        return {"v": inputs[STEP_KEY]}


def test_retry_replays_identical_inputs():
    plan = plan_of(("a", [], "core"), ("b", ["a"], "core"))
    ex = RecordingExecutor()
    report = execute_plan(plan, tools_for(plan), ex, inputs={"b": {"k": 1}})
    assert report.success
    b_calls = [s for s in ex.seen if s[STEP_KEY] == "b"]
    assert len(b_calls) == 2 and b_calls[0] == b_calls[1] == {"a": {"v": "a"}, "k": 1, STEP_KEY: "b"}


def test_auxiliary_steps_go_first_when_pool_is_tight():
    plan = plan_of(("core1", [], "core"), ("aux1", [], "auxiliary"))
    report = execute_plan(plan, tools_for(plan), SimulatedExecutor(), OrchestratorConfig(max_parallel=1))
    assert report.steps["aux1"].start == 0 and report.steps["core1"].start == 1


def test_plan_errors():
    plan = plan_of(("a", ["b"], "core"), ("b", ["a"], "core"))
    with pytest.raises(CyclicPlan):
        execute_plan(plan, tools_for(plan), SimulatedExecutor())
    plan = plan_of(("a", [], "core"))
    with pytest.raises(UnassignedStep):
        execute_plan(plan, {}, SimulatedExecutor())


def test_empty_plan():
    report = execute_plan(ExecutionPlan(), {}, SimulatedExecutor())
    assert report.success and report.makespan == 0
    assert [e.type for e in report.event_log] == ["plan_finished"]
    for fmt in ("markdown-table", "json-summary", "text"):
        assert synthesize_report(report, intent_for(ExecutionPlan()), fmt)
    assert json.loads(synthesize_report(report, intent_for(ExecutionPlan()), "json-summary"))["steps"] == []


# -- events -------------------------------------------------------------------------


def test_single_step_event_sequence():
    plan = plan_of(("a", [], "core"))
    report = execute_plan(plan, tools_for(plan), SimulatedExecutor())
    assert [e.type for e in report.event_log] == ["step_started", "step_finished", "plan_finished"]


def test_retry_events_carry_attempts():
    plan = plan_of(("a", [], "core"))
    report = execute_plan(plan, tools_for(plan), SimulatedExecutor(fail_first={"tool_a": 1}))
    started = [e.attempt for e in report.event_log if e.type == "step_started"]
    assert started == [1, 2]
    assert [e.type for e in report.event_log] == [
        "step_started", "step_failed", "step_started", "step_finished", "plan_finished"]


def test_events_match_report_timestamps():
    plan = plan_of(("a", [], "auxiliary"), ("b", [], "auxiliary"), ("c", ["a", "b"], "core"), ("d", ["c"], "core"))
    ex = SimulatedExecutor(durations={"tool_a": 3, "tool_b": 1})
    report = execute_plan(plan, tools_for(plan), ex)
    stamps = [e.timestamp for e in report.event_log]
    assert stamps == sorted(stamps)
    for sid, r in report.steps.items():
        first = next(e for e in report.event_log if e.step_id == sid and e.type == "step_started")
        last = next(e for e in reversed(report.event_log) if e.step_id == sid and e.type == "step_finished")
        assert (first.timestamp, last.timestamp) == (r.start, r.end)
    assert report.steps["c"].start == 3


def test_subscribers_attaching_late_get_everything():
    plan = plan_of(*[(f"s{i}", [f"s{i - 1}"] if i else [], "core") for i in range(5)])
    fut, channel = start_plan(plan, tools_for(plan), SimulatedExecutor(failure_rate=0.3, seed=4))
    early = list(stream_events(channel))
    report = fut.result(timeout=10)
    late = list(channel.subscribe(replay=True, timeout=1))
    assert early == late == report.event_log
    assert early[-1].type == "plan_finished"


def test_channel_tail_subscription():
    ch = EventChannel()
    ch.publish(ProgressEvent("step_started", "a", 1, 0))
    tail = ch.subscribe(replay=False, timeout=1)
    ch.publish(ProgressEvent("plan_finished", None, 0, 1))
    assert [e.type for e in tail] == ["plan_finished"]
    with pytest.raises(RuntimeError):
        ch.publish(ProgressEvent("step_started", "b", 1, 2))


def test_sse_framing():
    plan = plan_of(("a", [], "core"))
    ev = execute_plan(plan, tools_for(plan), SimulatedExecutor()).event_log[0]
    frame = ev.to_sse()
    assert frame.startswith("event: step_started\ndata: ") and frame.endswith("\n\n")
    assert json.loads(frame.split("data: ", 1)[1]) == ev.to_dict()


# -- randomized DAGs ---------------------------------------------------------------------


def random_dag(rnd, max_steps=8):
    n = rnd.randint(1, max_steps)
    steps = []
    for i in range(n):
        deps = [f"s{j}" for j in range(i) if rnd.random() < 0.3]
        steps.append((f"s{i}", deps, rnd.choice(["core", "auxiliary"])))
    return plan_of(*steps)


def expected_statuses(plan, ex, retry_limit):
    """Scheduling-free oracle: a step's fate depends only on its own seeded draws and its ancestors."""
    out = {}
    for s in plan.steps:
        if any(out[d] != "ok" for d in s.depends_on):
            out[s.id] = "skipped"
            continue
        ok = any(ex._draw(f"tool_{s.id}", s.id, a) >= ex.failure_rate for a in range(1, retry_limit + 2))
        out[s.id] = "ok" if ok else "failed"
    return out


def check_report(plan, report, cfg, expected):
    by_id = {s.id: s for s in plan.steps}
    for sid, r in report.steps.items():
        assert r.attempts <= cfg.retry_limit + 1
        assert r.status == expected[sid]
        if r.start is not None:
            for d in by_id[sid].depends_on:
                dep = report.steps[d]
                assert dep.status == "ok" and dep.end <= r.start
    running = 0
    for ev in report.event_log:
        running += {"step_started": 1, "step_finished": -1, "step_failed": -1}.get(ev.type, 0)
        assert running <= cfg.max_parallel
    assert report.success == all(v == "ok" for v in expected.values())


def test_randomized_dags_small_sample():
    rnd = random.Random(99)
    for i in range(500):
        plan = random_dag(rnd)
        cfg = OrchestratorConfig(retry_limit=rnd.randint(0, 3), max_parallel=rnd.randint(1, 4))
        ex = SimulatedExecutor(seed=i, failure_rate=rnd.choice([0.0, 0.2, 0.5, 0.9]))
        report = execute_plan(plan, tools_for(plan), ex, cfg)
        check_report(plan, report, cfg, expected_statuses(plan, ex, cfg.retry_limit))


# -- reports ------------------------------------------------------------------------------


def test_markdown_rows_and_json_round_trip():
    plan = plan_of(("a", [], "auxiliary"), ("b", ["a"], "core"), ("c", ["b"], "core"))
    report = execute_plan(plan, tools_for(plan), SimulatedExecutor())
    md = synthesize_report(report, intent_for(plan), "markdown-table")
    rows = [ln for ln in md.splitlines() if ln.startswith("| ") and not ln.startswith("| step") and "---" not in ln]
    assert len(rows) == 3
    doc = json.loads(synthesize_report(report, intent_for(plan), "json-summary"))
    assert {s["step_id"]: s["status"] for s in doc["steps"]} == report.statuses()
    assert synthesize_report(report, intent_for(plan), "text") == synthesize_report(report, intent_for(plan), "text")
    with pytest.raises(ValueError):
        synthesize_report(report, intent_for(plan), "yaml")


def test_config_validation():
    with pytest.raises(ValueError):
        OrchestratorConfig(max_parallel=0)
    with pytest.raises(ValueError):
        OrchestratorConfig(retry_limit=-1)
