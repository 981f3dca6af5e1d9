"""Fault-tolerant execution of a plan's tool calls as a dependency DAG.

Tool calls run on a bounded thread pool.  Timestamps come from a logical
clock: an attempt started at tick ``t`` on a tool of duration ``d`` ends at
``t + d``, so concurrency and makespan are reproducible regardless of how the
operating system schedules the worker threads.
"""

from __future__ import annotations

import hashlib
import json
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from typing import Any, Iterator, Literal, Mapping, Protocol

from .errors import UnassignedStep
from .intent import ExecutionPlan, ParsedIntent, topological_order

StepStatus = Literal["ok", "failed", "skipped"]
EventType = Literal["step_started", "step_finished", "step_failed", "plan_finished"]

STEP_KEY = "__step__"


class ToolExecutor(Protocol):
    def execute(self, tool_name: str, inputs: Mapping[str, Any]) -> Mapping[str, Any]:
        """Run a tool; raise to signal failure."""
        ...


class ToolFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class OrchestratorConfig:
    retry_limit: int = 2
    max_parallel: int = 4
    step_timeout: float | None = 30.0  # wall-clock seconds per attempt

    def __post_init__(self) -> None:
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.step_timeout is not None and self.step_timeout <= 0:
            raise ValueError("step_timeout must be positive")


@dataclass(frozen=True)
class ProgressEvent:
    type: EventType
    step_id: str | None
    attempt: int
    timestamp: int
    tool_name: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "type": self.type,
            "step_id": self.step_id,
            "attempt": self.attempt,
            "timestamp": self.timestamp,
        }
        if self.tool_name is not None:
            d["tool_name"] = self.tool_name
        if self.error is not None:
            d["error"] = self.error
        return d

    def to_sse(self) -> str:
        return f"event: {self.type}\ndata: {json.dumps(self.to_dict(), sort_keys=True)}\n\n"


@dataclass
class StepResult:
    step_id: str
    tool_name: str
    status: StepStatus = "skipped"
    attempts: int = 0
    staged_outputs: dict[str, Any] = field(default_factory=dict)
    start: int | None = None
    end: int | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "step_id": self.step_id,
            "tool_name": self.tool_name,
            "status": self.status,
            "attempts": self.attempts,
            "staged_outputs": self.staged_outputs,
            "start": self.start,
            "end": self.end,
            "error": self.error,
        }


@dataclass
class ExecutionReport:
    steps: dict[str, StepResult]
    success: bool
    event_log: list[ProgressEvent]
    makespan: int = 0

    def statuses(self) -> dict[str, str]:
        return {sid: r.status for sid, r in self.steps.items()}


class EventChannel:
    """Ordered, replayable broadcast of progress events.

    Subscribers may attach at any time; each gets events in publication order
    and the iteration ends after ``plan_finished``.
    """

    def __init__(self) -> None:
        self._events: list[ProgressEvent] = []
        self._cond = threading.Condition()
        self._closed = False

    def publish(self, event: ProgressEvent) -> None:
        with self._cond:
            if self._closed:
                raise RuntimeError("channel already closed")
            self._events.append(event)
            if event.type == "plan_finished":
                self._closed = True
            self._cond.notify_all()

    @property
    def events(self) -> list[ProgressEvent]:
        with self._cond:
            return list(self._events)

    def subscribe(self, replay: bool = True, timeout: float | None = None) -> Iterator[ProgressEvent]:
        """Iterate over events; without ``replay`` only events published after this call."""
        with self._cond:
            start = 0 if replay else len(self._events)
        return self._iterate(start, timeout)

    def _iterate(self, index: int, timeout: float | None) -> Iterator[ProgressEvent]:
        while True:
            with self._cond:
                if not self._cond.wait_for(lambda: index < len(self._events) or self._closed, timeout):
                    raise TimeoutError("no progress event within timeout")
                if index >= len(self._events):
                    return
                batch = self._events[index:]
            for ev in batch:
                yield ev
            index += len(batch)
            if batch[-1].type == "plan_finished":
                return


def stream_events(channel: EventChannel, replay: bool = True) -> Iterator[ProgressEvent]:
    return channel.subscribe(replay=replay)


def _duration(executor: ToolExecutor, tool_name: str) -> int:
    fn = getattr(executor, "duration", None)
    d = int(fn(tool_name)) if callable(fn) else 1
    if d < 1:
        raise ValueError(f"tool {tool_name!r} reported non-positive duration {d}")
    return d


def execute_plan(
    plan: ExecutionPlan,
    assignments: Mapping[str, str],
    executor: ToolExecutor,
    cfg: OrchestratorConfig | None = None,
    *,
    channel: EventChannel | None = None,
    inputs: Mapping[str, Mapping[str, Any]] | None = None,
) -> ExecutionReport:
    """Run every step's assigned tool respecting dependencies.

    Eligible steps (all dependencies ok) are launched at the current logical
    tick, auxiliary steps first, up to ``max_parallel`` at a time.  Failed
    attempts are retried with the same staged inputs; a step that exhausts its
    retries fails terminally and every transitive dependent is skipped.
    ``inputs`` optionally seeds per-step base inputs.
    """
    cfg = cfg or OrchestratorConfig()
    order = topological_order(plan)  # raises CyclicPlan / PlanError
    missing = [s.id for s in plan.steps if s.id not in assignments]
    if missing:
        raise UnassignedStep(f"no tool assigned to step(s) {missing}")

    channel = channel or EventChannel()
    log: list[ProgressEvent] = []

    def emit(ev: ProgressEvent) -> None:
        log.append(ev)
        channel.publish(ev)

    position = {s.id: i for i, s in enumerate(plan.steps)}
    dependents: dict[str, list[str]] = {s.id: [] for s in plan.steps}
    for s in plan.steps:
        for d in s.depends_on:
            dependents[d].append(s.id)

    results = {s.id: StepResult(s.id, assignments[s.id]) for s in plan.steps}
    state = {s.id: "pending" for s in plan.steps}
    staged: dict[str, dict[str, Any]] = {}
    step_inputs: dict[str, dict[str, Any]] = {}
    running: dict[str, tuple[int, Future]] = {}
    now = 0

    def skip_dependents(root: str) -> None:
        stack = list(dependents[root])
        while stack:
            sid = stack.pop()
            if state[sid] == "pending":
                state[sid] = "skipped"
                results[sid].status = "skipped"
                stack.extend(dependents[sid])

    with ThreadPoolExecutor(max_workers=cfg.max_parallel, thread_name_prefix="zspace-step") as pool:
        while True:
            eligible = [
                s for s in order
                if state[s.id] == "pending" and all(state[d] == "ok" for d in s.depends_on)
            ]
            eligible.sort(key=lambda s: (s.role != "auxiliary", position[s.id]))
            for s in eligible[: cfg.max_parallel - len(running)]:
                r = results[s.id]
                if s.id not in step_inputs:
                    base = dict((inputs or {}).get(s.id, {}))
                    for d in s.depends_on:
                        base[d] = staged[d]
                    base[STEP_KEY] = s.id
                    step_inputs[s.id] = base
                r.attempts += 1
                if r.start is None:
                    r.start = now
                state[s.id] = "running"
                emit(ProgressEvent("step_started", s.id, r.attempts, now, r.tool_name))
                fut = pool.submit(executor.execute, r.tool_name, dict(step_inputs[s.id]))
                running[s.id] = (now + _duration(executor, r.tool_name), fut)

            if not running:
                break
            now = min(end for end, _ in running.values())
            finishing = sorted((sid for sid, (end, _) in running.items() if end == now), key=position.__getitem__)
            for sid in finishing:
                _, fut = running.pop(sid)
                r = results[sid]
                try:
                    out = fut.result(timeout=cfg.step_timeout)
                    error = None
                except FutureTimeout:
                    error = f"timed out after {cfg.step_timeout}s"
                except Exception as exc:  # any tool failure counts as a failed attempt
                    error = f"{type(exc).__name__}: {exc}"
                if error is None:
                    r.status = "ok"
                    r.staged_outputs = dict(out or {})
                    r.end = now
                    r.error = None
                    staged[sid] = r.staged_outputs
                    state[sid] = "ok"
                    emit(ProgressEvent("step_finished", sid, r.attempts, now, r.tool_name))
                    continue
                r.error = error
                emit(ProgressEvent("step_failed", sid, r.attempts, now, r.tool_name, error))
                if r.attempts <= cfg.retry_limit:
                    state[sid] = "pending"
                else:
                    state[sid] = "failed"
                    r.status = "failed"
                    r.end = now
                    skip_dependents(sid)

    success = all(state[s.id] == "ok" for s in plan.steps)
    emit(ProgressEvent("plan_finished", None, 0, now))
    ordered = {s.id: results[s.id] for s in plan.steps}
    return ExecutionReport(ordered, success, log, now)


def start_plan(
    plan: ExecutionPlan,
    assignments: Mapping[str, str],
    executor: ToolExecutor,
    cfg: OrchestratorConfig | None = None,
    **kwargs: Any,
) -> tuple[Future, EventChannel]:
    """Run :func:`execute_plan` in the background; returns its future and event channel."""
    channel = kwargs.pop("channel", None) or EventChannel()
    runner = ThreadPoolExecutor(max_workers=1, thread_name_prefix="zspace-plan")
    fut = runner.submit(execute_plan, plan, assignments, executor, cfg, channel=channel, **kwargs)
    runner.shutdown(wait=False)
    return fut, channel


# -- simulated executor ---------------------------------------------------------------


class SimulatedExecutor:
    """Deterministic stand-in for real tools.

    Failures are decided per ``(tool, step, attempt)`` from a hash of the seed,
    so outcomes do not depend on thread scheduling.  ``fail_first`` forces the
    first N attempts of a tool to fail; ``durations`` sets logical durations.
    """

    def __init__(
        self,
        seed: int = 0,
        failure_rate: float = 0.0,
        fail_first: Mapping[str, int] | None = None,
        durations: Mapping[str, int] | None = None,
    ):
        if not 0.0 <= failure_rate <= 1.0:
            raise ValueError("failure_rate must lie in [0, 1]")
        self.seed = seed
        self.failure_rate = failure_rate
        self.fail_first = dict(fail_first or {})
        self.durations = dict(durations or {})
        self._calls: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()
        self.call_log: list[tuple[str, str, int]] = []

    def duration(self, tool_name: str) -> int:
        return self.durations.get(tool_name, 1)

    def _draw(self, tool_name: str, step: str, attempt: int) -> float:
        digest = hashlib.blake2b(f"{self.seed}|{tool_name}|{step}|{attempt}".encode(), digest_size=8).digest()
        return int.from_bytes(digest, "little") / 2.0**64

    def execute(self, tool_name: str, inputs: Mapping[str, Any]) -> Mapping[str, Any]:
        step = str(inputs.get(STEP_KEY, ""))
        with self._lock:
            attempt = self._calls.get((tool_name, step), 0) + 1
            self._calls[(tool_name, step)] = attempt
            self.call_log.append((tool_name, step, attempt))
        if attempt <= self.fail_first.get(tool_name, 0):
            raise ToolFailure(f"{tool_name} scripted failure {attempt}")
        if self.failure_rate and self._draw(tool_name, step, attempt) < self.failure_rate:
            raise ToolFailure(f"{tool_name} simulated failure on attempt {attempt}")
        upstream = sorted(k for k in inputs if k != STEP_KEY)
        return {"tool": tool_name, "step": step, "attempt": attempt, "upstream": upstream}


# -- result synthesis -------------------------------------------------------------------


ReportFormat = Literal["markdown-table", "json-summary", "text"]


def _outputs_text(outputs: Mapping[str, Any]) -> str:
    return json.dumps(outputs, sort_keys=True, default=str) if outputs else ""


def synthesize_report(report: ExecutionReport, intent: ParsedIntent, fmt: ReportFormat = "text") -> str:
    """Deterministic rendering of an execution report."""
    descriptions = {s.id: s.description for s in intent.plan.steps}
    rows = list(report.steps.values())
    if fmt == "json-summary":
        doc = {
            "query": intent.query,
            "operation": intent.operation,
            "target_object": intent.target_object,
            "success": report.success,
            "makespan": report.makespan,
            "steps": [dict(r.to_dict(), description=descriptions.get(r.step_id, "")) for r in rows],
        }
        return json.dumps(doc, sort_keys=True, indent=2, default=str)
    if fmt == "markdown-table":
        lines = [
            f"**Query:** {intent.query}" if intent.query else "**Query:** (none)",
            "",
            "| step | description | tool | status | attempts | outputs |",
            "| --- | --- | --- | --- | --- | --- |",
        ]
        for r in rows:
            cells = [r.step_id, descriptions.get(r.step_id, ""), r.tool_name, r.status, str(r.attempts),
                     _outputs_text(r.staged_outputs)]
            lines.append("| " + " | ".join(c.replace("|", "\\|") for c in cells) + " |")
        lines += ["", f"**Overall:** {'success' if report.success else 'failure'}"]
        return "\n".join(lines) + "\n"
    if fmt == "text":
        lines = [f"Query: {intent.query}", f"Overall: {'success' if report.success else 'failure'}"]
        for r in rows:
            line = f"- {r.step_id} [{r.status}] {r.tool_name} (attempts={r.attempts})"
            if r.staged_outputs:
                line += f" -> {_outputs_text(r.staged_outputs)}"
            lines.append(line)
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")
