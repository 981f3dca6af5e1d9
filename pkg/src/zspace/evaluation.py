"""Synthetic scenarios, accuracy / token metrics and vector export.

The generator fabricates an enterprise-style tool registry from template
vocabularies and writes multi-step instructions whose ground-truth tools are
known by construction.  Instructions deliberately use surface synonyms
("voucher", "bulk", "generate") that only the synonym dictionary maps back to
the canonical tool vocabulary.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .embedding import EmbedderSpec, cosine
from .intent import RuleBasedParser
from .registry import Registry, ToolRecord
from .retrieval import RetrievalConfig, query_vectors, rank, score_heuristic, score_semantic

Mode = Literal["full-injection", "plain-rag", "fsww"]
MODES: tuple[Mode, ...] = ("full-injection", "plain-rag", "fsww")

# step count -> percent of instructions
STEP_MIX: dict[int, float] = {1: 40, 2: 30, 3: 15, 4: 10, 5: 3, 6: 2}

# canonical action -> (operation class, surface forms; first is canonical)
ACTIONS: dict[str, tuple[str, tuple[str, ...]]] = {
    "create": ("create", ("create", "generate", "make", "build", "add")),
    "query": ("query", ("query", "get", "find", "fetch", "search")),
    "update": ("update", ("update", "modify", "change", "edit")),
    "delete": ("delete", ("delete", "remove", "erase")),
    "issue": ("create", ("issue", "grant", "distribute")),
    "advance": ("update", ("advance", "push", "move")),
    "verify": ("query", ("verify", "check", "validate", "confirm")),
    "export": ("query", ("export", "download")),
    "bind": ("update", ("bind", "link", "attach")),
    "cancel": ("delete", ("cancel", "void", "revoke")),
    "approve": ("update", ("approve", "accept")),
    "refund": ("update", ("refund", "reimburse")),
    "sync": ("update", ("sync", "synchronize")),
    "reset": ("update", ("reset", "restore")),
    "import": ("create", ("import", "upload")),
}

# canonical entity -> (business domain, surface forms)
ENTITIES: dict[str, tuple[str, tuple[str, ...]]] = {
    "coupon": ("marketing", ("coupon", "voucher")),
    "order": ("trade", ("order",)),
    "product": ("catalog", ("product", "goods", "item", "commodity")),
    "user": ("member", ("user", "account", "customer", "buyer")),
    "shop": ("merchant", ("shop", "store", "outlet")),
    "merchant": ("merchant", ("merchant", "seller", "vendor")),
    "invoice": ("finance", ("invoice", "bill", "receipt")),
    "payment": ("finance", ("payment", "transaction")),
    "address": ("member", ("address", "location")),
    "cart": ("trade", ("cart", "basket")),
    "rider": ("logistics", ("rider", "courier", "driver")),
    "delivery": ("logistics", ("delivery", "shipment", "dispatch")),
    "review": ("content", ("review", "comment", "rating")),
    "campaign": ("marketing", ("campaign", "event")),
    "inventory": ("catalog", ("inventory", "stock")),
    "category": ("catalog", ("category", "catalog")),
    "promotion": ("marketing", ("promotion", "discount", "deal")),
    "settlement": ("finance", ("settlement", "payout")),
    "ticket": ("service", ("ticket", "complaint")),
    "membership": ("member", ("membership", "subscription")),
    "points": ("member", ("points", "credits")),
    "notification": ("content", ("notification", "message", "alert")),
    "package": ("logistics", ("package", "parcel")),
    "menu": ("catalog", ("menu",)),
    "dish": ("catalog", ("dish", "meal")),
}

QUALIFIERS: dict[str, tuple[str, ...]] = {
    "test": ("test", "sample", "dummy"),
    "batch": ("batch", "bulk"),
    "status": ("status", "state"),
    "detail": ("detail", "details", "info"),
    "config": ("config", "settings", "configuration"),
    "log": ("log", "history", "record"),
    "template": ("template", "preset", "blueprint"),
    "snapshot": ("snapshot", "backup"),
}
# qualifiers that read naturally after the entity ("order status")
_POSTFIX_QUALIFIERS = {"status", "detail", "config", "log", "snapshot"}

ENVIRONMENTS = ("daily", "pre", "staging", "sandbox")
PARAMS = ("operator", "env", "region", "channel", "amount", "quantity", "remark", "scene", "expire_time")
DETERMINERS = ("a", "the", "some", "")
TAILS = ("", "", "", " for testing", " in the sandbox", " please", " right away", " for the demo", " quickly")
JOINERS = (", ", ", then ", " and then ", " then ", "; ")


@dataclass(frozen=True)
class ToolSpec:
    action: str
    entity: str
    qualifier: str

    @property
    def name(self) -> str:
        return f"{self.action}_{self.entity}_{self.qualifier}"


@dataclass
class Instruction:
    text: str
    steps: list[str]

    def to_dict(self) -> dict:
        return {"text": self.text, "steps": list(self.steps)}


@dataclass
class SyntheticScenario:
    tools: Registry
    instructions: list[Instruction]
    seed: int
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)

    def step_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(len(i.steps) for i in self.instructions).items()))


def allocate_mix(n: int, mix: dict[int, float] = STEP_MIX) -> dict[int, int]:
    """Largest-remainder split of ``n`` instructions over the step-count mix."""
    total = sum(mix.values())
    quotas = {k: n * v / total for k, v in mix.items()}
    counts = {k: math.floor(q) for k, q in quotas.items()}
    leftover = n - sum(counts.values())
    for k in sorted(quotas, key=lambda k: (-(quotas[k] - counts[k]), k))[:leftover]:
        counts[k] += 1
    return counts


def _tool_record(spec: ToolSpec, rng: random.Random, embedder: EmbedderSpec) -> ToolRecord:
    op_class = ACTIONS[spec.action][0]
    domain = ENTITIES[spec.entity][0]
    params = [f"{spec.entity}_id"] + rng.sample(PARAMS, rng.randint(1, 4))
    summary = f"{spec.action} {spec.qualifier} {spec.entity}"
    description = (
        f"{spec.action} the {spec.qualifier} {spec.entity} for data generation. "
        f"parameters: {', '.join(params)}. returns the {spec.entity} {spec.qualifier} result."
    )
    # tags are coarse categories: entity, operation class and business domain
    return ToolRecord.build(
        embedder,
        name=spec.name,
        description=description,
        environment=rng.choice(ENVIRONMENTS),
        summary=summary,
        entity_tags=[spec.entity],
        capability_tags=[op_class, domain],
    )


def _surface(rng: random.Random, forms: Sequence[str], p_synonym: float) -> str:
    if len(forms) > 1 and rng.random() < p_synonym:
        return rng.choice(forms[1:])
    return forms[0]


def render_clause(spec: ToolSpec, rng: random.Random, p_synonym: float = 0.5) -> str:
    verb = _surface(rng, ACTIONS[spec.action][1], p_synonym)
    noun = _surface(rng, ENTITIES[spec.entity][1], p_synonym)
    qual = _surface(rng, QUALIFIERS[spec.qualifier], p_synonym)
    obj = f"{noun} {qual}" if spec.qualifier in _POSTFIX_QUALIFIERS else f"{qual} {noun}"
    det = rng.choice(DETERMINERS)
    words = [verb, det, obj] if det else [verb, obj]
    return " ".join(words) + rng.choice(TAILS)


def join_clauses(clauses: Sequence[str], rng: random.Random) -> str:
    if len(clauses) == 1:
        return clauses[0]
    text = clauses[0]
    for c in clauses[1:-1]:
        text += rng.choice(JOINERS) + c
    text += rng.choice((", and ", " and ", ", then ", " and then ")) + clauses[-1]
    return text[0].upper() + text[1:]


def generate_scenario(
    n_tools: int,
    n_instructions: int,
    seed: int = 0,
    embedder: EmbedderSpec | None = None,
    p_synonym: float = 0.5,
) -> SyntheticScenario:
    if n_tools < 1 or n_instructions < 1:
        raise ValueError("n_tools and n_instructions must be >= 1")
    embedder = embedder or EmbedderSpec()
    rng = random.Random(seed)
    space = [ToolSpec(a, e, q) for a in ACTIONS for e in ENTITIES for q in QUALIFIERS]
    if n_tools > len(space):
        raise ValueError(f"at most {len(space)} distinct synthetic tools")
    specs = rng.sample(space, n_tools)
    reg = Registry(embedder.dim)
    for spec in specs:
        reg.register(_tool_record(spec, rng, embedder))

    counts = allocate_mix(n_instructions)
    step_counts = [k for k, c in sorted(counts.items()) for _ in range(c)]
    rng.shuffle(step_counts)
    instructions = []
    for n in step_counts:
        # a repeated tool within one instruction is legitimate, so sample with replacement
        chosen = [rng.choice(specs) for _ in range(n)]
        text = join_clauses([render_clause(s, rng, p_synonym) for s in chosen], rng)
        instructions.append(Instruction(text, [s.name for s in chosen]))
    return SyntheticScenario(reg, instructions, seed, embedder)


def token_cost(text: str) -> int:
    """Whitespace token count used as a tokenizer-independent context-size proxy."""
    return len(text.split())


def tool_context(tool: ToolRecord) -> str:
    """Text injected into a model context for one tool."""
    return f"{tool.name}: {tool.description}"


@dataclass
class EvalResult:
    mode: str
    accuracy: float
    correct_steps: int
    total_steps: int
    per_step_accuracy: dict[int, float]
    step_level_accuracy: dict[int, float]
    token_cost: dict[str, float]
    records: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "accuracy": self.accuracy,
            "correct_steps": self.correct_steps,
            "total_steps": self.total_steps,
            "per_step_accuracy": {str(k): v for k, v in self.per_step_accuracy.items()},
            "step_level_accuracy": {str(k): v for k, v in self.step_level_accuracy.items()},
            "token_cost": self.token_cost,
        }


def _select(mode: Mode, parser: RuleBasedParser, scenario: SyntheticScenario, cfg: RetrievalConfig,
            instr: Instruction, all_context_cost: int) -> dict:
    intent = parser.parse(instr.text)
    steps = list(intent.plan.steps)
    reg = scenario.tools
    picks: list[str | None] = []
    context_tools: list[str] = []
    for step in steps:
        heuristic = score_heuristic(intent, reg, step)
        if mode == "full-injection":
            zeros = [(name, 0.0) for name, _ in heuristic]
            ranked = rank(zeros, heuristic, 1.0, 1)
        else:
            run_cfg = RetrievalConfig(cfg.top_k, cfg.heuristic_weight, cfg.fsww, mode == "fsww")
            vecs = query_vectors(intent, step, scenario.embedder, run_cfg)
            ranked = rank(score_semantic(vecs.enhanced, reg), heuristic, cfg.heuristic_weight, cfg.top_k)
            context_tools.extend(r.name for r in ranked)
        picks.append(ranked[0].name if ranked else None)

    expected = instr.steps
    hits = [i < len(picks) and picks[i] == name for i, name in enumerate(expected)]
    # every step's selection call carries the query plus its own candidate list
    if mode == "full-injection":
        cost = token_cost(instr.text) + all_context_cost
    else:
        cost = token_cost(instr.text) + sum(token_cost(tool_context(reg[n])) for n in context_tools)
    return {
        "text": instr.text,
        "expected": list(expected),
        "selected": picks,
        "parsed_steps": len(steps),
        "correct": sum(hits),
        "success": all(hits) and len(picks) == len(expected),
        "tokens": cost,
    }


def run_accuracy_eval(
    scenario: SyntheticScenario,
    cfg: RetrievalConfig | None = None,
    mode: Mode = "fsww",
    parser: RuleBasedParser | None = None,
    workers: int = 4,
) -> EvalResult:
    """Score top-1 tool selection per instruction step.

    ``accuracy`` is correct steps over expected steps.  ``per_step_accuracy``
    maps a step count to the fraction of instructions of that length whose
    every step was selected correctly (task-level execution accuracy);
    ``step_level_accuracy`` is the step-wise rate within each length.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    cfg = cfg or RetrievalConfig()
    parser = parser or RuleBasedParser()
    all_context_cost = sum(token_cost(tool_context(t)) for t in scenario.tools)

    def one(instr: Instruction) -> dict:
        return _select(mode, parser, scenario, cfg, instr, all_context_cost)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        records = list(pool.map(one, scenario.instructions))

    correct = sum(r["correct"] for r in records)
    total = sum(len(r["expected"]) for r in records)
    by_len: dict[int, list[dict]] = defaultdict(list)
    for r in records:
        by_len[len(r["expected"])].append(r)
    per_step = {n: sum(r["success"] for r in rs) / len(rs) for n, rs in sorted(by_len.items())}
    step_level = {
        n: sum(r["correct"] for r in rs) / sum(len(r["expected"]) for r in rs) for n, rs in sorted(by_len.items())
    }
    mean_tokens = sum(r["tokens"] for r in records) / len(records) if records else 0.0
    return EvalResult(
        mode=mode,
        accuracy=correct / total if total else 0.0,
        correct_steps=correct,
        total_steps=total,
        per_step_accuracy=per_step,
        step_level_accuracy=step_level,
        token_cost={mode: mean_tokens},
        records=records,
    )


def token_sweep(
    sizes: Sequence[int] = (20, 120, 220, 320, 420, 520),
    n_instructions: int = 100,
    seed: int = 0,
    cfg: RetrievalConfig | None = None,
    embedder: EmbedderSpec | None = None,
    modes: Sequence[Mode] = ("full-injection", "fsww"),
    parser: RuleBasedParser | None = None,
) -> dict[str, list[float]]:
    """Mean per-instruction context cost for each registry size."""
    out: dict[str, list[float]] = {m: [] for m in modes}
    for n in sizes:
        scenario = generate_scenario(n, n_instructions, seed, embedder)
        for m in modes:
            out[m].append(run_accuracy_eval(scenario, cfg, m, parser).token_cost[m])
    return out


def linear_fit_r2(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line through (x, y); returns slope, intercept and R^2."""
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


# -- vector export ------------------------------------------------------------------------


def export_vectors(
    scenario: SyntheticScenario,
    cfg: RetrievalConfig | None,
    path: str | Path,
    executions: int = 100,
    parser: RuleBasedParser | None = None,
) -> int:
    """Write plan and tool vectors as JSONL for external dimensionality reduction.

    Each plan record carries the FSWW-enhanced vector in ``vector`` and the
    raw statement embedding in ``raw_vector``; ``matched_id`` names the
    ground-truth tool.  Returns the number of plan records written.
    """
    cfg = cfg or RetrievalConfig()
    fsww_cfg = RetrievalConfig(cfg.top_k, cfg.heuristic_weight, cfg.fsww, True)
    parser = parser or RuleBasedParser()
    plans: list[dict] = []
    tools: dict[str, None] = {}
    for i, instr in enumerate(scenario.instructions):
        intent = parser.parse(instr.text)
        for j, (step, expected) in enumerate(zip(intent.plan.steps, instr.steps)):
            if len(plans) >= executions:
                break
            vecs = query_vectors(intent, step, scenario.embedder, fsww_cfg)
            plans.append({
                "kind": "plan",
                "id": f"{i}:{step.id}",
                "vector": [float(x) for x in vecs.enhanced],
                "raw_vector": [float(x) for x in vecs.raw],
                "matched_id": expected,
            })
            tools[expected] = None
        if len(plans) >= executions:
            break
    lines = [json.dumps(p) for p in plans]
    lines += [
        json.dumps({"kind": "tool", "id": name, "vector": [float(x) for x in scenario.tools[name].embedding],
                    "matched_id": None})
        for name in tools
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return len(plans)


def read_export(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def distance_reduction(records: Sequence[dict]) -> tuple[float, float]:
    """Mean cosine distance to the matched tool for raw and enhanced plan vectors."""
    tools = {r["id"]: r["vector"] for r in records if r["kind"] == "tool"}
    raw, enhanced = [], []
    for r in records:
        if r["kind"] != "plan":
            continue
        t = tools[r["matched_id"]]
        raw.append(1.0 - cosine(r["raw_vector"], t))
        enhanced.append(1.0 - cosine(r["vector"], t))
    return float(np.mean(raw)), float(np.mean(enhanced))
