"""Structured intents, execution plans and a deterministic rule-based parser.

The parser stands in for an LLM intent agent: it picks an operation from a
verb lexicon, a target object from a noun lexicon, extracts normalized
keywords and splits the query into ordered plan steps on sequence markers.
External providers plug in through :class:`IntentProvider`; their output is
validated and rejected in favour of the rule-based parse when it is invalid.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal, Mapping, Protocol, Sequence

from .embedding import tokenize
from .errors import CyclicPlan, EmptyQuery, PlanError, ProviderError

log = logging.getLogger(__name__)

Operation = Literal["create", "query", "update", "delete"]
Role = Literal["core", "auxiliary"]
OPERATIONS: tuple[str, ...] = ("create", "query", "update", "delete")

# Prepositions that introduce a party the action is performed for/with.
_PARTY_PREPS = {"to", "for", "using", "with"}
_PARTY_DETS = {"the", "a", "an", "this", "that", "their", "his", "her", "its", "our", "my"}
# Entities that need an explicit lookup before an action can target them.
LOOKUP_ENTITIES = ("user",)

_SPLIT_RE = re.compile(r"(?:[,;]|\b(?:and|then)\b|(?:^|\s)\d+[.)](?=\s))", re.IGNORECASE)


# -- data model -----------------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    id: str
    description: str
    depends_on: tuple[str, ...] = ()
    role: Role = "core"
    keywords: tuple[str, ...] = ()
    operation: Operation = "query"
    target_object: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "description": self.description,
            "depends_on": list(self.depends_on),
            "role": self.role,
            "keywords": list(self.keywords),
            "operation": self.operation,
            "target_object": self.target_object,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> PlanStep:
        return cls(
            id=d["id"],
            description=d.get("description", ""),
            depends_on=tuple(d.get("depends_on", ())),
            role=d.get("role", "core"),
            keywords=tuple(d.get("keywords", ())),
            operation=d.get("operation", "query"),
            target_object=d.get("target_object", ""),
        )


@dataclass(frozen=True)
class ExecutionPlan:
    steps: tuple[PlanStep, ...] = ()

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.steps]

    def step(self, step_id: str) -> PlanStep:
        for s in self.steps:
            if s.id == step_id:
                return s
        raise KeyError(step_id)

    def validate(self, *, strict_order: bool = True) -> None:
        """Raise unless every dependency is known and the graph is acyclic.

        With ``strict_order`` a step may only depend on steps declared before it.
        """
        ids = self.ids
        if len(set(ids)) != len(ids):
            raise PlanError("duplicate step ids")
        known = set(ids)
        for s in self.steps:
            for dep in s.depends_on:
                if dep == s.id:
                    raise CyclicPlan(f"step {s.id!r} depends on itself")
                if dep not in known:
                    raise PlanError(f"step {s.id!r} depends on unknown step {dep!r}")
        topological_order(self)
        if strict_order:
            seen: set[str] = set()
            for s in self.steps:
                late = [d for d in s.depends_on if d not in seen]
                if late:
                    raise PlanError(f"step {s.id!r} depends on later step(s) {late}")
                seen.add(s.id)

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps]}


def topological_order(plan: ExecutionPlan) -> list[PlanStep]:
    """Kahn's algorithm; ties resolved by declaration order."""
    by_id = {s.id: s for s in plan.steps}
    indegree = {s.id: 0 for s in plan.steps}
    children: dict[str, list[str]] = {s.id: [] for s in plan.steps}
    for s in plan.steps:
        for dep in s.depends_on:
            if dep not in by_id:
                raise PlanError(f"step {s.id!r} depends on unknown step {dep!r}")
            if dep == s.id:
                raise CyclicPlan(f"step {s.id!r} depends on itself")
            indegree[s.id] += 1
            children[dep].append(s.id)
    position = {s.id: i for i, s in enumerate(plan.steps)}
    ready = sorted((i for i, d in indegree.items() if d == 0), key=position.__getitem__)
    order: list[PlanStep] = []
    while ready:
        sid = ready.pop(0)
        order.append(by_id[sid])
        for child in children[sid]:
            indegree[child] -= 1
            if indegree[child] == 0:
                ready.append(child)
        ready.sort(key=position.__getitem__)
    if len(order) != len(plan.steps):
        stuck = sorted(i for i, d in indegree.items() if d > 0)
        raise CyclicPlan(f"dependency cycle among steps {stuck}")
    return order


@dataclass(frozen=True)
class ParsedIntent:
    query: str
    category: str
    operation: Operation
    target_object: str
    keywords: tuple[str, ...]
    plan: ExecutionPlan = field(default_factory=ExecutionPlan)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "category": self.category,
            "operation": self.operation,
            "target_object": self.target_object,
            "keywords": list(self.keywords),
            "plan": self.plan.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ParsedIntent:
        steps = tuple(PlanStep.from_dict(s) for s in d.get("plan", {}).get("steps", ()))
        return cls(
            query=d.get("query", ""),
            category=d.get("category", ""),
            operation=d["operation"],
            target_object=d.get("target_object", ""),
            keywords=tuple(d.get("keywords", ())),
            plan=ExecutionPlan(steps),
        )


@dataclass
class IntentNode:
    node: ParsedIntent
    role: Role = "core"
    children: list[IntentNode] = field(default_factory=list)
    step_id: str | None = None


IntentTree = IntentNode


def validate_intent(intent: ParsedIntent) -> None:
    """Raise if ``intent`` breaks any data-model invariant."""
    if intent.operation not in OPERATIONS:
        raise PlanError(f"unknown operation {intent.operation!r}")

    def check_keywords(kws: Sequence[str], where: str) -> None:
        if len(set(kws)) != len(kws):
            raise PlanError(f"duplicate keywords in {where}")
        for k in kws:
            if not isinstance(k, str) or not k or k != k.lower():
                raise PlanError(f"keyword {k!r} in {where} is not a non-empty lowercase string")

    check_keywords(intent.keywords, "intent")
    for s in intent.plan.steps:
        check_keywords(s.keywords, f"step {s.id!r}")
        if s.role not in ("core", "auxiliary"):
            raise PlanError(f"step {s.id!r} has unknown role {s.role!r}")
        if s.operation not in OPERATIONS:
            raise PlanError(f"step {s.id!r} has unknown operation {s.operation!r}")
    intent.plan.validate()


# -- vocabulary -----------------------------------------------------------------


class SynonymDictionary:
    """Term -> canonical term mapping; lookups are idempotent by construction."""

    def __init__(self, mapping: Mapping[str, str] | None = None):
        raw = {k.strip().lower(): v.strip().lower() for k, v in (mapping or {}).items()}
        # resolve chains (a->b, b->c) so canonical(canonical(t)) == canonical(t)
        resolved: dict[str, str] = {}
        for term in raw:
            seen = {term}
            target = raw[term]
            while target in raw and target not in seen:
                seen.add(target)
                target = raw[target]
            if target != term:
                resolved[term] = target
        self._map = resolved

    def __len__(self) -> int:
        return len(self._map)

    def canonical(self, term: str) -> str:
        t = term.strip().lower()
        return self._map.get(t, t)

    def items(self):
        return self._map.items()

    @classmethod
    def load(cls, path: str | Path) -> SynonymDictionary:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
            raise ValueError(f"{path}: synonym file must be a JSON object of strings")
        return cls(data)


def normalize_terms(dictionary: SynonymDictionary, terms: Iterable[str]) -> list[str]:
    out: list[str] = []
    for t in terms:
        c = dictionary.canonical(t)
        if c and c not in out:
            out.append(c)
    return out


def _read_lines(text: str) -> list[str]:
    return [ln.strip().lower() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


@dataclass(frozen=True)
class Lexicon:
    verbs: Mapping[str, Operation]
    nouns: frozenset[str]
    stopwords: frozenset[str]

    @classmethod
    def default(cls) -> Lexicon:
        return _default_lexicon()

    @classmethod
    def from_files(
        cls,
        verb_files: Mapping[str, str | Path] | None = None,
        noun_file: str | Path | None = None,
        stopword_file: str | Path | None = None,
    ) -> Lexicon:
        """Load lexicons; any file left as ``None`` falls back to the bundled one."""
        base = cls.default()
        verbs = dict(base.verbs)
        if verb_files:
            verbs = {}
            for op in OPERATIONS:
                if op in verb_files:
                    for v in _read_lines(Path(verb_files[op]).read_text(encoding="utf-8")):
                        verbs.setdefault(v, op)  # type: ignore[arg-type]
        nouns = base.nouns
        if noun_file is not None:
            nouns = frozenset(_read_lines(Path(noun_file).read_text(encoding="utf-8")))
        stop = base.stopwords
        if stopword_file is not None:
            stop = frozenset(_read_lines(Path(stopword_file).read_text(encoding="utf-8")))
        return cls(verbs, nouns, stop)


def _data(name: str) -> str:
    return resources.files("zspace").joinpath("data").joinpath(name).read_text(encoding="utf-8")


_DEFAULT_LEXICON: Lexicon | None = None
_DEFAULT_SYNONYMS: SynonymDictionary | None = None


def _default_lexicon() -> Lexicon:
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        verbs: dict[str, Operation] = {}
        for op in OPERATIONS:
            for v in _read_lines(_data(f"verbs/{op}.txt")):
                verbs.setdefault(v, op)  # type: ignore[arg-type]
        _DEFAULT_LEXICON = Lexicon(
            verbs, frozenset(_read_lines(_data("nouns.txt"))), frozenset(_read_lines(_data("stopwords.txt")))
        )
    return _DEFAULT_LEXICON


def default_synonyms() -> SynonymDictionary:
    global _DEFAULT_SYNONYMS
    if _DEFAULT_SYNONYMS is None:
        _DEFAULT_SYNONYMS = SynonymDictionary(json.loads(_data("synonyms.json")))
    return _DEFAULT_SYNONYMS


# -- rule-based parser ------------------------------------------------------------


def category_for(operation: str) -> str:
    return "query" if operation == "query" else "data generation"


def split_clauses(query: str) -> list[str]:
    parts = (p.strip(" \t\n.!?") for p in _SPLIT_RE.split(query))
    return [p for p in parts if p and tokenize(p)]


class RuleBasedParser:
    def __init__(self, synonyms: SynonymDictionary | None = None, lexicon: Lexicon | None = None):
        self.synonyms = synonyms if synonyms is not None else default_synonyms()
        self.lexicon = lexicon if lexicon is not None else Lexicon.default()

    def _operation(self, tokens: Sequence[str]) -> Operation | None:
        for t in tokens:
            op = self.lexicon.verbs.get(t) or self.lexicon.verbs.get(self.synonyms.canonical(t))
            if op is not None:
                return op
        return None

    def _target(self, tokens: Sequence[str]) -> str | None:
        for t in tokens:
            c = self.synonyms.canonical(t)
            if c in self.lexicon.nouns:
                return c
        return None

    def keywords(self, tokens: Iterable[str]) -> tuple[str, ...]:
        """Normalized, stopword-free, deduplicated tokens; bare numbers are slot values and dropped."""
        stop = self.lexicon.stopwords
        kept = [t for t in tokens if t not in stop and not t.isdigit()]
        return tuple(k for k in normalize_terms(self.synonyms, kept) if k not in stop)

    def _party_lookup(self, tokens: Sequence[str]) -> str | None:
        """Entity introduced by a party preposition ("to the user") that needs a lookup."""
        for i, t in enumerate(tokens[:-1]):
            if t not in _PARTY_PREPS:
                continue
            j = i + 1
            if tokens[j] in _PARTY_DETS and j + 1 < len(tokens):
                j += 1
            c = self.synonyms.canonical(tokens[j])
            if c in LOOKUP_ENTITIES:
                return c
        return None

    def parse(self, query: str) -> ParsedIntent:
        if not query or not query.strip() or not tokenize(query):
            raise EmptyQuery("query is empty")
        all_tokens = tokenize(query)
        operation = self._operation(all_tokens) or "query"
        target = self._target(all_tokens)
        if target is None:
            target = next((k for k in self.keywords(all_tokens) if k not in self.lexicon.verbs), "")

        steps: list[PlanStep] = []
        previous_target = target
        clauses = split_clauses(query) or [query.strip()]
        for n, clause in enumerate(clauses):
            toks = tokenize(clause)
            op = self._operation(toks)
            is_last = n == len(clauses) - 1
            if op is None:
                op = steps[-1].operation if steps else operation
            clause_target = self._target(toks)
            if clause_target is None:
                # no object of its own ("then advance it"): inherit the previous one
                clause_target = previous_target

            party = self._party_lookup(toks)
            if party is not None and op != "query" and party != clause_target:
                steps.append(
                    PlanStep(
                        id=f"s{len(steps) + 1}",
                        description=f"query {party} information",
                        depends_on=(steps[-1].id,) if steps else (),
                        role="auxiliary",
                        keywords=self.keywords(["query", party, "information"]),
                        operation="query",
                        target_object=party,
                    )
                )

            role: Role = "auxiliary" if op == "query" and not is_last else "core"
            steps.append(
                PlanStep(
                    id=f"s{len(steps) + 1}",
                    description=clause,
                    depends_on=(steps[-1].id,) if steps else (),
                    role=role,
                    keywords=self.keywords(toks),
                    operation=op,
                    target_object=clause_target or "",
                )
            )
            previous_target = clause_target or previous_target

        return ParsedIntent(
            query=query.strip(),
            category=category_for(operation),
            operation=operation,
            target_object=target,
            keywords=self.keywords(all_tokens),
            plan=ExecutionPlan(tuple(steps)),
        )


def parse_rule_based(query: str, dictionary: SynonymDictionary | None = None) -> ParsedIntent:
    return RuleBasedParser(dictionary).parse(query)


# -- intent tree ------------------------------------------------------------------


def step_intent(step: PlanStep) -> ParsedIntent:
    lone = PlanStep(
        id=step.id,
        description=step.description,
        role=step.role,
        keywords=step.keywords,
        operation=step.operation,
        target_object=step.target_object,
    )
    return ParsedIntent(
        query=step.description,
        category=category_for(step.operation),
        operation=step.operation,
        target_object=step.target_object,
        keywords=step.keywords,
        plan=ExecutionPlan((lone,)),
    )


def build_tree(intent: ParsedIntent) -> IntentTree:
    order = topological_order(intent.plan)
    root = IntentNode(node=intent, role="core")
    root.children = [IntentNode(node=step_intent(s), role=s.role, step_id=s.id) for s in order]
    return root


# -- provider interface -------------------------------------------------------------


class IntentProvider(Protocol):
    def parse(self, query: str) -> ParsedIntent: ...


def resolve_intent(
    query: str,
    provider: IntentProvider | None = None,
    fallback: RuleBasedParser | None = None,
) -> tuple[ParsedIntent, str]:
    """Parse with ``provider`` when given, falling back to the rule-based parser.

    Returns the intent and the name of the route that produced it
    (``"provider"`` or ``"rule-based"``).
    """
    fallback = fallback or RuleBasedParser()
    if provider is not None:
        try:
            try:
                intent = provider.parse(query)
            except ProviderError:
                raise
            except Exception as exc:  # external code: anything can go wrong
                raise ProviderError(f"provider failed: {exc}") from exc
            if not isinstance(intent, ParsedIntent):
                raise ProviderError(f"provider returned {type(intent).__name__}, not ParsedIntent")
            try:
                validate_intent(intent)
            except (PlanError, CyclicPlan) as exc:
                raise ProviderError(f"provider returned an invalid intent: {exc}") from exc
            return intent, "provider"
        except ProviderError as exc:
            log.warning("intent provider rejected, using rule-based parser: %s", exc)
    return fallback.parse(query), "rule-based"
