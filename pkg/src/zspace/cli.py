"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .config import Settings, load_settings
from .embedding import DEFAULT_DIM, EmbedderSpec
from .errors import EmptyRegistry, ZSpaceError
from .evaluation import (
    MODES,
    export_vectors,
    generate_scenario,
    linear_fit_r2,
    read_export,
    distance_reduction,
    run_accuracy_eval,
    token_sweep,
)
from .intent import OPERATIONS, Lexicon, RuleBasedParser, SynonymDictionary
from .registry import Registry, read_records
from .retrieval import retrieve

log = logging.getLogger("zspace")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="zspace", description="Z-Space tool filtering and orchestration")
    p.add_argument("--config", help="flat JSON configuration file")
    p.add_argument("--registry", default="registry.jsonl", help="registry JSONL path (default: %(default)s)")
    p.add_argument("--embedder", choices=("deterministic-hash", "external-service"), default="deterministic-hash")
    p.add_argument("--dim", type=int, default=DEFAULT_DIM, help="embedding dimension")
    p.add_argument("--embed-seed", type=int, default=0, help="deterministic embedder seed")
    p.add_argument("--endpoint", help="embedding service URL (external-service embedder)")
    p.add_argument("--synonyms", help="synonym dictionary JSON (term -> canonical term)")
    p.add_argument("--verbs-dir", help="directory with create/query/update/delete.txt verb lists")
    p.add_argument("--nouns", help="noun lexicon, one term per line")
    p.add_argument("--stopwords", help="stopword list, one term per line")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("register", help="add tools from a JSONL file to the registry")
    r.add_argument("jsonl")

    q = sub.add_parser("query", help="rank registry tools for a query")
    q.add_argument("text")
    q.add_argument("--top-k", type=int)
    q.add_argument("--no-fsww", action="store_true")

    e = sub.add_parser("eval", help="run the synthetic evaluation")
    e.add_argument("--tools", type=int, default=200)
    e.add_argument("--instructions", type=int, default=100)
    e.add_argument("--seed", type=int, default=7)
    e.add_argument("--mode", choices=("all",) + MODES, default="all")
    e.add_argument("--format", choices=("json", "markdown"), default="json")
    e.add_argument("--sweep", action="store_true", help="also run the token-scaling sweep")

    x = sub.add_parser("export-vectors", help="write plan/tool vectors as JSONL")
    x.add_argument("path")
    x.add_argument("--tools", type=int, default=200)
    x.add_argument("--instructions", type=int, default=100)
    x.add_argument("--seed", type=int, default=7)
    x.add_argument("--executions", type=int, default=100)

    s = sub.add_parser("serve", help="serve plan execution as Server-Sent Events")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--host", default="127.0.0.1")
    return p


def _embedder(args) -> EmbedderSpec:
    try:
        return EmbedderSpec(kind=args.embedder, dim=args.dim, seed=args.embed_seed, endpoint=args.endpoint)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _parser(args) -> RuleBasedParser:
    synonyms = SynonymDictionary.load(args.synonyms) if args.synonyms else None
    verb_files = None
    if args.verbs_dir:
        verb_files = {op: Path(args.verbs_dir) / f"{op}.txt" for op in OPERATIONS}
        verb_files = {op: f for op, f in verb_files.items() if f.exists()}
    lexicon = Lexicon.from_files(verb_files, args.nouns, args.stopwords)
    return RuleBasedParser(synonyms, lexicon)


def _load_registry(args, embedder: EmbedderSpec) -> Registry:
    path = Path(args.registry)
    if not path.exists():
        raise EmptyRegistry(f"registry {path} does not exist; add tools with 'zspace register'")
    reg = Registry.load_jsonl(path, dim=embedder.dim, embedder=embedder)
    if len(reg) == 0:
        raise EmptyRegistry(f"registry {path} is empty")
    return reg


def cmd_register(args, settings: Settings, out) -> int:
    embedder = _embedder(args)
    path = Path(args.registry)
    reg = Registry.load_jsonl(path, dim=embedder.dim, embedder=embedder) if path.exists() else Registry(embedder.dim)
    added = 0
    for rec in read_records(args.jsonl, embedder):
        reg.register(rec)
        added += 1
    reg.save_jsonl(path)
    print(json.dumps({"registered": added, "total": len(reg), "registry": str(path)}), file=out)
    return EXIT_OK


def cmd_query(args, settings: Settings, out) -> int:
    embedder = _embedder(args)
    reg = _load_registry(args, embedder)
    cfg = settings.retrieval
    if args.top_k is not None:
        if args.top_k < 1:
            raise UsageError("--top-k must be >= 1")
        cfg = replace(cfg, top_k=args.top_k)
    if args.no_fsww:
        cfg = replace(cfg, use_fsww=False)
    intent = _parser(args).parse(args.text)
    for r in retrieve(intent, None, reg, cfg, embedder):
        print(json.dumps(r.to_dict()), file=out)
    return EXIT_OK


def _markdown(results: dict, sweep: dict | None) -> str:
    lines = ["| Method | Accuracy (%) | Token Consumption |", "| --- | --- | --- |"]
    for mode, res in results.items():
        lines.append(f"| {mode} | {100 * res['accuracy']:.2f} | {res['token_cost'][mode]:.2f} |")
    steps = sorted({int(k) for res in results.values() for k in res["per_step_accuracy"]})
    lines += ["", "| Method | " + " | ".join(f"Step={s}" for s in steps) + " |",
              "| --- |" + " --- |" * len(steps)]
    for mode, res in results.items():
        cells = [f"{100 * res['per_step_accuracy'].get(str(s), 0.0):.1f}" for s in steps]
        lines.append(f"| {mode} | " + " | ".join(cells) + " |")
    if sweep:
        lines += ["", "| Tools | " + " | ".join(sweep["modes"]) + " |", "| --- |" + " --- |" * len(sweep["modes"])]
        for i, n in enumerate(sweep["sizes"]):
            lines.append(f"| {n} | " + " | ".join(f"{sweep['cost'][m][i]:.1f}" for m in sweep["modes"]) + " |")
    return "\n".join(lines)


def cmd_eval(args, settings: Settings, out) -> int:
    if args.tools < 1 or args.instructions < 1:
        raise UsageError("--tools and --instructions must be >= 1")
    embedder = _embedder(args)
    scenario = generate_scenario(args.tools, args.instructions, args.seed, embedder)
    modes = MODES if args.mode == "all" else (args.mode,)
    parser = _parser(args)
    results = {m: run_accuracy_eval(scenario, settings.retrieval, m, parser).summary() for m in modes}
    sweep = None
    if args.sweep:
        sizes = [20, 120, 220, 320, 420, 520]
        cost = token_sweep(sizes, args.instructions, args.seed, settings.retrieval, embedder, modes, parser)
        sweep = {"sizes": sizes, "modes": list(modes), "cost": cost}
        if "full-injection" in cost:
            sweep["full_injection_r2"] = linear_fit_r2(sizes, cost["full-injection"])[2]
    if args.format == "markdown":
        print(_markdown(results, sweep), file=out)
    else:
        doc = {"seed": args.seed, "tools": args.tools, "instructions": args.instructions, "results": results}
        if sweep:
            doc["sweep"] = sweep
        print(json.dumps(doc, indent=2, sort_keys=True), file=out)
    return EXIT_OK


def cmd_export(args, settings: Settings, out) -> int:
    embedder = _embedder(args)
    scenario = generate_scenario(args.tools, args.instructions, args.seed, embedder)
    n = export_vectors(scenario, settings.retrieval, args.path, executions=args.executions, parser=_parser(args))
    raw, enhanced = distance_reduction(read_export(args.path))
    print(json.dumps({"plans": n, "path": args.path, "mean_distance_raw": raw,
                      "mean_distance_enhanced": enhanced}), file=out)
    return EXIT_OK


def cmd_serve(args, settings: Settings, out) -> int:
    from .server import make_server

    embedder = _embedder(args)
    reg = _load_registry(args, embedder)
    server = make_server(args.host, args.port, reg, embedder, settings, parser=_parser(args))
    host, port = server.server_address[:2]
    print(json.dumps({"listening": f"http://{host}:{port}/run"}), file=out, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


COMMANDS = {
    "register": cmd_register,
    "query": cmd_query,
    "eval": cmd_eval,
    "export-vectors": cmd_export,
    "serve": cmd_serve,
}


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a command is required")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        try:
            settings = load_settings(args.config)
        except (OSError, ValueError, TypeError) as exc:
            raise UsageError(f"bad --config: {exc}") from exc
        return COMMANDS[args.command](args, settings, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ZSpaceError, OSError, ValueError) as exc:
        print(f"zspace: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
