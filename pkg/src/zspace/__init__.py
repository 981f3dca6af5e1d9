"""Z-Space tool filtering and orchestration core."""

from .embedding import EmbedderSpec, cosine, embed_text, normalize, solve_spd
from .fsww import FsswConfig, FsswTrace, fsww_enhance
from .intent import ExecutionPlan, ParsedIntent, PlanStep, RuleBasedParser, build_tree, parse_rule_based
from .registry import Registry, ToolRecord

__all__ = [
    "EmbedderSpec",
    "ExecutionPlan",
    "FsswConfig",
    "FsswTrace",
    "ParsedIntent",
    "PlanStep",
    "Registry",
    "RuleBasedParser",
    "ToolRecord",
    "build_tree",
    "cosine",
    "embed_text",
    "fsww_enhance",
    "normalize",
    "parse_rule_based",
    "solve_spd",
]

__version__ = "0.1.0"
