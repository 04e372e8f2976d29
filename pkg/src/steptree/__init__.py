"""Tree search over natural-language algorithmic steps for program synthesis.

Selection blends mean reward, UCB exploration, and a retrieval prior from a
knowledge base of solved-problem step prefixes; simulations are verified in
an execution sandbox, failures are localized to a step, and the verified
prefix is grafted back into the tree.
"""

from .bench import BenchRecord, BenchReport, compare_reports, run_bench
from .config import EngineConfig
from .embedding import RemoteEmbedder, TrigramEmbedder, cosine
from .gateway import (
    HttpChatBackend,
    LlmGateway,
    Reflection,
    ScriptedMockBackend,
    TokenLedger,
    TokenUsage,
    split_code_blocks,
)
from .kb import KnowledgeBase, build_kb, compose_context, load_kb, retrieval_score, save_kb
from .problem import (
    Comparison,
    Problem,
    Step,
    TestCase,
    join_steps,
    load_dataset,
    load_problem,
    save_problem,
    split_steps,
)
from .sandbox import Sandbox, SandboxLimits, SandboxReport, render_feedback
from .search import (
    SearchConfig,
    SearchDeps,
    SearchResult,
    SearchTree,
    SimulationOutcome,
    TreeNode,
    backpropagate,
    expand,
    extract_best_path,
    run_search,
    select_leaf,
    selection_score,
    simulate_evaluate,
    truncate_and_graft,
    write_run_dir,
)

__version__ = "0.1.0"

__all__ = [
    "BenchRecord",
    "BenchReport",
    "Comparison",
    "EngineConfig",
    "HttpChatBackend",
    "KnowledgeBase",
    "LlmGateway",
    "Problem",
    "Reflection",
    "RemoteEmbedder",
    "Sandbox",
    "SandboxLimits",
    "SandboxReport",
    "ScriptedMockBackend",
    "SearchConfig",
    "SearchDeps",
    "SearchResult",
    "SearchTree",
    "SimulationOutcome",
    "Step",
    "TestCase",
    "TokenLedger",
    "TokenUsage",
    "TreeNode",
    "TrigramEmbedder",
    "backpropagate",
    "build_kb",
    "compare_reports",
    "compose_context",
    "cosine",
    "expand",
    "extract_best_path",
    "join_steps",
    "load_dataset",
    "load_kb",
    "load_problem",
    "render_feedback",
    "retrieval_score",
    "run_bench",
    "run_search",
    "save_kb",
    "save_problem",
    "select_leaf",
    "selection_score",
    "simulate_evaluate",
    "split_code_blocks",
    "split_steps",
    "truncate_and_graft",
    "write_run_dir",
]
