"""Operator CLI: build the knowledge base, solve one problem, run benchmarks,
and inspect saved search trees.

Commands::

    steptree build-kb CORPUS_DIR --out KB_PATH [engine flags]
    steptree solve PROBLEM_FILE [--run-dir DIR] [engine flags]
    steptree bench DATASET_DIR --method M --out DIR [engine flags]
    steptree inspect-tree TREE_PATH_OR_RUN_DIR

Every engine setting is a flag with the same name as its config-file key
(dashes for underscores); precedence is flags > config file > environment >
defaults, with environment reserved for secrets (RPM_API_KEY, RPM_API_BASE).

Corpus files for build-kb are ``*.corpus.json``::

    {"problem": {<problem interchange object>}, "category": "...",
     "solution_steps": ["...", ...] | null, "solution_code": "..." | null}

When ``solution_steps`` is missing the gateway decomposes ``solution_code``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import METHODS, compare_reports, compare_reports_csv, load_bench_report, run_bench, write_bench_report
from .config import EngineConfig
from .errors import SteptreeError, ValidationError
from .kb import build_kb, save_kb
from .problem import Problem, Step, load_problem
from .search import run_search, write_run_dir

EXIT_OK = 0
EXIT_UNSOLVED = 1
EXIT_DATA_ERROR = 2
EXIT_SETUP_ERROR = 3

_ENGINE_FLAGS: list[tuple[str, dict]] = [
    ("rollout-max", dict(type=int, help="maximum search iterations")),
    ("branching-b", dict(type=int, help="candidate next steps per expansion")),
    ("ucb-beta", dict(type=float, help="exploration weight in the selection score")),
    ("kb-alpha", dict(type=float, help="retrieval prior weight in the selection score")),
    ("sim-threshold", dict(type=float, help="cosine threshold above which a sibling candidate is redundant")),
    ("eval-gamma", dict(type=float, help="weight of the public-test pass rate in the blended reward")),
    ("llm-success-threshold", dict(type=float, help="model score needed (with all tests passing) to stop early")),
    ("seed", dict(type=int, help="RNG seed for tie-breaking")),
    ("simulate-all-children", dict(action="store_true", help="simulate every kept child instead of the best one")),
    ("no-kb", dict(action="store_true", help="ablation: force kb-alpha to 0 (pure UCB selection)")),
    ("no-sim-filter", dict(action="store_true", help="ablation: keep redundant expansion candidates")),
    ("no-exec-reward", dict(action="store_true", help="ablation: reward is the model score alone (gamma=0)")),
    ("no-localize", dict(action="store_true", help="ablation: skip error localization and prefix grafting")),
    ("model-name", dict(type=str, help="provider model name")),
    ("temperature", dict(type=float, help="sampling temperature")),
    ("top-p", dict(type=float, help="nucleus sampling mass")),
    ("llm-seed", dict(type=int, help="provider-side sampling seed")),
    ("api-base", dict(type=str, help="provider base URL (or RPM_API_BASE)")),
    ("mock-script", dict(type=str, help="path to a scripted-mock response file (offline mode)")),
    ("embedder-kind", dict(type=str, choices=["trigram", "remote"], help="embedding backend")),
    ("embedder-dim", dict(type=int, help="embedding dimension")),
    ("embedder-endpoint", dict(type=str, help="remote embedder URL")),
    ("per-test-timeout-ms", dict(type=int, help="sandbox per-test watchdog")),
    ("total-timeout-ms", dict(type=int, help="sandbox whole-job budget")),
    ("memory-mb", dict(type=int, help="sandbox address-space cap")),
    ("harness-path", dict(type=str, help="explicit path to the sandbox harness file")),
    ("kb", dict(type=str, help="knowledge-base file to load")),
    ("workers", dict(type=int, help="parallel problems during bench")),
    ("problem-budget-s", dict(type=float, help="wall-clock budget per problem during bench")),
]


def _add_engine_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="TOML config file")
    for name, kwargs in _ENGINE_FLAGS:
        parser.add_argument(f"--{name}", default=None, dest=name.replace("-", "_"), **kwargs)


def _engine_config(args: argparse.Namespace) -> EngineConfig:
    overrides = {name.replace("-", "_"): getattr(args, name.replace("-", "_")) for name, _ in _ENGINE_FLAGS}
    return EngineConfig.load(config_file=args.config, overrides=overrides)


def cmd_build_kb(args: argparse.Namespace) -> int:
    config = _engine_config(args)
    corpus_dir = Path(args.corpus_dir)
    files = sorted(corpus_dir.glob("*.corpus.json"))
    if not files:
        print(f"error: no *.corpus.json files under {corpus_dir}", file=sys.stderr)
        return EXIT_DATA_ERROR
    embedder = config.make_embedder()
    gateway = None
    corpus = []
    for path in files:
        raw = json.loads(path.read_text(encoding="utf-8"))
        problem = Problem.from_dict(raw["problem"])
        category = raw.get("category")
        steps_raw = raw.get("solution_steps")
        if steps_raw:
            steps = [Step(index=i + 1, text=t) for i, t in enumerate(steps_raw)]
        else:
            code = raw.get("solution_code")
            if not code:
                print(f"error: {path.name}: neither solution_steps nor solution_code", file=sys.stderr)
                return EXIT_DATA_ERROR
            if gateway is None:
                gateway = config.make_deps().gateway
            steps = gateway.decompose_solution(problem, code)
        corpus.append((problem, steps, category))
    kb = build_kb(corpus, embedder)
    save_kb(kb, args.out)
    categories_used = sorted({c for _, _, c in corpus})
    print(f"problems: {len(corpus)}")
    print(f"entries: {len(kb)}")
    print(f"categories: {len(categories_used)} ({', '.join(categories_used)})")
    print(f"written: {args.out}")
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    config = _engine_config(args)
    problem = load_problem(args.problem)
    deps = config.make_deps()
    result = run_search(problem, deps, config.search_config())
    run_dir = Path(args.run_dir) if args.run_dir else Path("runs") / problem.id
    write_run_dir(result, run_dir)
    print(result.final_code)
    print(f"# solved_in_sandbox={result.solved_in_sandbox} iterations={result.iterations_used} run_dir={run_dir}",
          file=sys.stderr)
    return EXIT_OK if result.solved_in_sandbox else EXIT_UNSOLVED


def cmd_bench(args: argparse.Namespace) -> int:
    config = _engine_config(args)
    deps = config.make_deps()
    report = run_bench(
        args.dataset_dir,
        args.method,
        config.search_config(),
        deps,
        workers=config.workers,
        budget_s=config.problem_budget_s,
    )
    out_dir = Path(args.out)
    write_bench_report(report, out_dir)
    print(f"method: {report.method}")
    print(f"problems: {len(report.records)}")
    print(f"pass@1: {report.pass_at_1}")
    print(f"mean_tokens: {report.mean_tokens}")
    if args.compare_with:
        prior = load_bench_report(args.compare_with)
        table = compare_reports(prior, report)
        print(table)
        (out_dir / "comparison.txt").write_text(table + "\n", encoding="utf-8")
        (out_dir / "comparison.csv").write_text(compare_reports_csv(prior, report), encoding="utf-8")
    return EXIT_OK


def _load_tree_file(path: Path) -> tuple[dict, dict | None]:
    if path.is_dir():
        tree_path = path / "tree.json"
        result_path = path / "result.json"
    else:
        tree_path = path
        result_path = path.parent / "result.json"
    tree = json.loads(tree_path.read_text(encoding="utf-8"))
    result = None
    if result_path.is_file():
        result = json.loads(result_path.read_text(encoding="utf-8"))
    return tree, result


def cmd_inspect_tree(args: argparse.Namespace) -> int:
    tree, result = _load_tree_file(Path(args.tree))
    nodes = {n["id"]: n for n in tree["nodes"]}
    children = {n["id"]: n["children"] for n in tree["nodes"]}

    chosen: set[int] = set()
    if result and result.get("final_steps"):
        # Walk the final step texts down from the root to recover the chosen ids.
        cursor = 0
        chosen.add(cursor)
        for text in result["final_steps"]:
            next_id = next((c for c in children.get(cursor, []) if nodes[c]["step_text"] == text), None)
            if next_id is None:
                break
            chosen.add(next_id)
            cursor = next_id

    def render(node_id: int, depth: int) -> None:
        node = nodes[node_id]
        marker = "*" if node_id in chosen else " "
        text = node["step_text"] if node["step_text"] is not None else "(problem)"
        print(
            f"{marker} {'  ' * depth}[{node['id']}] Q={node['Q']:.4f} N={node['N']} "
            f"K={node['K']:.4f} {node['status']:<16} {text}"
        )
        for child in children.get(node_id, []):
            render(child, depth + 1)

    render(0, 0)
    if chosen:
        print("\n* = on the extracted best path")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steptree", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_kb = sub.add_parser("build-kb", help="embed a solved-problem corpus into a knowledge base file")
    p_kb.add_argument("corpus_dir")
    p_kb.add_argument("--out", required=True, help="output KB file")
    _add_engine_flags(p_kb)
    p_kb.set_defaults(func=cmd_build_kb)

    p_solve = sub.add_parser("solve", help="search for a solution to one problem")
    p_solve.add_argument("problem")
    p_solve.add_argument("--run-dir", default=None, help="output directory (default runs/<problem id>)")
    _add_engine_flags(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_bench = sub.add_parser("bench", help="evaluate a dataset directory and score pass@1")
    p_bench.add_argument("dataset_dir")
    p_bench.add_argument("--method", required=True, choices=list(METHODS))
    p_bench.add_argument("--out", required=True, help="report output directory")
    p_bench.add_argument("--compare-with", default=None, help="prior bench_report.jsonl to diff against")
    _add_engine_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_inspect = sub.add_parser("inspect-tree", help="render a saved search tree as text")
    p_inspect.add_argument("tree", help="tree.json or a run directory")
    p_inspect.set_defaults(func=cmd_inspect_tree)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_SETUP_ERROR if args.command == "solve" else EXIT_DATA_ERROR
    except SteptreeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SETUP_ERROR if args.command == "solve" else EXIT_DATA_ERROR
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SETUP_ERROR if args.command == "solve" else EXIT_DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
