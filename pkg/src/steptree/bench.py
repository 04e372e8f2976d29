"""Dataset-level evaluation: pass@1 on private tests plus token accounting.

Methods: the full engine, the engine with the retrieval prior disabled
(alpha = 0), and a direct-generation baseline issuing exactly one code
call per problem. The search only ever sees public tests; private tests
are held out for final scoring.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from .errors import EmptyDatasetError, MismatchedDatasetError
from .gateway import LlmGateway
from .problem import Problem, load_dataset
from .search import SearchConfig, SearchDeps, run_search

logger = logging.getLogger(__name__)

METHODS = ("rpm_mcts", "rpm_mcts_no_kb", "base_direct")


@dataclass
class BenchRecord:
    problem_id: str
    method: str
    passed_private: bool
    public_pass_rate: float
    tokens: dict[str, int]
    wall_ms: int
    iterations_used: int
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "method": self.method,
            "passed_private": self.passed_private,
            "public_pass_rate": self.public_pass_rate,
            "tokens": self.tokens,
            "wall_ms": self.wall_ms,
            "iterations_used": self.iterations_used,
            "error": self.error,
        }


@dataclass
class BenchReport:
    method: str
    records: list[BenchRecord]
    pass_at_1: float
    mean_tokens: float


def _empty_totals() -> dict[str, int]:
    return {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0, "calls": 0}


def _run_one(problem: Problem, method: str, config: SearchConfig, deps: SearchDeps, budget_s: float | None) -> BenchRecord:
    gateway = deps.gateway
    mark = gateway.ledger.mark()
    start = time.monotonic()
    code = None
    iterations = 0
    error = None
    try:
        if method == "base_direct":
            code = gateway.generate_code_direct(problem)
        else:
            run_config = replace(config, kb_alpha=0.0) if method == "rpm_mcts_no_kb" else config
            result = run_search(problem, deps, run_config, deadline_s=budget_s)
            code = result.final_code
            iterations = result.iterations_used
    except Exception as exc:  # a failed search scores zero, never kills the sweep
        logger.warning("search failed for %s: %s", problem.id, exc)
        error = f"{type(exc).__name__}: {exc}"

    public_rate = 0.0
    passed_private = False
    if code is not None:
        try:
            public_report = deps.sandbox.run_tests(code, problem.entry_point, problem.public_tests)
            public_rate = public_report.pass_rate
            if problem.private_tests:
                private_report = deps.sandbox.run_tests(code, problem.entry_point, problem.private_tests)
                passed_private = private_report.all_passed
            else:
                passed_private = public_report.all_passed  # no held-out tests to fail
        except Exception as exc:
            logger.warning("final scoring failed for %s: %s", problem.id, exc)
            error = error or f"{type(exc).__name__}: {exc}"

    return BenchRecord(
        problem_id=problem.id,
        method=method,
        passed_private=passed_private,
        public_pass_rate=public_rate,
        tokens=gateway.ledger.totals_since(mark),
        wall_ms=int((time.monotonic() - start) * 1000),
        iterations_used=iterations,
        error=error,
    )


def run_bench(
    dataset_dir: str | Path,
    method: str,
    config: SearchConfig,
    deps: SearchDeps,
    workers: int = 1,
    budget_s: float | None = 600.0,
) -> BenchReport:
    """Evaluate every problem in a dataset directory with one method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    problems = load_dataset(dataset_dir)
    if not problems:
        raise EmptyDatasetError(f"no *.problem.json files under {dataset_dir}")

    if workers <= 1:
        records = [_run_one(p, method, config, deps, budget_s) for p in problems]
    else:
        # Worker-local gateways keep per-problem token deltas exact; the
        # records land in the shared ledger through one serialized append.
        def job(problem: Problem) -> BenchRecord:
            local_gateway = LlmGateway(deps.gateway.backend)
            local_deps = SearchDeps(
                gateway=local_gateway, sandbox=deps.sandbox, embedder=deps.embedder, kb=deps.kb
            )
            record = _run_one(problem, method, config, local_deps, budget_s)
            for usage in local_gateway.ledger.records:
                deps.gateway.ledger.append(usage)
            return record

        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(job, problems))

    records.sort(key=lambda r: r.problem_id)
    n = len(records)
    pass_at_1 = sum(1 for r in records if r.passed_private) / n
    mean_tokens = sum(r.tokens["total_tokens"] for r in records) / n
    return BenchReport(method=method, records=records, pass_at_1=pass_at_1, mean_tokens=mean_tokens)


def write_bench_report(report: BenchReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "bench_report.jsonl").open("w", encoding="utf-8") as fh:
        for record in report.records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    summary = {
        "method": report.method,
        "problems": len(report.records),
        "pass_at_1": report.pass_at_1,
        "mean_tokens": report.mean_tokens,
    }
    (out_dir / "bench_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_bench_report(report_path: str | Path) -> BenchReport:
    records = []
    for line in Path(report_path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        records.append(
            BenchRecord(
                problem_id=raw["problem_id"],
                method=raw["method"],
                passed_private=raw["passed_private"],
                public_pass_rate=raw["public_pass_rate"],
                tokens=raw["tokens"],
                wall_ms=raw["wall_ms"],
                iterations_used=raw["iterations_used"],
                error=raw.get("error"),
            )
        )
    if not records:
        raise EmptyDatasetError(f"no records in {report_path}")
    records.sort(key=lambda r: r.problem_id)
    n = len(records)
    return BenchReport(
        method=records[0].method,
        records=records,
        pass_at_1=sum(1 for r in records if r.passed_private) / n,
        mean_tokens=sum(r.tokens["total_tokens"] for r in records) / n,
    )


def compare_reports(a: BenchReport, b: BenchReport) -> str:
    """Aligned per-problem delta table (b relative to a), ordered by id."""
    ids_a = {r.problem_id for r in a.records}
    ids_b = {r.problem_id for r in b.records}
    if ids_a != ids_b:
        raise MismatchedDatasetError(f"problem sets differ: only-a={sorted(ids_a - ids_b)} only-b={sorted(ids_b - ids_a)}")
    by_id_a = {r.problem_id: r for r in a.records}
    by_id_b = {r.problem_id: r for r in b.records}

    header = f"{'problem':<24} {'pass_a':>6} {'pass_b':>6} {'tok_a':>10} {'tok_b':>10} {'tok_delta':>10}"
    lines = [f"comparison: a={a.method} b={b.method}", header, "-" * len(header)]
    for problem_id in sorted(by_id_a):
        ra, rb = by_id_a[problem_id], by_id_b[problem_id]
        lines.append(
            f"{problem_id:<24} {str(ra.passed_private):>6} {str(rb.passed_private):>6} "
            f"{ra.tokens['total_tokens']:>10} {rb.tokens['total_tokens']:>10} "
            f"{rb.tokens['total_tokens'] - ra.tokens['total_tokens']:>10}"
        )
    lines.append("-" * len(header))
    lines.append(
        f"pass@1: {a.pass_at_1:.4f} -> {b.pass_at_1:.4f} (delta {b.pass_at_1 - a.pass_at_1:+.4f}); "
        f"mean tokens: {a.mean_tokens:.1f} -> {b.mean_tokens:.1f} (delta {b.mean_tokens - a.mean_tokens:+.1f})"
    )
    return "\n".join(lines)


def compare_reports_csv(a: BenchReport, b: BenchReport) -> str:
    ids_a = {r.problem_id for r in a.records}
    ids_b = {r.problem_id for r in b.records}
    if ids_a != ids_b:
        raise MismatchedDatasetError("problem sets differ")
    by_id_a = {r.problem_id: r for r in a.records}
    by_id_b = {r.problem_id: r for r in b.records}
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["problem_id", "passed_a", "passed_b", "tokens_a", "tokens_b", "tokens_delta"])
    for problem_id in sorted(by_id_a):
        ra, rb = by_id_a[problem_id], by_id_b[problem_id]
        writer.writerow(
            [
                problem_id,
                ra.passed_private,
                rb.passed_private,
                ra.tokens["total_tokens"],
                rb.tokens["total_tokens"],
                rb.tokens["total_tokens"] - ra.tokens["total_tokens"],
            ]
        )
    return buffer.getvalue()
