"""Isolated execution of candidate code against test cases.

Candidates run in a child process (`<interpreter> harness.py <job_file>`)
owned by this module: the harness emits one JSON verdict line per test and
this side enforces the total wall-clock budget and an address-space cap, so
a hostile candidate can never take the engine down. The harness lives in
the separate ``steptree-harness`` package; it is located via an explicit
path, the ``RPM_HARNESS_PATH`` environment variable, or the installed
package, in that order.
"""

from __future__ import annotations

import importlib.util
import json
import os
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .errors import SandboxSetupError
from .problem import TestCase

STDERR_EXCERPT_CAP = 4096

HARNESS_PATH_ENV = "RPM_HARNESS_PATH"

VERDICT_STATUSES = ("pass", "wrong_answer", "runtime_error", "timeout", "harness_error")


@dataclass
class SandboxLimits:
    per_test_timeout_ms: int = 5000
    total_timeout_ms: int = 20000
    memory_mb: int = 256

    def __post_init__(self):
        if self.per_test_timeout_ms <= 0 or self.total_timeout_ms <= 0 or self.memory_mb <= 0:
            raise ValueError("sandbox limits must be positive")


@dataclass
class ExecutionVerdict:
    test_index: int
    status: str
    actual_output: Any = None
    stderr_excerpt: str = ""


@dataclass
class SandboxReport:
    verdicts: list[ExecutionVerdict]
    pass_rate: float
    wall_time_ms: int
    feedback_text: str = ""

    @property
    def all_passed(self) -> bool:
        return all(v.status == "pass" for v in self.verdicts)

    def first_failure(self) -> ExecutionVerdict | None:
        for verdict in self.verdicts:
            if verdict.status != "pass":
                return verdict
        return None


def default_harness_path() -> Path:
    env = os.environ.get(HARNESS_PATH_ENV)
    if env:
        return Path(env)
    spec = importlib.util.find_spec("steptree_harness")
    if spec is not None and spec.origin:
        return Path(spec.origin).parent / "harness.py"
    raise SandboxSetupError(
        f"no harness found: set {HARNESS_PATH_ENV} or install the steptree-harness package"
    )


def _rlimit_preexec(memory_mb: int):
    def apply():
        import resource

        limit = memory_mb * 1024 * 1024
        try:
            resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
        except (ValueError, OSError):
            pass  # best-effort; the wall-clock budget still applies

    return apply


@dataclass
class Sandbox:
    limits: SandboxLimits = field(default_factory=SandboxLimits)
    harness_path: Path | None = None
    workdir: Path | None = None

    def resolve_harness(self) -> Path:
        path = self.harness_path or default_harness_path()
        if not path.is_file():
            raise SandboxSetupError(f"harness file not found: {path}")
        return path

    def run_tests(
        self,
        code: str,
        entry_point: str,
        tests: Sequence[TestCase],
        limits: SandboxLimits | None = None,
    ) -> SandboxReport:
        """Run every test in one child process; one verdict per test, in order."""
        if not tests:
            raise ValueError("tests must be nonempty")
        limits = limits or self.limits
        harness = self.resolve_harness()
        interpreter = sys.executable
        if not interpreter:
            raise SandboxSetupError("no Python interpreter available")

        job = {
            "code": code,
            "entry_point": entry_point,
            "tests": [t.to_dict() for t in tests],
            "limits": {"per_test_timeout_ms": limits.per_test_timeout_ms},
        }

        with tempfile.TemporaryDirectory(prefix="steptree-sbx-", dir=self.workdir) as scratch:
            job_path = Path(scratch) / "job.json"
            job_path.write_text(json.dumps(job), encoding="utf-8")
            start = time.monotonic()
            try:
                proc = subprocess.Popen(
                    [interpreter, "-I", str(harness), str(job_path)],
                    stdout=subprocess.PIPE,
                    stderr=subprocess.PIPE,
                    stdin=subprocess.DEVNULL,
                    cwd=scratch,
                    text=True,
                    start_new_session=True,
                    preexec_fn=_rlimit_preexec(limits.memory_mb) if os.name == "posix" else None,
                )
            except OSError as exc:
                raise SandboxSetupError(f"cannot spawn harness: {exc}") from exc

            killed_on_budget = False
            try:
                stdout, _ = proc.communicate(timeout=limits.total_timeout_ms / 1000.0)
            except subprocess.TimeoutExpired:
                killed_on_budget = True
                try:
                    os.killpg(proc.pid, signal.SIGKILL)
                except (ProcessLookupError, PermissionError):
                    proc.kill()
                try:
                    # A candidate that re-daemonized can keep the pipe open
                    # past the group kill; give up on its output after a beat.
                    stdout, _ = proc.communicate(timeout=5.0)
                except subprocess.TimeoutExpired:
                    proc.kill()
                    stdout = ""
            wall_time_ms = int((time.monotonic() - start) * 1000)

        verdicts = self._collect_verdicts(stdout, proc.returncode, killed_on_budget, len(tests))
        n_pass = sum(1 for v in verdicts if v.status == "pass")
        report = SandboxReport(
            verdicts=verdicts,
            pass_rate=round(n_pass / len(verdicts), 9),
            wall_time_ms=wall_time_ms,
        )
        report.feedback_text = render_feedback(report, tests)
        return report

    @staticmethod
    def _collect_verdicts(
        stdout: str, returncode: int | None, killed_on_budget: bool, n_tests: int
    ) -> list[ExecutionVerdict]:
        by_index: dict[int, dict[str, Any]] = {}
        compile_failure: dict[str, Any] | None = None
        for line in stdout.splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                continue  # corrupt line; the affected test falls through to harness_error
            if not isinstance(record, dict) or "test_index" not in record:
                continue
            if record["test_index"] == -1:
                compile_failure = record
            else:
                by_index[int(record["test_index"])] = record

        verdicts: list[ExecutionVerdict] = []
        for index in range(1, n_tests + 1):
            record = by_index.get(index)
            if record is not None:
                status = record.get("status")
                if status not in VERDICT_STATUSES:
                    status = "harness_error"
                verdicts.append(
                    ExecutionVerdict(
                        test_index=index,
                        status=status,
                        actual_output=record.get("actual"),
                        stderr_excerpt=str(record.get("stderr_excerpt", ""))[:STDERR_EXCERPT_CAP],
                    )
                )
            elif compile_failure is not None:
                verdicts.append(
                    ExecutionVerdict(
                        test_index=index,
                        status="runtime_error",
                        stderr_excerpt=str(compile_failure.get("stderr_excerpt", ""))[:STDERR_EXCERPT_CAP],
                    )
                )
            elif killed_on_budget:
                verdicts.append(
                    ExecutionVerdict(test_index=index, status="timeout", stderr_excerpt="total sandbox budget exceeded")
                )
            else:
                verdicts.append(
                    ExecutionVerdict(
                        test_index=index,
                        status="harness_error",
                        stderr_excerpt=f"no verdict line from harness (exit code {returncode})",
                    )
                )
        return verdicts


def render_feedback(report: SandboxReport, tests: Sequence[TestCase]) -> str:
    """Deterministic feedback summary for model consumption.

    Includes the pass rate and the first three failures with inputs,
    expected, and actual/error; never includes timings, so equal reports
    render byte-identically.
    """
    n = len(report.verdicts)
    n_pass = sum(1 for v in report.verdicts if v.status == "pass")
    lines = [f"PASS RATE: {report.pass_rate} ({n_pass}/{n} public tests passed)"]
    if n_pass == n:
        lines.append("ALL TESTS PASSED")
        return "\n".join(lines)
    failures = [v for v in report.verdicts if v.status != "pass"]
    for verdict in failures[:3]:
        test = tests[verdict.test_index - 1]
        entry = (
            f"FAILED TEST {verdict.test_index} [{verdict.status}]: "
            f"input_args={json.dumps(test.input_args, sort_keys=True)}, "
            f"expected={json.dumps(test.expected_output, sort_keys=True)}, "
            f"actual={json.dumps(verdict.actual_output, sort_keys=True, default=repr)}"
        )
        lines.append(entry)
        if verdict.stderr_excerpt:
            excerpt = verdict.stderr_excerpt.strip().splitlines()
            lines.extend(f"    {line}" for line in excerpt[-10:])
    if len(failures) > 3:
        lines.append(f"... and {len(failures) - 3} more failing tests")
    return "\n".join(lines)
