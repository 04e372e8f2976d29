"""Run a candidate function against test cases and emit JSON-line verdicts.

Usage: ``<interpreter> harness.py <job_file>``

The job file is JSON::

    {"code": "...", "entry_point": "f",
     "tests": [{"input_args": [...], "expected_output": ...,
                "comparison": {"kind": "exact"} | {"kind": "float", "abs_tol": 1e-6}}],
     "limits": {"per_test_timeout_ms": 5000}}

One verdict line per test, in order, on stdout::

    {"test_index": k, "status": "pass|wrong_answer|runtime_error|timeout",
     "actual": ..., "stderr_excerpt": "...", "elapsed_ms": n}

Candidate failures are data, not harness failures: a candidate that cannot
compile yields a single ``{"test_index": -1, "status": "runtime_error"}``
line and exit 0. Exit codes: 0 = protocol completed, 1 = job unreadable,
2 = internal harness fault. Candidate stdout is swallowed so it can never
corrupt the verdict stream; each test runs under its own watchdog so one
hung test cannot eat the remaining budget.

Stdlib only — this file must run standalone inside the sandbox.
"""

from __future__ import annotations

import io
import json
import sys
import threading
import time
import traceback

STDERR_EXCERPT_CAP = 4096
DEFAULT_PER_TEST_TIMEOUT_MS = 5000


def canonicalize(value):
    """Unify tuples and lists so JSON expectations match Python returns."""
    if isinstance(value, (list, tuple)):
        return [canonicalize(v) for v in value]
    if isinstance(value, dict):
        return {k: canonicalize(v) for k, v in value.items()}
    return value


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _float_eq(actual, expected, abs_tol: float) -> bool:
    if isinstance(expected, (list, tuple)):
        actual = canonicalize(actual)
        expected = canonicalize(expected)
        if not isinstance(actual, list) or len(actual) != len(expected):
            return False
        return all(_float_eq(a, e, abs_tol) for a, e in zip(actual, expected))
    if isinstance(expected, dict):
        if not isinstance(actual, dict) or set(actual) != set(expected):
            return False
        return all(_float_eq(actual[k], expected[k], abs_tol) for k in expected)
    if _is_number(expected) and _is_number(actual):
        return abs(actual - expected) <= abs_tol
    return canonicalize(actual) == canonicalize(expected)


def compare_values(actual, expected, comparison) -> bool:
    """Exact: structural equality after tuple/list canonicalization.
    Float: elementwise |a - e| <= abs_tol through containers.
    Incomparable shapes are a wrong answer, never an exception.
    """
    try:
        kind = comparison.get("kind", "exact") if isinstance(comparison, dict) else "exact"
        if kind == "float":
            abs_tol = float(comparison.get("abs_tol", 1e-6))
            return _float_eq(actual, expected, abs_tol)
        return canonicalize(actual) == canonicalize(expected)
    except Exception:
        return False


def _jsonable(value):
    try:
        json.dumps(value)
        return value
    except (TypeError, ValueError):
        return repr(value)


def _excerpt(text: str) -> str:
    return text[:STDERR_EXCERPT_CAP]


def _run_candidate(fn, args, timeout_ms: int):
    """Call fn(*args) in a daemon thread under a wall-clock watchdog."""
    box = {}

    def target():
        try:
            box["value"] = fn(*args)
        except BaseException:
            box["error"] = traceback.format_exc()

    worker = threading.Thread(target=target, daemon=True)
    start = time.monotonic()
    worker.start()
    worker.join(timeout_ms / 1000.0)
    elapsed_ms = int((time.monotonic() - start) * 1000)
    if worker.is_alive():
        return "timeout", None, "", elapsed_ms
    if "error" in box:
        return "runtime_error", None, box["error"], elapsed_ms
    return "ok", box.get("value"), "", elapsed_ms


def _emit(out, record) -> None:
    out.write(json.dumps(record, ensure_ascii=False) + "\n")
    out.flush()


def harness_main(argv) -> int:
    if len(argv) != 1:
        sys.stderr.write("usage: harness.py <job_file>\n")
        return 1
    try:
        with open(argv[0], "r", encoding="utf-8") as fh:
            job = json.load(fh)
        code = job["code"]
        entry_point = job["entry_point"]
        tests = job["tests"]
        limits = job.get("limits", {})
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        sys.stderr.write(f"unreadable job file: {exc}\n")
        return 1

    timeout_ms = int(limits.get("per_test_timeout_ms", DEFAULT_PER_TEST_TIMEOUT_MS))

    # Protocol lines go to the real stdout; candidate prints go nowhere.
    protocol_out = sys.stdout
    sys.stdout = io.StringIO()

    try:
        namespace = {"__name__": "__candidate__"}
        try:
            exec(compile(code, "<candidate>", "exec"), namespace)
            fn = namespace[entry_point]
            if not callable(fn):
                raise TypeError(f"{entry_point!r} is not callable")
        except BaseException:
            _emit(
                protocol_out,
                {
                    "test_index": -1,
                    "status": "runtime_error",
                    "actual": None,
                    "stderr_excerpt": _excerpt(traceback.format_exc()),
                    "elapsed_ms": 0,
                },
            )
            return 0

        for index, test in enumerate(tests, start=1):
            outcome, value, err, elapsed_ms = _run_candidate(fn, test["input_args"], timeout_ms)
            if outcome == "ok":
                ok = compare_values(value, test["expected_output"], test.get("comparison", {"kind": "exact"}))
                status = "pass" if ok else "wrong_answer"
                actual = _jsonable(canonicalize(value))
            else:
                status = outcome
                actual = None
            _emit(
                protocol_out,
                {
                    "test_index": index,
                    "status": status,
                    "actual": actual,
                    "stderr_excerpt": _excerpt(err),
                    "elapsed_ms": elapsed_ms,
                },
            )
        return 0
    except Exception:
        sys.stderr.write("internal harness fault:\n" + traceback.format_exc())
        return 2
    finally:
        sys.stdout = protocol_out


if __name__ == "__main__":
    sys.exit(harness_main(sys.argv[1:]))
