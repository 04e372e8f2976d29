from __future__ import annotations

import os
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
HARNESS_FILE = REPO_ROOT / "harness" / "steptree_harness" / "harness.py"

# Resolve the in-repo harness for every test (and for CLI subprocesses).
os.environ.setdefault("RPM_HARNESS_PATH", str(HARNESS_FILE))

from steptree import Problem, Sandbox, SandboxLimits, TestCase, TrigramEmbedder  # noqa: E402


@pytest.fixture
def embedder() -> TrigramEmbedder:
    return TrigramEmbedder(dim=64)


@pytest.fixture
def fast_sandbox() -> Sandbox:
    return Sandbox(limits=SandboxLimits(per_test_timeout_ms=500, total_timeout_ms=3000, memory_mb=256))


def make_problem(
    pid: str = "p-add",
    statement: str = "add two numbers",
    entry_point: str = "add",
    public: list | None = None,
    private: list | None = None,
    category_hint: str | None = None,
) -> Problem:
    public = public if public is not None else [TestCase([1, 2], 3), TestCase([0, 0], 0)]
    private = private if private is not None else [TestCase([5, 7], 12)]
    return Problem(
        id=pid,
        statement=statement,
        entry_point=entry_point,
        signature_doc=f"def {entry_point}(a, b):\n    \"\"\"{statement}.\"\"\"",
        public_tests=public,
        private_tests=private,
        category_hint=category_hint,
    ).validate()
