"""Problem and test-case domain types plus the JSON interchange format.

A dataset is a directory of ``*.problem.json`` files, one problem each:

    {"id", "statement", "entry_point", "signature_doc",
     "public_tests": [{"input_args": [...], "expected_output": ...,
                       "comparison": {"kind": "exact"} | {"kind": "float", "abs_tol": 1e-6}}],
     "private_tests": [...], "category_hint": null | str}

Tests are function-call argument lists; stdin/stdout style problems must be
converted upstream before they reach this loader.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import EmptyPlanError, ParseError, ValidationError

# One step per ``STEP:`` line; the segment runs until the next delimiter line.
# Leading indentation before the delimiter is tolerated (models indent plans).
STEP_DELIMITER = "STEP:"
_STEP_SPLIT = re.compile(r"^[ \t]*STEP:", re.MULTILINE)

_IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

DEFAULT_FLOAT_ABS_TOL = 1e-6


@dataclass(frozen=True)
class Comparison:
    kind: str = "exact"  # "exact" | "float"
    abs_tol: float = DEFAULT_FLOAT_ABS_TOL

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "float":
            return {"kind": "float", "abs_tol": self.abs_tol}
        return {"kind": "exact"}

    @staticmethod
    def from_dict(raw: dict[str, Any]) -> "Comparison":
        kind = raw.get("kind", "exact")
        if kind not in ("exact", "float"):
            raise ValidationError("comparison.kind", f"unknown kind {kind!r}")
        return Comparison(kind=kind, abs_tol=float(raw.get("abs_tol", DEFAULT_FLOAT_ABS_TOL)))


@dataclass(frozen=True)
class TestCase:
    input_args: list[Any]
    expected_output: Any
    comparison: Comparison = field(default_factory=Comparison)

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_args": self.input_args,
            "expected_output": self.expected_output,
            "comparison": self.comparison.to_dict(),
        }

    @staticmethod
    def from_dict(raw: dict[str, Any], field_name: str) -> "TestCase":
        if not isinstance(raw, dict) or "input_args" not in raw or "expected_output" not in raw:
            raise ValidationError(field_name, "test case needs input_args and expected_output")
        if not isinstance(raw["input_args"], list):
            raise ValidationError(field_name, "input_args must be a list")
        return TestCase(
            input_args=raw["input_args"],
            expected_output=raw["expected_output"],
            comparison=Comparison.from_dict(raw.get("comparison", {"kind": "exact"})),
        )


@dataclass(frozen=True)
class Step:
    """One algorithmic step; index is 1-based within its plan."""

    index: int
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError("step.text", "step text must be nonempty")
        if _STEP_SPLIT.search(self.text):
            raise ValidationError("step.text", "step text may not contain the step delimiter")


@dataclass
class Problem:
    id: str
    statement: str
    entry_point: str
    signature_doc: str
    public_tests: list[TestCase]
    private_tests: list[TestCase]
    category_hint: str | None = None

    def validate(self) -> "Problem":
        if not self.id:
            raise ValidationError("id", "must be nonempty")
        if not self.public_tests:
            raise ValidationError("public_tests", "must be nonempty; execution reward is undefined otherwise")
        if not _IDENTIFIER.match(self.entry_point):
            raise ValidationError("entry_point", f"{self.entry_point!r} is not a valid identifier")
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "statement": self.statement,
            "entry_point": self.entry_point,
            "signature_doc": self.signature_doc,
            "public_tests": [t.to_dict() for t in self.public_tests],
            "private_tests": [t.to_dict() for t in self.private_tests],
            "category_hint": self.category_hint,
        }

    @staticmethod
    def from_dict(raw: dict[str, Any]) -> "Problem":
        for key in ("id", "statement", "entry_point", "signature_doc", "public_tests", "private_tests"):
            if key not in raw:
                raise ValidationError(key, "missing field")
        return Problem(
            id=str(raw["id"]),
            statement=str(raw["statement"]),
            entry_point=str(raw["entry_point"]),
            signature_doc=str(raw["signature_doc"]),
            public_tests=[TestCase.from_dict(t, "public_tests") for t in raw["public_tests"]],
            private_tests=[TestCase.from_dict(t, "private_tests") for t in raw["private_tests"]],
            category_hint=raw.get("category_hint"),
        ).validate()


def load_problem(path: str | Path) -> Problem:
    """Load and validate one problem file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: expected a JSON object")
    return Problem.from_dict(raw)


def save_problem(problem: Problem, path: str | Path) -> None:
    Path(path).write_text(json.dumps(problem.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(directory: str | Path) -> list[Problem]:
    """Load every ``*.problem.json`` under a directory, enforcing unique ids."""
    directory = Path(directory)
    problems = [load_problem(p) for p in sorted(directory.glob("*.problem.json"))]
    seen: dict[str, Path] = {}
    for prob, path in zip(problems, sorted(directory.glob("*.problem.json"))):
        if prob.id in seen:
            raise ValidationError("id", f"duplicate problem id {prob.id!r} in {path.name} and {seen[prob.id].name}")
        seen[prob.id] = path
    return problems


def split_steps(plan_text: str) -> list[Step]:
    """Split a plan into steps on ``STEP:`` line prefixes.

    Text before the first delimiter is treated as preamble and dropped.
    Segments are trimmed and empty ones removed; indices run from 1.
    """
    if not plan_text or not plan_text.strip():
        raise EmptyPlanError("plan text is empty")
    segments = _STEP_SPLIT.split(plan_text)[1:]  # [0] is the preamble
    texts = [seg.strip() for seg in segments]
    texts = [t for t in texts if t]
    if not texts:
        raise EmptyPlanError("plan contains no nonempty step segment")
    return [Step(index=i + 1, text=t) for i, t in enumerate(texts)]


def join_steps(steps: list[Step]) -> str:
    return "\n".join(f"{STEP_DELIMITER} {s.text}" for s in steps)
