"""Canonical request keys and script files for the scripted chat backend.

A script is a JSON list of ``{"kind", "match_digest", "response"}`` records.
The digest is a sha256 over a canonical JSON form of the request's
identifying fields (problem id plus step texts), deliberately excluding
prompt-only context such as reflection or sandbox feedback text, so scripts
can be written without reproducing prompt internals. Entries may carry a
``"canonical"`` object instead of ``"match_digest"``; the digest is then
computed at load time.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Sequence

CALL_KINDS = ("expand", "simulate", "codegen", "evaluate", "localize", "reflect", "decompose")


def canonical_expand(problem_id: str, path_texts: Sequence[str], sibling_index: int) -> dict[str, Any]:
    return {"kind": "expand", "problem": problem_id, "path": list(path_texts), "sibling_index": sibling_index}


def canonical_simulate(problem_id: str, path_texts: Sequence[str]) -> dict[str, Any]:
    return {"kind": "simulate", "problem": problem_id, "path": list(path_texts)}


def canonical_codegen(problem_id: str, step_texts: Sequence[str]) -> dict[str, Any]:
    return {"kind": "codegen", "problem": problem_id, "steps": list(step_texts)}


def canonical_evaluate(problem_id: str, step_texts: Sequence[str]) -> dict[str, Any]:
    return {"kind": "evaluate", "problem": problem_id, "steps": list(step_texts)}


def canonical_localize(problem_id: str, step_texts: Sequence[str]) -> dict[str, Any]:
    return {"kind": "localize", "problem": problem_id, "steps": list(step_texts)}


def canonical_reflect(problem_id: str, step_texts: Sequence[str]) -> dict[str, Any]:
    return {"kind": "reflect", "problem": problem_id, "steps": list(step_texts)}


def canonical_decompose(problem_id: str, code: str) -> dict[str, Any]:
    return {"kind": "decompose", "problem": problem_id, "code": code}


def request_digest(canonical: dict[str, Any]) -> str:
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def script_entry(canonical: dict[str, Any], response: str) -> dict[str, Any]:
    return {"kind": canonical["kind"], "match_digest": request_digest(canonical), "response": response}


def load_script(source: str | Path | list[dict[str, Any]]) -> dict[str, str]:
    """Load a script into a digest->response table, rejecting ambiguous keys."""
    if isinstance(source, (str, Path)):
        records = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        records = source
    if not isinstance(records, list):
        raise ValueError("mock script must be a JSON list of records")
    table: dict[str, str] = {}
    for record in records:
        digest = record.get("match_digest")
        if digest is None:
            digest = request_digest(record["canonical"])
        response = record["response"]
        if digest in table and table[digest] != response:
            raise ValueError(f"mock script has conflicting responses for digest {digest}")
        table[digest] = response
    return table


def write_script(entries: list[dict[str, Any]], path: str | Path) -> None:
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- response formatting helpers -------------------------------------------


def plan_response(step_texts: Sequence[str]) -> str:
    return "\n".join(f"STEP: {t}" for t in step_texts)


def code_response(code: str, fenced: bool = True) -> str:
    if fenced:
        return f"```python\n{code}\n```"
    return code


def score_response(score: float) -> str:
    return f"SCORE: {score}"


def bad_step_response(index: int) -> str:
    return f"FIRST_BAD_STEP: {index}"
