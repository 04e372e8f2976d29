"""The single boundary to the language model.

Hosts step proposal, simulation completion, code generation, solution
scoring, error localization, reflection, and knowledge-base decomposition,
plus per-call token accounting and a prompt/reply transcript. Two backends:
an OpenAI-style HTTP provider, and a scripted mock that replays canned
responses keyed by canonical request digest (see ``mockscript``).

Reply contracts are structured and strictly parsed: plans are ``STEP:``
lines, scores are ``SCORE: <float>``, localizations ``FIRST_BAD_STEP: <int>``.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from . import mockscript
from .errors import (
    BackendError,
    EmptyCompletionError,
    EmptyPlanError,
    LocalizationParseError,
    MockScriptMissError,
    NoCodeBlockError,
    PrefixViolationError,
    ScoreParseError,
)
from .problem import Problem, Step, TestCase, join_steps, split_steps

logger = logging.getLogger(__name__)

_SCORE_RE = re.compile(r"SCORE:\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)")
_BAD_STEP_RE = re.compile(r"FIRST_BAD_STEP:\s*(-?\d+)")
_FENCE_RE = re.compile(r"```[a-zA-Z0-9_+-]*\n(.*?)```", re.DOTALL)
_STEP_MARKER_RE = re.compile(r"^\s*#\s*STEP\s+(\d+)\s*$")


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int
    completion_tokens: int
    call_kind: str  # one of mockscript.CALL_KINDS
    estimated: bool = False

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class TokenLedger:
    """Append-only token accounting; one record per completed model call."""

    def __init__(self):
        self._lock = threading.Lock()
        self.records: list[TokenUsage] = []

    def append(self, usage: TokenUsage) -> None:
        with self._lock:
            self.records.append(usage)

    def totals(self) -> dict[str, int]:
        with self._lock:
            prompt = sum(r.prompt_tokens for r in self.records)
            completion = sum(r.completion_tokens for r in self.records)
            return {
                "prompt_tokens": prompt,
                "completion_tokens": completion,
                "total_tokens": prompt + completion,
                "calls": len(self.records),
            }

    def mark(self) -> int:
        """Record count checkpoint; use with ``totals_since`` for per-run deltas."""
        with self._lock:
            return len(self.records)

    def totals_since(self, mark: int) -> dict[str, int]:
        with self._lock:
            records = self.records[mark:]
        prompt = sum(r.prompt_tokens for r in records)
        completion = sum(r.completion_tokens for r in records)
        return {
            "prompt_tokens": prompt,
            "completion_tokens": completion,
            "total_tokens": prompt + completion,
            "calls": len(records),
        }


@dataclass(frozen=True)
class Reflection:
    text: str
    source_node: int = -1

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("reflection text must be nonempty")


@dataclass(frozen=True)
class CodeBlock:
    """Code for one plan step, used by error localization."""

    step_index: int
    step_text: str
    source: str


@dataclass
class SamplingConfig:
    temperature: float = 0.7
    top_p: float = 0.95
    seed: int | None = None


@dataclass
class BackendReply:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


def estimate_tokens(text: str) -> int:
    """Whitespace token count, used when the provider reports no usage."""
    return len(text.split())


class HttpChatBackend:
    """OpenAI-style chat-completions client.

    Retries transport failures (3 attempts, exponential backoff); parse and
    contract errors are never retried.
    """

    kind = "http_provider"

    def __init__(
        self,
        base_url: str,
        model_name: str,
        api_key: str | None = None,
        sampling: SamplingConfig | None = None,
        timeout_s: float = 120.0,
        max_attempts: int = 3,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.sampling = sampling or SamplingConfig()
        self._api_key = api_key
        self._timeout_s = timeout_s
        self._max_attempts = max_attempts

    def complete(self, prompt: str, kind: str, canonical: dict[str, Any]) -> BackendReply:
        import requests

        payload: dict[str, Any] = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.sampling.temperature,
            "top_p": self.sampling.top_p,
        }
        if self.sampling.seed is not None:
            payload["seed"] = self.sampling.seed
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"

        last_exc: Exception | None = None
        for attempt in range(self._max_attempts):
            if attempt:
                time.sleep(0.5 * 2 ** (attempt - 1))
            try:
                resp = requests.post(
                    f"{self.base_url}/chat/completions", json=payload, headers=headers, timeout=self._timeout_s
                )
                if resp.status_code >= 500:
                    last_exc = BackendError(f"provider returned {resp.status_code}")
                    continue
                resp.raise_for_status()
                body = resp.json()
                text = body["choices"][0]["message"]["content"]
                usage = body.get("usage") or {}
                return BackendReply(
                    text=text,
                    prompt_tokens=usage.get("prompt_tokens"),
                    completion_tokens=usage.get("completion_tokens"),
                )
            except requests.RequestException as exc:
                last_exc = exc
            except (KeyError, IndexError, ValueError, json.JSONDecodeError) as exc:
                raise BackendError(f"malformed provider response: {exc}") from exc
        raise BackendError(f"provider unreachable after {self._max_attempts} attempts: {last_exc}") from last_exc


class ScriptedMockBackend:
    """Replays scripted responses keyed by canonical request digest.

    Fails loudly on an unkeyed request, printing the canonical form so the
    missing entry can be added to the script.
    """

    kind = "scripted_mock"

    def __init__(self, script: str | Path | list[dict[str, Any]], model_name: str = "scripted-mock"):
        self.model_name = model_name
        self.table = mockscript.load_script(script)

    def complete(self, prompt: str, kind: str, canonical: dict[str, Any]) -> BackendReply:
        digest = mockscript.request_digest(canonical)
        if digest not in self.table:
            raise MockScriptMissError(
                f"no scripted response for {kind} request; canonical="
                + json.dumps(canonical, sort_keys=True, ensure_ascii=False)
            )
        return BackendReply(text=self.table[digest])


class LlmGateway:
    """Typed operations over a chat backend, with token and transcript capture."""

    def __init__(self, backend, ledger: TokenLedger | None = None):
        self.backend = backend
        self.ledger = ledger or TokenLedger()
        self.transcript: list[dict[str, Any]] = []
        self.warnings: list[dict[str, Any]] = []

    # ------------------------------------------------------------------ core

    def _call(self, kind: str, canonical: dict[str, Any], prompt: str) -> str:
        reply = self.backend.complete(prompt, kind, canonical)
        estimated = reply.prompt_tokens is None or reply.completion_tokens is None
        usage = TokenUsage(
            prompt_tokens=reply.prompt_tokens if reply.prompt_tokens is not None else estimate_tokens(prompt),
            completion_tokens=(
                reply.completion_tokens if reply.completion_tokens is not None else estimate_tokens(reply.text)
            ),
            call_kind=kind,
            estimated=estimated,
        )
        self.ledger.append(usage)
        self.transcript.append(
            {
                "seq": len(self.transcript),
                "kind": kind,
                "digest": mockscript.request_digest(canonical),
                "canonical": canonical,
                "prompt": prompt,
                "response": reply.text,
                "prompt_tokens": usage.prompt_tokens,
                "completion_tokens": usage.completion_tokens,
                "estimated": usage.estimated,
            }
        )
        return reply.text

    def write_transcript(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for record in self.transcript:
            name = f"{record['seq']:04d}_{record['kind']}.json"
            (directory / name).write_text(
                json.dumps(record, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
            )

    # ------------------------------------------------------------- operations

    def propose_next_step(
        self,
        problem: Problem,
        path_steps: Sequence[Step],
        prior_siblings: Sequence[Step],
        reflection: Reflection | None = None,
    ) -> Step:
        """Propose one next step given the path and this round's earlier proposals."""
        path_texts = [s.text for s in path_steps]
        canonical = mockscript.canonical_expand(problem.id, path_texts, len(prior_siblings))
        parts = [
            "Propose the single next algorithmic step for solving the problem below.",
            f"PROBLEM {problem.id}:\n{problem.statement}",
            f"SIGNATURE:\n{problem.signature_doc}",
            "STEPS SO FAR:\n" + (join_steps(list(path_steps)) if path_steps else "(none)"),
        ]
        if prior_siblings:
            parts.append(
                "ALTERNATIVES ALREADY PROPOSED FOR THIS POSITION (propose something different):\n"
                + join_steps(list(prior_siblings))
            )
        if reflection is not None:
            parts.append(f"REFLECTION ON THE LAST FAILED ATTEMPT:\n{reflection.text}")
        parts.append('Reply with exactly one new step on a single line starting with "STEP:".')
        reply = self._call("expand", canonical, "\n\n".join(parts))

        text = reply.strip()
        if "STEP:" in text:
            try:
                text = split_steps(text)[0].text
            except EmptyPlanError as exc:
                raise EmptyCompletionError("proposal reply had no step content") from exc
        if not text:
            raise EmptyCompletionError("proposal reply was empty")
        return Step(index=len(path_steps) + 1, text=text)

    def complete_simulation(self, problem: Problem, path_steps: Sequence[Step]) -> list[Step]:
        """Complete the plan from a step prefix; the prefix is preserved verbatim."""
        if not path_steps:
            raise ValueError("path_steps must be nonempty")
        path_texts = [s.text for s in path_steps]
        canonical = mockscript.canonical_simulate(problem.id, path_texts)
        prompt = "\n\n".join(
            [
                "Complete the plan below into a full step-by-step solution.",
                f"PROBLEM {problem.id}:\n{problem.statement}",
                f"SIGNATURE:\n{problem.signature_doc}",
                "EXISTING STEPS (repeat these verbatim, then continue):\n" + join_steps(list(path_steps)),
                'Reply with the FULL plan, one step per line, each starting with "STEP:".',
            ]
        )
        reply = self._call("simulate", canonical, prompt)
        steps = split_steps(reply)
        if len(steps) < len(path_steps):
            raise PrefixViolationError(f"plan has {len(steps)} steps, shorter than the {len(path_steps)}-step prefix")

        def norm(text: str) -> str:
            return " ".join(text.split())

        for given, returned in zip(path_steps, steps):
            if norm(given.text) != norm(returned.text):
                raise PrefixViolationError(f"step {given.index} was altered: {returned.text!r} != {given.text!r}")
        completion = [s.text for s in steps[len(path_steps) :]]
        full = list(path_texts) + completion
        return [Step(index=i + 1, text=t) for i, t in enumerate(full)]

    def _extract_code(self, reply: str, entry_point: str) -> str:
        fenced = _FENCE_RE.search(reply)
        code = fenced.group(1) if fenced else reply
        code = code.strip("\n")
        if not re.search(rf"\bdef\s+{re.escape(entry_point)}\s*\(", code):
            raise NoCodeBlockError(entry_point)
        return code

    def generate_code(self, problem: Problem, full_steps: Sequence[Step]) -> str:
        """Generate candidate source following the plan, one ``# STEP k`` block per step."""
        if not full_steps:
            raise ValueError("full_steps must be nonempty")
        step_texts = [s.text for s in full_steps]
        canonical = mockscript.canonical_codegen(problem.id, step_texts)
        prompt = "\n\n".join(
            [
                "Write a Python solution that rigorously follows the plan below.",
                f"PROBLEM {problem.id}:\n{problem.statement}",
                f"SIGNATURE:\n{problem.signature_doc}",
                "PLAN:\n" + join_steps(list(full_steps)),
                f'Define a function named "{problem.entry_point}". Before the code implementing step k,'
                ' emit a comment line "# STEP k". Reply with a single fenced code block.',
            ]
        )
        reply = self._call("codegen", canonical, prompt)
        return self._extract_code(reply, problem.entry_point)

    def generate_code_direct(self, problem: Problem) -> str:
        """Baseline: prompt directly for solution code, no plan."""
        canonical = mockscript.canonical_codegen(problem.id, [])
        public = [t.to_dict() for t in problem.public_tests]
        prompt = "\n\n".join(
            [
                "Write a Python solution for the problem below.",
                f"PROBLEM {problem.id}:\n{problem.statement}",
                f"SIGNATURE:\n{problem.signature_doc}",
                "PUBLIC TESTS:\n" + json.dumps(public, sort_keys=True),
                f'Define a function named "{problem.entry_point}". Reply with a single fenced code block.',
            ]
        )
        reply = self._call("codegen", canonical, prompt)
        return self._extract_code(reply, problem.entry_point)

    def evaluate_solution(self, problem: Problem, full_steps: Sequence[Step], sandbox_feedback: str) -> float:
        """Model-assigned solution quality in [0, 1], given sandbox feedback."""
        step_texts = [s.text for s in full_steps]
        canonical = mockscript.canonical_evaluate(problem.id, step_texts)
        prompt = "\n\n".join(
            [
                "Rate the solution plan below for correctness and robustness on unseen"
                " cases (boundary conditions, performance), given the sandbox feedback.",
                f"PROBLEM {problem.id}:\n{problem.statement}",
                "PLAN:\n" + join_steps(list(full_steps)),
                f"SANDBOX FEEDBACK:\n{sandbox_feedback}",
                'Reply "SCORE: <float between 0 and 1>".',
            ]
        )
        reply = self._call("evaluate", canonical, prompt)
        match = _SCORE_RE.search(reply)
        if not match:
            raise ScoreParseError(f"no SCORE in reply: {reply[:200]!r}")
        score = float(match.group(1))
        if score < 0.0 or score > 1.0:
            self.warnings.append({"kind": "evaluate", "event": "score_clamped", "raw": score})
            score = min(1.0, max(0.0, score))
        return score

    def localize_error(
        self,
        problem: Problem,
        code_blocks: Sequence[CodeBlock],
        failing_test: TestCase,
        trace: str,
    ) -> int:
        """1-based index of the first erroneous step; out-of-range replies are clamped."""
        step_texts = [b.step_text for b in code_blocks]
        canonical = mockscript.canonical_localize(problem.id, step_texts)
        rendered = "\n\n".join(f"# STEP {b.step_index}: {b.step_text}\n{b.source}" for b in code_blocks)
        prompt = "\n\n".join(
            [
                "The code below fails a public test. Debug it block by block and name"
                " the first algorithmic step whose block is wrong.",
                f"PROBLEM {problem.id}:\n{problem.statement}",
                "CODE BLOCKS:\n" + rendered,
                "FAILING TEST:\ninput_args=" + json.dumps(failing_test.input_args, sort_keys=True)
                + "\nexpected=" + json.dumps(failing_test.expected_output, sort_keys=True),
                f"OBSERVED:\n{trace}",
                'Reply "FIRST_BAD_STEP: <step number>".',
            ]
        )
        reply = self._call("localize", canonical, prompt)
        match = _BAD_STEP_RE.search(reply)
        if not match:
            raise LocalizationParseError(f"no FIRST_BAD_STEP in reply: {reply[:200]!r}")
        index = int(match.group(1))
        n = len(code_blocks)
        if index < 1 or index > n:
            self.warnings.append({"kind": "localize", "event": "index_clamped", "raw": index, "n_steps": n})
            logger.warning("localization index %d outside 1..%d; clamped", index, n)
            index = min(n, max(1, index))
        return index

    def reflect(
        self, problem: Problem, full_steps: Sequence[Step], sandbox_feedback: str, source_node: int = -1
    ) -> Reflection:
        """Failure analysis injected into subsequent expansion prompts."""
        step_texts = [s.text for s in full_steps]
        canonical = mockscript.canonical_reflect(problem.id, step_texts)
        prompt = "\n\n".join(
            [
                "The plan below failed sandbox evaluation. Analyze why, so the next"
                " attempt can avoid the mistake. Be specific and brief.",
                f"PROBLEM {problem.id}:\n{problem.statement}",
                "PLAN:\n" + join_steps(list(full_steps)),
                f"SANDBOX FEEDBACK:\n{sandbox_feedback}",
            ]
        )
        reply = self._call("reflect", canonical, prompt).strip()
        if not reply:
            raise EmptyCompletionError("reflection reply was empty")
        return Reflection(text=reply, source_node=source_node)

    def decompose_solution(self, problem: Problem, solution_code: str) -> list[Step]:
        """Decompose a known-correct solution into ordered steps for KB ingestion."""
        if not solution_code.strip():
            raise ValueError("solution_code must be nonempty")
        canonical = mockscript.canonical_decompose(problem.id, solution_code)
        prompt = "\n\n".join(
            [
                "Decompose the correct solution below into its algorithmic steps.",
                f"PROBLEM {problem.id}:\n{problem.statement}",
                f"SOLUTION:\n{solution_code}",
                'Reply with one step per line, each starting with "STEP:".',
            ]
        )
        reply = self._call("decompose", canonical, prompt)
        return split_steps(reply)


def split_code_blocks(code: str, steps: Sequence[Step]) -> list[CodeBlock]:
    """Split generated code on ``# STEP k`` markers, aligned 1:1 with steps.

    Code before the first marker (imports, helpers) attaches to block 1.
    When no markers are present the whole source becomes block 1 and later
    blocks are empty, keeping the step alignment intact.
    """
    sources: dict[int, list[str]] = {s.index: [] for s in steps}
    current = None
    preamble: list[str] = []
    for line in code.splitlines():
        match = _STEP_MARKER_RE.match(line)
        if match:
            idx = int(match.group(1))
            if idx in sources:
                current = idx
            continue
        if current is None:
            preamble.append(line)
        else:
            sources[current].append(line)
    if steps and preamble:
        first = steps[0].index
        sources[first] = preamble + sources[first]
    return [CodeBlock(step_index=s.index, step_text=s.text, source="\n".join(sources[s.index]).strip("\n")) for s in steps]
