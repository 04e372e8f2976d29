from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from steptree import LlmGateway, ScriptedMockBackend, Step, build_kb
from steptree import mockscript as ms
from steptree.errors import (
    BackendError,
    EmptyCompletionError,
    EmptyPlanError,
    LocalizationParseError,
    MockScriptMissError,
    NoCodeBlockError,
    PrefixViolationError,
    ScoreParseError,
)
from steptree.gateway import CodeBlock, HttpChatBackend, estimate_tokens, split_code_blocks

from conftest import make_problem


def _gateway(entries):
    return LlmGateway(ScriptedMockBackend(entries))


def _steps(*texts):
    return [Step(i + 1, t) for i, t in enumerate(texts)]


# --- propose ----------------------------------------------------------------


def test_propose_replays_scripted_step():
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_expand(problem.id, [], 0), "STEP: use a prefix-sum array")])
    step = gw.propose_next_step(problem, [], [])
    assert step.text == "use a prefix-sum array"
    assert step.index == 1


def test_propose_prompt_contains_prior_sibling():
    problem = make_problem()
    sibling = Step(1, "walk the grid diagonally")
    gw = _gateway([ms.script_entry(ms.canonical_expand(problem.id, [], 1), "STEP: second idea")])
    gw.propose_next_step(problem, [], [sibling])
    prompt = gw.transcript[-1]["prompt"]
    assert "walk the grid diagonally" in prompt


def test_propose_prompt_contains_reflection():
    from steptree import Reflection

    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_expand(problem.id, [], 0), "STEP: avoid the earlier mistake")])
    gw.propose_next_step(problem, [], [], reflection=Reflection(text="off-by-one on the last index"))
    assert "off-by-one on the last index" in gw.transcript[-1]["prompt"]


def test_propose_empty_reply_errors():
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_expand(problem.id, [], 0), "   ")])
    with pytest.raises(EmptyCompletionError):
        gw.propose_next_step(problem, [], [])


def test_unkeyed_request_fails_loudly():
    problem = make_problem()
    gw = _gateway([])
    with pytest.raises(MockScriptMissError) as excinfo:
        gw.propose_next_step(problem, [], [])
    assert "expand" in str(excinfo.value)


# --- complete_simulation ------------------------------------------------------


def test_complete_simulation_preserves_prefix():
    problem = make_problem()
    path = _steps("read the input", "sum the pair")
    plan = ["read the input", "sum the pair", "handle negatives", "return the result"]
    gw = _gateway([ms.script_entry(ms.canonical_simulate(problem.id, [s.text for s in path]), ms.plan_response(plan))])
    full = gw.complete_simulation(problem, path)
    assert [s.text for s in full] == plan
    assert [s.text for s in full[:2]] == [s.text for s in path]
    assert [s.index for s in full] == [1, 2, 3, 4]


def test_complete_simulation_detects_altered_prefix():
    problem = make_problem()
    path = _steps("read the input")
    gw = _gateway(
        [ms.script_entry(ms.canonical_simulate(problem.id, ["read the input"]), ms.plan_response(["read input badly", "x"]))]
    )
    with pytest.raises(PrefixViolationError):
        gw.complete_simulation(problem, path)


def test_complete_simulation_tolerates_whitespace_only_changes():
    problem = make_problem()
    path = _steps("read  the   input")
    gw = _gateway(
        [ms.script_entry(ms.canonical_simulate(problem.id, ["read  the   input"]), ms.plan_response(["read the input", "go"]))]
    )
    full = gw.complete_simulation(problem, path)
    assert full[0].text == "read  the   input"  # caller's steps kept verbatim
    assert len(full) == 2


def test_complete_simulation_never_shorter_than_path():
    problem = make_problem()
    path = _steps("one", "two")
    gw = _gateway([ms.script_entry(ms.canonical_simulate(problem.id, ["one", "two"]), "STEP: one")])
    with pytest.raises(PrefixViolationError):
        gw.complete_simulation(problem, path)


# --- generate_code ------------------------------------------------------------


def test_generate_code_strips_fences():
    problem = make_problem()
    steps = _steps("add them")
    code = "def add(a, b):\n    return a + b"
    gw = _gateway([ms.script_entry(ms.canonical_codegen(problem.id, ["add them"]), f"```python\n{code}\n```")])
    assert gw.generate_code(problem, steps) == code


def test_generate_code_requires_entry_point():
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_codegen(problem.id, ["x"]), "```python\ndef other():\n    pass\n```")])
    with pytest.raises(NoCodeBlockError):
        gw.generate_code(problem, _steps("x"))


# --- evaluate_solution ----------------------------------------------------------


@pytest.mark.parametrize("reply,score", [("SCORE: 0.8", 0.8), ("SCORE: 1.4", 1.0), ("SCORE: -2", 0.0)])
def test_evaluate_parses_and_clamps(reply, score):
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_evaluate(problem.id, ["s"]), reply)])
    assert gw.evaluate_solution(problem, _steps("s"), "ALL TESTS PASSED") == score


def test_evaluate_unparseable_reply():
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_evaluate(problem.id, ["s"]), "looks good to me")])
    with pytest.raises(ScoreParseError):
        gw.evaluate_solution(problem, _steps("s"), "feedback")


# --- localize_error -------------------------------------------------------------


def _blocks(n):
    return [CodeBlock(step_index=i + 1, step_text=f"step {i + 1}", source=f"line{i + 1}()") for i in range(n)]


def test_localize_parses_index():
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_localize(problem.id, [b.step_text for b in _blocks(5)]), "FIRST_BAD_STEP: 3")])
    assert gw.localize_error(problem, _blocks(5), problem.public_tests[0], "trace") == 3


def test_localize_clamps_out_of_range_with_warning():
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_localize(problem.id, [b.step_text for b in _blocks(5)]), "FIRST_BAD_STEP: 9")])
    assert gw.localize_error(problem, _blocks(5), problem.public_tests[0], "trace") == 5
    assert gw.warnings and gw.warnings[-1]["event"] == "index_clamped"


def test_localize_unparseable_reply():
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_localize(problem.id, [b.step_text for b in _blocks(2)]), "somewhere")])
    with pytest.raises(LocalizationParseError):
        gw.localize_error(problem, _blocks(2), problem.public_tests[0], "trace")


# --- reflect / decompose --------------------------------------------------------


def test_reflect_returns_nonempty_text():
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_reflect(problem.id, ["s"]), "the loop bound is wrong")])
    reflection = gw.reflect(problem, _steps("s"), "FAILED TEST 1", source_node=4)
    assert reflection.text == "the loop bound is wrong"
    assert reflection.source_node == 4


def test_decompose_splits_steps_and_feeds_kb(embedder):
    problem = make_problem()
    code = "def add(a, b):\n    return a + b"
    gw = _gateway([ms.script_entry(ms.canonical_decompose(problem.id, code), ms.plan_response(["a", "b", "c"]))])
    steps = gw.decompose_solution(problem, code)
    assert len(steps) == 3
    kb = build_kb([(problem, steps, "math")], embedder)
    assert len(kb) == 3  # one entry per prefix


def test_decompose_empty_reply():
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_decompose(problem.id, "x = 1"), "no steps here")])
    with pytest.raises(EmptyPlanError):
        gw.decompose_solution(problem, "x = 1")


# --- token accounting -----------------------------------------------------------


def test_every_call_appends_one_usage_record():
    problem = make_problem()
    entries = [
        ms.script_entry(ms.canonical_expand(problem.id, [], 0), "STEP: a"),
        ms.script_entry(ms.canonical_evaluate(problem.id, ["a"]), "SCORE: 0.5"),
    ]
    gw = _gateway(entries)
    gw.propose_next_step(problem, [], [])
    gw.evaluate_solution(problem, _steps("a"), "fb")
    assert len(gw.ledger.records) == 2
    assert [r.call_kind for r in gw.ledger.records] == ["expand", "evaluate"]
    totals = gw.ledger.totals()
    assert totals["prompt_tokens"] == sum(r.prompt_tokens for r in gw.ledger.records)
    assert totals["completion_tokens"] == sum(r.completion_tokens for r in gw.ledger.records)
    assert all(r.estimated for r in gw.ledger.records)  # mock reports no usage


def test_mock_estimates_whitespace_tokens():
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_expand(problem.id, [], 0), "STEP: two words")])
    gw.propose_next_step(problem, [], [])
    record = gw.ledger.records[-1]
    assert record.completion_tokens == estimate_tokens("STEP: two words") == 3
    assert record.prompt_tokens == estimate_tokens(gw.transcript[-1]["prompt"])


def test_failed_parse_still_records_usage():
    problem = make_problem()
    gw = _gateway([ms.script_entry(ms.canonical_evaluate(problem.id, ["s"]), "no score")])
    with pytest.raises(ScoreParseError):
        gw.evaluate_solution(problem, _steps("s"), "fb")
    assert len(gw.ledger.records) == 1  # the round-trip completed before parsing


# --- code block splitting --------------------------------------------------------


def test_split_code_blocks_aligns_with_steps():
    steps = _steps("first", "second")
    code = "import math\n# STEP 1\nx = 1\n# STEP 2\ny = 2\nreturn x + y"
    blocks = split_code_blocks(code, steps)
    assert [b.step_index for b in blocks] == [1, 2]
    assert "x = 1" in blocks[0].source and "import math" in blocks[0].source
    assert "y = 2" in blocks[1].source


def test_split_code_blocks_without_markers():
    steps = _steps("only", "two")
    blocks = split_code_blocks("def f():\n    return 1", steps)
    assert blocks[0].source  # everything lands in block 1
    assert blocks[1].source == ""


# --- mock script files ------------------------------------------------------------


def test_script_file_round_trip(tmp_path):
    problem = make_problem()
    entries = [ms.script_entry(ms.canonical_expand(problem.id, [], 0), "STEP: from file")]
    path = tmp_path / "script.json"
    ms.write_script(entries, path)
    gw = LlmGateway(ScriptedMockBackend(path))
    assert gw.propose_next_step(problem, [], []).text == "from file"


def test_script_accepts_canonical_objects():
    problem = make_problem()
    backend = ScriptedMockBackend([{"kind": "expand", "canonical": ms.canonical_expand(problem.id, [], 0), "response": "STEP: ok"}])
    assert LlmGateway(backend).propose_next_step(problem, [], []).text == "ok"


def test_script_conflicting_digests_rejected():
    problem = make_problem()
    canonical = ms.canonical_expand(problem.id, [], 0)
    with pytest.raises(ValueError):
        ScriptedMockBackend([ms.script_entry(canonical, "STEP: a"), ms.script_entry(canonical, "STEP: b")])


# --- http provider backend ---------------------------------------------------------


class _ChatStub(BaseHTTPRequestHandler):
    failures_left = 0
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append({"path": self.path, "auth": self.headers.get("Authorization"), "body": body})
        if type(self).failures_left > 0:
            type(self).failures_left -= 1
            self.send_response(503)
            self.end_headers()
            return
        payload = json.dumps(
            {
                "choices": [{"message": {"content": "SCORE: 0.5"}}],
                "usage": {"prompt_tokens": 12, "completion_tokens": 3},
            }
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def chat_server():
    _ChatStub.failures_left = 0
    _ChatStub.seen = []
    server = HTTPServer(("127.0.0.1", 0), _ChatStub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def test_http_backend_round_trip_with_provider_usage(chat_server):
    problem = make_problem()
    backend = HttpChatBackend(base_url=chat_server, model_name="test-model", api_key="sekrit")
    gw = LlmGateway(backend)
    score = gw.evaluate_solution(problem, _steps("s"), "fb")
    assert score == 0.5
    record = gw.ledger.records[-1]
    assert (record.prompt_tokens, record.completion_tokens, record.estimated) == (12, 3, False)
    assert _ChatStub.seen[0]["path"] == "/chat/completions"
    assert _ChatStub.seen[0]["auth"] == "Bearer sekrit"
    assert _ChatStub.seen[0]["body"]["model"] == "test-model"


def test_http_backend_retries_transient_failures(chat_server):
    _ChatStub.failures_left = 2
    backend = HttpChatBackend(base_url=chat_server, model_name="m")
    reply = backend.complete("prompt", "evaluate", {"kind": "evaluate"})
    assert reply.text == "SCORE: 0.5"
    assert len(_ChatStub.seen) == 3  # two 503s then success


def test_http_backend_gives_up_after_attempts(chat_server):
    _ChatStub.failures_left = 99
    backend = HttpChatBackend(base_url=chat_server, model_name="m")
    with pytest.raises(BackendError):
        backend.complete("prompt", "evaluate", {"kind": "evaluate"})
    assert len(_ChatStub.seen) == 3
