"""Tree search over algorithmic steps with retrieval-guided selection.

The loop: select a leaf by score (mean reward + UCB exploration + a
retrieval prior over a knowledge base of solved-problem step prefixes),
expand up to ``branching_b`` candidate next steps with cosine redundancy
filtering, complete and execute the most promising candidate in the
sandbox, blend execution pass rate with a model-assigned score into the
reward, localize the first erroneous step on failure so the verified step
prefix can be grafted back into the tree, and backpropagate.

Terminates early when a simulation passes every public test with a high
model score; otherwise after ``rollout_max`` iterations the best visited
path is extracted and code is generated from it.
"""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .embedding import Embedder, cosine
from .errors import (
    BackendError,
    ConfigError,
    EmptyCompletionError,
    EmptyPlanError,
    ExpansionEmptyError,
    LocalizationParseError,
    NoCodeBlockError,
    NoSimulatedLeafError,
    PrefixViolationError,
    ScoreParseError,
)
from .gateway import LlmGateway, Reflection, split_code_blocks
from .kb import KnowledgeBase, compose_context, retrieval_score
from .problem import Problem, Step
from .sandbox import Sandbox, SandboxReport

logger = logging.getLogger(__name__)

ROOT_ID = 0

# Errors that abort one iteration but not the whole search.
_ITERATION_ERRORS = (
    BackendError,
    PrefixViolationError,
    NoCodeBlockError,
    EmptyPlanError,
    EmptyCompletionError,
    ScoreParseError,
)


@dataclass
class SearchConfig:
    rollout_max: int = 5
    branching_b: int = 3
    ucb_beta: float = 0.5
    kb_alpha: float = 0.5
    sim_threshold: float = 0.85
    # The two below are engine choices with no external reference value:
    # execution evidence dominates the reward blend, and "high model score"
    # for early termination means >= 0.9.
    eval_gamma: float = 0.7
    llm_success_threshold: float = 0.9
    rng_seed: int = 0
    sim_filter_enabled: bool = True
    localize_enabled: bool = True
    simulate_all_children: bool = False

    def validate(self) -> "SearchConfig":
        if self.rollout_max < 1:
            raise ConfigError("rollout_max must be >= 1")
        if self.branching_b < 1:
            raise ConfigError("branching_b must be >= 1")
        for name in ("ucb_beta", "kb_alpha", "eval_gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("sim_threshold", "eval_gamma", "llm_success_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        return self


@dataclass
class TreeNode:
    id: int
    parent_id: int | None
    step: Step | None  # None only for the root, which stands for the problem
    Q: float = 0.0  # running mean reward; 0 by convention while N == 0
    N: int = 0
    K: float = 0.0  # retrieval prior, cached at creation; KB is immutable per search
    children: list[int] = field(default_factory=list)
    status: str = "fresh"  # fresh | simulated | terminal_success
    reflection: Reflection | None = None


class SearchTree:
    def __init__(self):
        self.nodes: dict[int, TreeNode] = {ROOT_ID: TreeNode(id=ROOT_ID, parent_id=None, step=None)}
        self._next_id = ROOT_ID + 1

    @property
    def root(self) -> TreeNode:
        return self.nodes[ROOT_ID]

    def add_child(self, parent_id: int, step: Step, retrieval: float) -> TreeNode:
        node = TreeNode(id=self._next_id, parent_id=parent_id, step=step, K=retrieval)
        self._next_id += 1
        self.nodes[node.id] = node
        self.nodes[parent_id].children.append(node.id)
        return node

    def path_nodes(self, node_id: int) -> list[TreeNode]:
        """Root..node inclusive."""
        path = []
        cursor: int | None = node_id
        while cursor is not None:
            node = self.nodes[cursor]
            path.append(node)
            cursor = node.parent_id
        return list(reversed(path))

    def path_steps(self, node_id: int) -> list[Step]:
        return [n.step for n in self.path_nodes(node_id) if n.step is not None]

    def depth(self, node_id: int) -> int:
        return len(self.path_steps(node_id))

    def to_dict(self) -> dict[str, Any]:
        nodes = []
        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            nodes.append(
                {
                    "id": node.id,
                    "parent_id": node.parent_id,
                    "step_text": node.step.text if node.step else None,
                    "Q": node.Q,
                    "N": node.N,
                    "K": node.K,
                    "children": list(node.children),
                    "status": node.status,
                }
            )
        return {"version": 1, "nodes": nodes}


@dataclass
class SimulationOutcome:
    node_id: int
    full_steps: list[Step]
    code: str
    report: SandboxReport
    r_llm: float | None
    q_val: float
    first_error_step: int | None = None
    reflection: Reflection | None = None


@dataclass
class SearchDeps:
    gateway: LlmGateway
    sandbox: Sandbox
    embedder: Embedder
    kb: KnowledgeBase | None = None


@dataclass
class SearchResult:
    problem_id: str
    final_code: str
    final_steps: list[Step]
    solved_in_sandbox: bool
    tree: SearchTree
    iterations_used: int
    token_totals: dict[str, int]
    token_records: list[Any] = field(default_factory=list)
    transcript: list[dict[str, Any]] = field(default_factory=list)


def selection_score(node: TreeNode, parent_visits: float, config: SearchConfig) -> float:
    """Mean reward + UCB exploration + weighted retrieval prior.

    Natural log; an unvisited parent contributes no exploration term
    (defined as beta * sqrt(log(1)/1) = 0).
    """
    if parent_visits <= 0:
        explore = 0.0
    else:
        explore = config.ucb_beta * math.sqrt(math.log(parent_visits) / (1 + node.N))
    return node.Q + explore + config.kb_alpha * node.K


def _argmax_nodes(nodes: Sequence[TreeNode], scores: Sequence[float], rng: random.Random) -> TreeNode:
    best = max(scores)
    ties = [n for n, s in zip(nodes, scores) if s == best]
    if len(ties) == 1:
        return ties[0]
    return rng.choice(ties)


def select_leaf(tree: SearchTree, config: SearchConfig, rng: random.Random) -> int:
    """Walk from the root taking the max-score child until a childless node."""
    node = tree.root
    while node.children:
        children = [tree.nodes[c] for c in node.children]
        scores = [selection_score(c, node.N, config) for c in children]
        node = _argmax_nodes(children, scores, rng)
    return node.id


def _nearest_reflection(tree: SearchTree, node_id: int) -> Reflection | None:
    for node in reversed(tree.path_nodes(node_id)):
        if node.reflection is not None:
            return node.reflection
    return None


def _node_retrieval(problem: Problem, path_texts: list[str], action_text: str, deps: SearchDeps) -> float:
    if deps.kb is None or len(deps.kb) == 0:
        return 0.0
    state = compose_context(problem.statement, path_texts)
    return retrieval_score(deps.kb, state, action_text, deps.embedder, category_filter=problem.category_hint)


def expand(
    tree: SearchTree,
    leaf_id: int,
    problem: Problem,
    deps: SearchDeps,
    config: SearchConfig,
) -> list[int]:
    """Propose up to ``branching_b`` next steps and keep the diverse ones.

    Greedy filter in generation order: a candidate is dropped when its
    embedding cosine to an already-kept candidate or to an existing child
    of this leaf exceeds ``sim_threshold``. The first candidate always
    survives against the empty kept-set, so a childless leaf always gains
    at least one child.
    """
    leaf = tree.nodes[leaf_id]
    if leaf.status == "terminal_success":
        raise ConfigError("cannot expand a terminal node")
    path = tree.path_steps(leaf_id)
    path_texts = [s.text for s in path]
    reflection = _nearest_reflection(tree, leaf_id)

    existing_vecs: list[Any] = []
    if config.sim_filter_enabled:
        existing_vecs = [deps.embedder.embed(tree.nodes[c].step.text) for c in leaf.children]
    proposed: list[Step] = []
    kept: list[Step] = []
    kept_vecs: list[Any] = []
    for _ in range(config.branching_b):
        step = deps.gateway.propose_next_step(problem, path, proposed, reflection)
        proposed.append(step)
        vec = deps.embedder.embed(step.text)
        if config.sim_filter_enabled:
            redundant = any(cosine(vec, other) > config.sim_threshold for other in kept_vecs + existing_vecs)
            if redundant:
                continue
        kept.append(step)
        kept_vecs.append(vec)

    if not proposed:
        raise ExpansionEmptyError(f"gateway produced no step candidates for node {leaf_id}")

    new_ids = []
    for step in kept:
        retrieval = _node_retrieval(problem, path_texts, step.text, deps)
        new_ids.append(tree.add_child(leaf_id, step, retrieval).id)
    return new_ids


def simulate_evaluate(
    tree: SearchTree,
    node_id: int,
    problem: Problem,
    deps: SearchDeps,
    config: SearchConfig,
) -> SimulationOutcome:
    """Complete the plan from this node, run it, and blend the reward.

    Reward is gamma * public pass rate + (1 - gamma) * model score; when the
    model score is unavailable the pass rate alone is used and recorded.
    On failure the first erroneous step is localized and a reflection is
    produced for subsequent expansions.
    """
    node = tree.nodes[node_id]
    path = tree.path_steps(node_id)
    full_steps = deps.gateway.complete_simulation(problem, path)
    code = deps.gateway.generate_code(problem, full_steps)
    report = deps.sandbox.run_tests(code, problem.entry_point, problem.public_tests)

    r_llm: float | None = None
    try:
        r_llm = deps.gateway.evaluate_solution(problem, full_steps, report.feedback_text)
    except (ScoreParseError, BackendError) as exc:
        logger.warning("solution evaluation unavailable for node %d: %s", node_id, exc)

    if r_llm is None:
        q_val = report.pass_rate
    else:
        q_val = config.eval_gamma * report.pass_rate + (1.0 - config.eval_gamma) * r_llm

    first_error: int | None = None
    reflection: Reflection | None = None
    if not report.all_passed:
        if config.localize_enabled:
            blocks = split_code_blocks(code, full_steps)
            failing = report.first_failure()
            trace = f"actual={json.dumps(failing.actual_output, sort_keys=True, default=repr)}"
            if failing.stderr_excerpt:
                trace += f"\nstderr:\n{failing.stderr_excerpt}"
            try:
                first_error = deps.gateway.localize_error(
                    problem, blocks, problem.public_tests[failing.test_index - 1], trace
                )
            except (LocalizationParseError, BackendError) as exc:
                logger.warning("error localization unavailable for node %d: %s", node_id, exc)
        try:
            reflection = deps.gateway.reflect(problem, full_steps, report.feedback_text, source_node=node_id)
        except (BackendError, EmptyCompletionError) as exc:
            logger.warning("reflection unavailable for node %d: %s", node_id, exc)

    node.status = "simulated"
    return SimulationOutcome(
        node_id=node_id,
        full_steps=full_steps,
        code=code,
        report=report,
        r_llm=r_llm,
        q_val=q_val,
        first_error_step=first_error,
        reflection=reflection,
    )


def truncate_and_graft(
    tree: SearchTree,
    outcome: SimulationOutcome,
    problem: Problem,
    deps: SearchDeps,
) -> list[int]:
    """Graft the verified step prefix of a failed simulation into the tree.

    With the simulated node at depth d and the first erroneous step e, steps
    d+1 .. e-1 of the full plan become a chain of children below the node.
    An identical-text child already present at a graft point is reused
    rather than duplicated, and the chain continues below it.
    """
    if outcome.first_error_step is None:
        return []
    node = tree.nodes[outcome.node_id]
    depth = tree.depth(outcome.node_id)
    first_error = outcome.first_error_step
    texts = [s.text for s in outcome.full_steps]

    attach = node
    new_ids: list[int] = []
    for step_index in range(depth + 1, first_error):
        step = outcome.full_steps[step_index - 1]
        duplicate = next(
            (tree.nodes[c] for c in attach.children if tree.nodes[c].step.text == step.text),
            None,
        )
        if duplicate is not None:
            logger.debug("graft point at node %d already has step %r; reusing", attach.id, step.text)
            attach = duplicate
            continue
        retrieval = _node_retrieval(problem, texts[: step_index - 1], step.text, deps)
        attach = tree.add_child(attach.id, step, retrieval)
        new_ids.append(attach.id)
    return new_ids


def backpropagate(tree: SearchTree, node_id: int, reward: float) -> None:
    """Running-mean update of every node on the path to the root."""
    for node in tree.path_nodes(node_id):
        node.N += 1
        node.Q += (reward - node.Q) / node.N


def _clear_reflections(tree: SearchTree, node_id: int) -> None:
    for node in tree.path_nodes(node_id):
        node.reflection = None


def extract_best_path(tree: SearchTree, rng: random.Random | None = None) -> list[Step]:
    """Path to the best visited node on the frontier of the visited tree.

    Candidates are non-root nodes with N >= 1 and no visited children (a
    simulated node that only gained unvisited grafted children still
    qualifies). Ranked by Q, then N, then seeded RNG.
    """
    visited = [n for n in tree.nodes.values() if n.N >= 1 and n.id != ROOT_ID]
    frontier = [n for n in visited if not any(tree.nodes[c].N >= 1 for c in n.children)]
    if not frontier:
        raise NoSimulatedLeafError("no visited node to extract a path from")
    best_q = max(n.Q for n in frontier)
    best = [n for n in frontier if n.Q == best_q]
    best_n = max(n.N for n in best)
    best = [n for n in best if n.N == best_n]
    if len(best) > 1 and rng is not None:
        choice = rng.choice(best)
    else:
        choice = best[0]
    return tree.path_steps(choice.id)


def run_search(
    problem: Problem,
    deps: SearchDeps,
    config: SearchConfig,
    deadline_s: float | None = None,
) -> SearchResult:
    """Full search for one problem; returns the final code either from the
    early-terminating passing simulation or from the best path after the
    iteration budget runs out."""
    config.validate()
    rng = random.Random(config.rng_seed)
    tree = SearchTree()
    gateway = deps.gateway
    ledger_mark = gateway.ledger.mark()
    transcript_mark = len(gateway.transcript)
    start = time.monotonic()

    solved = False
    final_code: str | None = None
    final_steps: list[Step] = []
    iterations_used = 0

    for _ in range(config.rollout_max):
        if deadline_s is not None and time.monotonic() - start > deadline_s:
            logger.warning("search budget exhausted for %s after %d iterations", problem.id, iterations_used)
            break
        leaf_id = select_leaf(tree, config, rng)
        leaf = tree.nodes[leaf_id]
        if leaf.status == "terminal_success":
            break

        new_ids = expand(tree, leaf_id, problem, deps, config)
        if new_ids:
            to_simulate = new_ids
        else:
            fresh = [c for c in leaf.children if tree.nodes[c].status == "fresh"]
            to_simulate = fresh or [leaf_id]
        if not config.simulate_all_children:
            nodes = [tree.nodes[i] for i in to_simulate]
            scores = [selection_score(n, leaf.N, config) for n in nodes]
            to_simulate = [_argmax_nodes(nodes, scores, rng).id]

        iterations_used += 1
        for sim_id in to_simulate:
            try:
                outcome = simulate_evaluate(tree, sim_id, problem, deps, config)
            except _ITERATION_ERRORS as exc:
                logger.warning("iteration aborted at node %d: %s", sim_id, exc)
                tree.nodes[sim_id].status = "simulated"
                backpropagate(tree, sim_id, 0.0)
                continue

            if outcome.report.all_passed:
                _clear_reflections(tree, sim_id)
                if (outcome.r_llm or 0.0) >= config.llm_success_threshold:
                    tree.nodes[sim_id].status = "terminal_success"
                    backpropagate(tree, sim_id, outcome.q_val)
                    solved = True
                    final_code = outcome.code
                    final_steps = outcome.full_steps
                    break
            else:
                if outcome.first_error_step is not None:
                    truncate_and_graft(tree, outcome, problem, deps)
                if outcome.reflection is not None:
                    parent_id = tree.nodes[sim_id].parent_id
                    if parent_id is not None:
                        tree.nodes[parent_id].reflection = outcome.reflection
            backpropagate(tree, sim_id, outcome.q_val)
        if solved:
            break

    if not solved:
        final_steps = extract_best_path(tree, rng)
        final_code = gateway.generate_code(problem, final_steps)

    token_records = gateway.ledger.records[ledger_mark:]
    transcript = gateway.transcript[transcript_mark:]
    return SearchResult(
        problem_id=problem.id,
        final_code=final_code,
        final_steps=list(final_steps),
        solved_in_sandbox=solved,
        tree=tree,
        iterations_used=iterations_used,
        token_totals=gateway.ledger.totals_since(ledger_mark),
        token_records=token_records,
        transcript=transcript,
    )


def result_to_dict(result: SearchResult) -> dict[str, Any]:
    return {
        "version": 1,
        "problem_id": result.problem_id,
        "solved_in_sandbox": result.solved_in_sandbox,
        "iterations_used": result.iterations_used,
        "final_steps": [s.text for s in result.final_steps],
        "final_code": result.final_code,
        "token_totals": result.token_totals,
    }


def write_run_dir(result: SearchResult, run_dir: str | Path) -> None:
    """Persist tree.json, result.json, tokens.json, and transcript/ for a run.

    Every file is deterministic given (problem, script, seed, config): no
    timestamps or wall durations are written.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "tree.json").write_text(
        json.dumps(result.tree.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (run_dir / "result.json").write_text(
        json.dumps(result_to_dict(result), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    tokens = {
        "version": 1,
        "records": [
            {
                "call_kind": r.call_kind,
                "prompt_tokens": r.prompt_tokens,
                "completion_tokens": r.completion_tokens,
                "estimated": r.estimated,
            }
            for r in result.token_records
        ],
        "totals": result.token_totals,
    }
    (run_dir / "tokens.json").write_text(json.dumps(tokens, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    transcript_dir = run_dir / "transcript"
    transcript_dir.mkdir(exist_ok=True)
    for seq, record in enumerate(result.transcript):
        renumbered = dict(record, seq=seq)
        (transcript_dir / f"{seq:04d}_{record['kind']}.json").write_text(
            json.dumps(renumbered, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
        )
