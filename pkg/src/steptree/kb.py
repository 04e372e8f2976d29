"""Prefix knowledge base: build, persist, and query retrieval scores.

Each ingested problem with n solution steps contributes n entries; entry j
embeds the concatenation of the problem statement and steps 1..j. Queries
return the clamped maximum cosine between the query context and any stored
entry (optionally restricted to one algorithm category).

File format: a header line ``{"version": 1, "dim": D, "embedder_id": ...}``
followed by one JSON object per entry, vectors stored as full-precision
decimal floats.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .embedding import Embedder, EmbeddingVector
from .errors import EmptyStepsError, KBIOError, SchemaVersionError, UnknownCategoryError
from .problem import Problem, Step

KB_SCHEMA_VERSION = 1

# The category count is fixed at 14; the labels themselves are configuration.
DEFAULT_CATEGORIES = (
    "greedy",
    "dp",
    "graphs",
    "trees",
    "math",
    "strings",
    "sorting",
    "searching",
    "two-pointers",
    "data-structures",
    "geometry",
    "bit-manipulation",
    "simulation",
    "constructive",
)


def compose_context(statement: str, step_texts: Sequence[str]) -> str:
    """Canonical problem+steps concatenation used for both KB entries and queries."""
    return "\n".join([statement, *step_texts])


@dataclass
class KBEntry:
    category: str
    prefix_text: str
    vector: EmbeddingVector
    source_problem_id: str
    step_index: int  # 1-based j for the prefix "problem + steps 1..j"


@dataclass
class KnowledgeBase:
    embedder_id: str
    dim: int
    entries: list[KBEntry] = field(default_factory=list)
    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    _matrix: np.ndarray | None = field(default=None, repr=False)
    _row_sq: np.ndarray | None = field(default=None, repr=False)
    _category_rows: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def invalidate_cache(self) -> None:
        self._matrix = None
        self._row_sq = None
        self._category_rows = {}

    def add_entries(self, entries: Iterable[KBEntry]) -> None:
        for entry in entries:
            if entry.vector.shape != (self.dim,):
                raise SchemaVersionError(f"entry dim {entry.vector.shape} != KB dim {self.dim}")
            self.entries.append(entry)
        self.invalidate_cache()

    def _ensure_cache(self) -> None:
        # Concurrent queries may race to build the cache; duplicate work is
        # harmless, but the guard field (_matrix) must be assigned last so a
        # reader that sees it non-None also sees the derived fields.
        if self._matrix is None:
            matrix = np.ascontiguousarray(np.stack([e.vector for e in self.entries]), dtype=np.float64)
            rows_by_cat: dict[str, list[int]] = {}
            for i, entry in enumerate(self.entries):
                rows_by_cat.setdefault(entry.category, []).append(i)
            self._row_sq = kernels.sq_norms_rows(matrix)
            self._category_rows = {c: np.asarray(r, dtype=np.int64) for c, r in rows_by_cat.items()}
            self._matrix = matrix


def build_kb(
    corpus: Sequence[tuple[Problem, Sequence[Step], str]],
    embedder: Embedder,
    categories: Sequence[str] = DEFAULT_CATEGORIES,
) -> KnowledgeBase:
    """Embed every problem+step prefix of the corpus into a fresh KB."""
    kb = KnowledgeBase(embedder_id=embedder.embedder_id, dim=embedder.dim, categories=tuple(categories))
    entries: list[KBEntry] = []
    for problem, steps, category in corpus:
        if not steps:
            raise EmptyStepsError(f"problem {problem.id!r} has no solution steps")
        if category not in kb.categories:
            raise UnknownCategoryError(f"problem {problem.id!r}: unknown category {category!r}")
        texts = [s.text for s in steps]
        for j in range(1, len(texts) + 1):
            prefix = compose_context(problem.statement, texts[:j])
            entries.append(
                KBEntry(
                    category=category,
                    prefix_text=prefix,
                    vector=embedder.embed(prefix),
                    source_problem_id=problem.id,
                    step_index=j,
                )
            )
    kb.add_entries(entries)
    return kb


def retrieval_score(
    kb: KnowledgeBase,
    state_text: str,
    action_text: str,
    embedder: Embedder,
    category_filter: str | None = None,
) -> float:
    """Clamped max cosine between embed(state+action) and the (filtered) KB.

    Returns 0.0 when the KB is empty or the filter matches nothing, which
    degrades selection to pure UCB.
    """
    if embedder.embedder_id != kb.embedder_id:
        raise SchemaVersionError(f"query embedder {embedder.embedder_id!r} != KB embedder {kb.embedder_id!r}")
    if not kb.entries:
        return 0.0
    kb._ensure_cache()
    if category_filter is None:
        matrix, row_sq = kb._matrix, kb._row_sq
    else:
        rows = kb._category_rows.get(category_filter)
        if rows is None or rows.size == 0:
            return 0.0
        matrix = np.ascontiguousarray(kb._matrix[rows])
        row_sq = kb._row_sq[rows]
    query = np.asarray(embedder.embed(f"{state_text}\n{action_text}"), dtype=np.float64)
    q_sq = kernels.sq_norm(query)
    scores = kernels.scan_cosines(matrix, query, row_sq, q_sq)
    # Exact self-matches can land an ulp above 1.0 (sqrt(n)*sqrt(n) != n),
    # so clamp both ends to honor the declared [0, 1] range.
    return min(1.0, max(0.0, float(np.max(scores))))


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        header = {
            "version": KB_SCHEMA_VERSION,
            "dim": kb.dim,
            "embedder_id": kb.embedder_id,
            "categories": list(kb.categories),
            "count": len(kb.entries),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for entry in kb.entries:
            record = {
                "category": entry.category,
                "prefix_text": entry.prefix_text,
                "source_problem_id": entry.source_problem_id,
                "step_index": entry.step_index,
                "vector": [float(x) for x in entry.vector],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_kb(path: str | Path) -> KnowledgeBase:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise KBIOError(f"cannot read {path}: {exc}") from exc
    if not blob:
        raise KBIOError(f"{path}: empty file", byte_offset=0)

    offset = 0
    lines: list[tuple[int, bytes]] = []
    for raw_line in blob.split(b"\n"):
        lines.append((offset, raw_line))
        offset += len(raw_line) + 1
    # A well-formed file ends with a newline, leaving one empty trailing chunk.
    if lines and not lines[-1][1]:
        lines.pop()
    elif lines:
        raise KBIOError(f"{path}: truncated final line", byte_offset=lines[-1][0])

    def parse(line_offset: int, raw: bytes) -> dict:
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise KBIOError(f"{path}: corrupt record: {exc}", byte_offset=line_offset) from exc

    header = parse(*lines[0])
    if header.get("version") != KB_SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: unsupported KB version {header.get('version')!r}")
    dim = header.get("dim")
    if not isinstance(dim, int) or dim <= 0:
        raise SchemaVersionError(f"{path}: bad dim header {dim!r}")
    kb = KnowledgeBase(
        embedder_id=str(header.get("embedder_id", "")),
        dim=dim,
        categories=tuple(header.get("categories", DEFAULT_CATEGORIES)),
    )
    entries = []
    for line_offset, raw in lines[1:]:
        record = parse(line_offset, raw)
        try:
            vector = np.asarray(record["vector"], dtype=np.float64)
            if vector.shape != (dim,):
                raise SchemaVersionError(f"{path}: entry dim {vector.shape[0]} != header dim {dim}")
            entries.append(
                KBEntry(
                    category=record["category"],
                    prefix_text=record["prefix_text"],
                    vector=vector,
                    source_problem_id=record["source_problem_id"],
                    step_index=int(record["step_index"]),
                )
            )
        except KeyError as exc:
            raise KBIOError(f"{path}: entry missing field {exc}", byte_offset=line_offset) from exc
    expected = header.get("count")
    if isinstance(expected, int) and expected != len(entries):
        raise KBIOError(
            f"{path}: header promises {expected} entries, found {len(entries)}",
            byte_offset=len(blob),
        )
    kb.add_entries(entries)
    return kb
