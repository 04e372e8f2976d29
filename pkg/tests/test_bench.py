from __future__ import annotations

import pytest

from steptree import LlmGateway, Sandbox, ScriptedMockBackend
from steptree.bench import compare_reports, compare_reports_csv, load_bench_report, run_bench, write_bench_report
from steptree.errors import EmptyDatasetError, MismatchedDatasetError
from steptree.search import SearchConfig, SearchDeps

from scripted_corpus import build_dup_corpus, build_pass_dataset, write_dataset


def _deps(entries, embedder, kb=None):
    return SearchDeps(gateway=LlmGateway(ScriptedMockBackend(entries)), sandbox=Sandbox(), embedder=embedder, kb=kb)


@pytest.fixture
def pass_dataset(tmp_path):
    problems, entries = build_pass_dataset(n_good=3, n_overfit=1)
    dataset_dir = write_dataset(problems, tmp_path / "dataset")
    return dataset_dir, entries


def test_pass_at_1_three_of_four(pass_dataset, embedder):
    dataset_dir, entries = pass_dataset
    report = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(entries, embedder))
    assert report.pass_at_1 == 0.75
    assert len(report.records) == 4
    failed = [r for r in report.records if not r.passed_private]
    assert len(failed) == 1
    assert failed[0].public_pass_rate == 1.0  # overfit: passes public, fails private


def test_pass_at_1_order_invariant(pass_dataset, embedder):
    dataset_dir, entries = pass_dataset
    first = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(entries, embedder))
    second = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(entries, embedder))
    assert first.pass_at_1 == second.pass_at_1
    assert [r.problem_id for r in first.records] == sorted(r.problem_id for r in first.records)


def test_base_direct_issues_one_codegen_call_per_problem(pass_dataset, embedder):
    dataset_dir, entries = pass_dataset
    deps = _deps(entries, embedder)
    report = run_bench(dataset_dir, "base_direct", SearchConfig(), deps)
    records = deps.gateway.ledger.records
    assert len(records) == 4
    assert all(r.call_kind == "codegen" for r in records)
    assert report.pass_at_1 == 0.75
    assert all(r.iterations_used == 0 for r in report.records)


def test_per_record_tokens_sum_to_global_ledger(pass_dataset, embedder):
    dataset_dir, entries = pass_dataset
    deps = _deps(entries, embedder)
    report = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), deps)
    per_record = sum(r.tokens["total_tokens"] for r in report.records)
    assert per_record == deps.gateway.ledger.totals()["total_tokens"]


def test_failed_search_scores_false_and_sweep_survives(tmp_path, embedder):
    problems, entries = build_pass_dataset(n_good=1, n_overfit=0)
    extra, _ = build_pass_dataset(n_good=2, n_overfit=0)
    extra[1].id = "unscripted-problem"
    dataset_dir = write_dataset([problems[0], extra[1]], tmp_path / "dataset")
    report = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(entries, embedder))
    by_id = {r.problem_id: r for r in report.records}
    assert by_id["pass-0"].passed_private
    assert not by_id["unscripted-problem"].passed_private
    assert by_id["unscripted-problem"].error


def test_empty_dataset_raises(tmp_path, embedder):
    empty = tmp_path / "none"
    empty.mkdir()
    with pytest.raises(EmptyDatasetError):
        run_bench(empty, "rpm_mcts", SearchConfig(), _deps([], embedder))


def test_workers_parallel_matches_sequential(pass_dataset, embedder):
    dataset_dir, entries = pass_dataset
    seq = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(entries, embedder))
    par_deps = _deps(entries, embedder)
    par = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), par_deps, workers=3)
    assert par.pass_at_1 == seq.pass_at_1
    assert [r.problem_id for r in par.records] == [r.problem_id for r in seq.records]
    assert [r.tokens for r in par.records] == [r.tokens for r in seq.records]
    # Serialized append keeps the shared ledger equal to the record sum.
    assert par_deps.gateway.ledger.totals()["total_tokens"] == sum(r.tokens["total_tokens"] for r in par.records)


def test_no_kb_method_matches_alpha_zero(tmp_path, embedder):
    problems, kb, entries, emb = build_dup_corpus(2)
    dataset_dir = write_dataset(problems, tmp_path / "dupset")
    no_kb = run_bench(dataset_dir, "rpm_mcts_no_kb", SearchConfig(rng_seed=7), _deps(entries, emb, kb=kb))
    alpha0 = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7, kb_alpha=0.0), _deps(entries, emb, kb=kb))
    assert [r.passed_private for r in no_kb.records] == [r.passed_private for r in alpha0.records]
    assert [r.tokens for r in no_kb.records] == [r.tokens for r in alpha0.records]


def test_similarity_filter_reduces_tokens_on_duplicate_corpus(tmp_path):
    problems, kb, entries, emb = build_dup_corpus(4)
    dataset_dir = write_dataset(problems, tmp_path / "dupset")
    filtered = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(entries, emb, kb=kb))
    unfiltered = run_bench(
        dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7, sim_filter_enabled=False), _deps(entries, emb, kb=kb)
    )
    for f_record, u_record in zip(filtered.records, unfiltered.records):
        assert f_record.tokens["total_tokens"] < u_record.tokens["total_tokens"]
    assert filtered.mean_tokens < unfiltered.mean_tokens


def test_report_write_and_reload_round_trip(tmp_path, pass_dataset, embedder):
    dataset_dir, entries = pass_dataset
    report = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(entries, embedder))
    write_bench_report(report, tmp_path / "out")
    reloaded = load_bench_report(tmp_path / "out" / "bench_report.jsonl")
    assert reloaded.pass_at_1 == report.pass_at_1
    assert reloaded.mean_tokens == report.mean_tokens
    assert [r.to_dict() for r in reloaded.records] == [r.to_dict() for r in report.records]


def test_compare_identical_reports_zero_delta(pass_dataset, embedder):
    dataset_dir, entries = pass_dataset
    report = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(entries, embedder))
    table = compare_reports(report, report)
    assert "delta +0.0000" in table
    csv_text = compare_reports_csv(report, report)
    for line in csv_text.strip().splitlines()[1:]:
        assert line.endswith(",0")


def _rebuild_aggregates(report):
    from steptree.bench import BenchReport

    records = report.records
    n = len(records)
    return BenchReport(
        method=report.method,
        records=records,
        pass_at_1=sum(1 for r in records if r.passed_private) / n,
        mean_tokens=sum(r.tokens["total_tokens"] for r in records) / n,
    )


def test_compare_reports_aggregate_delta(pass_dataset, embedder):
    import copy

    dataset_dir, entries = pass_dataset
    full = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(entries, embedder))
    weaker = copy.deepcopy(full)
    next(r for r in weaker.records if r.passed_private).passed_private = False
    weaker = _rebuild_aggregates(weaker)
    table = compare_reports(weaker, full)
    assert "delta +0.2500" in table


def test_compare_token_delta_column_matches_ledger_subtraction(tmp_path):
    problems, kb, entries, emb = build_dup_corpus(3)
    dataset_dir = write_dataset(problems, tmp_path / "dupset")
    filtered = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(entries, emb, kb=kb))
    unfiltered = run_bench(
        dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7, sim_filter_enabled=False), _deps(entries, emb, kb=kb)
    )
    csv_lines = compare_reports_csv(filtered, unfiltered).strip().splitlines()[1:]
    by_id_f = {r.problem_id: r for r in filtered.records}
    by_id_u = {r.problem_id: r for r in unfiltered.records}
    for line in csv_lines:
        pid, _, _, tok_a, tok_b, delta = line.split(",")
        assert int(delta) == by_id_u[pid].tokens["total_tokens"] - by_id_f[pid].tokens["total_tokens"]
        assert int(tok_a) == by_id_f[pid].tokens["total_tokens"]
        assert int(tok_b) == by_id_u[pid].tokens["total_tokens"]


def test_compare_rejects_mismatched_datasets(pass_dataset, tmp_path, embedder):
    dataset_dir, entries = pass_dataset
    report = run_bench(dataset_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(entries, embedder))
    problems, other_entries = build_pass_dataset(n_good=2, n_overfit=0)
    other_dir = write_dataset(problems[:2], tmp_path / "other")
    other = run_bench(other_dir, "rpm_mcts", SearchConfig(rng_seed=7), _deps(other_entries, embedder))
    with pytest.raises(MismatchedDatasetError):
        compare_reports(report, other)
