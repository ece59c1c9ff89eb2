"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Numeric bounds marked "frozen" were recorded from the first run of
the committed generators and act as regression bounds; every run since is
deterministic, so they are exact.
"""

import json
import time

import numpy as np
import pytest

from qbrag import (
    ClientBundle,
    ClientConfig,
    CompletionConfig,
    KnowledgeBase,
    MockClient,
    complete_matrix,
)
from qbrag.cli import main
from qbrag.evaluation import TestCase, avg_reranker_score, exact_recovery_rate, relevancy_rate
from qbrag.pipeline import curate_preferences, diversity_score
from qbrag.retrievers import (
    NaiveRetriever,
    ProjectedMatchRetriever,
    QuestionMatchRetriever,
    WeightedVoteRetriever,
)
from qbrag.vectors import EmbeddingMatrix, project_orthogonal, similarities, top_k

from helpers import StaticEmbedder, misalignment_fixture, planted_kb, recovery_at, unit
from test_evaluation import TableJudge, TableScorer, result_for

from pathlib import Path

DATA = Path(__file__).parent / "data"


def test_criterion_1_topk_oracle_equivalence():
    rng = np.random.default_rng(1001)
    start = time.monotonic()
    for _ in range(1000):
        cols = rng.standard_normal((16, 200))
        cols /= np.linalg.norm(cols, axis=0)
        mat = EmbeddingMatrix(cols)
        q = unit(rng.standard_normal(16))
        k = int(rng.integers(1, 21))
        got = [s.index for s in top_k(similarities(mat, q), k)]
        scores = cols.T @ q
        oracle = np.argsort(-scores, kind="stable")[:k].tolist()
        assert got == oracle
    elapsed = time.monotonic() - start
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    print(f"\nACCEPTANCE 1 PASS: top-k equals exhaustive argsort on 1000 instances ({elapsed:.2f}s)")


def test_criterion_2_identity_equivalence():
    mismatches = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        m, d = 12, 16
        contents = np.stack([unit(rng.standard_normal(d)) for _ in range(m)], axis=1)
        questions = np.stack([unit(rng.standard_normal(d)) for _ in range(m)], axis=1)
        kb = planted_kb(contents, questions, list(range(m)))
        q0 = unit(rng.standard_normal(d))
        embedder = StaticEmbedder({"q": q0})
        vanilla = QuestionMatchRetriever(embedder=embedder).fit(kb)
        weighted = WeightedVoteRetriever(embedder=embedder).fit(kb)
        for k in (1, 3, 5):
            a = set(vanilla.retrieve("q", k).content_ids())
            b = set(weighted.retrieve("q", k).content_ids())
            mismatches += a != b
    assert mismatches == 0
    print("\nACCEPTANCE 2 PASS: question-walk and weighted-vote agree under identity matrices "
          "(200 stores, k in {1,3,5}, zero mismatches)")


def test_criterion_3_projection_invariant():
    rng = np.random.default_rng(33)
    checked = 0
    for trial in range(500):
        m, d = 8, 6
        contents = np.stack([unit(rng.standard_normal(d)) for _ in range(m)], axis=1)
        questions = np.stack([unit(rng.standard_normal(d)) for _ in range(m)], axis=1)
        kb = planted_kb(contents, questions, list(range(m)))
        q0 = unit(rng.standard_normal(d))
        retriever = ProjectedMatchRetriever(embedder=StaticEmbedder({"q": q0})).fit(kb)
        _, steps = retriever.retrieve_with_trace("q", 4)
        for step in steps:
            residual = step["residual"]
            for u in step["basis"]:
                assert abs(float(np.dot(residual, u))) <= 1e-6
                checked += 1
            again = project_orthogonal(residual, step["basis"])
            assert float(np.linalg.norm(again - residual)) <= 1e-9
    assert checked > 0
    print(f"\nACCEPTANCE 3 PASS: residual orthogonal to every matched question "
          f"({checked} dot products <= 1e-6) and projection idempotent within 1e-9")


def test_criterion_4_synthetic_misalignment_trend():
    start = time.monotonic()
    kb, embedder, queries, golden = misalignment_fixture()
    vanilla = QuestionMatchRetriever(embedder=embedder).fit(kb)
    naive = NaiveRetriever(embedder=embedder).fit(kb)
    v1 = recovery_at(vanilla, queries, golden, 1)
    v3 = recovery_at(vanilla, queries, golden, 3)
    n1 = recovery_at(naive, queries, golden, 1)
    n3 = recovery_at(naive, queries, golden, 3)
    elapsed = time.monotonic() - start
    # frozen from the first run of the committed generator:
    # v1=0.935, v3=1.0, n1=0.745, n3=0.925
    assert v1 >= 0.9, f"question-walk recovery@1 {v1}"
    assert v1 > n1, f"expected question-walk ({v1}) above direct cosine ({n1})"
    assert v3 >= v1
    assert n3 >= n1
    assert elapsed < 30.0, f"took {elapsed:.2f}s"
    print(f"\nACCEPTANCE 4 PASS: recovery@1 question-walk {v1:.3f} >= 0.9 and > naive {n1:.3f}; "
          f"@3 >= @1 for both ({elapsed:.2f}s)")


def test_criterion_5_coverage_monotonicity():
    kb, embedder, queries, golden = misalignment_fixture()
    full = QuestionMatchRetriever(embedder=embedder).fit(kb)
    sparse_kb = kb.downsample_questions(2.0, seed=777)
    sparse = QuestionMatchRetriever(embedder=embedder).fit(sparse_kb)
    r_full = recovery_at(full, queries, golden, 1)
    r_sparse = recovery_at(sparse, queries, golden, 1)
    # frozen from the first run: 0.935 vs 0.865
    assert r_full - r_sparse >= 0.05, f"gap {r_full - r_sparse:.3f}"
    print(f"\nACCEPTANCE 5 PASS: recovery@1 with 8 questions/content ({r_full:.3f}) exceeds "
          f"2 questions/content ({r_sparse:.3f}) by {r_full - r_sparse:.3f} >= 0.05")


def test_criterion_6_matrix_completion_recovery():
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    m, n = 30, 60
    row_groups = rng.integers(0, 2, size=m)
    col_groups = rng.integers(0, 2, size=n)
    truth = (row_groups[:, None] == col_groups[None, :]).astype(float)
    observed_mask = rng.random((m, n)) < 0.5
    observations = {
        (i, j): truth[i, j] for i in range(m) for j in range(n) if observed_mask[i, j]
    }
    cfg = CompletionConfig(rank=4, regularization=1e-2, iterations=50, binarize_threshold=0.5, seed=7)
    estimate = complete_matrix(observations, m, n, cfg)
    held = ~observed_mask
    predicted = estimate.probs >= 0.5
    accuracy = float((predicted[held] == truth[held].astype(bool)).mean())
    history = estimate.objective_history
    monotone = all(history[t + 1] <= history[t] + 1e-9 for t in range(len(history) - 1))
    elapsed = time.monotonic() - start
    assert accuracy >= 0.9, f"held-out accuracy {accuracy:.3f}"
    assert monotone
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    print(f"\nACCEPTANCE 6 PASS: planted rank-2 recovery {accuracy:.3f} >= 0.9 held-out, "
          f"objective monotone over {len(history) - 1} iterations ({elapsed:.2f}s)")


def test_criterion_7_metrics_exactness():
    fixture = json.loads((DATA / "metrics_fixture.json").read_text())
    kb = KnowledgeBase()
    id_map = {}
    for name, text in fixture["contents"].items():
        id_map[name] = kb.add_content(text)
    cases = [
        TestCase(id=c["id"], question=c["question"], golden_content_id=id_map[c["golden"]],
                 origin="rephrase")
        for c in fixture["cases"]
    ]
    results = [
        result_for(c["question"], [id_map[cid] for cid in c["retrieved"]])
        for c in fixture["cases"]
    ]
    text_of = {id_map[name]: text for name, text in fixture["contents"].items()}
    judge = TableJudge({
        q: {text_of[id_map[name]]: verdict for name, verdict in row.items()}
        for q, row in fixture["judge_relevant"].items()
    })
    scorer = TableScorer({
        q: {text_of[id_map[name]]: value for name, value in row.items()}
        for q, row in fixture["pair_scores"].items()
    })
    expected = fixture["expected"]
    got_exact = exact_recovery_rate(cases, results)
    got_relevancy = relevancy_rate(judge, kb, cases, results)
    got_reranker = avg_reranker_score(scorer, kb, cases, results)
    assert got_exact == pytest.approx(expected["exact_recovery_rate"], abs=1e-9)
    assert got_relevancy == pytest.approx(expected["relevancy_rate"], abs=1e-9)
    assert got_reranker == pytest.approx(expected["avg_reranker_score"], abs=1e-9)

    # declined => unfaithful on every record produced by the harness
    from qbrag.evaluation import judge_answer_quality

    bundle = ClientBundle.single(MockClient(ClientConfig()))
    for case in cases:
        quality = judge_answer_quality(
            bundle, case, "I cannot determine the answer to that.", True,
            [text_of[id_map["c0"]]], text_of[case.golden_content_id],
        )
        assert quality.faithful is False
    print(f"\nACCEPTANCE 7 PASS: exact_recovery={got_exact}, relevancy={got_relevancy}, "
          f"avg_reranker={got_reranker} match the committed hand calculation; "
          f"declined answers are never faithful")


def test_criterion_8_hermetic_end_to_end(tmp_path, capsys):
    start = time.monotonic()

    def full_run(workdir):
        kb_dir = str(workdir / "kb")
        out_dir = workdir / "out"
        assert main(["ingest", "--contents", str(DATA / "contents12.jsonl"), "--kb", kb_dir]) == 0
        assert main(["genq", "--kb", kb_dir, "--num-questions", "8"]) == 0
        assert main(["build-matrix", "--kb", kb_dir, "--rank", "4", "--percentile", "0.05"]) == 0
        assert main([
            "bench", "--kb", kb_dir, "--strategies", "naive,qb_vanilla", "--ks", "1,3",
            "--make-rephrase", "6", "--out", str(out_dir),
        ]) == 0
        return (out_dir / "report.json").read_bytes(), kb_dir

    report_a, kb_dir = full_run(tmp_path / "run_a")
    report_b, _ = full_run(tmp_path / "run_b")
    elapsed = time.monotonic() - start
    capsys.readouterr()

    assert report_a == report_b, "reports differ between identical runs"
    kb = KnowledgeBase.load(kb_dir)
    for cid, qidx in kb.questions_by_content().items():
        assert any(kb.questions[j].answerable == "yes" for j in qidx), cid
    assert elapsed < 60.0, f"took {elapsed:.2f}s"
    print(f"\nACCEPTANCE 8 PASS: ingest->genq->build-matrix->bench twice in {elapsed:.2f}s < 60s, "
          f"byte-identical report.json, every content kept an answerable question")


def test_criterion_9_preference_dataset_validity(kb12, bundle):
    examples = curate_preferences(bundle, kb12, samples_per_content=4, seed=90)
    assert examples, "expected preference pairs from the bundled fixture"
    for ex in examples:
        winner = ex.reward_a if ex.preferred == "a" else ex.reward_b
        loser = ex.reward_b if ex.preferred == "a" else ex.reward_a
        assert winner > loser

    embedder = bundle.embedder
    rng = np.random.default_rng(91)
    letters = list("abcdefghijklmnopqrstuvwxyz ")
    for trial in range(100):
        texts = ["".join(rng.choice(letters, size=24)) for _ in range(4)]
        candidate, *prior = texts
        assert diversity_score(candidate, prior + [candidate], embedder) == pytest.approx(0.0, abs=1e-9)
        assert diversity_score(candidate, [], embedder) == 1.0
    print(f"\nACCEPTANCE 9 PASS: {len(examples)} preference pairs all have a strict winner; "
          f"duplicate-in-prior diversity = 0 and empty-prior diversity = 1 on 100 random cases")
