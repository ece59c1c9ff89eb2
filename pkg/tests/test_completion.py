import numpy as np
import pytest

from qbrag import ClientConfig, CompletionConfig, KnowledgeBase, MockClient, complete_matrix
from qbrag.completion import LowRankCompleter, evaluate_candidates, select_candidates
from qbrag.errors import EmbeddingsMissingError, NoObservationsError, RankTooLargeError

from helpers import planted_kb


def random_planted_kb(seed=0, m=4, n_per=2, d=8):
    rng = np.random.default_rng(seed)
    contents = rng.standard_normal((d, m))
    contents /= np.linalg.norm(contents, axis=0)
    owners = [i for i in range(m) for _ in range(n_per)]
    questions = rng.standard_normal((d, len(owners)))
    questions /= np.linalg.norm(questions, axis=0)
    return planted_kb(contents, questions, owners)


class TestSelectCandidates:
    def test_full_percentile_selects_everything(self):
        kb = random_planted_kb(m=3, n_per=2)
        selection = select_candidates(kb, percentile=1.0)
        assert len(selection.pairs) == 3 * 6

    def test_zero_limit_keeps_only_observed(self):
        kb = random_planted_kb(m=3, n_per=2)
        selection = select_candidates(kb, percentile=0.0, include_observed=True)
        assert set(selection.pairs) == set(kb.observed_matrix().entries)

    def test_quartile_matches_full_sort_oracle(self):
        kb = random_planted_kb(seed=5, m=4, n_per=2, d=6)
        m, n = 4, 8
        sims = kb.content_embeddings.vectors.T @ kb.question_embeddings.vectors
        ranked = sorted(
            ((i, j) for i in range(m) for j in range(n)),
            key=lambda p: (-sims[p], p),
        )
        expected = set(ranked[: m * n // 4])
        selection = select_candidates(kb, percentile=0.25, include_observed=False)
        assert set(selection.pairs) == expected

    def test_every_pair_clears_lambda(self):
        kb = random_planted_kb(seed=9, m=5, n_per=3)
        selection = select_candidates(kb, percentile=0.3, include_observed=False)
        sims = kb.content_embeddings.vectors.T @ kb.question_embeddings.vectors
        for i, j in selection.pairs:
            assert sims[i, j] >= selection.lam

    def test_requires_embeddings(self):
        kb = KnowledgeBase()
        kb.add_content("text")
        with pytest.raises(EmbeddingsMissingError):
            select_candidates(kb, 0.5)


class TestEvaluateCandidates:
    def test_observed_only_forces_ones_without_judge(self):
        kb = random_planted_kb()

        class ExplodingJudge:
            def generate(self, request):
                raise AssertionError("judge must not be called")

        selection = select_candidates(kb, percentile=0.0, include_observed=True)
        outcome = evaluate_candidates(ExplodingJudge(), kb, selection)
        assert set(outcome.observations) == set(selection.observed)
        assert all(v == 1.0 for v in outcome.observations.values())
        assert outcome.failures == []

    def test_mock_all_no_gives_zeros_off_observed(self):
        kb = random_planted_kb(m=2, n_per=1)
        judge = MockClient(
            ClientConfig(),
            rules=[("Source relevant", '{"Explanation": "", "Source relevant": "No"}')],
        )
        selection = select_candidates(kb, percentile=1.0, include_observed=True)
        outcome = evaluate_candidates(judge, kb, selection)
        for (i, j), v in outcome.observations.items():
            expected = 1.0 if (i, j) in selection.observed else 0.0
            assert v == expected

    def test_sentinel_plan_matches_exactly(self):
        # 3x4 fixture: sentinels in question texts drive the verdicts
        kb = KnowledgeBase()
        for i in range(3):
            kb.add_content(f"fixture content number {i}")
        plan = ["REL:YES", "REL:NO", "REL:YES", "REL:NO"]
        for j, token in enumerate(plan):
            kb.attach_question(kb.contents[j % 3].id, f"question {j} {token}?")
        client = MockClient(ClientConfig())
        kb.embed_contents(client)
        kb.embed_questions(client)
        selection = select_candidates(kb, percentile=1.0, include_observed=True)
        outcome = evaluate_candidates(client, kb, selection)
        for (i, j), v in outcome.observations.items():
            if (i, j) in selection.observed:
                assert v == 1.0
            else:
                assert v == (1.0 if plan[j] == "REL:YES" else 0.0)

    def test_judge_errors_become_failures_not_zeros(self):
        kb = random_planted_kb(m=2, n_per=1)

        class FlakyJudge:
            def generate(self, request):
                raise RuntimeError("down")

        from qbrag.errors import GenerationFailedError

        class Wrapping:
            def generate(self, request):
                raise GenerationFailedError("down")

        selection = select_candidates(kb, percentile=1.0, include_observed=True)
        outcome = evaluate_candidates(Wrapping(), kb, selection)
        assert len(outcome.failures) == len(selection.pairs) - len(selection.observed)
        assert set(outcome.observations) == set(selection.observed)


def planted_rank2(seed=2024, m=30, n=60, observe=0.5):
    rng = np.random.default_rng(seed)
    row_groups = rng.integers(0, 2, size=m)
    col_groups = rng.integers(0, 2, size=n)
    truth = (row_groups[:, None] == col_groups[None, :]).astype(float)
    mask = rng.random((m, n)) < observe
    observations = {(i, j): truth[i, j] for i in range(m) for j in range(n) if mask[i, j]}
    return truth, mask, observations


class TestCompleteMatrix:
    def test_fully_observed_roundtrips_exactly(self):
        rng = np.random.default_rng(1)
        truth = (rng.random((5, 7)) > 0.5).astype(float)
        obs = {(i, j): truth[i, j] for i in range(5) for j in range(7)}
        est = complete_matrix(obs, 5, 7, CompletionConfig(rank=2, seed=0))
        np.testing.assert_array_equal(est.probs, truth)

    def test_constant_matrix_completion(self):
        rng = np.random.default_rng(3)
        obs = {
            (i, j): 1.0 for i in range(10) for j in range(10) if rng.random() < 0.4
        }
        est = complete_matrix(obs, 10, 10, CompletionConfig(rank=2, seed=1))
        unobserved = [(i, j) for i in range(10) for j in range(10) if (i, j) not in obs]
        assert all(est.probs[i, j] >= 0.9 for i, j in unobserved)

    def test_planted_rank2_recovery(self):
        truth, mask, observations = planted_rank2()
        cfg = CompletionConfig(rank=4, regularization=1e-2, iterations=50, seed=7)
        est = complete_matrix(observations, 30, 60, cfg)
        held = ~mask
        predicted = est.probs >= est.threshold
        accuracy = (predicted[held] == truth[held].astype(bool)).mean()
        assert accuracy >= 0.9

    def test_objective_monotone_non_increasing(self):
        _, _, observations = planted_rank2(seed=99)
        cfg = CompletionConfig(rank=4, iterations=30, seed=5)
        est = complete_matrix(observations, 30, 60, cfg)
        history = est.objective_history
        assert all(history[t + 1] <= history[t] + 1e-9 for t in range(len(history) - 1))

    def test_entries_clamped_to_unit_interval(self):
        _, _, observations = planted_rank2(seed=4)
        est = complete_matrix(observations, 30, 60, CompletionConfig(rank=3, seed=2))
        assert est.probs.min() >= 0.0
        assert est.probs.max() <= 1.0

    def test_deterministic_under_seed(self):
        _, _, observations = planted_rank2(seed=11)
        cfg = CompletionConfig(rank=4, seed=13)
        a = complete_matrix(observations, 30, 60, cfg)
        b = complete_matrix(observations, 30, 60, cfg)
        np.testing.assert_array_equal(a.probs, b.probs)

    def test_no_observations(self):
        with pytest.raises(NoObservationsError):
            complete_matrix({}, 4, 4, CompletionConfig(rank=2))

    def test_rank_too_large(self):
        with pytest.raises(RankTooLargeError):
            complete_matrix({(0, 0): 1.0}, 3, 5, CompletionConfig(rank=4))


class TestLowRankCompleter:
    def test_sklearn_params_roundtrip(self):
        model = LowRankCompleter(rank=5, regularization=0.5)
        params = model.get_params()
        assert params["rank"] == 5
        clone = LowRankCompleter(**params)
        assert clone.get_params() == params

    def test_transform_preserves_observed(self):
        X = np.array([[1.0, np.nan], [np.nan, 0.0]])
        model = LowRankCompleter(rank=1, random_state=0).fit(X)
        filled = model.transform(X)
        assert filled[0, 0] == 1.0
        assert filled[1, 1] == 0.0
        assert not np.isnan(filled).any()

    def test_predict_before_fit_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            LowRankCompleter().predict()
