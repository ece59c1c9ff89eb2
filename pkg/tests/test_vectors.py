import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbrag.errors import (
    DimensionMismatchError,
    KTooLargeError,
    NonFiniteError,
    ZeroVectorError,
)
from qbrag.vectors import (
    EmbeddingMatrix,
    cosine_distance,
    normalize,
    project_orthogonal,
    similarities,
    top_k,
)


class TestNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-12)

    def test_identity_case(self):
        np.testing.assert_allclose(normalize([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVectorError):
            normalize([0.0, 0.0])

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            normalize([1.0, float("nan")])
        with pytest.raises(NonFiniteError):
            normalize([1.0, float("inf")])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=32))
    def test_unit_norm(self, values):
        arr = np.asarray(values)
        if np.linalg.norm(arr) < 1e-9:
            return
        assert abs(np.linalg.norm(normalize(arr)) - 1.0) < 1e-6


class TestCosineDistance:
    def test_self_distance_zero(self):
        x = normalize([0.3, -0.2, 0.9])
        assert cosine_distance(x, x) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)

    def test_antipodal(self):
        assert cosine_distance([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(2.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine_distance([1.0, 0.0], [1.0, 0.0, 0.0])

    def test_unit_vectors_reduce_to_dot(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = normalize(rng.standard_normal(8))
            y = normalize(rng.standard_normal(8))
            expected = 1.0 - float(np.dot(x, y))
            assert cosine_distance(x, y) == pytest.approx(expected, rel=1e-12, abs=1e-12)


class TestSimilarities:
    def test_identity_columns(self):
        mat = EmbeddingMatrix(np.eye(2))
        np.testing.assert_allclose(similarities(mat, [1.0, 0.0]), [1.0, 0.0])

    def test_zero_residual_gives_zeros(self):
        rng = np.random.default_rng(0)
        mat = EmbeddingMatrix(rng.standard_normal((4, 6)))
        np.testing.assert_allclose(similarities(mat, np.zeros(4)), np.zeros(6))

    def test_matches_per_column_loop_oracle(self):
        rng = np.random.default_rng(42)
        cols = rng.standard_normal((16, 50))
        mat = EmbeddingMatrix(cols)
        q = normalize(rng.standard_normal(16))
        got = similarities(mat, q)
        expected = np.array([float(np.dot(cols[:, j], q)) for j in range(50)])
        np.testing.assert_allclose(got, expected, atol=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            similarities(EmbeddingMatrix(np.eye(3)), [1.0, 0.0])


class TestTopK:
    def test_single_best(self):
        result = top_k([0.2, 0.9, 0.5], 1)
        assert [(s.index, s.score) for s in result] == [(1, 0.9)]

    def test_full_sort(self):
        result = top_k([0.2, 0.9, 0.5], 3)
        assert [s.index for s in result] == [1, 2, 0]

    def test_prefix_of_argsort_oracle(self):
        rng = np.random.default_rng(3)
        scores = rng.standard_normal(200)
        oracle = np.argsort(-scores, kind="stable")
        assert [s.index for s in top_k(scores, 7)] == oracle[:7].tolist()

    def test_k_too_large(self):
        with pytest.raises(KTooLargeError):
            top_k([0.1, 0.2], 3)
        with pytest.raises(KTooLargeError):
            top_k([0.1, 0.2], 0)

    def test_ties_broken_by_ascending_index(self):
        result = top_k([0.5, 0.7, 0.5, 0.7], 4)
        assert [s.index for s in result] == [1, 3, 0, 2]

    @given(
        st.lists(st.floats(-100, 100), min_size=2, max_size=40),
        st.integers(min_value=1, max_value=39),
    )
    @settings(max_examples=60)
    def test_prefix_property(self, scores, k):
        if k + 1 > len(scores):
            return
        shorter = [s.index for s in top_k(scores, k)]
        longer = [s.index for s in top_k(scores, k + 1)]
        assert longer[:k] == shorter

    @given(
        st.lists(st.floats(-100, 100), min_size=1, max_size=40),
        st.floats(min_value=0.01, max_value=1000),
    )
    @settings(max_examples=60)
    def test_positive_scaling_invariance(self, scores, scale):
        k = len(scores)
        base = [s.index for s in top_k(scores, k)]
        scaled = [s.index for s in top_k([s * scale for s in scores], k)]
        assert base == scaled


class TestProjectOrthogonal:
    def test_axis_projection(self):
        q0 = normalize([1.0, 1.0])
        residual = project_orthogonal(q0, [np.array([1.0, 0.0])])
        np.testing.assert_allclose(residual, [0.0, 1.0 / np.sqrt(2)], atol=1e-12)

    def test_empty_basis_returns_input(self):
        q0 = normalize([0.2, 0.5, -1.0])
        np.testing.assert_allclose(project_orthogonal(q0, []), q0)

    def test_containment_gives_tiny_residual(self):
        rng = np.random.default_rng(11)
        basis = [normalize(rng.standard_normal(6)) for _ in range(3)]
        q0 = 0.3 * basis[0] - 1.2 * basis[1] + 0.7 * basis[2]
        assert np.linalg.norm(project_orthogonal(q0, basis)) <= 1e-8

    def test_residual_orthogonal_to_basis(self):
        rng = np.random.default_rng(13)
        q0 = normalize(rng.standard_normal(16))
        basis = [normalize(rng.standard_normal(16)) for _ in range(3)]
        residual = project_orthogonal(q0, basis)
        for b in basis:
            assert abs(float(np.dot(residual, b))) <= 1e-6

    def test_idempotent(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            q0 = normalize(rng.standard_normal(10))
            basis = [normalize(rng.standard_normal(10)) for _ in range(4)]
            first = project_orthogonal(q0, basis)
            second = project_orthogonal(first, basis)
            assert np.linalg.norm(first - second) <= 1e-9

    def test_near_duplicate_basis_skipped(self):
        b = normalize([1.0, 2.0, 3.0])
        residual = project_orthogonal(normalize([3.0, -1.0, 0.5]), [b, b + 1e-12, b])
        assert abs(float(np.dot(residual, b))) <= 1e-6

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            project_orthogonal([1.0, 0.0], [np.array([1.0, 0.0, 0.0])])


class TestBruteForceAgreement:
    def test_similarity_topk_equals_exhaustive_search(self):
        rng = np.random.default_rng(99)
        for _ in range(50):
            cols = np.stack([normalize(rng.standard_normal(16)) for _ in range(40)], axis=1)
            mat = EmbeddingMatrix(cols)
            q = normalize(rng.standard_normal(16))
            got = [s.index for s in top_k(similarities(mat, q), 5)]
            dots = sorted(
                range(40), key=lambda j: (-float(np.dot(cols[:, j], q)), j)
            )
            assert got == dots[:5]
