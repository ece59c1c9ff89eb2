"""Unit-vector math: normalization, cosine scoring, exact top-k, projection.

Every retrieval strategy bottoms out here. All computation is float64 and
exact (dense matrix-vector products, full sorts); there is no approximate
index. Inputs and outputs are plain numpy arrays so the functions compose
with the estimator classes and with user code alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, ZeroVectorError
from .validation import as_float_vector, check_k

_ZERO_NORM_EPS = 1e-12
_SPAN_EPS = 1e-8


@dataclass(frozen=True)
class ScoredIndex:
    """A 0-based position paired with its similarity score."""

    index: int
    score: float


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Column-stacked unit vectors with a parallel list of item ids.

    ``vectors`` has shape (d, count): one column per item, matching the
    convention that a content base with M items occupies a d x M matrix.
    Identity comparison only; compare ``vectors`` / ``ids`` directly when
    equality matters.
    """

    vectors: np.ndarray
    ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatchError(
                f"embedding matrix must be 2-D (d, count), got shape {arr.shape}"
            )
        object.__setattr__(self, "vectors", arr)
        ids = tuple(self.ids) if self.ids else tuple(str(i) for i in range(arr.shape[1]))
        if len(ids) != arr.shape[1]:
            raise DimensionMismatchError(
                f"{len(ids)} ids for {arr.shape[1]} columns"
            )
        if len(set(ids)) != len(ids):
            raise ValueError("embedding matrix ids must be unique")
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_columns(cls, columns, ids=None) -> "EmbeddingMatrix":
        """Stack 1-D vectors as columns; ids default to stringified ordinals."""
        cols = [as_float_vector(c, "column") for c in columns]
        if not cols:
            raise DimensionMismatchError("need at least one column")
        dims = {c.shape[0] for c in cols}
        if len(dims) != 1:
            raise DimensionMismatchError(f"columns have mixed dimensions: {sorted(dims)}")
        return cls(np.stack(cols, axis=1), tuple(ids) if ids is not None else ())

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def count(self) -> int:
        return self.vectors.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.vectors[:, j]

    def select(self, indices) -> "EmbeddingMatrix":
        """A new matrix keeping only the given column positions, in order."""
        idx = list(indices)
        return EmbeddingMatrix(self.vectors[:, idx], tuple(self.ids[i] for i in idx))


def normalize(v) -> np.ndarray:
    """Scale ``v`` to unit L2 norm.

    Raises ZeroVectorError for (near-)zero input and NonFiniteError when
    any entry is NaN or infinite.
    """
    arr = as_float_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm < _ZERO_NORM_EPS:
        raise ZeroVectorError(f"cannot normalize a vector with norm {norm:.3e}")
    return arr / norm


def cosine_distance(x, y) -> float:
    """1 - cos(x, y); 0 for parallel, 1 for orthogonal, 2 for antipodal."""
    xa = as_float_vector(x, "x")
    ya = as_float_vector(y, "y")
    if xa.shape[0] != ya.shape[0]:
        raise DimensionMismatchError(
            f"x has dimension {xa.shape[0]}, y has {ya.shape[0]}"
        )
    nx = float(np.linalg.norm(xa))
    ny = float(np.linalg.norm(ya))
    if nx < _ZERO_NORM_EPS or ny < _ZERO_NORM_EPS:
        raise ZeroVectorError("cosine distance is undefined for zero vectors")
    return float(1.0 - np.dot(xa, ya) / (nx * ny))


def similarities(mat: EmbeddingMatrix, q) -> np.ndarray:
    """Dot product of ``q`` against every column of ``mat``.

    Exact dense product; entry j equals column_j . q.
    """
    qa = as_float_vector(q, "query")
    if qa.shape[0] != mat.dim:
        raise DimensionMismatchError(
            f"query has dimension {qa.shape[0]}, matrix columns have {mat.dim}"
        )
    return mat.vectors.T @ qa


def top_k(scores, k: int) -> list[ScoredIndex]:
    """The k highest-scoring positions, descending; ties broken by ascending index."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"scores must be 1-D, got shape {arr.shape}")
    k = check_k(k, arr.shape[0])
    # Stable sort on the negated scores keeps equal scores in index order.
    order = np.argsort(-arr, kind="stable")[:k]
    return [ScoredIndex(int(i), float(arr[i])) for i in order]


def project_orthogonal(q0, basis) -> np.ndarray:
    """Residual of ``q0`` after removing its projection onto span(basis).

    The basis is orthonormalized internally with modified Gram-Schmidt;
    near-dependent basis vectors (residual norm < 1e-8) are skipped, so
    near-duplicate inputs are harmless. The residual is returned without
    renormalization and may have a tiny norm when q0 lies in the span.
    """
    q = as_float_vector(q0, "q0")
    ortho: list[np.ndarray] = []
    for b in basis:
        u = as_float_vector(b, "basis vector")
        if u.shape[0] != q.shape[0]:
            raise DimensionMismatchError(
                f"basis vector dimension {u.shape[0]} != {q.shape[0]}"
            )
        u = u.copy()
        for w in ortho:
            u -= np.dot(u, w) * w
        norm = float(np.linalg.norm(u))
        if norm < _SPAN_EPS:
            continue
        ortho.append(u / norm)
    residual = q.copy()
    # Two MGS passes keep |residual . basis| comfortably under 1e-6.
    for _ in range(2):
        for w in ortho:
            residual -= np.dot(residual, w) * w
    return residual
