"""Retrieval strategies behind one fit/retrieve contract.

Six strategies share the interface: construct with clients and knobs, fit on
a frozen knowledge base, then ``retrieve(query, k)`` returns an ordered set
of distinct contents with a per-item trace. Estimators follow sklearn
conventions (params stored verbatim in __init__, fitted state suffixed with
an underscore, get_params/set_params available), so they compose with the
surrounding ecosystem.

Strategy names: "naive" (query-to-content cosine), "hyde" (embed a generated
pseudo-document), "qarag" (embed a generated pseudo-answer), "qb_vanilla"
(walk questions by query-to-question similarity and map to their contents),
"qb_weighted" (contents vote through the answerability matrix), and
"qb_iterproj" (question walk with the query re-projected orthogonally to
already-matched questions, diversifying the set).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import prompts
from .clients import ClientBundle, TextGenRequest
from .errors import ConfigError, EmbeddingsMissingError, MatrixMissingError
from .store import AnswerabilityMatrix, KnowledgeBase
from .validation import check_k
from .vectors import project_orthogonal, top_k

STRATEGY_NAMES = ("naive", "hyde", "qarag", "qb_vanilla", "qb_weighted", "qb_iterproj")
MATRIX_SOURCES = ("observed", "estimate", "provided")
AGGREGATIONS = ("sum", "mean", "softmax")
WEIGHTINGS = ("binary", "probability")

_SPAN_EPS = 1e-8


@dataclass(frozen=True)
class RetrievedItem:
    content_id: str
    score: float
    matched_question_id: str | None = None
    tie_break: str = "none"

    def to_dict(self) -> dict:
        return {
            "content_id": self.content_id,
            "score": self.score,
            "matched_question_id": self.matched_question_id,
            "tie_break": self.tie_break,
        }


@dataclass(frozen=True)
class RetrievalResult:
    query: str
    strategy: str
    k_requested: int
    items: tuple[RetrievedItem, ...]
    pseudo_text: str | None = None
    config: dict = field(default_factory=dict)

    def content_ids(self) -> list[str]:
        return [item.content_id for item in self.items]

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "strategy": self.strategy,
            "k_requested": self.k_requested,
            "items": [item.to_dict() for item in self.items],
            "pseudo_text": self.pseudo_text,
            "config": dict(sorted(self.config.items())),
        }


@dataclass(frozen=True)
class StrategyConfig:
    strategy: str = "qb_vanilla"
    matrix_source: str = "observed"
    weighting: str = "binary"
    aggregation: str = "sum"
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGY_NAMES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}; valid: {', '.join(STRATEGY_NAMES)}"
            )
        if self.matrix_source not in MATRIX_SOURCES:
            raise ConfigError(f"unknown matrix_source {self.matrix_source!r}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.weighting == "probability" and self.matrix_source == "observed":
            raise ConfigError("probability weighting needs an estimate matrix")


class BaseRetriever(BaseEstimator):
    """Shared plumbing: query embedding, fitted-state checks, trace assembly."""

    strategy = "base"

    def fit(self, kb: KnowledgeBase, y=None):
        if kb.content_embeddings is None:
            raise EmbeddingsMissingError("knowledge base has no content embeddings")
        self.kb_ = kb
        return self

    def _check_fitted(self):
        if not hasattr(self, "kb_"):
            raise NotFittedError("call fit(kb) before retrieving")

    def _embed_query(self, text: str) -> np.ndarray:
        return self.embedder.embed([text]).column(0)

    def _config_echo(self) -> dict:
        return {
            name: value
            for name, value in self.get_params(deep=False).items()
            if isinstance(value, (str, int, float, bool)) or value is None
        }

    def _result(self, query, k, items, pseudo_text=None) -> RetrievalResult:
        return RetrievalResult(
            query=query,
            strategy=self.strategy,
            k_requested=k,
            items=tuple(items),
            pseudo_text=pseudo_text,
            config=self._config_echo(),
        )

    def retrieve(self, query: str, k: int) -> RetrievalResult:
        raise NotImplementedError


class NaiveRetriever(BaseRetriever):
    """Rank contents by direct cosine between query and content embeddings."""

    strategy = "naive"

    def __init__(self, embedder=None):
        self.embedder = embedder

    def _retrieve_vector(self, qvec: np.ndarray, k: int, query: str = "", pseudo=None):
        self._check_fitted()
        mat = self.kb_.content_embeddings
        k = check_k(k, mat.count, "contents")
        scores = mat.vectors.T @ qvec
        items = [
            RetrievedItem(content_id=mat.ids[s.index], score=s.score)
            for s in top_k(scores, k)
        ]
        return self._result(query, k, items, pseudo_text=pseudo)

    def retrieve(self, query: str, k: int) -> RetrievalResult:
        self._check_fitted()
        check_k(k, self.kb_.content_embeddings.count, "contents")
        return self._retrieve_vector(self._embed_query(query), k, query=query)


class _RewriteRetriever(NaiveRetriever):
    """Generate a stand-in text for the query, then retrieve like naive."""

    prompt_name = ""

    def __init__(self, generator=None, embedder=None):
        self.generator = generator
        self.embedder = embedder

    def retrieve(self, query: str, k: int) -> RetrievalResult:
        self._check_fitted()
        check_k(k, self.kb_.content_embeddings.count, "contents")
        prompt = prompts.render(self.prompt_name, question=query)
        pseudo = self.generator.generate(TextGenRequest(prompt=prompt))
        return self._retrieve_vector(self._embed_query(pseudo), k, query=query, pseudo=pseudo)


class HydeRetriever(_RewriteRetriever):
    """Retrieve with the embedding of a hypothetical answer document."""

    strategy = "hyde"
    prompt_name = "hyde"


class PseudoAnswerRetriever(_RewriteRetriever):
    """Retrieve with the embedding of a generated candidate answer."""

    strategy = "qarag"
    prompt_name = "pseudo_answer"


def _resolve_matrix(kb: KnowledgeBase, matrix_source: str, provided) -> AnswerabilityMatrix:
    if matrix_source == "observed":
        return kb.observed_matrix()
    if matrix_source == "estimate":
        if kb.matrix is None or kb.matrix.kind != "estimate":
            raise MatrixMissingError("knowledge base has no estimate matrix")
        return kb.matrix
    if matrix_source == "provided":
        if provided is None:
            raise MatrixMissingError("matrix_source='provided' but no matrix was given")
        return provided
    raise ConfigError(f"unknown matrix_source {matrix_source!r}")


class _QuestionSpaceRetriever(BaseRetriever):
    """Shared fit for strategies that score against question embeddings."""

    def fit(self, kb: KnowledgeBase, y=None):
        super().fit(kb)
        if kb.question_embeddings is None:
            raise EmbeddingsMissingError("knowledge base has no question embeddings")
        matrix = _resolve_matrix(kb, self.matrix_source, getattr(self, "matrix", None))
        if (matrix.m, matrix.n) != (len(kb.contents), len(kb.questions)):
            raise MatrixMissingError(
                f"matrix is {matrix.m}x{matrix.n}, store has "
                f"{len(kb.contents)}x{len(kb.questions)}"
            )
        self.matrix_ = matrix
        self.active_mask_ = kb.active_question_mask()
        self.column_map_ = {
            j: rows for j, rows in matrix.column_map().items() if self.active_mask_[j]
        }
        # Questions associated per content, counted on the matrix in use and
        # restricted to retrieval-eligible columns.
        counts = np.zeros(len(kb.contents), dtype=np.int64)
        for rows in self.column_map_.values():
            for i in rows:
                counts[i] += 1
        self.question_counts_ = counts
        self.created_at_ = np.array([c.created_at for c in kb.contents], dtype=np.int64)
        return self

    def _pick_content(self, rows: list[int], selected: set[int], rng) -> tuple[int, str]:
        """Tie-break among candidate contents of one question.

        Preference order: an unselected content, then the newest, then the
        one answering the most questions, then a seeded random draw.
        """
        if len(rows) == 1:
            return rows[0], "none"
        cand = [i for i in rows if i not in selected] or list(rows)
        if len(cand) == 1:
            return cand[0], "none"
        newest = max(self.created_at_[i] for i in cand)
        cand2 = [i for i in cand if self.created_at_[i] == newest]
        if len(cand2) == 1:
            return cand2[0], "newer"
        most = max(self.question_counts_[i] for i in cand2)
        cand3 = [i for i in cand2 if self.question_counts_[i] == most]
        if len(cand3) == 1:
            return cand3[0], "more_questions"
        return int(cand3[rng.integers(len(cand3))]), "random"

    def _masked_scores(self, qvec: np.ndarray) -> np.ndarray:
        z = self.kb_.question_embeddings.vectors.T @ qvec
        z[~self.active_mask_] = -np.inf
        return z


class QuestionMatchRetriever(_QuestionSpaceRetriever):
    """Walk questions by similarity to the query; fetch each one's content.

    Questions are visited in descending similarity; a question's content is
    appended the first time it appears, so the result holds k distinct
    contents. Multi-content questions are resolved by the tie-break chain.
    """

    strategy = "qb_vanilla"

    def __init__(self, embedder=None, matrix_source="observed", matrix=None, seed=0):
        self.embedder = embedder
        self.matrix_source = matrix_source
        self.matrix = matrix
        self.seed = seed

    def _retrieve_vector(self, qvec, k: int, query: str = ""):
        self._check_fitted()
        k = check_k(k, len(self.kb_.contents), "contents")
        rng = np.random.default_rng(self.seed)
        z = self._masked_scores(qvec)
        order = np.argsort(-z, kind="stable")
        selected: set[int] = set()
        items: list[RetrievedItem] = []
        for j in order:
            j = int(j)
            if not np.isfinite(z[j]):
                break
            rows = self.column_map_.get(j)
            if not rows:
                continue
            i, tie = self._pick_content(rows, selected, rng)
            if i in selected:
                continue
            selected.add(i)
            items.append(
                RetrievedItem(
                    content_id=self.kb_.contents[i].id,
                    score=float(z[j]),
                    matched_question_id=self.kb_.questions[j].id,
                    tie_break=tie,
                )
            )
            if len(items) == k:
                break
        return self._result(query, k, items)

    def retrieve(self, query: str, k: int) -> RetrievalResult:
        self._check_fitted()
        check_k(k, len(self.kb_.contents), "contents")
        return self._retrieve_vector(self._embed_query(query), k, query=query)


class WeightedVoteRetriever(_QuestionSpaceRetriever):
    """Aggregate question similarities into per-content importance scores.

    Content importance u is an aggregation of the matrix row against the
    similarity vector: a plain weighted sum by default, a row-normalized
    mean, or a softmax-weighted average (the vote need not be linear).
    With binary weighting the matrix is binarized at its threshold; with
    probability weighting estimate probabilities are used raw.
    """

    strategy = "qb_weighted"

    def __init__(
        self,
        embedder=None,
        matrix_source="observed",
        matrix=None,
        weighting="binary",
        aggregation="sum",
        seed=0,
    ):
        self.embedder = embedder
        self.matrix_source = matrix_source
        self.matrix = matrix
        self.weighting = weighting
        self.aggregation = aggregation
        self.seed = seed

    def fit(self, kb: KnowledgeBase, y=None):
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        super().fit(kb)
        weights = self.matrix_.dense(self.weighting)
        weights[:, ~self.active_mask_] = 0.0
        self.weights_ = weights
        return self

    def _importance(self, z: np.ndarray) -> np.ndarray:
        z = np.where(np.isfinite(z), z, 0.0)
        if self.aggregation == "sum":
            return self.weights_ @ z
        if self.aggregation == "mean":
            totals = self.weights_.sum(axis=1)
            raw = self.weights_ @ z
            return np.divide(raw, totals, out=np.zeros_like(raw), where=totals > 0)
        exp = np.exp(z)
        denom = self.weights_ @ exp
        numer = self.weights_ @ (exp * z)
        return np.divide(numer, denom, out=np.zeros_like(numer), where=denom > 0)

    def _retrieve_vector(self, qvec, k: int, query: str = ""):
        self._check_fitted()
        k = check_k(k, len(self.kb_.contents), "contents")
        z = self._masked_scores(qvec)
        u = self._importance(z)
        items = [
            RetrievedItem(content_id=self.kb_.contents[s.index].id, score=s.score)
            for s in top_k(u, k)
        ]
        return self._result(query, k, items)

    def retrieve(self, query: str, k: int) -> RetrievalResult:
        self._check_fitted()
        check_k(k, len(self.kb_.contents), "contents")
        return self._retrieve_vector(self._embed_query(query), k, query=query)


class ProjectedMatchRetriever(_QuestionSpaceRetriever):
    """Question walk with orthogonal re-projection for a diverse result set.

    After each accepted pick the query is replaced by the residual of the
    original query against the span of all matched question embeddings, so
    the next pick rewards directions not yet covered. When the original
    query is (numerically) inside that span, projection stops and the walk
    falls back to plain similarity order over the remaining questions.
    """

    strategy = "qb_iterproj"

    def __init__(self, embedder=None, matrix_source="observed", matrix=None, seed=0):
        self.embedder = embedder
        self.matrix_source = matrix_source
        self.matrix = matrix
        self.seed = seed

    def _walk(self, q0: np.ndarray, k: int):
        rng = np.random.default_rng(self.seed)
        masked: set[int] = set(np.nonzero(~self.active_mask_)[0].tolist())
        selected: set[int] = set()
        items: list[RetrievedItem] = []
        steps: list[dict] = []
        basis: list[np.ndarray] = []
        qbar = q0.copy()
        fallback = False
        n = len(self.kb_.questions)
        qmat = self.kb_.question_embeddings.vectors
        while len(items) < k and len(masked) < n:
            if not fallback and float(np.linalg.norm(qbar)) < _SPAN_EPS:
                fallback = True
            z = qmat.T @ (q0 if fallback else qbar)
            if masked:
                z[list(masked)] = -np.inf
            j = int(np.argmax(z))
            if not np.isfinite(z[j]):
                break
            rows = self.column_map_.get(j)
            if not rows:
                masked.add(j)
                continue
            i, tie = self._pick_content(rows, selected, rng)
            if i in selected:
                # Every content of this question is already taken; the
                # question can never yield anything new.
                masked.add(j)
                continue
            selected.add(i)
            items.append(
                RetrievedItem(
                    content_id=self.kb_.contents[i].id,
                    score=float(z[j]),
                    matched_question_id=self.kb_.questions[j].id,
                    tie_break=tie,
                )
            )
            masked.add(j)
            if not fallback:
                basis.append(qmat[:, j].copy())
                qbar = project_orthogonal(q0, basis)
                steps.append({"residual": qbar.copy(), "basis": [b.copy() for b in basis]})
        return items, steps

    def _retrieve_vector(self, qvec, k: int, query: str = ""):
        self._check_fitted()
        k = check_k(k, len(self.kb_.contents), "contents")
        items, _ = self._walk(qvec, k)
        return self._result(query, k, items)

    def retrieve_with_trace(self, query: str, k: int):
        """Like retrieve, additionally returning per-pick projection state."""
        self._check_fitted()
        k = check_k(k, len(self.kb_.contents), "contents")
        qvec = self._embed_query(query)
        items, steps = self._walk(qvec, k)
        return self._result(query, k, items), steps

    def retrieve(self, query: str, k: int) -> RetrievalResult:
        return self.retrieve_with_trace(query, k)[0]


STRATEGIES = {
    "naive": NaiveRetriever,
    "hyde": HydeRetriever,
    "qarag": PseudoAnswerRetriever,
    "qb_vanilla": QuestionMatchRetriever,
    "qb_weighted": WeightedVoteRetriever,
    "qb_iterproj": ProjectedMatchRetriever,
}


def make_retriever(config: StrategyConfig, clients: ClientBundle, matrix=None) -> BaseRetriever:
    """Instantiate the strategy named in the config with the right clients."""
    name = config.strategy
    if name == "naive":
        return NaiveRetriever(embedder=clients.embedder)
    if name == "hyde":
        return HydeRetriever(generator=clients.generator, embedder=clients.embedder)
    if name == "qarag":
        return PseudoAnswerRetriever(generator=clients.generator, embedder=clients.embedder)
    if name == "qb_vanilla":
        return QuestionMatchRetriever(
            embedder=clients.embedder,
            matrix_source=config.matrix_source,
            matrix=matrix,
            seed=config.seed,
        )
    if name == "qb_weighted":
        return WeightedVoteRetriever(
            embedder=clients.embedder,
            matrix_source=config.matrix_source,
            matrix=matrix,
            weighting=config.weighting,
            aggregation=config.aggregation,
            seed=config.seed,
        )
    if name == "qb_iterproj":
        return ProjectedMatchRetriever(
            embedder=clients.embedder,
            matrix_source=config.matrix_source,
            matrix=matrix,
            seed=config.seed,
        )
    raise ConfigError(f"unknown strategy {name!r}")
