"""Dense answerability estimation from sparse observations.

Three stages: pick candidate (content, question) pairs whose embedding
similarity clears a percentile threshold, judge each candidate pair, then
fill the rest of the matrix by low-rank alternating least squares over the
observed entries only. Unobserved entries never enter the loss; absence of
an observation is not evidence of a zero.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_random_state

from .errors import (
    ClientError,
    EmbeddingsMissingError,
    GenerationFailedError,
    NoObservationsError,
    ParseFailureError,
    RankTooLargeError,
)
from .pipeline import judge_answerability
from .store import AnswerabilityMatrix, KnowledgeBase


@dataclass(frozen=True)
class CompletionConfig:
    rank: int = 16
    regularization: float = 1e-2
    iterations: int = 50
    binarize_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.regularization <= 0:
            raise ValueError("regularization must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class CandidateSelection:
    """Pairs whose content-question similarity reached the cut ``lam``."""

    pairs: tuple[tuple[int, int], ...]
    lam: float
    percentile: float
    observed: frozenset = field(default_factory=frozenset)


def select_candidates(
    kb: KnowledgeBase, percentile: float, include_observed: bool = True
) -> CandidateSelection:
    """Select the top ``percentile`` fraction of all MxN similarity pairs.

    The cut lambda is the similarity of the last selected pair (rank-based
    quantile), so percentile -> 0 selects nothing beyond the observed set
    and percentile = 1 selects every pair. Observed generation pairs are
    unioned in when ``include_observed``.
    """
    if not 0.0 <= percentile <= 1.0:
        raise ValueError("percentile must lie in [0, 1]")
    if kb.content_embeddings is None or kb.question_embeddings is None:
        raise EmbeddingsMissingError("build embeddings before selecting candidates")
    sims = kb.content_embeddings.vectors.T @ kb.question_embeddings.vectors
    m, n = sims.shape
    total = m * n
    take = int(round(percentile * total))
    observed = frozenset(kb.observed_matrix().entries)
    if take == 0:
        chosen: list[tuple[int, int]] = []
        lam = float("inf")
    else:
        flat = sims.ravel()
        # Stable sort on negated values: ties resolve by ascending (i, j).
        order = np.argsort(-flat, kind="stable")[:take]
        chosen = [(int(p) // n, int(p) % n) for p in order]
        lam = float(flat[order[-1]])
    pairs = set(chosen)
    if include_observed:
        pairs |= observed
    return CandidateSelection(
        pairs=tuple(sorted(pairs)),
        lam=lam,
        percentile=percentile,
        observed=observed,
    )


@dataclass
class EvaluationOutcome:
    """Judged candidate entries plus a manifest of per-pair failures."""

    observations: dict[tuple[int, int], float]
    failures: list[dict]


def evaluate_candidates(
    judge_client, kb: KnowledgeBase, selection: CandidateSelection, max_parallel: int | None = None
) -> EvaluationOutcome:
    """One binary verdict per candidate pair.

    Observed generation pairs are forced to 1 with no judge call, since
    generating a question from a content implies the content answers it.
    Judge failures leave the entry missing and are reported, never coerced
    to 0.
    """
    if not selection.pairs:
        raise ValueError("selection is empty")
    if max_parallel is None:
        max_parallel = getattr(getattr(judge_client, "config", None), "max_parallel", 4)
    observations: dict[tuple[int, int], float] = {}
    todo: list[tuple[int, int]] = []
    for i, j in selection.pairs:
        if (i, j) in selection.observed:
            observations[(i, j)] = 1.0
        else:
            todo.append((i, j))

    def judge(pair):
        i, j = pair
        try:
            verdict, _ = judge_answerability(
                judge_client, kb.questions[j].text, kb.contents[i].text
            )
            return pair, (1.0 if verdict == "yes" else 0.0), None
        except (ClientError, ParseFailureError, GenerationFailedError) as exc:
            return pair, None, str(exc)

    failures: list[dict] = []
    if todo:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            results = list(pool.map(judge, todo))
        for (i, j), value, error in sorted(results, key=lambda r: r[0]):
            if error is None:
                observations[(i, j)] = value
            else:
                failures.append({"i": i, "j": j, "error": error})
    return EvaluationOutcome(observations=observations, failures=failures)


def save_failures(path, failures) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in failures:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


class LowRankCompleter(BaseEstimator):
    """Matrix completion by alternating least squares on observed entries.

    Fit takes an (m, n) array with NaN marking unobserved cells, removes the
    global mean of the observed cells (the baseline predictor, which keeps
    constant matrices exact), and learns factors P (m, rank) and W (n, rank)
    minimizing the squared error of the residuals on the observed cells plus
    an L2 penalty on both factors. Each half-sweep solves its ridge
    subproblems exactly, so the objective is non-increasing across
    iterations (tracked in ``objective_history_``).
    """

    def __init__(self, rank=16, regularization=1e-2, iterations=50, random_state=None):
        self.rank = rank
        self.regularization = regularization
        self.iterations = iterations
        self.random_state = random_state

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got shape {X.shape}")
        m, n = X.shape
        if self.rank > min(m, n):
            raise RankTooLargeError(f"rank {self.rank} exceeds min(m, n) = {min(m, n)}")
        mask = ~np.isnan(X)
        if not mask.any():
            raise NoObservationsError("no observed entries to fit")
        rng = check_random_state(self.random_state)
        r = self.rank
        mu = float(X[mask].mean())
        R = X - mu
        P = rng.standard_normal((m, r)) * 0.1
        W = rng.standard_normal((n, r)) * 0.1
        eye = self.regularization * np.eye(r)

        def solve_rows(factors_other, axis):
            # Ridge solve per row of the target factor, observed cells only.
            out = np.zeros((R.shape[axis], r))
            for idx in range(R.shape[axis]):
                obs = mask[idx, :] if axis == 0 else mask[:, idx]
                if not obs.any():
                    continue
                values = R[idx, obs] if axis == 0 else R[obs, idx]
                F = factors_other[obs]
                out[idx] = np.linalg.solve(F.T @ F + eye, F.T @ values)
            return out

        def objective():
            resid = (R - P @ W.T)[mask]
            return float(
                resid @ resid
                + self.regularization * ((P * P).sum() + (W * W).sum())
            )

        history = [objective()]
        for _ in range(self.iterations):
            P = solve_rows(W, axis=0)
            W = solve_rows(P, axis=1)
            history.append(objective())
        self.mu_ = mu
        self.P_ = P
        self.W_ = W
        self.objective_history_ = history
        self.n_features_in_ = n
        return self

    def predict(self):
        """The completed dense matrix, clamped to [0, 1]."""
        if not hasattr(self, "P_"):
            raise NotFittedError("call fit before predict")
        return np.clip(self.mu_ + self.P_ @ self.W_.T, 0.0, 1.0)

    def transform(self, X):
        """Fill only the NaN cells of ``X`` with completed values."""
        X = np.asarray(X, dtype=np.float64)
        completed = self.predict()
        if X.shape != completed.shape:
            raise ValueError(f"shape mismatch: {X.shape} vs {completed.shape}")
        out = X.copy()
        hole = np.isnan(out)
        out[hole] = completed[hole]
        return out


def complete_matrix(observations, m: int, n: int, cfg: CompletionConfig) -> AnswerabilityMatrix:
    """Estimate the full matrix from sparse observed entries.

    Observed entries are written back verbatim into the estimate, so a
    fully observed input round-trips exactly.
    """
    items = dict(observations)
    if not items:
        raise NoObservationsError("need at least one observation")
    X = np.full((m, n), np.nan)
    for (i, j), v in items.items():
        if not (0 <= i < m and 0 <= j < n):
            raise ValueError(f"observation ({i}, {j}) out of bounds for {m}x{n}")
        X[i, j] = float(v)
    model = LowRankCompleter(
        rank=cfg.rank,
        regularization=cfg.regularization,
        iterations=cfg.iterations,
        random_state=cfg.seed,
    ).fit(X)
    probs = model.transform(X)
    np.clip(probs, 0.0, 1.0, out=probs)
    estimate = AnswerabilityMatrix.estimate(probs, cfg.binarize_threshold)
    estimate.objective_history = model.objective_history_
    return estimate
