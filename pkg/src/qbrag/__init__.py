"""Query-aligned retrieval-augmented generation engine.

Builds a question base from a content corpus offline, retrieves content for
new queries by matching them against that question base, and benchmarks the
approach against conventional retrieval strategies with a full metric
harness.
"""

from .clients import ClientBundle, ClientConfig, HttpClient, MockClient, TextGenRequest, make_client
from .completion import CompletionConfig, LowRankCompleter, complete_matrix, select_candidates
from .evaluation import EvaluationReport, TestCase, generate_answer, run_benchmark
from .pipeline import (
    GenerationConfig,
    PreferenceExample,
    curate_preferences,
    diversity_score,
    filter_questions,
    generate_questions,
    judge_answerability,
)
from .retrievers import (
    STRATEGIES,
    STRATEGY_NAMES,
    BaseRetriever,
    HydeRetriever,
    NaiveRetriever,
    ProjectedMatchRetriever,
    PseudoAnswerRetriever,
    QuestionMatchRetriever,
    RetrievalResult,
    StrategyConfig,
    WeightedVoteRetriever,
    make_retriever,
)
from .store import AnswerabilityMatrix, Content, KnowledgeBase, Question
from .vectors import (
    EmbeddingMatrix,
    ScoredIndex,
    cosine_distance,
    normalize,
    project_orthogonal,
    similarities,
    top_k,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerabilityMatrix",
    "BaseRetriever",
    "ClientBundle",
    "ClientConfig",
    "CompletionConfig",
    "Content",
    "EmbeddingMatrix",
    "EvaluationReport",
    "GenerationConfig",
    "HttpClient",
    "HydeRetriever",
    "KnowledgeBase",
    "LowRankCompleter",
    "MockClient",
    "NaiveRetriever",
    "PreferenceExample",
    "ProjectedMatchRetriever",
    "PseudoAnswerRetriever",
    "Question",
    "QuestionMatchRetriever",
    "RetrievalResult",
    "STRATEGIES",
    "STRATEGY_NAMES",
    "ScoredIndex",
    "StrategyConfig",
    "TestCase",
    "TextGenRequest",
    "WeightedVoteRetriever",
    "complete_matrix",
    "cosine_distance",
    "curate_preferences",
    "diversity_score",
    "filter_questions",
    "generate_answer",
    "generate_questions",
    "judge_answerability",
    "make_client",
    "make_retriever",
    "normalize",
    "project_orthogonal",
    "run_benchmark",
    "select_candidates",
    "similarities",
    "top_k",
]
