"""Test-set generation, answer generation, metrics, and the benchmark runner.

Two test-set builders (rephrasings of stored questions, and newly written
out-of-distribution questions), the grounded answer generator, the retrieval
metrics (exact recovery, judge relevancy, re-ranker score) and answer
metrics (declined, faithfulness, relevancy, guideline adherence), plus
``run_benchmark`` which sweeps strategy x k x case and emits a
deterministic report.
"""

from __future__ import annotations

import json
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import prompts
from .clients import ClientBundle, TextGenRequest
from .errors import (
    CaseResultMismatchError,
    ClientError,
    ConfigError,
    GenerationFailedError,
    ParseFailureError,
    RephraseCollisionWarning,
)
from .pipeline import judge_answerability
from .retrievers import RetrievalResult, make_retriever
from .store import KnowledgeBase

# Canonical refusal phrases fixed by the answer-generation prompt; an output
# containing either (anywhere) counts as a declined answer.
DECLINE_PHRASES = (
    "I cannot determine the answer to that.",
    "I do not know the answer to that.",
)


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class despite the name

    id: str
    question: str
    golden_content_id: str
    origin: str

    def __post_init__(self):
        if self.origin not in ("rephrase", "ood"):
            raise ValueError(f"bad origin {self.origin!r}")


@dataclass
class AnswerRecord:
    test_case_id: str
    strategy: str
    k: int
    retrieved: RetrievalResult
    answer: str
    declined: bool
    relevant: bool | None
    faithful: bool | None
    adherence: float | None
    errors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.declined and self.faithful:
            raise ValueError("a declined answer cannot be faithful")


@dataclass
class AnswerQuality:
    relevant: bool | None
    faithful: bool | None
    adherence: float | None
    errors: dict = field(default_factory=dict)


def _squash(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().casefold()


# -- test-set builders --------------------------------------------------------


def build_rephrase_set(
    clients: ClientBundle, kb: KnowledgeBase, sample_size: int, seed: int
) -> list[TestCase]:
    """Rephrase a uniform sample of stored questions into test cases.

    A rephrasing that reproduces any stored question (case- and
    whitespace-insensitively) is re-prompted once, then dropped with a
    warning, so no test question appears verbatim in the question base.
    """
    eligible = [q for q in kb.questions if q.answerable != "no"]
    if sample_size < 1 or sample_size > len(eligible):
        raise ValueError(
            f"sample_size must be in [1, {len(eligible)}], got {sample_size}"
        )
    stored = {_squash(q.text) for q in kb.questions}
    rng = np.random.default_rng(seed)
    picks = sorted(rng.choice(len(eligible), size=sample_size, replace=False).tolist())
    cases: list[TestCase] = []
    for ordinal, pos in enumerate(picks):
        source = eligible[pos]
        prompt = prompts.render("rephrase", question=source.text)
        candidate = clients.generator.generate(TextGenRequest(prompt=prompt)).strip()
        if _squash(candidate) in stored:
            retry = prompt + "\nUse wording that differs from the original question."
            candidate = clients.generator.generate(TextGenRequest(prompt=retry)).strip()
        if not candidate or _squash(candidate) in stored:
            warnings.warn(
                RephraseCollisionWarning(
                    f"dropping rephrase of {source.id}: output duplicates a stored question"
                )
            )
            continue
        cases.append(
            TestCase(
                id=f"r{ordinal:06d}",
                question=candidate,
                golden_content_id=source.content_id,
                origin="rephrase",
            )
        )
    return cases


def build_ood_set(clients: ClientBundle, kb: KnowledgeBase, seed: int = 0) -> list[TestCase]:
    """One newly written question per content, kept only if judged answerable.

    The generator is shown the content's existing questions and asked for a
    different one; candidates that duplicate any stored question are dropped,
    and survivors must pass the answerability judge against their content.
    ``seed`` is part of the contract for backends that sample; the bundled
    backends are deterministic and ignore it.
    """
    del seed
    stored = {_squash(q.text) for q in kb.questions}
    by_content = kb.questions_by_content()
    cases: list[TestCase] = []
    for ordinal, content in enumerate(kb.contents):
        existing = "\n".join(kb.questions[j].text for j in by_content[content.id]) or "(none)"
        prompt = prompts.render("new_question", content=content.text, existing_questions=existing)
        candidate = clients.generator.generate(TextGenRequest(prompt=prompt)).strip()
        if not candidate or _squash(candidate) in stored:
            continue
        try:
            verdict, _ = judge_answerability(clients.generator, candidate, content.text)
        except (ClientError, ParseFailureError, GenerationFailedError):
            continue
        if verdict != "yes":
            continue
        cases.append(
            TestCase(
                id=f"o{ordinal:06d}",
                question=candidate,
                golden_content_id=content.id,
                origin="ood",
            )
        )
    if not cases:
        warnings.warn("out-of-distribution builder produced no test cases")
    return cases


# -- answer generation --------------------------------------------------------


def generate_answer(client, query: str, contexts) -> tuple[str, bool]:
    """Grounded answer for the query; flags the canonical refusals.

    ``contexts`` are joined by blank lines in retrieval order. The declined
    flag is a substring match on the two refusal phrases the prompt fixes.
    """
    joined = "\n\n".join(t for t in contexts)
    prompt = prompts.render("answer_gen", contexts=joined, question=query)
    answer = client.generate(TextGenRequest(prompt=prompt)).strip()
    declined = any(phrase in answer for phrase in DECLINE_PHRASES)
    return answer, declined


# -- retrieval metrics --------------------------------------------------------


def _paired(cases, results) -> list[tuple[TestCase, RetrievalResult]]:
    cases = list(cases)
    results = list(results)
    if len(cases) != len(results):
        raise CaseResultMismatchError(
            f"{len(cases)} cases but {len(results)} results"
        )
    return list(zip(cases, results))


def exact_recovery_rate(cases, results) -> float:
    """Fraction of cases whose retrieved set contains the golden content."""
    pairs = _paired(cases, results)
    hits = sum(1 for case, result in pairs if case.golden_content_id in result.content_ids())
    return hits / len(pairs) if pairs else 0.0


def relevancy_rate(judge_client, kb: KnowledgeBase, cases, results, failures=None) -> float:
    """Fraction of cases with at least one retrieved content judged answerable.

    Cases where the judge itself fails are excluded from the denominator and
    appended to ``failures`` when a list is supplied.
    """
    pairs = _paired(cases, results)
    cidx = kb.content_index()
    hits = 0
    judged = 0
    for case, result in pairs:
        try:
            relevant = False
            for content_id in result.content_ids():
                text = kb.contents[cidx[content_id]].text
                verdict, _ = judge_answerability(judge_client, case.question, text)
                if verdict == "yes":
                    relevant = True
                    break
        except (ClientError, ParseFailureError, GenerationFailedError) as exc:
            if failures is not None:
                failures.append({"case": case.id, "metric": "relevancy", "error": str(exc)})
            continue
        judged += 1
        hits += int(relevant)
    return hits / judged if judged else 0.0


def avg_reranker_score(score_client, kb: KnowledgeBase, cases, results, failures=None) -> float:
    """Mean over cases of the best pair score among retrieved contents."""
    pairs = _paired(cases, results)
    cidx = kb.content_index()
    totals = []
    for case, result in pairs:
        try:
            scores = [
                score_client.score_pair(case.question, kb.contents[cidx[cid]].text)
                for cid in result.content_ids()
            ]
        except ClientError as exc:
            if failures is not None:
                failures.append({"case": case.id, "metric": "reranker", "error": str(exc)})
            continue
        if scores:
            totals.append(max(scores))
    return float(np.mean(totals)) if totals else 0.0


# -- answer metrics -----------------------------------------------------------


def _parse_yes_no(text: str) -> bool:
    m = re.search(r"\b(yes|no)\b", text, flags=re.IGNORECASE)
    if not m:
        raise ParseFailureError(f"no YES/NO verdict in {text!r}")
    return m.group(1).lower() == "yes"


def _parse_unit_score(text: str) -> float:
    m = re.search(r"-?\d+(?:\.\d+)?", text)
    if not m:
        raise ParseFailureError(f"no numeric score in {text!r}")
    return min(1.0, max(0.0, float(m.group(0))))


def judge_answer_quality(
    clients: ClientBundle,
    case: TestCase,
    answer: str,
    declined: bool,
    retrieved_texts,
    golden_text: str,
    golden_answer: str | None = None,
    guideline: str | None = None,
) -> AnswerQuality:
    """Relevancy, faithfulness, and guideline-adherence for one answer.

    Faithfulness of a declined answer is False without consulting a judge.
    Adherence runs the three-step chain: golden answer from the golden
    content, guideline extraction, then a 0-1 coverage score. Each
    sub-judgment that fails to parse is recorded under its field name and
    left as None. Precomputed ``golden_answer``/``guideline`` may be passed
    to share work across strategies.
    """
    quality = AnswerQuality(relevant=None, faithful=None, adherence=None)

    try:
        prompt = prompts.render("answer_relevancy", question=case.question, answer=answer)
        quality.relevant = _parse_yes_no(clients.generator.generate(TextGenRequest(prompt=prompt)))
    except (ClientError, ParseFailureError, GenerationFailedError) as exc:
        quality.errors["relevant"] = str(exc)

    if declined:
        quality.faithful = False
    else:
        try:
            joined = "\n\n".join(retrieved_texts)
            prompt = prompts.render("faithfulness", contexts=joined or "(none)", answer=answer)
            quality.faithful = _parse_yes_no(
                clients.generator.generate(TextGenRequest(prompt=prompt))
            )
        except (ClientError, ParseFailureError, GenerationFailedError) as exc:
            quality.errors["faithful"] = str(exc)

    try:
        if golden_answer is None:
            golden_answer, _ = generate_answer(clients.generator, case.question, [golden_text])
        if guideline is None:
            prompt = prompts.render("guideline", question=case.question, golden_answer=golden_answer)
            guideline = clients.generator.generate(TextGenRequest(prompt=prompt))
        prompt = prompts.render("adherence", guideline=guideline, answer=answer)
        quality.adherence = _parse_unit_score(
            clients.generator.generate(TextGenRequest(prompt=prompt))
        )
    except (ClientError, ParseFailureError, GenerationFailedError) as exc:
        quality.errors["adherence"] = str(exc)

    return quality


# -- benchmark ----------------------------------------------------------------


@dataclass
class EvaluationReport:
    rows: list[dict]
    counts: dict
    config: dict

    def to_json(self) -> str:
        return json.dumps(
            {"config": self.config, "counts": self.counts, "rows": self.rows},
            sort_keys=True,
            indent=2,
        )


def _rate(hits: int, total: int) -> float:
    return round(hits / total, 4) if total else 0.0


def run_benchmark(
    kb: KnowledgeBase,
    clients: ClientBundle,
    strategies,
    ks,
    cases,
    seed: int = 0,
) -> tuple[EvaluationReport, list[AnswerRecord]]:
    """Sweep every (strategy, k, case) triple and aggregate the metrics.

    Individual case failures are recorded and never abort the run; invalid
    configuration (nothing to sweep, k beyond the content count) fails fast.
    The report is deterministic for fixed inputs and seed: rows are emitted
    in sweep order and every rate is rounded to four decimals.
    """
    strategies = list(strategies)
    ks = list(ks)
    cases = list(cases)
    if not strategies:
        raise ConfigError("no strategies configured")
    if not ks:
        raise ConfigError("no k values configured")
    if not cases:
        raise ConfigError("no test cases supplied")
    for k in ks:
        if not 1 <= int(k) <= len(kb.contents):
            raise ConfigError(f"k={k} is outside [1, {len(kb.contents)}]")
    cidx = kb.content_index()
    for case in cases:
        if case.golden_content_id not in cidx:
            raise ConfigError(f"case {case.id} references unknown content {case.golden_content_id}")

    max_parallel = getattr(getattr(clients.generator, "config", None), "max_parallel", 4)

    # The golden answer and guideline depend only on the case, so build the
    # chain once up front and share it across every strategy and k.
    golden_cache: dict[str, tuple[str, str]] = {}
    for case in cases:
        golden_text = kb.contents[cidx[case.golden_content_id]].text
        golden_answer, _ = generate_answer(clients.generator, case.question, [golden_text])
        prompt = prompts.render("guideline", question=case.question, golden_answer=golden_answer)
        golden_cache[case.id] = (
            golden_answer,
            clients.generator.generate(TextGenRequest(prompt=prompt)),
        )

    def evaluate_case(retriever, cfg, k, case):
        """One case under one (strategy, k); returns a merge-ready tuple."""
        sub_failures: list[dict] = []
        try:
            result = retriever.retrieve(case.question, k)
            texts = [kb.contents[cidx[cid]].text for cid in result.content_ids()]
            answer, declined = generate_answer(clients.generator, case.question, texts)
            golden_answer, guideline = golden_cache[case.id]
            quality = judge_answer_quality(
                clients,
                case,
                answer,
                declined,
                texts,
                kb.contents[cidx[case.golden_content_id]].text,
                golden_answer=golden_answer,
                guideline=guideline,
            )
        except Exception as exc:  # per-case isolation
            return None, None, None, [{"case": case.id, "error": str(exc)}]

        relevant_retrieval = None
        try:
            relevant_retrieval = False
            for text in texts:
                verdict, _ = judge_answerability(clients.generator, case.question, text)
                if verdict == "yes":
                    relevant_retrieval = True
                    break
        except (ClientError, ParseFailureError, GenerationFailedError) as exc:
            relevant_retrieval = None
            sub_failures.append({"case": case.id, "metric": "relevancy", "error": str(exc)})

        best_pair = None
        try:
            pair_scores = [clients.scorer.score_pair(case.question, text) for text in texts]
            if pair_scores:
                best_pair = max(pair_scores)
        except ClientError as exc:
            sub_failures.append({"case": case.id, "metric": "reranker", "error": str(exc)})

        record = AnswerRecord(
            test_case_id=case.id,
            strategy=cfg.strategy,
            k=k,
            retrieved=result,
            answer=answer,
            declined=declined,
            relevant=quality.relevant,
            faithful=quality.faithful,
            adherence=quality.adherence,
            errors=quality.errors,
        )
        return record, relevant_retrieval, best_pair, sub_failures

    records: list[AnswerRecord] = []
    rows: list[dict] = []
    total_failures = 0

    for cfg in strategies:
        retriever = make_retriever(cfg, clients).fit(kb)
        for k in ks:
            k = int(k)
            with ThreadPoolExecutor(max_workers=max_parallel) as pool:
                outcomes = list(
                    pool.map(lambda case: evaluate_case(retriever, cfg, k, case), cases)
                )
            kept: list[AnswerRecord] = []
            failures: list[dict] = []
            exact_hits = 0
            relevancy_hits, relevancy_judged = 0, 0
            reranker_best: list[float] = []
            for case, (record, relevant_retrieval, best_pair, sub_failures) in zip(
                cases, outcomes
            ):
                failures.extend(sub_failures)
                if record is None:
                    continue
                exact_hits += int(case.golden_content_id in record.retrieved.content_ids())
                if relevant_retrieval is not None:
                    relevancy_judged += 1
                    relevancy_hits += int(relevant_retrieval)
                if best_pair is not None:
                    reranker_best.append(best_pair)
                kept.append(record)

            records.extend(kept)
            total_failures += len(failures)
            declined_n = sum(1 for r in kept if r.declined)
            faithful_known = [r for r in kept if r.faithful is not None]
            relevant_known = [r for r in kept if r.relevant is not None]
            adherence_vals = [r.adherence for r in kept if r.adherence is not None]
            rows.append(
                {
                    "strategy": cfg.strategy,
                    "k": k,
                    "exact_recovery_rate": _rate(exact_hits, len(kept)),
                    "relevancy_rate": _rate(relevancy_hits, relevancy_judged),
                    "avg_reranker_score": (
                        round(float(np.mean(reranker_best)), 4) if reranker_best else 0.0
                    ),
                    "declined_rate": _rate(declined_n, len(kept)),
                    "faithfulness_rate": _rate(
                        sum(1 for r in faithful_known if r.faithful), len(faithful_known)
                    ),
                    "relevancy_answer_rate": _rate(
                        sum(1 for r in relevant_known if r.relevant), len(relevant_known)
                    ),
                    "accuracy_rate": (
                        round(float(np.mean(adherence_vals)), 4) if adherence_vals else 0.0
                    ),
                    "cases": len(kept),
                    "failures": len(failures),
                }
            )

    report = EvaluationReport(
        rows=rows,
        counts={
            "cases": len(cases),
            "strategies": len(strategies),
            "ks": len(ks),
            "failures": total_failures,
        },
        config={
            "seed": seed,
            "strategies": [
                {
                    "strategy": cfg.strategy,
                    "matrix_source": cfg.matrix_source,
                    "weighting": cfg.weighting,
                    "aggregation": cfg.aggregation,
                    "seed": cfg.seed,
                }
                for cfg in strategies
            ],
            "ks": [int(k) for k in ks],
        },
    )
    return report, records


# -- serialization ------------------------------------------------------------


def save_cases(path, cases) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            fh.write(
                json.dumps(
                    {
                        "id": case.id,
                        "question": case.question,
                        "golden_content_id": case.golden_content_id,
                        "origin": case.origin,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def load_cases(path) -> list[TestCase]:
    cases = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            cases.append(
                TestCase(
                    id=obj["id"],
                    question=obj["question"],
                    golden_content_id=obj["golden_content_id"],
                    origin=obj["origin"],
                )
            )
    return cases


def save_answers(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "test_case_id": r.test_case_id,
                        "strategy": r.strategy,
                        "k": r.k,
                        "retrieved": r.retrieved.to_dict(),
                        "answer": r.answer,
                        "declined": r.declined,
                        "relevant": r.relevant,
                        "faithful": r.faithful,
                        "adherence": r.adherence,
                        "errors": dict(sorted(r.errors.items())),
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
