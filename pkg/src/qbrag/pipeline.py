"""Offline question-base construction.

Builds the question side of a knowledge base: candidate question generation
per content, answerability filtering with an LLM judge, embedding-based
diversity scoring, and preference-pair curation for reward tuning of a
question generator.
"""

from __future__ import annotations

import ast
import json
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import prompts
from .clients import ClientBundle, TextGenRequest
from .errors import (
    ClientError,
    CoverageWarning,
    GenerationFailedError,
    InsufficientQuestionsError,
    ParseFailureError,
)
from .store import Content, KnowledgeBase


@dataclass(frozen=True)
class GenerationConfig:
    """Knobs for the per-content question generation pass."""

    num_questions: int = 20
    seed: int = 0
    # Keep at most this multiple of num_questions from one model reply.
    max_accept_factor: float = 2.0

    def __post_init__(self):
        if self.num_questions < 1:
            raise ValueError("num_questions must be >= 1")
        if self.max_accept_factor < 1.0:
            raise ValueError("max_accept_factor must be >= 1")


@dataclass(frozen=True)
class PreferenceExample:
    """One (context, two candidates, preference) row for reward tuning."""

    content_id: str
    shown_questions: tuple[str, ...]
    candidate_a: str
    candidate_b: str
    preferred: str
    reward_a: float
    reward_b: float

    def __post_init__(self):
        if self.candidate_a == self.candidate_b:
            raise ValueError("candidates must differ")
        if self.preferred not in ("a", "b"):
            raise ValueError("preferred must be 'a' or 'b'")
        hi, lo = (
            (self.reward_a, self.reward_b)
            if self.preferred == "a"
            else (self.reward_b, self.reward_a)
        )
        if not hi > lo:
            raise ValueError("preferred candidate must have the strictly larger reward")


# -- model-output parsing -----------------------------------------------------


_FENCE_RE = re.compile(r"```[a-zA-Z]*\n?|```")


def _first_balanced_object(text: str) -> str | None:
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    in_string: str | None = None
    escaped = False
    for pos in range(start, len(text)):
        ch = text[pos]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == in_string:
                in_string = None
            continue
        if ch in "\"'":
            in_string = ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : pos + 1]
    return None


def parse_dict_output(text: str) -> dict | None:
    """Best-effort dict from model output, None when nothing parses.

    Leniency is bounded: strip code fences, trim to the first balanced
    object, accept Python-dict quoting. Anything beyond that is a parse
    failure for the caller to retry or surface.
    """
    cleaned = _FENCE_RE.sub("", text)
    candidate = _first_balanced_object(cleaned)
    if candidate is None:
        return None
    try:
        obj = json.loads(candidate)
        return obj if isinstance(obj, dict) else None
    except ValueError:
        pass
    try:
        obj = ast.literal_eval(candidate)
        return obj if isinstance(obj, dict) else None
    except (ValueError, SyntaxError):
        return None


def _generate_text(client, prompt: str) -> str:
    try:
        return client.generate(TextGenRequest(prompt=prompt))
    except ClientError as exc:
        raise GenerationFailedError(str(exc)) from exc


# -- question generation ------------------------------------------------------


def generate_questions(client, content: Content, cfg: GenerationConfig) -> list[str]:
    """Candidate questions for one content, parsed from the generation prompt.

    The model is asked for JSON with a "questions" key; one retry appends an
    explicit "Return only JSON." nudge before giving up with ParseFailure.
    """
    prompt = prompts.render(
        "question_gen", num_questions=cfg.num_questions, cc_text=content.text
    )
    cap = int(cfg.max_accept_factor * cfg.num_questions)
    for attempt in range(2):
        raw = _generate_text(client, prompt if attempt == 0 else prompt + "\nReturn only JSON.")
        obj = parse_dict_output(raw)
        if obj is not None and isinstance(obj.get("questions"), list):
            seen: set[str] = set()
            out: list[str] = []
            for item in obj["questions"]:
                text = str(item).strip()
                if text and text.casefold() not in seen:
                    seen.add(text.casefold())
                    out.append(text)
            if out:
                return out[:cap]
    raise ParseFailureError(
        f"no JSON object with a 'questions' array for content {content.id}"
    )


def generate_for_contents(
    client, contents, cfg: GenerationConfig, max_parallel: int | None = None
) -> dict[str, list[str]]:
    """Candidate questions for many contents, generated concurrently.

    Calls run in a bounded pool; the returned mapping is merged in content
    order regardless of completion order, so the result is deterministic.
    """
    contents = list(contents)
    if max_parallel is None:
        max_parallel = getattr(getattr(client, "config", None), "max_parallel", 4)
    if not contents:
        return {}
    with ThreadPoolExecutor(max_workers=max_parallel) as pool:
        batches = list(pool.map(lambda c: generate_questions(client, c, cfg), contents))
    return {content.id: batch for content, batch in zip(contents, batches)}


def judge_answerability(client, question: str, content: str) -> tuple[str, str]:
    """Ask the judge whether the content can answer the question.

    Returns ("yes"|"no", explanation). Output is expected as a dict with
    keys "Explanation" and "Source relevant"; one retry, then ParseFailure.
    """
    if not question or not content:
        raise ValueError("question and content must be non-empty")
    prompt = prompts.render("answerability", question=question, content=content)
    for attempt in range(2):
        raw = _generate_text(client, prompt if attempt == 0 else prompt + "\nReturn only JSON.")
        obj = parse_dict_output(raw)
        if obj is not None and "Source relevant" in obj:
            label = str(obj["Source relevant"]).strip().casefold()
            if label in ("yes", "no"):
                return label, str(obj.get("Explanation", "")).strip()
    raise ParseFailureError("judge output lacked a parseable 'Source relevant' label")


def filter_questions(client, kb: KnowledgeBase, max_parallel: int | None = None) -> KnowledgeBase:
    """Judge every unfiltered question against its generating content.

    Verdicts are written back onto the store; already-judged questions are
    left alone, so re-running is a no-op. Contents left without any "yes"
    question trigger a CoverageWarning naming them.
    """
    if max_parallel is None:
        max_parallel = getattr(getattr(client, "config", None), "max_parallel", 4)
    cidx = kb.content_index()
    todo = [(j, q) for j, q in enumerate(kb.questions) if q.answerable == "unfiltered"]

    def judge(item):
        j, q = item
        content = kb.contents[cidx[q.content_id]]
        try:
            verdict, _ = judge_answerability(client, q.text, content.text)
        except (ClientError, ParseFailureError, GenerationFailedError) as exc:
            raise GenerationFailedError(
                f"judging failed for content {content.id}, question {q.id}: {exc}"
            ) from exc
        return j, verdict

    if todo:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            verdicts = list(pool.map(judge, todo))
        for j, verdict in sorted(verdicts):
            kb.set_answerable(kb.questions[j].id, verdict)

    bare = sorted(
        cid
        for cid, qidx in kb.questions_by_content().items()
        if qidx and not any(kb.questions[j].answerable == "yes" for j in qidx)
    )
    if bare:
        warnings.warn(
            CoverageWarning(f"contents without any answerable question: {', '.join(bare)}")
        )
    return kb


# -- diversity and preference curation ---------------------------------------


def diversity_score(candidate: str, prior, embed_client) -> float:
    """1 minus the highest cosine between the candidate and any prior question.

    Empty prior scores 1.0 (maximally novel); an exact duplicate scores 0.0.
    Clamped to [0, 1].
    """
    prior = list(prior)
    if not prior:
        return 1.0
    mat = embed_client.embed([candidate] + prior)
    cand = mat.column(0)
    best = max(float(np.dot(cand, mat.column(i))) for i in range(1, mat.count))
    return min(1.0, max(0.0, 1.0 - best))


def select_high_reward(examples, tau: float = 0.15):
    """Rows whose winning reward clears tau; the plain fine-tuning variant
    of dataset curation keeps only these. The default tau is a repository
    convention, not a calibrated value."""
    return [ex for ex in examples if max(ex.reward_a, ex.reward_b) >= tau]


def curate_preferences(
    clients: ClientBundle,
    kb: KnowledgeBase,
    samples_per_content: int,
    seed: int,
    generation: GenerationConfig | None = None,
) -> list[PreferenceExample]:
    """Build a preference dataset of question pairs ranked by reward.

    Per content and per sample: draw a shown subset of its questions (sizes
    weighted toward larger subsets), draw two distinct leftover candidates,
    and score each as answerability (+1/-1) times diversity against the
    shown subset. Ties are skipped; every emitted pair has a strict winner.

    Contents with fewer than three questions are topped up with freshly
    generated candidates when a generator client is available, otherwise
    they raise InsufficientQuestions.
    """
    if samples_per_content < 1:
        raise ValueError("samples_per_content must be >= 1")
    rng = np.random.default_rng(seed)
    answerable_cache: dict[str, float] = {}

    def answerability_reward(text: str, content: Content, stored: str | None) -> float:
        if stored == "yes":
            return 1.0
        if stored == "no":
            return -1.0
        key = f"{content.id}\x00{text}"
        if key not in answerable_cache:
            verdict, _ = judge_answerability(clients.generator, text, content.text)
            answerable_cache[key] = 1.0 if verdict == "yes" else -1.0
        return answerable_cache[key]

    examples: list[PreferenceExample] = []
    by_content = kb.questions_by_content()
    for content in kb.contents:
        pool: list[tuple[str, str | None]] = [
            (kb.questions[j].text, kb.questions[j].answerable) for j in by_content[content.id]
        ]
        if len(pool) < 3:
            if clients.generator is None:
                raise InsufficientQuestionsError(
                    f"content {content.id} has {len(pool)} questions and no generator is available"
                )
            cfg = generation or GenerationConfig(num_questions=4)
            have = {t.casefold() for t, _ in pool}
            for text in generate_questions(clients.generator, content, cfg):
                if text.casefold() not in have and len(pool) < 3 + samples_per_content:
                    pool.append((text, None))
                    have.add(text.casefold())
            if len(pool) < 3:
                raise InsufficientQuestionsError(
                    f"content {content.id} still has only {len(pool)} candidate questions"
                )
        for _ in range(samples_per_content):
            max_shown = len(pool) - 2
            weights = np.arange(1, max_shown + 2, dtype=np.float64)
            shown_size = int(rng.choice(max_shown + 1, p=weights / weights.sum()))
            order = rng.permutation(len(pool))
            shown_idx = sorted(order[:shown_size].tolist())
            rest = sorted(order[shown_size:].tolist())
            a_idx, b_idx = (int(i) for i in rng.choice(rest, size=2, replace=False))
            shown_texts = tuple(pool[i][0] for i in shown_idx)

            rewards = []
            for idx in (a_idx, b_idx):
                text, stored = pool[idx]
                r_answer = answerability_reward(text, content, stored)
                r_diverse = diversity_score(text, shown_texts, clients.embedder)
                rewards.append(r_answer * r_diverse)
            if rewards[0] == rewards[1]:
                continue
            examples.append(
                PreferenceExample(
                    content_id=content.id,
                    shown_questions=shown_texts,
                    candidate_a=pool[a_idx][0],
                    candidate_b=pool[b_idx][0],
                    preferred="a" if rewards[0] > rewards[1] else "b",
                    reward_a=rewards[0],
                    reward_b=rewards[1],
                )
            )
    return examples


def save_preferences(path, examples) -> None:
    """Write preference rows as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "content_id": ex.content_id,
                        "shown": list(ex.shown_questions),
                        "a": ex.candidate_a,
                        "b": ex.candidate_b,
                        "preferred": ex.preferred,
                        "reward_a": ex.reward_a,
                        "reward_b": ex.reward_b,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
