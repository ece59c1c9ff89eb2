"""Deterministic in-process model backend.

Everything here is a pure function of (inputs, seed), so pipelines and
benchmarks built on this backend are byte-reproducible with no network.

Embeddings hash lowercased character 3-grams into buckets and project the
bucket counts through a seeded Gaussian table, then normalize. Identical
texts map to identical vectors and near-duplicates to high-cosine vectors.

Text generation recognizes the repository's own prompt templates by their
instruction lines and answers with template-appropriate output. Judge-style
prompts are decided by thresholding the mock-embedding cosine between the
two texts under judgment. Two sentinel substrings override every judgment:
"REL:YES" and "REL:NO" force the positive / negative verdict, which lets
test fixtures plant exact outcomes.

Relevance scoring maps the embedding cosine through a logit so scores are
unbounded, mimicking cross-encoder re-rankers.
"""

from __future__ import annotations

import json
import math
import re
import threading
import zlib

import numpy as np

from .. import prompts
from ..errors import EmptyInputError
from ..vectors import EmbeddingMatrix
from .base import ClientConfig, TextGenRequest

_N_BUCKETS = 4096

_projection_tables: dict[tuple[int, int], np.ndarray] = {}
_tables_lock = threading.Lock()


def _projection_table(seed: int, dim: int) -> np.ndarray:
    key = (seed, dim)
    with _tables_lock:
        if key not in _projection_tables:
            rng = np.random.default_rng([0x5EED, seed, dim])
            _projection_tables[key] = rng.standard_normal((_N_BUCKETS, dim))
        return _projection_tables[key]


def _trigram_counts(text: str) -> np.ndarray:
    data = text.lower().encode("utf-8")
    buckets = [zlib.crc32(data) % _N_BUCKETS]
    buckets.extend(zlib.crc32(data[i : i + 3]) % _N_BUCKETS for i in range(len(data) - 2))
    return np.bincount(buckets, minlength=_N_BUCKETS).astype(np.float64)


class MockClient:
    """Seeded stand-in for generation, embedding, and pair scoring."""

    ANSWERABLE_COS = 0.5
    RELEVANT_COS = 0.3
    FAITHFUL_COS = 0.4

    def __init__(self, config: ClientConfig | None = None, rules=None):
        self.config = config or ClientConfig()
        # (substring, response-or-callable) pairs checked before built-ins.
        self.rules = list(rules or [])

    # -- embeddings ------------------------------------------------------

    def embed(self, texts) -> EmbeddingMatrix:
        texts = list(texts)
        if not texts:
            raise EmptyInputError("embed needs at least one text")
        table = _projection_table(self.config.seed, self.config.embed_dim)
        cols = []
        for text in texts:
            raw = table.T @ _trigram_counts(text)
            cols.append(raw / np.linalg.norm(raw))
        return EmbeddingMatrix(np.stack(cols, axis=1))

    def _cosine(self, a: str, b: str) -> float:
        mat = self.embed([a, b])
        return float(np.dot(mat.column(0), mat.column(1)))

    # -- pair scoring ----------------------------------------------------

    def score_pair(self, query: str, document: str) -> float:
        if not query or not document:
            raise EmptyInputError("score_pair needs two non-empty texts")
        p = (self._cosine(query, document) + 1.0) / 2.0
        p = min(max(p, 1e-6), 1.0 - 1e-6)
        return math.log(p / (1.0 - p))

    # -- generation ------------------------------------------------------

    def generate(self, request: TextGenRequest) -> str:
        out = self._dispatch(request.prompt)
        return out[: request.max_output_chars]

    def _dispatch(self, prompt: str) -> str:
        for needle, response in self.rules:
            if needle in prompt:
                return response(prompt) if callable(response) else response

        sentinel = None
        if "REL:YES" in prompt:
            sentinel = True
        elif "REL:NO" in prompt:
            sentinel = False

        if prompts.MARKERS["answerability"] in prompt:
            return self._judge_answerability(prompt, sentinel)
        if prompts.MARKERS["question_gen"] in prompt:
            return self._generate_questions(prompt)
        if prompts.MARKERS["answer_gen"] in prompt:
            return self._answer(prompt, sentinel)
        if prompts.MARKERS["hyde"] in prompt:
            question = _extract(prompt, "Question:", "Paragraph:")
            return f"{question} The short explanation is that the practical steps above cover it."
        if prompts.MARKERS["pseudo_answer"] in prompt:
            question = _extract(prompt, "Question:", "Answer:")
            return f"{question} A direct answer: follow the usual recommended steps."
        if prompts.MARKERS["rephrase"] in prompt:
            question = _extract(prompt, "Question:", "Rephrased question:")
            return f"In other words, {question[:1].lower()}{question[1:]}"
        if prompts.MARKERS["new_question"] in prompt:
            return self._new_question(prompt)
        if prompts.MARKERS["guideline"] in prompt:
            golden = _extract(prompt, "Reference answer:", "Guideline:")
            lines = [f"- {s.strip()}" for s in re.split(r"(?<=[.!?])\s+", golden) if s.strip()]
            return "\n".join(lines) if lines else "- answer the question"
        if prompts.MARKERS["adherence"] in prompt:
            guideline = _extract(prompt, "Guideline:", "Candidate answer:")
            answer = _extract(prompt, "Candidate answer:", "Coverage score:")
            score = max(0.0, min(1.0, (self._cosine(guideline, answer) + 1.0) / 2.0))
            return f"{score:.2f}"
        if prompts.MARKERS["answer_relevancy"] in prompt:
            if sentinel is not None:
                return "YES" if sentinel else "NO"
            question = _extract(prompt, "Question:", "Answer:")
            answer = _extract(prompt, "Answer:", "Verdict:")
            return "YES" if self._cosine(question, answer) >= self.RELEVANT_COS else "NO"
        if prompts.MARKERS["faithfulness"] in prompt:
            if sentinel is not None:
                return "YES" if sentinel else "NO"
            content = _extract(prompt, "Content:", "Answer:")
            answer = _extract(prompt, "Answer:", "Verdict:")
            return "YES" if self._cosine(content, answer) >= self.FAITHFUL_COS else "NO"

        if sentinel is not None:
            return "Yes" if sentinel else "No"
        digest = zlib.crc32(f"{self.config.seed}:{prompt}".encode("utf-8"))
        return f"mock:{digest:08x}"

    # -- per-template behaviors -----------------------------------------

    def _judge_answerability(self, prompt: str, sentinel: bool | None) -> str:
        if sentinel is None:
            question = _extract(prompt, "Question:", "Content:", last=True)
            content = _extract_tail(prompt, "Content:")
            cos = self._cosine(question, content)
            verdict = cos >= self.ANSWERABLE_COS
            explanation = f"Mock cosine check scored {cos:.3f} against threshold {self.ANSWERABLE_COS}."
        else:
            verdict = sentinel
            explanation = "Sentinel verdict planted by the fixture."
        return json.dumps({"Explanation": explanation, "Source relevant": "Yes" if verdict else "No"})

    def _generate_questions(self, prompt: str) -> str:
        m = re.search(r"setup (\d+) questions", prompt)
        count = int(m.group(1)) if m else 4
        text = _extract(prompt, "Text:", "Generated Questions:", last=True)
        words = text.split()
        questions: list[str] = []
        seen = set()
        width = max(8, len(words) // 2)
        for i in range(count * 3):
            if len(questions) >= count:
                break
            start = (i * 3) % max(1, len(words))
            phrase = " ".join(words[start : start + width]).strip(" .,;:!?")
            if not phrase:
                phrase = text[:40]
            q = f"What should I know about {phrase}?"
            if q.lower() not in seen:
                seen.add(q.lower())
                questions.append(q)
        return json.dumps({"questions": questions})

    def _answer(self, prompt: str, sentinel: bool | None) -> str:
        question = _extract_tail(prompt, "Question:").split("\nAnswer:")[0].strip()
        contexts = _extract(prompt, "Contexts:", "Question:", last=True)
        parts = [p.strip() for p in contexts.split("\n\n") if p.strip()]
        if not parts:
            return "I do not know the answer to that."
        if sentinel is False:
            return "I cannot determine the answer to that."
        best, best_cos = None, -2.0
        for part in parts:
            cos = self._cosine(question, part)
            if cos > best_cos:
                best, best_cos = part, cos
        if sentinel is not True and best_cos < self.ANSWERABLE_COS:
            return "I cannot determine the answer to that."
        first_sentence = re.split(r"(?<=[.!?])\s+", best)[0]
        return first_sentence[:400]

    def _new_question(self, prompt: str) -> str:
        text = _extract(prompt, "Text:", "Existing questions:")
        existing = _extract(prompt, "Existing questions:", "New question:")
        taken = {_squash(line) for line in existing.splitlines() if line.strip()}
        words = text.split()
        for shift in range(len(words) + 1):
            start = (3 * shift + 1) % max(1, len(words))
            phrase = " ".join(words[start : start + 5]).strip(" .,;:!?")
            q = f"Can you explain {phrase} in simple terms?"
            if _squash(q) not in taken:
                return q
        return f"Can you explain this again: {text[:40]}?"


def _squash(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().casefold()


def _extract(prompt: str, start: str, end: str, last: bool = False) -> str:
    """Text between the start marker and the next end marker."""
    idx = prompt.rfind(start) if last else prompt.find(start)
    if idx < 0:
        return ""
    idx += len(start)
    stop = prompt.find(end, idx)
    if stop < 0:
        stop = len(prompt)
    return prompt[idx:stop].strip()


def _extract_tail(prompt: str, start: str) -> str:
    idx = prompt.rfind(start)
    if idx < 0:
        return ""
    return prompt[idx + len(start) :].strip()
