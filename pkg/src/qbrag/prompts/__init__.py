"""Prompt templates shipped as text assets.

Templates use ``{name}`` placeholders that are substituted literally by
:func:`render`; braces elsewhere in a template (e.g. inline JSON examples)
are left untouched. Each template starts from a distinctive instruction
line, which the deterministic mock backend also uses to recognize what it
is being asked to do.
"""

from __future__ import annotations

from importlib import resources

_TEMPLATES = {
    "question_gen": "question_gen.txt",
    "answerability": "answerability.txt",
    "answer_gen": "answer_gen.txt",
    "hyde": "hyde.txt",
    "pseudo_answer": "pseudo_answer.txt",
    "rephrase": "rephrase.txt",
    "new_question": "new_question.txt",
    "guideline": "guideline.txt",
    "adherence": "adherence.txt",
    "answer_relevancy": "answer_relevancy.txt",
    "faithfulness": "faithfulness.txt",
}

# First-line markers used to recognize a rendered prompt (see clients.mock).
MARKERS = {
    "question_gen": 'with "questions" as its key',
    "answerability": '"Explanation" and "Source relevant"',
    "answer_gen": "Use only the provided pieces of context",
    "hyde": "Write a paragraph that answers the question",
    "pseudo_answer": "Draft a short direct answer",
    "rephrase": "Rephrase the question below",
    "new_question": "write one new question",
    "guideline": "create a guideline listing the key points",
    "adherence": "Return only a coverage score",
    "answer_relevancy": "focusing solely on relevance",
    "faithfulness": "any portion of the provided content supports",
}

_cache: dict[str, str] = {}


def load_template(name: str) -> str:
    if name not in _TEMPLATES:
        raise KeyError(f"unknown prompt template {name!r}")
    if name not in _cache:
        _cache[name] = (
            resources.files(__package__).joinpath(_TEMPLATES[name]).read_text(encoding="utf-8")
        )
    return _cache[name]


def render(name: str, **fields) -> str:
    """Substitute ``{key}`` placeholders in the named template.

    Every supplied field must appear in the template; this catches typos
    at the call site rather than shipping a prompt with holes.
    """
    text = load_template(name)
    for key, value in fields.items():
        token = "{" + key + "}"
        if token not in text:
            raise KeyError(f"template {name!r} has no placeholder {token}")
        text = text.replace(token, str(value))
    return text
