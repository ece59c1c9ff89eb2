import json
from pathlib import Path

import pytest

from qbrag import ClientBundle, ClientConfig, GenerationConfig, KnowledgeBase, MockClient
from qbrag.pipeline import filter_questions, generate_questions

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture()
def mock_client():
    return MockClient(ClientConfig(seed=0))


@pytest.fixture()
def bundle(mock_client):
    return ClientBundle.single(mock_client)


@pytest.fixture(scope="session")
def contents12():
    rows = []
    with open(DATA_DIR / "contents12.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def build_kb(contents, client, questions_per_content=4, filtered=True):
    """Small knowledge base built through the real pipeline with mocks."""
    kb = KnowledgeBase()
    for row in contents:
        kb.add_content(row["text"], row.get("created_at", 0))
    cfg = GenerationConfig(num_questions=questions_per_content)
    for content in list(kb.contents):
        for text in generate_questions(client, content, cfg):
            kb.attach_question(content.id, text)
    if filtered:
        filter_questions(client, kb)
    kb.embed_contents(client)
    kb.embed_questions(client)
    return kb


@pytest.fixture(scope="session")
def kb12():
    client = MockClient(ClientConfig(seed=0))
    kb = build_kb(
        [json.loads(line) for line in open(DATA_DIR / "contents12.jsonl", encoding="utf-8") if line.strip()],
        client,
    )
    return kb.freeze()
