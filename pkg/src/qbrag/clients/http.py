"""Thin HTTP adapter for remote generation/embedding/scoring services.

The wire contract is intentionally small and vendor-neutral: a single
endpoint accepts a JSON POST holding one of "prompt", "texts", or "pair",
and replies with {"text"}, {"vectors"}, or {"score"} respectively. A bearer
token is read from the environment variable named in the config.

Attempts are retried on transport failures and 5xx responses with
exponential backoff (base 500 ms, doubling, multiplicative jitter); 4xx
responses are refused outright. In-flight requests are capped at
``max_parallel`` via a semaphore.
"""

from __future__ import annotations

import os
import random
import threading
import time

import numpy as np

from ..errors import (
    BackendRefusedError,
    EmptyInputError,
    RetryExhaustedError,
    TransportError,
)
from ..vectors import EmbeddingMatrix, normalize
from .base import ClientConfig, TextGenRequest

_BACKOFF_BASE_S = 0.5


def _requests_transport(url, payload, headers, timeout_s):
    import requests

    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout_s)
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    return resp.status_code, resp.text


class HttpClient:
    """JSON-over-HTTP backend with bounded parallelism and retries."""

    def __init__(self, config: ClientConfig, transport=None, sleep=time.sleep):
        if config.backend != "http" or not config.endpoint:
            raise ValueError("HttpClient needs an http config with an endpoint")
        self.config = config
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._sem = threading.BoundedSemaphore(config.max_parallel)
        self._jitter = random.Random(config.seed)

    def _headers(self):
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.api_key_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, payload) -> dict:
        import json

        last_error = None
        delay = _BACKOFF_BASE_S
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(delay * self._jitter.uniform(0.5, 1.5))
                delay *= 2.0
            try:
                with self._sem:
                    status, body = self._transport(
                        self.config.endpoint,
                        payload,
                        self._headers(),
                        self.config.timeout_ms / 1000.0,
                    )
            except TransportError as exc:
                last_error = exc
                continue
            if 200 <= status < 300:
                try:
                    return json.loads(body)
                except ValueError as exc:
                    last_error = TransportError(f"unparseable response body: {exc}")
                    continue
            if 400 <= status < 500:
                raise BackendRefusedError(f"HTTP {status}: {body[:200]}")
            last_error = TransportError(f"HTTP {status}: {body[:200]}")
        raise RetryExhaustedError(
            f"gave up after {self.config.max_retries + 1} attempts: {last_error}"
        )

    def generate(self, request: TextGenRequest) -> str:
        data = self._post(
            {
                "prompt": request.prompt,
                "max_output_chars": request.max_output_chars,
                "temperature": request.temperature,
            }
        )
        if "text" not in data:
            raise BackendRefusedError("response is missing 'text'")
        return str(data["text"])[: request.max_output_chars]

    def embed(self, texts) -> EmbeddingMatrix:
        texts = list(texts)
        if not texts:
            raise EmptyInputError("embed needs at least one text")
        data = self._post({"texts": texts})
        vectors = data.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise BackendRefusedError("response 'vectors' missing or wrong length")
        cols = [normalize(np.asarray(v, dtype=np.float64)) for v in vectors]
        return EmbeddingMatrix.from_columns(cols)

    def score_pair(self, query: str, document: str) -> float:
        if not query or not document:
            raise EmptyInputError("score_pair needs two non-empty texts")
        data = self._post({"pair": [query, document]})
        if "score" not in data:
            raise BackendRefusedError("response is missing 'score'")
        return float(data["score"])
