"""Client configuration and the shared request type.

A client exposes three operations: ``generate(TextGenRequest) -> str``,
``embed(list[str]) -> EmbeddingMatrix`` and
``score_pair(query, document) -> float``. Backends are duck-typed; the
bundled ones are the deterministic mock (default) and a thin HTTP adapter.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class TextGenRequest:
    prompt: str
    max_output_chars: int = 8192
    temperature: float = 0.0

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_output_chars < 1:
            raise ValueError("max_output_chars must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ClientConfig:
    backend: str = "mock"
    endpoint: str | None = None
    api_key_env: str = "QBRAG_API_KEY"
    max_parallel: int = 4
    max_retries: int = 2
    timeout_ms: int = 30_000
    embed_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.backend not in ("mock", "http"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "http" and not self.endpoint:
            raise ConfigError("http backend requires an endpoint")
        if self.max_parallel < 1:
            raise ConfigError("max_parallel must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.timeout_ms < 1:
            raise ConfigError("timeout_ms must be positive")
        if self.embed_dim < 2:
            raise ConfigError("embed_dim must be >= 2")


def make_client(config: ClientConfig | None = None, rules=None):
    """Build the backend named by ``config.backend``."""
    from .http import HttpClient
    from .mock import MockClient

    config = config or ClientConfig()
    if config.backend == "mock":
        return MockClient(config, rules=rules)
    return HttpClient(config)


@dataclass(frozen=True)
class ClientBundle:
    """The client roles a pipeline needs, possibly all the same object."""

    generator: object
    embedder: object
    scorer: object

    @classmethod
    def single(cls, client) -> "ClientBundle":
        return cls(generator=client, embedder=client, scorer=client)
