from .base import ClientBundle, ClientConfig, TextGenRequest, make_client
from .http import HttpClient
from .mock import MockClient

__all__ = [
    "ClientBundle",
    "ClientConfig",
    "TextGenRequest",
    "make_client",
    "HttpClient",
    "MockClient",
]
