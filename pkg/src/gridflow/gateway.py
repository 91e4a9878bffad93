"""Chat and embedding providers.

Two backends per role: a remote one speaking the common chat-completions /
embeddings HTTP interface, and a deterministic mock so everything runs
offline. Every call appends a ``GatewayEvent`` to the backend's log.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import httpx
import numpy as np

logger = logging.getLogger(__name__)

MOCK_EMBED_DIM = 64


class GatewayError(Exception):
    """Non-retryable provider failure."""


class TransportError(GatewayError):
    """Network-level or transient server failure; safe to retry."""


class AuthenticationError(GatewayError):
    pass


class MalformedResponse(GatewayError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def mock_tokens(text: str) -> int:
    """Stand-in token count: ceil(len(text) / 4). Not a real tokenizer."""
    return -(-len(text) // 4)


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )


@dataclass(frozen=True)
class ToolCallPayload:
    name: str
    arguments: Any  # JSON text as sent by the provider, or an already-decoded object
    id: str = "call_0"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str = ""
    tool_call: ToolCallPayload | None = None
    tool_call_id: str | None = None

    def to_wire(self) -> dict[str, Any]:
        msg: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_call is not None:
            args = self.tool_call.arguments
            msg["tool_calls"] = [
                {
                    "id": self.tool_call.id,
                    "type": "function",
                    "function": {
                        "name": self.tool_call.name,
                        "arguments": args if isinstance(args, str) else json.dumps(args, sort_keys=True),
                    },
                }
            ]
            msg["content"] = self.content or None
        if self.tool_call_id is not None:
            msg["tool_call_id"] = self.tool_call_id
        return msg


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    tools: tuple[Mapping[str, Any], ...] = ()
    temperature: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "tools", tuple(self.tools))
        if not self.messages:
            raise ValueError("chat request needs at least one message")

    def last_user_message(self) -> str:
        for msg in reversed(self.messages):
            if msg.role == "user":
                return msg.content
        return ""

    def prompt_text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    text: str | None = None
    tool_call: ToolCallPayload | None = None
    usage: TokenUsage = TokenUsage()

    def __post_init__(self) -> None:
        if (self.text is None) == (self.tool_call is None):
            raise ValueError("chat response carries exactly one of text or tool_call")


@dataclass(frozen=True)
class GatewayEvent:
    backend: str
    operation: str
    digest: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: float


class _EventLog:
    def __init__(self) -> None:
        self.events: list[GatewayEvent] = []
        self._lock = threading.Lock()

    def _record(self, event: GatewayEvent) -> None:
        with self._lock:
            self.events.append(event)
        logger.debug("gateway %s %s digest=%s tokens=%d+%d %.1fms", event.backend,
                     event.operation, event.digest[:12], event.prompt_tokens,
                     event.completion_tokens, event.latency_ms)


# -- mock backends -----------------------------------------------------------


def _response_from_spec(spec: Mapping[str, Any] | str) -> tuple[str | None, ToolCallPayload | None]:
    if isinstance(spec, str):
        return spec, None
    if "tool" in spec:
        return None, ToolCallPayload(str(spec["tool"]), spec.get("args", {}))
    if "text" in spec:
        return str(spec["text"]), None
    raise ValueError(f"mock script entry needs 'tool' or 'text': {spec!r}")


class MockChatBackend(_EventLog):
    """Scripted chat backend keyed by the digest of the last user message.

    A script value may be a single response or a list; a list is consumed in
    order across calls with the same digest, repeating its last entry.
    """

    name = "mock"

    def __init__(self, script: Mapping[str, Any] | None = None,
                 default_text: str = "no script entry"):
        super().__init__()
        self.script = dict(script or {})
        self.default_text = default_text
        self._calls: dict[str, int] = {}

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "MockChatBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def chat_complete(self, request: ChatRequest) -> ChatResponse:
        start = time.perf_counter()
        digest = text_digest(request.last_user_message())
        entry = self.script.get(digest)
        with self._lock:
            nth = self._calls.get(digest, 0)
            self._calls[digest] = nth + 1
        if isinstance(entry, list):
            entry = entry[min(nth, len(entry) - 1)] if entry else None
        if entry is None:
            text, call = self.default_text, None
        else:
            text, call = _response_from_spec(entry)
        completion = text if text is not None else json.dumps(
            {"name": call.name, "arguments": call.arguments}, sort_keys=True)
        usage = TokenUsage(mock_tokens(request.prompt_text()), mock_tokens(completion))
        self._record(GatewayEvent(self.name, "chat", digest, usage.prompt_tokens,
                                  usage.completion_tokens, (time.perf_counter() - start) * 1e3))
        return ChatResponse(text=text, tool_call=call, usage=usage)


class MockEmbedder(_EventLog):
    """Keyed-hash embedder: text -> unit vector, with an override table for
    planting exact similarities in tests."""

    def __init__(self, dim: int = MOCK_EMBED_DIM, seed: int = 0,
                 overrides: Mapping[str, Sequence[float]] | None = None):
        super().__init__()
        if dim <= 0:
            raise ValueError("dimension must be positive")
        self.dim = dim
        self.seed = seed
        self.overrides = {k: np.asarray(v, dtype=float) for k, v in (overrides or {}).items()}
        for text, vec in self.overrides.items():
            if vec.shape != (dim,):
                raise ValueError(f"override for {text[:40]!r} has shape {vec.shape}, want ({dim},)")

    @property
    def identity(self) -> str:
        return f"mock-hash-d{self.dim}-s{self.seed}"

    def _hash_vector(self, text: str) -> np.ndarray:
        key = self.seed.to_bytes(8, "little", signed=True)
        raw = bytearray()
        block = 0
        while len(raw) < 8 * self.dim:
            h = hashlib.blake2b(text.encode("utf-8"), key=key, digest_size=64,
                                salt=block.to_bytes(16, "little"))
            raw.extend(h.digest())
            block += 1
        ints = np.frombuffer(bytes(raw[: 8 * self.dim]), dtype="<u8")
        vec = ints / float(2**64) * 2.0 - 1.0
        return vec / np.linalg.norm(vec)

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        start = time.perf_counter()
        vec = self.overrides.get(text)
        vec = vec.copy() if vec is not None else self._hash_vector(text)
        self._record(GatewayEvent("mock", "embed", text_digest(text), 0, 0,
                                  (time.perf_counter() - start) * 1e3))
        return vec


# -- remote backends ---------------------------------------------------------


@dataclass
class GatewayConfig:
    backend: str = "mock"
    endpoint: str = "http://localhost:8000/v1"
    model: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 0.5
    temperature: float | None = None
    seed: int | None = None
    mock_script: str | None = None
    embed_model: str = ""
    embed_dim: int = MOCK_EMBED_DIM
    embed_seed: int = 0
    embed_overrides: str | None = None

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any] | None) -> "GatewayConfig":
        data = dict(data or {})
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown gateway settings: {unknown}")
        return cls(**data)


class _RemoteBase(_EventLog):
    name = "remote"

    def __init__(self, config: GatewayConfig, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        super().__init__()
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, path: str, body: Mapping[str, Any]) -> dict[str, Any]:
        url = self.config.endpoint.rstrip("/") + path
        attempts = max(1, self.config.retries)
        last: Exception | None = None
        for attempt in range(attempts):
            try:
                resp = self._client.post(url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                last = TransportError(f"{type(exc).__name__}: {exc}")
            else:
                if resp.status_code in (401, 403):
                    raise AuthenticationError(f"{resp.status_code} from {url}")
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = TransportError(f"HTTP {resp.status_code} from {url}")
                elif resp.status_code >= 400:
                    raise GatewayError(f"HTTP {resp.status_code} from {url}: {resp.text[:500]}")
                else:
                    try:
                        return resp.json()
                    except ValueError:
                        logger.error("malformed response body from %s: %s", url, resp.text)
                        raise MalformedResponse("response is not JSON", resp.text) from None
            if attempt + 1 < attempts:
                self._sleep(self.config.backoff * (2**attempt))
        assert last is not None
        raise last


class RemoteChatBackend(_RemoteBase):
    def chat_complete(self, request: ChatRequest) -> ChatResponse:
        start = time.perf_counter()
        body: dict[str, Any] = {
            "model": self.config.model,
            "messages": [m.to_wire() for m in request.messages],
        }
        if request.tools:
            body["tools"] = list(request.tools)
        temperature = request.temperature if request.temperature is not None else self.config.temperature
        seed = request.seed if request.seed is not None else self.config.seed
        if temperature is not None:
            body["temperature"] = temperature
        if seed is not None:
            body["seed"] = seed
        data = self._post("/chat/completions", body)
        try:
            message = data["choices"][0]["message"]
            usage_raw = data.get("usage") or {}
            usage = TokenUsage(int(usage_raw.get("prompt_tokens", 0)),
                               int(usage_raw.get("completion_tokens", 0)))
            calls = message.get("tool_calls") or []
            if calls:
                fn = calls[0]["function"]
                response = ChatResponse(
                    tool_call=ToolCallPayload(fn["name"], fn.get("arguments", "{}"),
                                              calls[0].get("id", "call_0")),
                    usage=usage,
                )
            else:
                response = ChatResponse(text=message.get("content") or "", usage=usage)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raw = json.dumps(data)
            logger.error("malformed chat response: %s", raw)
            raise MalformedResponse(f"unexpected chat response shape: {exc}", raw) from None
        self._record(GatewayEvent(self.name, "chat", text_digest(request.last_user_message()),
                                  usage.prompt_tokens, usage.completion_tokens,
                                  (time.perf_counter() - start) * 1e3))
        return response


class RemoteEmbedder(_RemoteBase):
    def __init__(self, config: GatewayConfig, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        super().__init__(config, client, sleep)
        self.dim: int | None = None

    @property
    def identity(self) -> str:
        return f"remote:{self.config.embed_model or self.config.model}"

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        start = time.perf_counter()
        data = self._post("/embeddings", {"model": self.config.embed_model or self.config.model,
                                          "input": text})
        try:
            vec = np.asarray(data["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"unexpected embedding response: {exc}", json.dumps(data)) from None
        if self.dim is None:
            self.dim = vec.size
        elif vec.size != self.dim:
            raise MalformedResponse(f"embedding dimension changed from {self.dim} to {vec.size}")
        tokens = int((data.get("usage") or {}).get("prompt_tokens", 0))
        self._record(GatewayEvent(self.name, "embed", text_digest(text), tokens, 0,
                                  (time.perf_counter() - start) * 1e3))
        return vec


def build_chat_backend(config: GatewayConfig):
    if config.backend == "mock":
        return MockChatBackend.from_file(config.mock_script) if config.mock_script else MockChatBackend()
    if config.backend == "remote":
        return RemoteChatBackend(config)
    raise ValueError(f"unknown chat backend {config.backend!r}")


def build_embedder(config: GatewayConfig):
    if config.backend == "mock":
        overrides = None
        if config.embed_overrides:
            with open(config.embed_overrides, encoding="utf-8") as fh:
                overrides = json.load(fh)
        return MockEmbedder(config.embed_dim, config.embed_seed, overrides)
    if config.backend == "remote":
        return RemoteEmbedder(config)
    raise ValueError(f"unknown embedding backend {config.backend!r}")
