from __future__ import annotations

import json

import httpx
import numpy as np
import pytest

from gridflow.gateway import (
    AuthenticationError,
    ChatMessage,
    ChatRequest,
    ChatResponse,
    GatewayConfig,
    GatewayError,
    MalformedResponse,
    MockChatBackend,
    MockEmbedder,
    RemoteChatBackend,
    RemoteEmbedder,
    TokenUsage,
    ToolCallPayload,
    TransportError,
    build_chat_backend,
    mock_tokens,
    text_digest,
)
from gridflow.retrieval import rank_by_similarity


def req(text="hello"):
    return ChatRequest((ChatMessage("system", "sys"), ChatMessage("user", text)))


class TestTypes:
    def test_usage(self):
        assert (TokenUsage(1, 2) + TokenUsage(3, 4)).total == 10
        with pytest.raises(ValueError):
            TokenUsage(-1, 0)

    def test_response_exactly_one(self):
        with pytest.raises(ValueError):
            ChatResponse()
        with pytest.raises(ValueError):
            ChatResponse(text="a", tool_call=ToolCallPayload("x", {}))

    def test_request_non_empty(self):
        with pytest.raises(ValueError):
            ChatRequest(())

    @pytest.mark.parametrize("text,n", [("", 0), ("abc", 1), ("abcd", 1), ("abcde", 2)])
    def test_mock_tokens(self, text, n):
        assert mock_tokens(text) == n


class TestMockChat:
    def test_lookup_and_default(self):
        backend = MockChatBackend({text_digest("d1"): {"tool": "load_network", "args": {"feeder": "glover"}}})
        r = backend.chat_complete(req("d1"))
        assert r.tool_call.name == "load_network" and r.tool_call.arguments == {"feeder": "glover"}
        assert backend.chat_complete(req("other")).text == "no script entry"
        assert len(backend.events) == 2

    def test_list_consumed_then_repeats(self):
        backend = MockChatBackend({text_digest("q"): [{"tool": "a"}, {"text": "done"}]})
        out = [backend.chat_complete(req("q")) for _ in range(3)]
        assert [o.tool_call.name if o.tool_call else o.text for o in out] == ["a", "done", "done"]

    def test_usage_formula(self):
        r = MockChatBackend().chat_complete(req("abcdefgh"))
        assert r.usage == TokenUsage(mock_tokens("sys\nabcdefgh"), mock_tokens("no script entry"))

    def test_pure(self):
        a = MockChatBackend({text_digest("q"): {"text": "x"}}).chat_complete(req("q"))
        b = MockChatBackend({text_digest("q"): {"text": "x"}}).chat_complete(req("q"))
        assert a == b


class TestMockEmbedder:
    def test_deterministic_unit(self):
        e = MockEmbedder()
        v1, v2 = e.embed("feeder"), e.embed("feeder")
        np.testing.assert_array_equal(v1, v2)
        assert v1.shape == (64,) and np.linalg.norm(v1) == pytest.approx(1.0)
        assert e.identity == "mock-hash-d64-s0"
        assert len(e.events) == 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            MockEmbedder().embed("")

    def test_planted_ordering(self):
        q = np.zeros(64)
        q[0] = 1.0
        planted = np.zeros(64)
        planted[0], planted[1] = 0.95, np.sqrt(1 - 0.95**2)
        overrides = {"query": q, "planted": planted}
        for i in range(10):
            d = np.zeros(64)
            d[0], d[2 + i] = 0.30 - 0.01 * i, np.sqrt(1 - (0.30 - 0.01 * i) ** 2)
            overrides[f"d{i}"] = d
        e = MockEmbedder(overrides=overrides)
        texts = [f"d{i}" for i in range(5)] + ["planted"] + [f"d{i}" for i in range(5, 10)]
        prof = rank_by_similarity(e.embed("query"), [e.embed(t) for t in texts])
        assert prof.original_index[0] == 5
        assert prof.scores[0] == pytest.approx(0.95)

    def test_bad_override(self):
        with pytest.raises(ValueError):
            MockEmbedder(overrides={"x": [1.0, 0.0]})


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def _chat_ok(tool=True):
    msg = ({"role": "assistant", "content": None,
            "tool_calls": [{"id": "c1", "type": "function",
                            "function": {"name": "get_voltages", "arguments": "{}"}}]}
           if tool else {"role": "assistant", "content": "done"})
    return {"choices": [{"message": msg}], "usage": {"prompt_tokens": 11, "completion_tokens": 3}}


class TestRemote:
    cfg = GatewayConfig(backend="remote", endpoint="http://x/v1", model="m", retries=3, backoff=0.0,
                        temperature=0.2)

    def test_wire_format(self, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "secret")
        seen = {}

        def handler(request):
            seen["url"] = str(request.url)
            seen["auth"] = request.headers.get("authorization")
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json=_chat_ok())

        r = RemoteChatBackend(self.cfg, _client(handler)).chat_complete(
            ChatRequest((ChatMessage("user", "q"),), ({"type": "function"},)))
        assert seen["url"] == "http://x/v1/chat/completions"
        assert seen["auth"] == "Bearer secret"
        assert seen["body"]["temperature"] == 0.2 and seen["body"]["model"] == "m"
        assert "seed" not in seen["body"]
        assert r.tool_call.name == "get_voltages" and r.usage == TokenUsage(11, 3)

    def test_retry_then_success(self):
        calls = []
        sleeps = []

        def handler(request):
            calls.append(1)
            return httpx.Response(503) if len(calls) < 3 else httpx.Response(200, json=_chat_ok(False))

        backend = RemoteChatBackend(self.cfg, _client(handler), sleep=sleeps.append)
        assert backend.chat_complete(req()).text == "done"
        assert len(calls) == 3 and len(sleeps) == 2

    def test_transport_exhausted(self):
        def handler(request):
            raise httpx.ConnectError("down")

        with pytest.raises(TransportError):
            RemoteChatBackend(self.cfg, _client(handler), sleep=lambda s: None).chat_complete(req())

    @pytest.mark.parametrize("status,exc", [(401, AuthenticationError), (403, AuthenticationError),
                                            (400, GatewayError)])
    def test_fatal_status(self, status, exc):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(status, text="nope")

        with pytest.raises(exc):
            RemoteChatBackend(self.cfg, _client(handler)).chat_complete(req())
        assert len(calls) == 1

    def test_malformed_keeps_raw(self):
        backend = RemoteChatBackend(self.cfg, _client(lambda r: httpx.Response(200, text="<html>")))
        with pytest.raises(MalformedResponse) as err:
            backend.chat_complete(req())
        assert err.value.raw == "<html>"
        shape = RemoteChatBackend(self.cfg, _client(lambda r: httpx.Response(200, json={"choices": []})))
        with pytest.raises(MalformedResponse):
            shape.chat_complete(req())

    def test_embeddings(self):
        def handler(request):
            assert request.url.path == "/v1/embeddings"
            return httpx.Response(200, json={"data": [{"embedding": [0.1, 0.2, 0.3]}]})

        emb = RemoteEmbedder(self.cfg, _client(handler))
        assert emb.embed("t").shape == (3,)
        assert emb.identity == "remote:m"


def test_build_backends(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps({text_digest("q"): {"text": "hi"}}))
    backend = build_chat_backend(GatewayConfig(mock_script=str(path)))
    assert backend.chat_complete(req("q")).text == "hi"
    with pytest.raises(ValueError):
        build_chat_backend(GatewayConfig(backend="carrier-pigeon"))
    with pytest.raises(ValueError):
        GatewayConfig.from_mapping({"bogus": 1})
