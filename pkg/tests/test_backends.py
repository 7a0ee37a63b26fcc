"""Backend adapters: mocks, retry behavior, and the HTTP/sidecar wire shapes."""

from __future__ import annotations

import base64
import io
import json
import struct

import numpy as np
import pytest
import requests

from openset.backends.base import RetryPolicy, call_with_retries
from openset.backends.http_llm import HttpChatClient, HttpImageGenClient
from openset.backends.mocks import (
    DeterministicImageGen,
    EmbedderOverrides,
    MockImageEmbedder,
    MockImageTextEmbedder,
    ScriptEntry,
    ScriptedLLM,
    deterministic_png,
)
from openset.backends.sidecar import embedding_sidecar_client
from openset.errors import (
    AuthError,
    ConfigError,
    MalformedResponseError,
    QuotaError,
    RateLimitError,
    TransportError,
    UnmatchedPromptError,
)


class TestDeterministicPng:
    def test_same_seed_same_bytes(self):
        assert deterministic_png("seed") == deterministic_png("seed")
        assert deterministic_png("seed") != deterministic_png("seed2")

    def test_png_signature_and_header(self):
        data = deterministic_png("x", size=(5, 3))
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        width, height = struct.unpack(">II", data[16:24])
        assert (width, height) == (5, 3)

    def test_decodable(self):
        PIL = pytest.importorskip("PIL.Image")
        img = PIL.open(io.BytesIO(deterministic_png("x")))
        img.load()
        assert img.size == (8, 8)
        assert img.mode == "RGB"


class TestScriptedLLM:
    def test_matches_last_user_turn(self):
        llm = ScriptedLLM([ScriptEntry("second", "B"), ScriptEntry("first", "A")])
        turns = [("user", "first"), ("assistant", "A"), ("user", "second")]
        assert llm.send(turns) == "B"
        assert llm.calls == 1

    def test_entry_order_wins(self):
        llm = ScriptedLLM([ScriptEntry("app", "first"), ScriptEntry("apple", "second")])
        assert llm.send([("user", "apple pie")]) == "first"

    def test_consumable_entries(self):
        llm = ScriptedLLM(
            [ScriptEntry("go", "one", reusable=False), ScriptEntry("go", "two", reusable=False)]
        )
        assert llm.send([("user", "go")]) == "one"
        assert llm.send([("user", "go")]) == "two"
        with pytest.raises(UnmatchedPromptError):
            llm.send([("user", "go")])

    def test_regex_matcher(self):
        llm = ScriptedLLM([ScriptEntry(r"\d+ items", "counted", regex=True)])
        assert llm.send([("user", "list 12 items")]) == "counted"

    def test_default_requires_non_strict(self):
        strict = ScriptedLLM([], default="fallback")
        with pytest.raises(UnmatchedPromptError):
            strict.send([("user", "anything")])
        lax = ScriptedLLM([], strict=False, default="fallback")
        assert lax.send([("user", "anything")]) == "fallback"

    def test_no_user_turn(self):
        llm = ScriptedLLM([ScriptEntry("x", "y")])
        with pytest.raises(UnmatchedPromptError):
            llm.send([("assistant", "hello")])

    def test_from_json(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(
            json.dumps(
                [
                    {"matcher": "hi", "response": "hello"},
                    {"matcher": "once", "response": "!", "reusable": False},
                ]
            )
        )
        llm = ScriptedLLM.from_json(path)
        assert llm.send([("user", "hi there")]) == "hello"
        assert llm.send([("user", "once")]) == "!"
        with pytest.raises(UnmatchedPromptError):
            llm.send([("user", "once")])


class TestDeterministicImageGen:
    def test_stable_and_prompt_sensitive(self):
        gen = DeterministicImageGen()
        a1, fmt = gen.generate("a red truck")
        a2, _ = gen.generate("a red truck")
        b, _ = gen.generate("a blue truck")
        assert fmt == "png"
        assert a1 == a2
        assert a1 != b
        assert gen.calls == 3

    def test_fingerprint_feeds_the_hash(self):
        a, _ = DeterministicImageGen(fingerprint="g/v1").generate("x")
        b, _ = DeterministicImageGen(fingerprint="g/v2").generate("x")
        assert a != b

    def test_injected_failures(self):
        gen = DeterministicImageGen(fail_matching=["impossible"])
        with pytest.raises(TransportError):
            gen.generate("an impossible scene")
        gen.generate("a fine scene")
        assert gen.calls == 2


class TestMockEmbedders:
    def test_text_determinism_and_counters(self):
        emb = MockImageTextEmbedder(dim=8)
        [v1] = emb.embed_texts(["a photo of cat"])
        [v2] = emb.embed_texts(["a photo of cat"])
        assert np.array_equal(v1.values, v2.values)
        assert v1.dim == 8
        assert emb.text_calls == 2 and emb.text_batches == 2

    def test_spaces_are_distinct(self):
        joint = MockImageTextEmbedder(dim=8)
        imageonly = MockImageEmbedder(dim=8)
        data = b"image-bytes"
        assert not np.array_equal(
            joint.embed_image(data).values, imageonly.embed_image(data).values
        )
        # Text namespace differs from image namespace even for equal strings.
        [t] = joint.embed_texts(["payload"])
        assert not np.array_equal(t.values, joint.embed_image(b"payload").values)

    def test_overrides(self):
        import hashlib

        data = b"special image"
        overrides = EmbedderOverrides(
            texts={"special text": [1.0, 0.0]},
            images={hashlib.sha256(data).hexdigest(): [0.0, 2.0]},
        )
        emb = MockImageTextEmbedder(dim=2, overrides=overrides)
        [t] = emb.embed_texts(["special text"])
        assert np.array_equal(t.values, np.array([1.0, 0.0], dtype=np.float32))
        assert np.array_equal(
            emb.embed_image(data).values, np.array([0.0, 2.0], dtype=np.float32)
        )
        # Anything else falls back to hashing.
        [other] = emb.embed_texts(["ordinary"])
        assert other.dim == 2

    def test_override_dim_mismatch(self):
        emb = MockImageTextEmbedder(dim=3, overrides=EmbedderOverrides(texts={"x": [1.0]}))
        with pytest.raises(ValueError):
            emb.embed_texts(["x"])


class TestRetry:
    def test_delay_schedule(self):
        policy = RetryPolicy(max_attempts=5, base_delay=0.5, multiplier=2.0, max_delay=3.0)
        assert [policy.delay(i) for i in range(1, 5)] == [0.5, 1.0, 2.0, 3.0]

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            RetryPolicy(max_attempts=0)
        with pytest.raises(ValueError):
            RetryPolicy(multiplier=0.5)

    def test_retries_only_retryable(self):
        slept: list[float] = []
        attempts = {"n": 0}

        def flaky():
            attempts["n"] += 1
            if attempts["n"] < 3:
                raise TransportError("down")
            return "ok"

        policy = RetryPolicy(max_attempts=3, base_delay=0.1)
        assert call_with_retries(flaky, policy, sleep=slept.append) == "ok"
        assert attempts["n"] == 3
        assert slept == [0.1, 0.2]

    def test_permanent_error_fails_fast(self):
        attempts = {"n": 0}

        def denied():
            attempts["n"] += 1
            raise AuthError("no")

        with pytest.raises(AuthError):
            call_with_retries(denied, RetryPolicy(max_attempts=5), sleep=lambda _: None)
        assert attempts["n"] == 1

    def test_exhaustion_reraises(self):
        attempts = {"n": 0}

        def always_down():
            attempts["n"] += 1
            raise TransportError("down")

        with pytest.raises(TransportError):
            call_with_retries(always_down, RetryPolicy(max_attempts=3), sleep=lambda _: None)
        assert attempts["n"] == 3


class FakeResponse:
    def __init__(self, status_code=200, payload=None, text=None):
        self.status_code = status_code
        self._payload = payload
        self.text = text if text is not None else json.dumps(payload)

    def json(self):
        if self._payload is None:
            raise ValueError("not json")
        return self._payload


class FakeSession:
    """Canned responses in order; records every request it serves."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests: list[dict] = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append(
            {"method": "POST", "url": url, "json": json, "headers": headers, "timeout": timeout}
        )
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item

    def get(self, url, timeout=None):
        self.requests.append({"method": "GET", "url": url, "timeout": timeout})
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def chat_payload(text):
    return {"choices": [{"message": {"content": text}}]}


def make_chat(responses, **kwargs):
    session = FakeSession(responses)
    client = HttpChatClient(
        "http://llm.test/v1/chat",
        "test-model",
        session=session,
        sleep=lambda _: None,
        **kwargs,
    )
    return client, session


class TestHttpChatClient:
    def test_happy_path_payload_and_auth(self, monkeypatch):
        monkeypatch.setenv("TEST_CHAT_TOKEN", "sekret")
        client, session = make_chat([FakeResponse(payload=chat_payload("hello"))],
                                    token_env="TEST_CHAT_TOKEN")
        out = client.send([("user", "hi"), ("assistant", "yo"), ("user", "again")])
        assert out == "hello"
        [req] = session.requests
        assert req["url"] == "http://llm.test/v1/chat"
        assert req["headers"]["Authorization"] == "Bearer sekret"
        assert req["json"] == {
            "model": "test-model",
            "messages": [
                {"role": "user", "content": "hi"},
                {"role": "assistant", "content": "yo"},
                {"role": "user", "content": "again"},
            ],
            "temperature": 0.0,
        }

    def test_no_token_env_means_no_auth_header(self):
        client, session = make_chat([FakeResponse(payload=chat_payload("ok"))])
        client.send([("user", "hi")])
        assert "Authorization" not in session.requests[0]["headers"]

    def test_rate_limited_then_ok(self):
        client, session = make_chat(
            [
                FakeResponse(status_code=429, payload={}, text="slow down"),
                FakeResponse(payload=chat_payload("ok")),
            ]
        )
        assert client.send([("user", "hi")]) == "ok"
        assert len(session.requests) == 2

    def test_auth_error_not_retried(self):
        client, session = make_chat([FakeResponse(status_code=401, payload={}, text="denied")])
        with pytest.raises(AuthError):
            client.send([("user", "hi")])
        assert len(session.requests) == 1

    def test_quota_error(self):
        client, _ = make_chat([FakeResponse(status_code=402, payload={}, text="pay up")])
        with pytest.raises(QuotaError):
            client.send([("user", "hi")])

    def test_server_errors_exhaust_retries(self):
        client, session = make_chat(
            [FakeResponse(status_code=500, payload={}, text="boom")] * 3,
            retry=RetryPolicy(max_attempts=3, base_delay=0.0),
        )
        with pytest.raises(TransportError):
            client.send([("user", "hi")])
        assert len(session.requests) == 3

    def test_timeout_is_retried(self):
        client, session = make_chat(
            [requests.Timeout("slow"), FakeResponse(payload=chat_payload("ok"))]
        )
        assert client.send([("user", "hi")]) == "ok"
        assert len(session.requests) == 2

    def test_non_json_body_not_retried(self):
        client, session = make_chat([FakeResponse(text="<html>oops</html>")])
        with pytest.raises(MalformedResponseError):
            client.send([("user", "hi")])
        assert len(session.requests) == 1

    def test_unexpected_shape(self):
        client, _ = make_chat([FakeResponse(payload={"choices": []})])
        with pytest.raises(MalformedResponseError):
            client.send([("user", "hi")])

    def test_unknown_role_rejected(self):
        client, _ = make_chat([])
        with pytest.raises(ValueError):
            client.send([("system", "be nice")])

    def test_requires_endpoint(self):
        with pytest.raises(ConfigError):
            HttpChatClient("", "m")


class TestHttpImageGenClient:
    def test_decodes_b64(self):
        raw = b"not really a png"
        session = FakeSession(
            [FakeResponse(payload={"data": [{"b64_json": base64.b64encode(raw).decode()}]})]
        )
        client = HttpImageGenClient(
            "http://img.test/v1/images", "paint-model", session=session, sleep=lambda _: None
        )
        data, fmt = client.generate("a red truck")
        assert (data, fmt) == (raw, "png")
        sent = session.requests[0]["json"]
        assert sent["prompt"] == "a red truck"
        assert sent["model"] == "paint-model"
        assert sent["n"] == 1
        assert sent["response_format"] == "b64_json"

    def test_invalid_base64(self):
        session = FakeSession([FakeResponse(payload={"data": [{"b64_json": "!!!"}]})])
        client = HttpImageGenClient("http://img.test", session=session, sleep=lambda _: None)
        with pytest.raises(MalformedResponseError):
            client.generate("x")


class FakeSidecarSession:
    """Routes /health, /embed_text, /embed_image like the real service."""

    def __init__(self, status="ready", text_dim=2, image_dims=None):
        self.status = status
        self.text_dim = text_dim
        self.image_dims = image_dims or {"image": 3, "image_text": 2}
        self.requests: list[dict] = []

    def get(self, url, timeout=None):
        self.requests.append({"url": url})
        if url.endswith("/health"):
            return FakeResponse(
                payload={
                    "status": self.status,
                    "models": {"image_text": "joint/v1", "image": "vision/v1"},
                }
            )
        return FakeResponse(status_code=404, payload={}, text="nope")

    def post(self, url, json=None, timeout=None):
        self.requests.append({"url": url, "json": json})
        if url.endswith("/embed_text"):
            texts = json["texts"]
            vectors = [[float(i + 1)] * self.text_dim for i in range(len(texts))]
            return FakeResponse(payload={"dim": self.text_dim, "vectors": vectors})
        if url.endswith("/embed_image"):
            dim = self.image_dims[json.get("model", "image")]
            return FakeResponse(payload={"dim": dim, "vector": [1.0] * dim})
        return FakeResponse(status_code=404, payload={}, text="nope")


def connect(session, **kwargs):
    return embedding_sidecar_client(
        "http://sidecar.test:8008/", session=session, sleep=lambda _: None, **kwargs
    )


class TestSidecarClient:
    def test_health_gating(self):
        with pytest.raises(TransportError, match="not ready"):
            connect(FakeSidecarSession(status="loading"))

    def test_missing_model_fingerprints(self):
        class NoModels(FakeSidecarSession):
            def get(self, url, timeout=None):
                return FakeResponse(payload={"status": "ready", "models": {}})

        with pytest.raises(MalformedResponseError):
            connect(NoModels())

    def test_fingerprints_from_health(self):
        joint, vision = connect(FakeSidecarSession())
        assert joint.fingerprint == "joint/v1"
        assert vision.fingerprint == "vision/v1"

    def test_text_batching(self):
        session = FakeSidecarSession()
        joint, _ = connect(session, batch_size=2)
        vectors = joint.embed_texts(["a", "b", "c"])
        assert len(vectors) == 3
        posts = [r for r in session.requests if r["url"].endswith("/embed_text")]
        assert [len(p["json"]["texts"]) for p in posts] == [2, 1]
        assert joint.dim == 2

    def test_image_routes_by_model(self):
        session = FakeSidecarSession()
        joint, vision = connect(session)
        v_joint = joint.embed_image(b"bytes", "png")
        v_vision = vision.embed_image(b"bytes", "png")
        posts = [r for r in session.requests if r["url"].endswith("/embed_image")]
        assert [p["json"]["model"] for p in posts] == ["image_text", "image"]
        assert posts[0]["json"]["image_b64"] == base64.b64encode(b"bytes").decode()
        assert posts[0]["json"]["format"] == "png"
        assert v_joint.dim == 2 and v_vision.dim == 3

    def test_dim_change_rejected(self):
        session = FakeSidecarSession()
        joint, _ = connect(session)
        joint.embed_texts(["a"])
        session.text_dim = 5
        with pytest.raises(MalformedResponseError, match="changed dim"):
            joint.embed_texts(["b"])

    def test_vector_count_mismatch(self):
        class ShortBatch(FakeSidecarSession):
            def post(self, url, json=None, timeout=None):
                return FakeResponse(payload={"dim": 2, "vectors": [[1.0, 2.0]]})

        joint, _ = connect(ShortBatch())
        with pytest.raises(MalformedResponseError):
            joint.embed_texts(["a", "b"])

    def test_rate_limited_embed_retries(self):
        class Flaky(FakeSidecarSession):
            def __init__(self):
                super().__init__()
                self.failures = 1

            def post(self, url, json=None, timeout=None):
                if self.failures:
                    self.failures -= 1
                    return FakeResponse(status_code=429, payload={}, text="busy")
                return super().post(url, json=json, timeout=timeout)

        joint, _ = connect(Flaky())
        assert len(joint.embed_texts(["a"])) == 1
