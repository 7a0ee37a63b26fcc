"""HTTP adapters for hosted chat and text-to-image providers.

Both speak the common OpenAI-style JSON wire shapes.  Auth tokens are read
from the environment at construction (never from config files).  Error
mapping: 401/403 auth, 402 quota, 429 rate limit (retryable), other 4xx
permanent, 5xx and transport failures retryable.
"""

from __future__ import annotations

import base64
import binascii
import os
import threading
import time
from typing import Callable, Sequence

import requests

from ..errors import (
    AuthError,
    BackendError,
    ConfigError,
    MalformedResponseError,
    QuotaError,
    RateLimitError,
    TransportError,
)
from .base import LLMClient, RetryPolicy, TextToImageClient, Turn, call_with_retries

_ROLE_MAP = {"user": "user", "assistant": "assistant"}


def _raise_for_status(status: int, body: str) -> None:
    snippet = body[:200]
    if status in (401, 403):
        raise AuthError(f"HTTP {status}: {snippet}")
    if status == 402:
        raise QuotaError(f"HTTP {status}: {snippet}")
    if status == 429:
        raise RateLimitError(f"HTTP {status}: {snippet}")
    if 400 <= status < 500:
        raise BackendError(f"HTTP {status}: {snippet}")
    if status >= 500:
        raise TransportError(f"HTTP {status}: {snippet}")


class _HttpJsonClient:
    """Shared POST-JSON plumbing with bounded in-flight requests."""

    def __init__(
        self,
        endpoint: str,
        *,
        token_env: str | None,
        timeout: float,
        retry: RetryPolicy,
        max_in_flight: int,
        session: requests.Session | None,
        sleep: Callable[[float], None],
    ):
        self.endpoint = endpoint
        self.timeout = timeout
        self.retry = retry
        self._session = session or requests.Session()
        self._semaphore = threading.BoundedSemaphore(max(1, max_in_flight))
        self._sleep = sleep
        self._token = os.environ.get(token_env) if token_env else None

    def post_json(self, payload: dict) -> dict:
        def once() -> dict:
            headers = {"Content-Type": "application/json"}
            if self._token:
                headers["Authorization"] = f"Bearer {self._token}"
            try:
                resp = self._session.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                raise TransportError(f"request to {self.endpoint} failed: {exc}") from exc
            if resp.status_code != 200:
                _raise_for_status(resp.status_code, resp.text)
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponseError(f"response is not JSON: {resp.text[:200]}") from exc

        with self._semaphore:
            return call_with_retries(once, self.retry, sleep=self._sleep)


class HttpChatClient(LLMClient):
    """Chat-completions adapter.

    Decoding is pinned to temperature 0 so repeated runs against a stable
    provider stay reproducible.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        token_env: str | None = None,
        timeout: float = 60.0,
        retry: RetryPolicy = RetryPolicy(),
        temperature: float = 0.0,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not endpoint:
            raise ConfigError("chat endpoint is required")
        self.model = model
        self.temperature = temperature
        self.fingerprint = f"chat:{model}:t{temperature}"
        self._http = _HttpJsonClient(
            endpoint,
            token_env=token_env,
            timeout=timeout,
            retry=retry,
            max_in_flight=max_in_flight,
            session=session,
            sleep=sleep,
        )

    def send(self, turns: Sequence[Turn]) -> str:
        messages = []
        for role, text in turns:
            if role not in _ROLE_MAP:
                raise ValueError(f"unknown chat role: {role!r}")
            messages.append({"role": _ROLE_MAP[role], "content": text})
        payload = {"model": self.model, "messages": messages, "temperature": self.temperature}
        data = self._http.post_json(payload)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected chat payload: {data!r}") from exc
        if not isinstance(content, str):
            raise MalformedResponseError(f"chat content is not text: {content!r}")
        return content


def http_chat_adapter(
    endpoint: str,
    model: str,
    *,
    token_env: str | None = None,
    timeout: float = 60.0,
    retry: RetryPolicy = RetryPolicy(),
    max_in_flight: int = 4,
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> LLMClient:
    return HttpChatClient(
        endpoint,
        model,
        token_env=token_env,
        timeout=timeout,
        retry=retry,
        max_in_flight=max_in_flight,
        session=session,
        sleep=sleep,
    )


class HttpImageGenClient(TextToImageClient):
    """Images-API adapter: prompt in, base64 PNG out."""

    def __init__(
        self,
        endpoint: str,
        model: str | None = None,
        *,
        token_env: str | None = None,
        timeout: float = 120.0,
        retry: RetryPolicy = RetryPolicy(),
        size: str = "256x256",
        max_in_flight: int = 4,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not endpoint:
            raise ConfigError("image-generation endpoint is required")
        self.model = model
        self.size = size
        self.fingerprint = f"imagegen:{model or 'default'}:{size}"
        self._http = _HttpJsonClient(
            endpoint,
            token_env=token_env,
            timeout=timeout,
            retry=retry,
            max_in_flight=max_in_flight,
            session=session,
            sleep=sleep,
        )

    def generate(self, text: str) -> tuple[bytes, str]:
        payload: dict = {"prompt": text, "n": 1, "size": self.size, "response_format": "b64_json"}
        if self.model:
            payload["model"] = self.model
        data = self._http.post_json(payload)
        try:
            encoded = data["data"][0]["b64_json"]
            raw = base64.b64decode(encoded, validate=True)
        except (KeyError, IndexError, TypeError, binascii.Error) as exc:
            raise MalformedResponseError(f"unexpected image payload: {data!r}") from exc
        return raw, "png"
