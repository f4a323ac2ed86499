"""Chat-completion client that times each request end to end.

Requests go to ``{base_url}/v1/chat/completions`` in the open chat-completion
wire format. Timing uses the running event loop's clock, which is
``time.monotonic`` for the default loop, so it never goes backwards when the
system clock is adjusted.
"""

from __future__ import annotations

import asyncio
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import httpx

from .errors import ConfigError
from .prompts import PromptSpec

log = logging.getLogger(__name__)

DEPLOYMENT_KINDS = ("local", "api_free", "api_paid")
STATUSES = ("ok", "failed", "retried_ok")
TOKENIZERS = ("whitespace", "chars")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_id: str
    deployment_kind: str = "local"
    api_key: str | None = field(default=None, repr=False)
    temperature: float = 0.7
    sampling_seed: int = 42
    request_timeout: float = 600.0
    max_retries: int = 3
    retry_backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.deployment_kind not in DEPLOYMENT_KINDS:
            raise ConfigError(f"deployment_kind must be one of {DEPLOYMENT_KINDS}, got {self.deployment_kind!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError(f"temperature must lie in [0, 2], got {self.temperature}")
        if self.request_timeout <= 0:
            raise ConfigError("request_timeout must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be non-negative")
        if self.retry_backoff < 0:
            raise ConfigError("retry_backoff must be non-negative")

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/v1/chat/completions"

    def public_dict(self) -> dict[str, Any]:
        """Configuration without the secret, for checksums and logs."""
        d = asdict(self)
        d.pop("api_key")
        return d


@dataclass(frozen=True)
class RequestRecord:
    prompt_id: int
    start_time: float
    wall_time: float
    prompt_tokens: int
    completion_tokens: int
    status: str
    attempt_count: int
    usage_source: str = "server"
    error: str | None = None

    @property
    def end_time(self) -> float:
        return self.start_time + self.wall_time

    @property
    def succeeded(self) -> bool:
        return self.status != "failed"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RequestRecord:
        return cls(**d)


def count_tokens(text: str, tokenizer_spec: str = "whitespace") -> int:
    """Approximate token count used when the server omits usage fields.

    ``whitespace`` returns ``ceil(words * 4 / 3)``; ``chars`` returns
    ``ceil(len(text) / 4)``.
    """
    if tokenizer_spec not in TOKENIZERS:
        raise ConfigError(f"unknown tokenizer {tokenizer_spec!r}; expected one of {TOKENIZERS}")
    if not text:
        return 0
    if tokenizer_spec == "whitespace":
        words = len(text.split())
        # integer form of ceil(words * 4 / 3), avoids float rounding
        return -(-words * 4 // 3)
    return math.ceil(len(text) / 4)


def build_request_body(config: EndpointConfig, prompt: PromptSpec) -> dict[str, Any]:
    return {
        "model": config.model_id,
        "messages": [{"role": "user", "content": prompt.text}],
        "temperature": config.temperature,
        "seed": config.sampling_seed,
        "max_tokens": prompt.target_tokens,
    }


class _AttemptFailed(Exception):
    pass


class ChatClient:
    """Async client for one endpoint.

    The client holds no per-request state, so one instance can serve many
    concurrent ``send_chat`` calls. Pass ``transport`` to route requests
    through an ``httpx`` mock transport in tests.
    """

    def __init__(
        self,
        config: EndpointConfig,
        transport: httpx.AsyncBaseTransport | None = None,
        tokenizer: str = "whitespace",
    ):
        if tokenizer not in TOKENIZERS:
            raise ConfigError(f"unknown tokenizer {tokenizer!r}")
        self.config = config
        self.tokenizer = tokenizer
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        # Timeouts are enforced per attempt with asyncio.wait_for instead.
        self._http = httpx.AsyncClient(transport=transport, headers=headers, timeout=None)

    async def __aenter__(self) -> ChatClient:
        return self

    async def __aexit__(self, *exc) -> None:
        await self.aclose()

    async def aclose(self) -> None:
        await self._http.aclose()

    async def _attempt(self, body: dict[str, Any]) -> dict[str, Any]:
        response = await self._http.post(self.config.url, json=body)
        if response.status_code // 100 != 2:
            raise _AttemptFailed(f"HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError:
            raise _AttemptFailed("response body is not JSON") from None

    def _usage(self, prompt: PromptSpec, payload: dict[str, Any]) -> tuple[int, int, str]:
        usage = payload.get("usage") or {}
        prompt_tokens = usage.get("prompt_tokens")
        completion_tokens = usage.get("completion_tokens")
        if isinstance(prompt_tokens, int) and isinstance(completion_tokens, int):
            return prompt_tokens, completion_tokens, "server"
        try:
            content = payload["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            content = ""
        return (
            count_tokens(prompt.text, self.tokenizer),
            count_tokens(content, self.tokenizer),
            "estimated",
        )

    async def send_chat(self, prompt: PromptSpec) -> RequestRecord:
        loop = asyncio.get_running_loop()
        cfg = self.config
        body = build_request_body(cfg, prompt)
        attempts = 0
        error = None
        start = loop.time()
        while attempts <= cfg.max_retries:
            if attempts:
                await asyncio.sleep(cfg.retry_backoff)
            attempts += 1
            try:
                payload = await asyncio.wait_for(self._attempt(body), cfg.request_timeout)
                prompt_tokens, completion_tokens, source = self._usage(prompt, payload)
                if completion_tokens <= 0:
                    raise _AttemptFailed("empty completion")
            except asyncio.TimeoutError:
                error = f"timeout after {cfg.request_timeout} s"
            except (_AttemptFailed, httpx.HTTPError) as exc:
                error = str(exc) or type(exc).__name__
            else:
                return RequestRecord(
                    prompt_id=prompt.id,
                    start_time=start,
                    wall_time=max(0.0, loop.time() - start),
                    prompt_tokens=prompt_tokens,
                    completion_tokens=completion_tokens,
                    status="ok" if attempts == 1 else "retried_ok",
                    attempt_count=attempts,
                    usage_source=source,
                )
            log.warning("prompt %d attempt %d failed: %s", prompt.id, attempts, error)
        return RequestRecord(
            prompt_id=prompt.id,
            start_time=start,
            wall_time=max(0.0, loop.time() - start),
            prompt_tokens=0,
            completion_tokens=0,
            status="failed",
            attempt_count=attempts,
            usage_source="none",
            error=error,
        )


def send_chat(
    config: EndpointConfig,
    prompt: PromptSpec,
    transport: httpx.AsyncBaseTransport | None = None,
) -> RequestRecord:
    """Synchronous one-shot wrapper around :meth:`ChatClient.send_chat`."""

    async def _run() -> RequestRecord:
        async with ChatClient(config, transport=transport) as client:
            return await client.send_chat(prompt)

    return asyncio.run(_run())
