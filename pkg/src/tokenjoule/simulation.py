"""Deterministic stand-ins for a live deployment.

``VirtualTimeLoop`` is an asyncio event loop whose clock jumps straight to the
next scheduled timer instead of waiting, so a benchmark that would take hours
of wall time finishes instantly and records exactly the scripted latencies.
``ScriptedEndpoint`` is an ``httpx`` mock handler speaking the chat-completion
wire format with configurable latency, usage, and failures.
"""

from __future__ import annotations

import asyncio
import json
import selectors
from collections import Counter
from collections.abc import Callable, Coroutine
from typing import Any, TypeVar

import httpx

T = TypeVar("T")


class _VirtualSelector(selectors.DefaultSelector):
    loop: VirtualTimeLoop | None = None

    def select(self, timeout=None):
        ready = super().select(0)
        if ready:
            return ready
        if timeout is None:
            # Nothing scheduled: only another thread can wake us.
            return super().select(None)
        if timeout > 0:
            self.loop._now += timeout
        return []


class VirtualTimeLoop(asyncio.SelectorEventLoop):
    def __init__(self, start: float = 0.0):
        self._now = float(start)
        selector = _VirtualSelector()
        selector.loop = self
        super().__init__(selector=selector)

    def time(self) -> float:
        return self._now


def run_virtual(coro: Coroutine[Any, Any, T], start: float = 0.0) -> T:
    loop = VirtualTimeLoop(start)
    try:
        asyncio.set_event_loop(loop)
        return loop.run_until_complete(coro)
    finally:
        asyncio.set_event_loop(None)
        loop.close()


LatencyFn = Callable[[int, dict], float]


class ScriptedEndpoint:
    """Mock chat-completion server.

    Args:
        latency: seconds per response, or ``f(call_index, body) -> seconds``.
            ``call_index`` counts every request received, starting at 0.
        completion_tokens: int or ``f(call_index, body) -> int``.
        prompt_tokens: reported prompt token count.
        failures_per_prompt: the first N attempts for each distinct prompt
            text answer HTTP 500.
        hang: never answer (sleeps far beyond any sane timeout).
        include_usage: omit the ``usage`` object when False.
    """

    def __init__(
        self,
        latency: float | LatencyFn = 1.0,
        completion_tokens: int | LatencyFn = 200,
        prompt_tokens: int = 12,
        failures_per_prompt: int = 0,
        hang: bool = False,
        include_usage: bool = True,
        content: str = "ok",
    ):
        self.latency = latency
        self.completion_tokens = completion_tokens
        self.prompt_tokens = prompt_tokens
        self.failures_per_prompt = failures_per_prompt
        self.hang = hang
        self.include_usage = include_usage
        self.content = content
        self.bodies: list[dict] = []
        self.headers: list[httpx.Headers] = []
        self._attempts: Counter[str] = Counter()

    @property
    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self)

    def _value(self, spec, index: int, body: dict):
        return spec(index, body) if callable(spec) else spec

    async def __call__(self, request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        index = len(self.bodies)
        self.bodies.append(body)
        self.headers.append(request.headers)
        if self.hang:
            await asyncio.sleep(10**9)
        await asyncio.sleep(self._value(self.latency, index, body))
        key = body["messages"][-1]["content"]
        self._attempts[key] += 1
        if self._attempts[key] <= self.failures_per_prompt:
            return httpx.Response(500, json={"error": "scripted failure"})
        payload: dict[str, Any] = {
            "id": f"cmpl-{index}",
            "object": "chat.completion",
            "model": body.get("model"),
            "choices": [{"index": 0, "message": {"role": "assistant", "content": self.content}}],
        }
        if self.include_usage:
            payload["usage"] = {
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self._value(self.completion_tokens, index, body),
            }
        return httpx.Response(200, json=payload)
