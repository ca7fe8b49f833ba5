"""Inference backends.

A backend takes a message transcript plus tool schemas and returns exactly one
:class:`Reply`: assistant text, a tool invocation, or a final answer.

Messages are dicts with ``role`` and ``content``. The runtime adds a few
extra keys that only in-process scripted policies read: ``task`` on the system
message, ``data`` on structured prompts, ``structured`` on tool results and
``control`` on runtime instructions. :class:`RemoteBackend` strips them.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass, field
from typing import Any, Literal, Protocol, Sequence

import httpx

from pulse.dataset import dumps


class BackendError(RuntimeError):
    """Transient backend failure; callers may retry."""


@dataclass(frozen=True)
class Reply:
    kind: Literal["text", "tool_call", "final"]
    content: str = ""
    tool_name: str | None = None
    arguments: dict[str, Any] = field(default_factory=dict)


class InferenceBackend(Protocol):
    def complete(self, messages: Sequence[dict[str, Any]], tools: Sequence[dict[str, Any]]) -> Reply: ...


class Policy(Protocol):
    def respond(
        self, messages: Sequence[dict[str, Any]], tools: Sequence[dict[str, Any]], rng: random.Random
    ) -> Reply: ...


class ScriptedBackend:
    """Deterministic backend driven by a policy.

    The RNG handed to the policy is seeded from ``seed`` and a digest of the
    transcript, so replies do not depend on call order across threads.
    """

    def __init__(self, policy: Policy, seed: int = 0):
        self.policy = policy
        self.seed = seed

    def complete(self, messages: Sequence[dict[str, Any]], tools: Sequence[dict[str, Any]]) -> Reply:
        digest = hashlib.sha256(dumps(list(messages)).encode()).hexdigest()
        rng = random.Random(f"{self.seed}:{digest}")
        return self.policy.respond(messages, tools, rng)


class ReplayPolicy:
    """Replays fixed replies; the n-th assistant turn gets ``replies[n]``."""

    def __init__(self, replies: Sequence[Reply | dict[str, Any]]):
        self.replies = [r if isinstance(r, Reply) else Reply(**r) for r in replies]

    def respond(self, messages, tools, rng) -> Reply:
        n = sum(1 for m in messages if m["role"] == "assistant")
        if n >= len(self.replies):
            return self.replies[-1]
        return self.replies[n]


ENV_ENDPOINT = "PULSE_LLM_ENDPOINT"
ENV_MODEL = "PULSE_LLM_MODEL"
ENV_API_KEY = "PULSE_LLM_API_KEY"


class RemoteBackend:
    """Chat-completions style HTTP endpoint with function calling.

    Configured from ``PULSE_LLM_ENDPOINT`` (base URL), ``PULSE_LLM_MODEL``
    and ``PULSE_LLM_API_KEY`` unless passed explicitly.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = (endpoint or os.environ.get(ENV_ENDPOINT, "")).rstrip("/")
        self.model = model or os.environ.get(ENV_MODEL, "")
        api_key = api_key or os.environ.get(ENV_API_KEY, "")
        if not self.endpoint or not self.model:
            raise ValueError(f"remote backend needs {ENV_ENDPOINT} and {ENV_MODEL}")
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    @staticmethod
    def to_api_messages(messages: Sequence[dict[str, Any]]) -> list[dict[str, Any]]:
        out: list[dict[str, Any]] = []
        for i, m in enumerate(messages):
            if m["role"] == "assistant" and m.get("tool_call"):
                call = m["tool_call"]
                out.append(
                    {
                        "role": "assistant",
                        "content": m.get("content") or None,
                        "tool_calls": [
                            {
                                "id": call["id"],
                                "type": "function",
                                "function": {"name": call["name"], "arguments": json.dumps(call["arguments"])},
                            }
                        ],
                    }
                )
            elif m["role"] == "tool":
                out.append({"role": "tool", "tool_call_id": m["tool_call_id"], "content": m["content"]})
            else:
                out.append({"role": m["role"], "content": m["content"]})
        return out

    @staticmethod
    def to_api_tools(tools: Sequence[dict[str, Any]]) -> list[dict[str, Any]]:
        return [
            {
                "type": "function",
                "function": {"name": t["name"], "description": t["description"], "parameters": t["inputSchema"]},
            }
            for t in tools
        ]

    def complete(self, messages: Sequence[dict[str, Any]], tools: Sequence[dict[str, Any]]) -> Reply:
        body: dict[str, Any] = {"model": self.model, "messages": self.to_api_messages(messages)}
        if tools:
            body["tools"] = self.to_api_tools(tools)
        try:
            resp = self._client.post(f"{self.endpoint}/chat/completions", json=body)
            resp.raise_for_status()
            message = resp.json()["choices"][0]["message"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"remote backend failed: {exc}") from exc
        calls = message.get("tool_calls") or []
        if calls:
            fn = calls[0]["function"]
            try:
                args = json.loads(fn.get("arguments") or "{}")
            except json.JSONDecodeError:
                args = {"_unparseable": fn.get("arguments")}
            return Reply("tool_call", message.get("content") or "", fn["name"], args)
        content = message.get("content") or ""
        kind = "final" if "{" in content and '"binary"' in content else "text"
        return Reply(kind, content)

    def close(self) -> None:
        self._client.close()
