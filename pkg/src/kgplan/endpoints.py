"""Chat-completion style text endpoints.

Anything with ``complete(prompt: str) -> str`` can serve as a verbalizer,
planner or QA endpoint. :class:`ChatClient` talks to an OpenAI-compatible
``/chat/completions`` URL; :func:`with_retries` adds retry with exponential
backoff around any endpoint call.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from typing import Callable, Protocol, TypeVar

import requests

logger = logging.getLogger(__name__)

T = TypeVar("T")


class Endpoint(Protocol):
    def complete(self, prompt: str) -> str: ...


class EndpointError(RuntimeError):
    """An endpoint call failed after all retries."""

    def __init__(self, message: str, attempts: int = 0) -> None:
        super().__init__(message)
        self.attempts = attempts


@dataclass
class EndpointConfig:
    base_url: str
    model: str
    api_key: str = "EMPTY"
    timeout: float = 60.0
    temperature: float = 0.0
    max_tokens: int = 1024

    @classmethod
    def from_env(cls, role: str, **overrides) -> "EndpointConfig":
        """Read ``KGPLAN_<ROLE>_{BASE_URL,MODEL,API_KEY}``, falling back to ``OPENAI_*``."""
        prefix = f"KGPLAN_{role.upper()}_"
        env = os.environ
        cfg = {
            "base_url": env.get(prefix + "BASE_URL") or env.get("OPENAI_BASE_URL", ""),
            "model": env.get(prefix + "MODEL") or env.get("OPENAI_MODEL", ""),
            "api_key": env.get(prefix + "API_KEY") or env.get("OPENAI_API_KEY", "EMPTY"),
        }
        cfg.update({k: v for k, v in overrides.items() if v is not None})
        if not cfg["base_url"] or not cfg["model"]:
            raise ValueError(f"{role} endpoint needs a base URL and model name")
        return cls(**cfg)


class ChatClient:
    """Single-turn client for an OpenAI-compatible chat completion API."""

    def __init__(self, config: EndpointConfig, session: requests.Session | None = None) -> None:
        self.config = config
        self.session = session or requests.Session()

    def complete(self, prompt: str) -> str:
        cfg = self.config
        resp = self.session.post(
            cfg.base_url.rstrip("/") + "/chat/completions",
            json={
                "model": cfg.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": cfg.temperature,
                "max_tokens": cfg.max_tokens,
            },
            headers={"Authorization": f"Bearer {cfg.api_key}"},
            timeout=cfg.timeout,
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"] or ""


@dataclass
class RetryPolicy:
    retries: int = 2
    backoff: float = 0.5  # seconds; doubles per attempt

    def delays(self):
        for i in range(self.retries):
            yield self.backoff * (2 ** i)


def with_retries(call: Callable[[], T], policy: RetryPolicy, what: str = "endpoint") -> tuple[T, int]:
    """Run ``call`` with retries; return ``(result, attempts)``.

    Raises :class:`EndpointError` once the retry budget is spent.
    """
    attempts = 0
    last: Exception | None = None
    for delay in [*policy.delays(), None]:
        attempts += 1
        try:
            return call(), attempts
        except Exception as exc:  # noqa: BLE001 - any backend failure is retryable
            last = exc
            logger.debug("%s attempt %d failed: %s", what, attempts, exc)
            if delay is None:
                break
            if delay > 0:
                time.sleep(delay)
    raise EndpointError(f"{what} failed after {attempts} attempts: {last}", attempts) from last


class FunctionEndpoint:
    """Adapter turning a plain function into an endpoint."""

    def __init__(self, fn: Callable[[str], str]) -> None:
        self.fn = fn

    def complete(self, prompt: str) -> str:
        return self.fn(prompt)
