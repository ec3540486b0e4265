"""HTTP chat-completion client with retries, budgets, and token accounting.

The wire shape is the de facto chat-completion interchange: POST
``<base_url>/chat/completions`` with a model name, role-tagged messages and
sampling params; the response carries choice text plus a usage object. The
API key comes from the ``SEPDD_API_KEY`` environment variable and must never
appear in journals, logs, or error messages.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import httpx

from .backends import (
    Completion,
    CompletionRequest,
    KIND_LIVE_GATEWAY,
    request_fingerprint,
)
from .errors import (
    AuthFailure,
    BudgetExhausted,
    ConfigError,
    MalformedResponse,
    TransientExhausted,
)
from .model import TokenUsage

logger = logging.getLogger(__name__)

API_KEY_ENV = "SEPDD_API_KEY"

DEFAULT_MODEL_MAP: dict[str, str] = {
    "idea": "qwen3.5-plus",
    "code": "qwen3-coder-plus",
    "analyze": "qwen3.5-plus",
    "refine": "qwen3-coder-plus",
    "merge": "qwen3.5-plus",
}


@dataclass(frozen=True)
class TokenBudget:
    max_input: int | None = None
    max_output: int | None = None
    max_total: int | None = None

    def __post_init__(self) -> None:
        for name in ("max_input", "max_output", "max_total"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive when set")

    def exceeded_by(self, totals: TokenUsage) -> str | None:
        if self.max_input is not None and totals.input_tokens >= self.max_input:
            return f"input tokens {totals.input_tokens} >= {self.max_input}"
        if self.max_output is not None and totals.output_tokens >= self.max_output:
            return f"output tokens {totals.output_tokens} >= {self.max_output}"
        if self.max_total is not None and totals.total >= self.max_total:
            return f"total tokens {totals.total} >= {self.max_total}"
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_input": self.max_input,
            "max_output": self.max_output,
            "max_total": self.max_total,
        }


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str
    model_map: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_MODEL_MAP))
    request_timeout: float = 60.0
    max_retries: int = 3
    backoff_base_ms: float = 250.0
    temperature: float | None = 0.2
    max_output_tokens: int | None = None
    budget: TokenBudget | None = None
    api_key_env: str = API_KEY_ENV

    def __post_init__(self) -> None:
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.backoff_base_ms < 0:
            raise ValueError("backoff_base_ms must be >= 0")

    def resolve_api_key(self) -> str:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise ConfigError(f"environment variable {self.api_key_env} is not set")
        return key

    def model_for(self, operator: str) -> str:
        return self.model_map.get(operator, next(iter(self.model_map.values())))


@dataclass(frozen=True)
class LedgerEntry:
    node_id: int | None
    operator: str
    usage: TokenUsage


class TokenLedger:
    """Run-level token accounting; mutation is serialized, reads are cheap."""

    def __init__(self) -> None:
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()

    def record(self, node_id: int | None, operator: str, usage: TokenUsage) -> None:
        with self._lock:
            self._entries.append(LedgerEntry(node_id, operator, usage))

    @property
    def entries(self) -> list[LedgerEntry]:
        with self._lock:
            return list(self._entries)

    @property
    def totals(self) -> TokenUsage:
        total = TokenUsage()
        for entry in self.entries:
            total = total + entry.usage
        return total

    def node_totals(self, node_id: int) -> TokenUsage:
        total = TokenUsage()
        for entry in self.entries:
            if entry.node_id == node_id:
                total = total + entry.usage
        return total


def ledger_report(ledger: TokenLedger) -> dict[str, Any]:
    """Totals plus per-operator and per-node breakdowns, all consistent."""
    per_operator: dict[str, TokenUsage] = {}
    per_node: dict[int | None, TokenUsage] = {}
    for entry in ledger.entries:
        per_operator[entry.operator] = (
            per_operator.get(entry.operator, TokenUsage()) + entry.usage
        )
        per_node[entry.node_id] = per_node.get(entry.node_id, TokenUsage()) + entry.usage
    totals = ledger.totals
    return {
        "totals": {
            "input_tokens": totals.input_tokens,
            "output_tokens": totals.output_tokens,
            "total_tokens": totals.total,
        },
        "per_operator": {
            op: usage.to_dict() for op, usage in sorted(per_operator.items())
        },
        "per_node": {
            str(node): usage.to_dict() for node, usage in sorted(
                per_node.items(), key=lambda kv: (kv[0] is None, kv[0])
            )
        },
    }


class AttributingBackend:
    """Backend wrapper that records every call's usage into a ledger."""

    def __init__(self, inner: Any, ledger: TokenLedger) -> None:
        self.inner = inner
        self.ledger = ledger
        self.kind = getattr(inner, "kind", "unknown")

    def complete(self, request: CompletionRequest) -> Completion:
        completion = self.inner.complete(request)
        self.ledger.record(request.node_id, request.operator, completion.usage)
        return completion


_TRANSIENT_STATUSES = frozenset({429, 500, 502, 503, 504})


class LiveGatewayBackend:
    """OperatorBackend over an HTTP chat-completion endpoint.

    Retries transient statuses (429 and 5xx) and transport errors with
    exponential backoff; at most ``max_retries + 1`` requests go out per
    call. When a budget and ledger are attached, exhaustion is checked
    before any request is sent and is fatal for the run.
    """

    kind = KIND_LIVE_GATEWAY

    def __init__(
        self,
        config: GatewayConfig,
        *,
        ledger: TokenLedger | None = None,
        client: httpx.Client | None = None,
        sleep=time.sleep,
    ) -> None:
        self.config = config
        self.ledger = ledger
        self._sleep = sleep
        self._api_key = config.resolve_api_key()
        self._client = client or httpx.Client(timeout=config.request_timeout)

    def close(self) -> None:
        self._client.close()

    def complete(self, request: CompletionRequest) -> Completion:
        if self.config.budget is not None and self.ledger is not None:
            reason = self.config.budget.exceeded_by(self.ledger.totals)
            if reason is not None:
                raise BudgetExhausted(f"token budget exhausted: {reason}")
        model = request.model or self.config.model_for(request.operator)
        body: dict[str, Any] = {
            "model": model,
            "messages": [m.to_dict() for m in request.messages],
        }
        temperature = (
            request.temperature if request.temperature is not None else self.config.temperature
        )
        if temperature is not None:
            body["temperature"] = temperature
        max_tokens = request.max_output_tokens or self.config.max_output_tokens
        if max_tokens is not None:
            body["max_tokens"] = max_tokens

        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {self._api_key}"}
        last_failure = "no request sent"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff_base_ms / 1000.0 * (2 ** (attempt - 1)))
            try:
                response = self._client.post(url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last_failure = f"transport error: {type(exc).__name__}"
                logger.warning("gateway request failed (%s), attempt %d", last_failure, attempt)
                continue
            if response.status_code in (401, 403):
                raise AuthFailure(f"authorization rejected (HTTP {response.status_code})")
            if response.status_code in _TRANSIENT_STATUSES:
                last_failure = f"HTTP {response.status_code}"
                logger.warning("gateway transient %s, attempt %d", last_failure, attempt)
                continue
            if response.status_code != 200:
                raise MalformedResponse(f"unexpected HTTP status {response.status_code}")
            return self._parse(response, request)
        raise TransientExhausted(
            f"gave up after {self.config.max_retries + 1} attempts ({last_failure})"
        )

    def _parse(self, response: httpx.Response, request: CompletionRequest) -> Completion:
        try:
            data = response.json()
        except ValueError as exc:
            raise MalformedResponse(f"response body is not JSON: {exc}") from exc
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"response missing choice content: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedResponse("choice content is not a string")
        usage_obj = data.get("usage")
        if isinstance(usage_obj, Mapping):
            usage = TokenUsage(
                int(usage_obj.get("prompt_tokens", usage_obj.get("input_tokens", 0))),
                int(usage_obj.get("completion_tokens", usage_obj.get("output_tokens", 0))),
            )
        else:
            logger.warning(
                "provider response omitted usage for %s (fingerprint %s); recording 0/0",
                request.operator,
                request_fingerprint(request),
            )
            usage = TokenUsage(0, 0)
        return Completion(text=text, usage=usage)


def format_millions(count: int) -> str:
    """Render a token count the way reports expect, e.g. ``1.36M``."""
    return f"{count / 1_000_000:.2f}M"
