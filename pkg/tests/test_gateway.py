from __future__ import annotations

import pytest

from mock_gateway import MockGateway
from sepdd.backends import CompletionRequest, Message
from sepdd.errors import (
    AuthFailure,
    BudgetExhausted,
    ConfigError,
    MalformedResponse,
    TransientExhausted,
)
from sepdd.gateway import (
    AttributingBackend,
    GatewayConfig,
    LiveGatewayBackend,
    TokenBudget,
    TokenLedger,
    format_millions,
    ledger_report,
)
from sepdd.model import TokenUsage

API_KEY = "sk-test-SECRET-73f1"


@pytest.fixture
def mock_gateway():
    server = MockGateway()
    yield server
    server.stop()


@pytest.fixture
def api_key_env(monkeypatch):
    monkeypatch.setenv("SEPDD_API_KEY", API_KEY)


def make_backend(mock: MockGateway, ledger: TokenLedger | None = None, **kwargs):
    config = GatewayConfig(
        base_url=mock.base_url,
        max_retries=kwargs.pop("max_retries", 2),
        backoff_base_ms=1.0,
        request_timeout=5.0,
        **kwargs,
    )
    return LiveGatewayBackend(config, ledger=ledger, sleep=lambda s: None)


def request(operator="idea", node_id=1) -> CompletionRequest:
    return CompletionRequest(
        operator=operator,
        messages=(Message("user", "prompt"),),
        node_id=node_id,
    )


class TestComplete:
    def test_usage_echoed(self, mock_gateway, api_key_env):
        backend = make_backend(mock_gateway)
        completion = backend.complete(request())
        assert completion.text == "hello"
        assert completion.usage == TokenUsage(100, 20)

    def test_retries_then_success(self, mock_gateway, api_key_env):
        mock_gateway.plan = [429, 429, 200]
        backend = make_backend(mock_gateway, max_retries=2)
        completion = backend.complete(request())
        assert completion.text == "hello"
        assert len(mock_gateway.requests) == 3

    def test_retry_bound_respected(self, mock_gateway, api_key_env):
        mock_gateway.plan = [500] * 10
        backend = make_backend(mock_gateway, max_retries=2)
        with pytest.raises(TransientExhausted):
            backend.complete(request())
        assert len(mock_gateway.requests) == 3  # max_retries + 1

    def test_auth_failure_not_retried(self, mock_gateway, api_key_env):
        mock_gateway.plan = [401]
        backend = make_backend(mock_gateway)
        with pytest.raises(AuthFailure):
            backend.complete(request())
        assert len(mock_gateway.requests) == 1

    def test_malformed_response(self, mock_gateway, api_key_env):
        mock_gateway.response_body = {"nope": True}
        backend = make_backend(mock_gateway)
        with pytest.raises(MalformedResponse):
            backend.complete(request())

    def test_missing_usage_degrades_to_zero(self, mock_gateway, api_key_env, caplog):
        mock_gateway.response_body = {
            "choices": [{"message": {"role": "assistant", "content": "ok"}}]
        }
        backend = make_backend(mock_gateway)
        with caplog.at_level("WARNING", logger="sepdd.gateway"):
            completion = backend.complete(request())
        assert completion.usage == TokenUsage(0, 0)
        assert any("omitted usage" in r.message for r in caplog.records)

    def test_wire_shape(self, mock_gateway, api_key_env):
        backend = make_backend(mock_gateway)
        backend.complete(request(operator="code"))
        sent = mock_gateway.requests[0]
        assert sent["path"] == "/chat/completions"
        assert sent["body"]["model"] == "qwen3-coder-plus"
        assert sent["body"]["messages"] == [{"role": "user", "content": "prompt"}]
        assert sent["auth"] == f"Bearer {API_KEY}"

    def test_missing_api_key_is_config_error(self, mock_gateway, monkeypatch):
        monkeypatch.delenv("SEPDD_API_KEY", raising=False)
        with pytest.raises(ConfigError):
            make_backend(mock_gateway)


class TestBudget:
    def test_exhausted_before_any_request(self, mock_gateway, api_key_env):
        ledger = TokenLedger()
        ledger.record(1, "idea", TokenUsage(6, 4))
        backend = make_backend(
            mock_gateway, ledger=ledger, budget=TokenBudget(max_total=10)
        )
        with pytest.raises(BudgetExhausted):
            backend.complete(request())
        assert len(mock_gateway.requests) == 0

    def test_under_budget_proceeds(self, mock_gateway, api_key_env):
        ledger = TokenLedger()
        backend = make_backend(
            mock_gateway, ledger=ledger, budget=TokenBudget(max_total=10_000)
        )
        backend.complete(request())
        assert len(mock_gateway.requests) == 1


class TestSecrecy:
    def test_api_key_never_leaks(self, mock_gateway, api_key_env, caplog):
        mock_gateway.plan = [500] * 3
        backend = make_backend(mock_gateway, max_retries=2)
        with caplog.at_level("DEBUG"):
            with pytest.raises(TransientExhausted) as excinfo:
                backend.complete(request())
        assert API_KEY not in str(excinfo.value)
        assert API_KEY not in caplog.text
        mock_gateway.plan = [401]
        with pytest.raises(AuthFailure) as auth_exc:
            backend.complete(request())
        assert API_KEY not in str(auth_exc.value)


class TestLedger:
    def test_totals_are_sums(self):
        ledger = TokenLedger()
        ledger.record(1, "idea", TokenUsage(100, 20))
        ledger.record(2, "code", TokenUsage(50, 10))
        report = ledger_report(ledger)
        assert report["totals"] == {
            "input_tokens": 150,
            "output_tokens": 30,
            "total_tokens": 180,
        }
        assert report["per_operator"]["idea"] == {"input_tokens": 100, "output_tokens": 20}
        assert report["per_node"]["2"] == {"input_tokens": 50, "output_tokens": 10}

    def test_empty_ledger(self):
        report = ledger_report(TokenLedger())
        assert report["totals"] == {
            "input_tokens": 0,
            "output_tokens": 0,
            "total_tokens": 0,
        }

    def test_attributing_backend_records_every_call(self, mock_gateway, api_key_env):
        ledger = TokenLedger()
        backend = AttributingBackend(make_backend(mock_gateway), ledger)
        backend.complete(request(operator="idea", node_id=4))
        backend.complete(request(operator="code", node_id=4))
        assert ledger.node_totals(4) == TokenUsage(200, 40)
        assert ledger.totals == TokenUsage(200, 40)

    def test_format_millions(self):
        assert format_millions(1_360_000) == "1.36M"
        assert format_millions(230_000) == "0.23M"
        assert format_millions(1_590_000) == "1.59M"
