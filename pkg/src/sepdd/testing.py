"""Test doubles for engine-level scenarios: stub sandbox and plan backends.

These run thousands of scripted evolution cycles per second by encoding the
desired execution outcome directly in the candidate "code" text instead of
spawning processes. Both doubles are stateless given their inputs, so they
survive kill-and-resume unchanged.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from typing import Mapping

from .backends import Completion, CompletionRequest
from .engine import EvolutionEngine, RunBudget, TaskSpec
from .gateway import TokenLedger
from .journal import Journal
from .model import (
    DEFAULT_METRIC_SPECS,
    EXIT_TIMEOUT,
    ExecMode,
    ExecOutcome,
    TokenUsage,
)
from .sandbox import SyntaxDiagnostic, SyntaxReport
from .strategy import StrategyConfig

_DIRECTIVE_RE = re.compile(r"^#outcome:(.*)$", re.MULTILINE)


def directive_code(
    *,
    syntax_ok: bool = True,
    debug_exit: int | str = 0,
    full_exit: int | str = 0,
    metrics: Mapping[str, float] | None = None,
    emit_metrics_in_debug: bool = True,
    note: str = "",
) -> str:
    """Candidate text whose first line tells the stub sandbox what happened."""
    directive = {
        "syntax_ok": syntax_ok,
        "debug_exit": debug_exit,
        "full_exit": full_exit,
        "metrics": dict(metrics) if metrics else None,
        "emit_metrics_in_debug": emit_metrics_in_debug,
    }
    body = f"# candidate {note}\n" if note else ""
    return f"#outcome:{json.dumps(directive, sort_keys=True)}\n{body}"


def _parse_directive(code: str) -> dict:
    match = _DIRECTIVE_RE.search(code)
    if not match:
        return {"syntax_ok": True, "debug_exit": 1, "full_exit": 1, "metrics": None}
    return json.loads(match.group(1))


def _metric_lines(metrics: Mapping[str, float] | None) -> str:
    if not metrics:
        return ""
    return "\n".join(f"SEPDD_METRIC {k}={v}" for k, v in sorted(metrics.items())) + "\n"


class StubWorkspace:
    def validate(self, code: str) -> tuple[SyntaxReport, ExecOutcome | None]:
        directive = _parse_directive(code)
        if not directive.get("syntax_ok", True):
            return (
                SyntaxReport(False, (SyntaxDiagnostic(1, "invalid syntax"),)),
                None,
            )
        exit_code = directive.get("debug_exit", 0)
        stdout = ""
        if exit_code == 0 and directive.get("emit_metrics_in_debug", True):
            stdout = _metric_lines(directive.get("metrics"))
        return (
            SyntaxReport(True),
            ExecOutcome(
                exit_code=exit_code,
                stdout=stdout,
                stderr="" if exit_code == 0 else "stub failure",
                mode=ExecMode.DEBUG,
            ),
        )

    def execute(self, code: str) -> ExecOutcome:
        directive = _parse_directive(code)
        exit_code = directive.get("full_exit", 0)
        stdout = _metric_lines(directive.get("metrics")) if exit_code == 0 else ""
        return ExecOutcome(
            exit_code=exit_code,
            stdout=stdout,
            stderr="" if exit_code == 0 else "stub failure",
            mode=ExecMode.FULL,
        )


class StubSandbox:
    """Drop-in for ProcessSandbox that never touches the filesystem."""

    def __init__(self) -> None:
        self.node_ids: list[int] = []

    def for_node(self, node_id: int) -> StubWorkspace:
        self.node_ids.append(node_id)
        return StubWorkspace()


FAIL_CRASH = "crash"
FAIL_TIMEOUT = "timeout"
FAIL_SILENT = "silent"
FAIL_SYNTAX = "syntax"
FAIL_FULL_CRASH = "full-crash"


@dataclass(frozen=True)
class NodePlan:
    """Scripted behavior for one node of a test run.

    ``fail_iterations`` debug-loop iterations fail with ``failure`` before
    the candidate comes good; ``metrics=None`` means it never does.
    """

    metrics: Mapping[str, float] | None = field(default_factory=dict)
    fail_iterations: int = 0
    failure: str = FAIL_CRASH

    def code_for_attempt(self, attempt: int, node_id: int) -> str:
        succeeding = self.metrics is not None and attempt >= self.fail_iterations
        note = f"node={node_id} attempt={attempt}"
        if succeeding:
            return directive_code(metrics=self.metrics, note=note)
        if self.failure == FAIL_SYNTAX:
            return directive_code(syntax_ok=False, note=note)
        if self.failure == FAIL_TIMEOUT:
            return directive_code(debug_exit=EXIT_TIMEOUT, note=note)
        if self.failure == FAIL_SILENT:
            return directive_code(debug_exit=0, full_exit=0, metrics=None, note=note)
        if self.failure == FAIL_FULL_CRASH:
            metrics = self.metrics or {"mAP50": 0.1, "mAP50-95": 0.05}
            return directive_code(debug_exit=0, full_exit=3, metrics=metrics, note=note)
        return directive_code(debug_exit=1, note=note)


_PRIOR_ATTEMPT_RE = re.compile(r"^Prior attempt \d+ analysis:", re.MULTILINE)


class PlanBackend:
    """Logic backend mapping (operator, node id, prompt) to scripted replies.

    The refiner's attempt number is recovered from the prompt's prior-attempt
    sections, so the backend carries no call state and resumes cleanly.
    """

    kind = "scripted-playback"

    def __init__(
        self,
        plans: Mapping[int, NodePlan],
        *,
        default_plan: NodePlan | None = None,
        usage: TokenUsage = TokenUsage(17, 3),
    ) -> None:
        self.plans = dict(plans)
        self.default_plan = default_plan or NodePlan(metrics={"mAP50": 0.1, "mAP50-95": 0.1})
        self.usage = usage

    def plan_for(self, node_id: int) -> NodePlan:
        return self.plans.get(node_id, self.default_plan)

    def complete(self, request: CompletionRequest) -> Completion:
        node_id = request.node_id or 0
        plan = self.plan_for(node_id)
        if request.operator == "idea":
            text = f"1. scripted idea for node {node_id}: apply the planned change."
        elif request.operator == "code":
            text = "```\n" + plan.code_for_attempt(0, node_id) + "```"
        elif request.operator == "refine":
            attempt = len(_PRIOR_ATTEMPT_RE.findall(request.prompt_text)) + 1
            text = "```\n" + plan.code_for_attempt(attempt, node_id) + "```"
        elif request.operator == "analyze":
            text = f"scripted analysis for node {node_id}."
        elif request.operator == "merge":
            ids = re.findall(r"^Candidate (\d+) ", request.prompt_text, re.MULTILINE)
            lines = []
            for cid in ids:
                lines.append(f"CANDIDATE {cid} STRENGTHS: strong recipe")
                lines.append(f"CANDIDATE {cid} WEAKNESSES: narrow coverage")
            lines.append("SUGGESTIONS:")
            lines.append("1. combine recipes: merge the strong parts.")
            text = "\n".join(lines)
        else:
            text = "unsupported operator"
        return Completion(text=text, usage=self.usage)


def build_test_engine(
    run_dir,
    plans: Mapping[int, NodePlan],
    *,
    strategy: StrategyConfig | None = None,
    budget: RunBudget | None = None,
    default_plan: NodePlan | None = None,
    backend=None,
) -> tuple[EvolutionEngine, PlanBackend, TokenLedger]:
    """Engine wired to a stub sandbox and a plan backend, journaling for real."""
    ledger = TokenLedger()
    plan_backend = backend if backend is not None else PlanBackend(
        plans, default_plan=default_plan
    )
    engine = EvolutionEngine(
        journal=Journal.create(run_dir),
        backend=plan_backend,
        sandbox=StubSandbox(),
        ledger=ledger,
        task=TaskSpec(
            description="scripted test task",
            data_description="synthetic",
            requirements="print the configured metrics",
        ),
        specs=DEFAULT_METRIC_SPECS,
        strategy=strategy or StrategyConfig(),
        budget=budget or RunBudget(max_nodes=8),
        run_id="test-run",
        config_hash="test-config",
    )
    return engine, plan_backend, ledger


def random_plans(
    rng: random.Random,
    count: int,
    *,
    buggy_rate: float = 0.3,
) -> dict[int, NodePlan]:
    """Randomized node plans for property runs; metrics rounded to 4 places."""
    plans: dict[int, NodePlan] = {}
    failures = (FAIL_CRASH, FAIL_TIMEOUT, FAIL_SILENT, FAIL_SYNTAX, FAIL_FULL_CRASH)
    for node_id in range(1, count + 1):
        if rng.random() < buggy_rate:
            plans[node_id] = NodePlan(
                metrics=None, failure=rng.choice(failures)
            )
        else:
            plans[node_id] = NodePlan(
                metrics={
                    "mAP50": round(rng.uniform(0.05, 0.95), 4),
                    "mAP50-95": round(rng.uniform(0.05, 0.95), 4),
                },
                fail_iterations=rng.choice((0, 0, 0, 1, 2)),
                failure=rng.choice(failures),
            )
    return plans
