"""The evolution engine: per-node workflow and the outer search cycle.

One expansion step runs the fixed operator pipeline: idea generation, code
creation, then the validate/analyze/execute/analyze/refine debug loop until
the candidate is clean or the debug depth is exhausted. The outer cycle
selects parents (top-k, minimum child count), interleaves periodic merges,
retries a failed node once at tree level, and stops on its budgets. Every
state change is journaled before the next decision, which is what makes
kill-and-resume safe.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .backends import OperatorBackend
from .errors import (
    BackendError,
    BudgetExhausted,
    ConfigMismatch,
    MissingCodeBlock,
    NoExpandableNode,
    NoValidNode,
    SandboxError,
    ScheduleError,
    SepddError,
    UnparsableSuggestions,
)
from .gateway import AttributingBackend, TokenBudget, TokenLedger
from .journal import EventKind, Journal, RunReplay, load_run
from .model import (
    EvolutionGraph,
    MetricSpec,
    Node,
    NodeAction,
    NodeId,
    NodeStatus,
    TokenUsage,
    make_root_node,
    primary_metric,
    validate_metric_specs,
)
from .operators import (
    AnalysisVerdict,
    CreatorMode,
    OperatorContext,
    PriorAttempt,
    SolutionSummary,
    Suggestions,
    analyzer,
    code_creator,
    code_refiner,
    idea_generator,
    merge_analysis,
)
from .strategy import (
    StrategyConfig,
    eligible_for_tree_debug,
    best_node,
    primary_edge,
    rank_nodes,
    select_merge_parents,
    select_parent,
)
from .triggers import TriggerEvent

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunBudget:
    max_nodes: int = 16
    max_debug_depth: int = 3
    wall_clock_limit: float | None = None

    def __post_init__(self) -> None:
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")
        if self.max_debug_depth < 1:
            raise ValueError("max_debug_depth must be >= 1")
        if self.wall_clock_limit is not None and self.wall_clock_limit <= 0:
            raise ValueError("wall_clock_limit must be positive when set")

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_nodes": self.max_nodes,
            "max_debug_depth": self.max_debug_depth,
            "wall_clock_limit": self.wall_clock_limit,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunBudget":
        return cls(
            max_nodes=int(data.get("max_nodes", 16)),
            max_debug_depth=int(data.get("max_debug_depth", 3)),
            wall_clock_limit=(
                None
                if data.get("wall_clock_limit") is None
                else float(data["wall_clock_limit"])
            ),
        )


@dataclass(frozen=True)
class TaskSpec:
    description: str
    data_description: str = ""
    requirements: str = ""


@dataclass
class RunResult:
    run_id: str
    graph: EvolutionGraph
    best: NodeId | None
    primary_edge: list[NodeId]
    reason: str
    tokens: TokenUsage
    nodes_produced: int
    wall_seconds: float = 0.0

    @property
    def succeeded(self) -> bool:
        return self.best is not None


@dataclass(frozen=True)
class Expansion:
    parent: NodeId
    action: NodeAction
    merge_parents: tuple[NodeId, ...] = ()


class EvolutionEngine:
    """Sequential evolution cycle over one run directory.

    Strategy decisions and journal commits are strictly sequential; within
    a node, operator calls and sandbox runs follow the fixed workflow order.
    """

    def __init__(
        self,
        *,
        journal: Journal,
        backend: OperatorBackend,
        sandbox: Any,
        ledger: TokenLedger,
        task: TaskSpec,
        specs: Sequence[MetricSpec],
        strategy: StrategyConfig | None = None,
        budget: RunBudget | None = None,
        token_budget: TokenBudget | None = None,
        run_id: str = "",
        config_hash: str = "",
        seed: int = 0,
        summaries_limit: int = 5,
        fallback_patterns: Sequence[tuple[str, str]] = (),
        clock=time.time,
    ) -> None:
        self.journal = journal
        self.backend = AttributingBackend(backend, ledger)
        self.sandbox = sandbox
        self.ledger = ledger
        self.task = task
        self.specs = validate_metric_specs(specs)
        self.strategy = strategy or StrategyConfig()
        self.budget = budget or RunBudget()
        self.token_budget = token_budget
        self.run_id = run_id or f"run-seed{seed}"
        self.config_hash = config_hash
        self.seed = seed
        self.summaries_limit = summaries_limit
        self.fallback_patterns = tuple(fallback_patterns)
        self.clock = clock

        self.graph = EvolutionGraph(run_id=self.run_id)
        self.trigger: TriggerEvent | None = None
        self._produced = 0
        self._valid_since_merge = 0
        self._pending_debug: NodeId | None = None
        self._schedule_index = 0
        self._started_monotonic = time.monotonic()

    # -- public entry points -------------------------------------------------

    def run(self, trigger: TriggerEvent | None = None) -> RunResult:
        """Fresh run: journal header, root node, then the expansion loop."""
        self.trigger = trigger
        self.journal.append(
            EventKind.RUN_STARTED,
            {
                "run_id": self.run_id,
                "config_hash": self.config_hash,
                "metric_specs": [s.to_dict() for s in self.specs],
                "strategy": self.strategy.to_dict(),
                "budget": self.budget.to_dict(),
                "seed": self.seed,
            },
        )
        if trigger is not None:
            self.journal.append(EventKind.TRIGGER_FIRED, {"trigger": trigger.to_dict()})
        self._create_root()
        return self._loop()

    def continue_run(self, state: RunReplay) -> RunResult:
        """Resume from a replayed journal; strategy state is rebuilt exactly."""
        self.graph = state.graph
        self.run_id = state.run_id or self.run_id
        if state.trigger:
            self.trigger = TriggerEvent.from_dict(state.trigger)
        self._produced = self.graph.produced_count()
        self._valid_since_merge = state.valid_since_merge
        self._schedule_index = self._produced
        last = state.last_finalized
        if (
            last is not None
            and last in self.graph
            and self.graph.node(last).status is NodeStatus.BUGGY
        ):
            self._pending_debug = last
        for node in self.graph.nodes.values():
            if node.finalized and node.tokens.total:
                self.ledger.record(node.id, "journal-restored", node.tokens)
        if self.graph.root not in self.graph:
            self._create_root()
        return self._loop()

    # -- internals -------------------------------------------------------------

    def _create_root(self) -> None:
        now = self.clock()
        self.journal.append(
            EventKind.NODE_CREATED,
            {"id": 0, "primary_parent": None, "merge_parents": [], "action": "root"},
        )
        draft = Node(id=0, primary_parent=None, action=NodeAction.ROOT, created_at=now)
        self.graph.add_node(draft)
        root = make_root_node(created_at=now)
        self.graph.finalize_node(root)
        self.journal.append(EventKind.NODE_FINALIZED, {"node": root.to_dict()})

    def _stop_reason(self) -> str | None:
        if self._produced >= self.budget.max_nodes:
            return "max-nodes"
        if (
            self.budget.wall_clock_limit is not None
            and time.monotonic() - self._started_monotonic > self.budget.wall_clock_limit
        ):
            return "wall-clock"
        if self.token_budget is not None:
            exceeded = self.token_budget.exceeded_by(self.ledger.totals)
            if exceeded is not None:
                return "token-budget"
        return None

    def _next_expansion(self) -> Expansion:
        schedule = self.strategy.expansion_schedule
        if schedule is not None:
            if self._schedule_index >= len(schedule):
                raise NoExpandableNode("expansion schedule exhausted")
            entry = schedule[self._schedule_index]
            self._schedule_index += 1
            action = NodeAction(entry.action)
            if action is NodeAction.MERGE:
                raise ScheduleError("scheduled merge expansions are not supported")
            if entry.parent not in self.graph or not self.graph.node(entry.parent).finalized:
                raise ScheduleError(f"scheduled parent {entry.parent} is not expandable")
            return Expansion(parent=entry.parent, action=action)

        if (
            self.graph.root in self.graph
            and self.graph.child_count(self.graph.root) < self.strategy.initial_drafts
        ):
            return Expansion(parent=self.graph.root, action=NodeAction.DRAFT)

        if self._pending_debug is not None:
            candidate = self._pending_debug
            self._pending_debug = None
            if self.strategy.debug_buggy_nodes and eligible_for_tree_debug(
                self.graph, candidate
            ):
                return Expansion(parent=candidate, action=NodeAction.DEBUG_INTERNAL)

        if self._valid_since_merge >= self.strategy.merge_period:
            try:
                parents = select_merge_parents(self.graph, self.strategy, self.specs)
                return Expansion(
                    parent=parents[0],
                    action=NodeAction.MERGE,
                    merge_parents=tuple(parents),
                )
            except SepddError as exc:
                logger.debug("merge skipped: %s", exc)

        parent = select_parent(self.graph, self.strategy, self.specs)
        action = NodeAction.DRAFT if parent == self.graph.root else NodeAction.IMPROVE
        return Expansion(parent=parent, action=action)

    def _solution_summaries(self, exclude: NodeId) -> tuple[SolutionSummary, ...]:
        try:
            ranked = rank_nodes(self.graph, self.specs)
        except NoValidNode:
            return ()
        summaries = []
        for node_id in ranked:
            if node_id == exclude:
                continue
            node = self.graph.node(node_id)
            strategy_line = next(
                (line for line in node.suggestions.splitlines() if line.strip()),
                "(none recorded)",
            )
            strengths = "; ".join(
                f"{s.name}={node.metric(s.name)}"
                for s in self.specs
                if node.metric(s.name) is not None
            )
            weaknesses = (
                f"needed {node.debug_attempts} debug rounds"
                if node.debug_attempts
                else "none recorded"
            )
            summaries.append(
                SolutionSummary(
                    strategy_summary=strategy_line.strip()[:300],
                    strengths=strengths or "(no metrics)",
                    weaknesses=weaknesses,
                )
            )
            if len(summaries) >= self.summaries_limit:
                break
        return tuple(summaries)

    def _context_for(self, parent: Node, node_id: NodeId) -> OperatorContext:
        if parent.is_root:
            parent_code = None
            parent_exec = None
            parent_strategies = None
        else:
            parent_code = parent.code
            parent_exec = (
                parent.exec_outcome.summary() if parent.exec_outcome else "(not executed)"
            )
            parent_strategies = parent.suggestions or None
        return OperatorContext(
            task_description=self.task.description,
            data_description=self.task.data_description,
            task_requirements=self.task.requirements or "(no additional requirements)",
            parent_code=parent_code,
            parent_exec_summary=parent_exec,
            parent_strategies=parent_strategies,
            journal_summaries=self._solution_summaries(exclude=parent.id),
            trigger_note=self.trigger.describe() if self.trigger else "",
            exploration_id=node_id,
        )

    def _expand(self, expansion: Expansion) -> tuple[Node, bool]:
        """Run one full node workflow; returns (node, budget_hit)."""
        node_id = self.graph.next_id()
        created_at = self.clock()
        parent = self.graph.node(expansion.parent)
        self.journal.append(
            EventKind.NODE_CREATED,
            {
                "id": node_id,
                "primary_parent": parent.id,
                "merge_parents": list(expansion.merge_parents),
                "action": expansion.action.value,
            },
        )
        self.graph.add_node(
            Node(
                id=node_id,
                primary_parent=parent.id,
                action=expansion.action,
                merge_parents=expansion.merge_parents,
                created_at=created_at,
            )
        )

        status = NodeStatus.BUGGY
        suggestions_text = ""
        code = ""
        analysis = ""
        metrics: dict[str, float] = {}
        last_exec = None
        attempts = 0
        budget_hit = False
        try:
            workspace = self.sandbox.for_node(node_id)
            ctx = self._context_for(parent, node_id)
            if expansion.action is NodeAction.MERGE:
                candidates = [self.graph.node(i) for i in expansion.merge_parents]
                merged = merge_analysis(
                    candidates, self.backend, specs=self.specs, node_id=node_id
                )
                ctx = replace(
                    ctx,
                    journal_summaries=tuple(
                        SolutionSummary(
                            strategy_summary=f"candidate {a.node_id}",
                            strengths=a.strengths,
                            weaknesses=a.weaknesses,
                        )
                        for a in merged.per_candidate
                    ),
                )
                suggestions = merged.merged_suggestions
                mode = CreatorMode.MERGE
            else:
                suggestions = idea_generator(ctx, self.backend, node_id=node_id)
                mode = (
                    CreatorMode.INITIAL
                    if expansion.action is NodeAction.DRAFT
                    else CreatorMode.IMPROVEMENT
                )
            suggestions_text = suggestions.as_text()
            code = code_creator(ctx, suggestions, self.backend, mode, node_id=node_id)

            prior: list[PriorAttempt] = []
            while True:
                syntax_report, debug_exec = workspace.validate(code)
                if debug_exec is not None:
                    last_exec = debug_exec
                verdict = analyzer(
                    code,
                    syntax_report,
                    debug_exec,
                    self.backend,
                    specs=self.specs,
                    fallback_patterns=self.fallback_patterns,
                    node_id=node_id,
                )
                if not verdict.buggy:
                    full_exec = workspace.execute(code)
                    last_exec = full_exec
                    verdict = analyzer(
                        code,
                        syntax_report,
                        full_exec,
                        self.backend,
                        specs=self.specs,
                        fallback_patterns=self.fallback_patterns,
                        node_id=node_id,
                    )
                    if not verdict.buggy:
                        status = NodeStatus.VALID
                        metrics = dict(verdict.extracted_metrics)
                        analysis = verdict.analysis
                        break
                analysis = verdict.analysis
                refined = code_refiner(
                    code,
                    last_exec,
                    verdict.analysis,
                    tuple(prior),
                    self.backend,
                    node_id=node_id,
                )
                prior.append(PriorAttempt(code=code, analysis=verdict.analysis))
                code = refined
                attempts += 1
                if attempts >= self.budget.max_debug_depth:
                    status = NodeStatus.BUGGY
                    break
        except BudgetExhausted as exc:
            status = NodeStatus.BUGGY
            metrics = {}
            analysis = f"{analysis}\n[run aborted: {exc}]".strip()
            budget_hit = True
        except (BackendError, UnparsableSuggestions, MissingCodeBlock, SandboxError) as exc:
            status = NodeStatus.BUGGY
            metrics = {}
            analysis = f"{analysis}\n[workflow failed: {type(exc).__name__}: {exc}]".strip()
            logger.warning("node %d finalized buggy after failure: %s", node_id, exc)

        node = Node(
            id=node_id,
            primary_parent=parent.id,
            action=expansion.action,
            merge_parents=expansion.merge_parents,
            suggestions=suggestions_text,
            code=code,
            exec_outcome=last_exec,
            analysis=analysis,
            metrics=metrics if status is NodeStatus.VALID else {},
            status=status,
            debug_attempts=attempts,
            tokens=self.ledger.node_totals(node_id),
            created_at=created_at,
        )
        node.check_invariants(self.budget.max_debug_depth)
        self.graph.finalize_node(node)
        self.journal.append(EventKind.NODE_FINALIZED, {"node": node.to_dict()})
        if expansion.action is NodeAction.MERGE:
            self.journal.append(
                EventKind.MERGE_PERFORMED,
                {
                    "id": node_id,
                    "parents": list(expansion.merge_parents),
                    "primary_parent": parent.id,
                },
            )
        if node.status is NodeStatus.BUGGY and parent.status is NodeStatus.BUGGY:
            self.journal.append(
                EventKind.BRANCH_TERMINATED,
                {"node_id": node_id, "buggy_parent": parent.id},
            )
        return node, budget_hit

    def _loop(self) -> RunResult:
        reason = "max-nodes"
        while True:
            stop = self._stop_reason()
            if stop is not None:
                reason = stop
                break
            try:
                expansion = self._next_expansion()
            except NoExpandableNode as exc:
                reason = f"no-expandable-node ({exc})"
                break
            node, budget_hit = self._expand(expansion)
            self._produced += 1
            if expansion.action is NodeAction.MERGE:
                self._valid_since_merge = 0
            elif node.status is NodeStatus.VALID:
                self._valid_since_merge += 1
            self._pending_debug = node.id if node.status is NodeStatus.BUGGY else None
            if budget_hit:
                reason = "token-budget"
                break
        return self._finish(reason)

    def _finish(self, reason: str) -> RunResult:
        try:
            best = best_node(self.graph, self.specs)
            edge = primary_edge(self.graph, self.specs)
        except NoValidNode:
            best = None
            edge = []
        totals = self.ledger.totals
        wall = time.monotonic() - self._started_monotonic
        self.journal.append(
            EventKind.RUN_FINISHED,
            {
                "best": best,
                "primary_edge": edge,
                "reason": reason,
                "nodes_produced": self._produced,
                "tokens": totals.to_dict(),
                "wall_seconds": wall,
            },
        )
        return RunResult(
            run_id=self.run_id,
            graph=self.graph,
            best=best,
            primary_edge=edge,
            reason=reason,
            tokens=totals,
            nodes_produced=self._produced,
            wall_seconds=wall,
        )


def run_node_workflow(
    *,
    engine: EvolutionEngine,
    parent: NodeId,
    action: NodeAction,
    merge_parents: Sequence[NodeId] = (),
) -> Node:
    """Run a single expansion step through an engine; exposed for tests."""
    node, _ = engine._expand(
        Expansion(parent=parent, action=action, merge_parents=tuple(merge_parents))
    )
    return node


def resume_run(
    run_dir: Path | str,
    *,
    build_engine,
    config_hash: str = "",
    allow_config_mismatch: bool = False,
) -> RunResult:
    """Continue an interrupted run from its journal.

    ``build_engine`` is a callable ``(journal, ledger) -> EvolutionEngine``
    assembled from the same configuration as the original run. A finished
    journal is a no-op returning the stored result. A trailing draft node is
    superseded by a ``node_abandoned`` marker and its id reused.
    """
    run_dir = Path(run_dir)
    state = load_run(run_dir)
    if state.finished is not None:
        finished = state.finished
        return RunResult(
            run_id=state.run_id,
            graph=state.graph,
            best=finished.get("best"),
            primary_edge=list(finished.get("primary_edge", [])),
            reason=str(finished.get("reason", "finished")),
            tokens=TokenUsage.from_dict(finished.get("tokens", {})),
            nodes_produced=int(finished.get("nodes_produced", state.graph.produced_count())),
            wall_seconds=float(finished.get("wall_seconds", 0.0)),
        )
    if (
        state.config_hash
        and config_hash
        and state.config_hash != config_hash
        and not allow_config_mismatch
    ):
        raise ConfigMismatch(
            f"journal config hash {state.config_hash} != current {config_hash}"
            " (pass allow_config_mismatch to override)"
        )
    journal = Journal.open_append(run_dir)
    ledger = TokenLedger()
    engine = build_engine(journal, ledger)
    if state.draft_tail is not None:
        draft = state.draft_tail
        journal.append(
            EventKind.NODE_ABANDONED,
            {"id": draft.id, "reason": "unfinalized draft at resume"},
        )
        state.graph.remove_draft(draft.id)
        node_dir = Path(run_dir) / "nodes" / str(draft.id)
        if node_dir.exists():
            import shutil

            shutil.rmtree(node_dir, ignore_errors=True)
    return engine.continue_run(state)
