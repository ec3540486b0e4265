"""sepdd: self-evolving search over candidate pipeline code.

A trigger-driven orchestrator grows an evolution graph of candidate
solutions using LLM-powered operators, a validate/execute/refine debug
loop, top-k expansion with periodic merges, and a journal-backed resumable
state, producing a best node and its primary-edge lineage.
"""

from .engine import (
    EvolutionEngine,
    RunBudget,
    RunResult,
    TaskSpec,
    resume_run,
    run_node_workflow,
)
from .errors import SepddError
from .gateway import (
    GatewayConfig,
    LiveGatewayBackend,
    TokenBudget,
    TokenLedger,
    ledger_report,
)
from .journal import (
    EventKind,
    Journal,
    JournalEvent,
    RunReplay,
    load_run,
    read_events,
    replay_journal,
    replay_run,
)
from .model import (
    DEFAULT_METRIC_SPECS,
    EvolutionGraph,
    ExecOutcome,
    MetricRole,
    MetricSpec,
    Node,
    NodeAction,
    NodeId,
    NodeStatus,
    TokenUsage,
)
from .operators import (
    AnalysisVerdict,
    OperatorContext,
    Suggestions,
    analyzer,
    build_idea_prompt,
    code_creator,
    code_refiner,
    idea_generator,
    merge_analysis,
)
from .sandbox import ExecLimits, ProcessSandbox, SyntaxReport, extract_metrics
from .strategy import (
    StrategyConfig,
    best_node,
    primary_edge,
    rank_nodes,
    select_merge_parents,
    select_parent,
    should_terminate_branch,
)
from .triggers import (
    IndicatorState,
    Observation,
    TriggerEvent,
    TriggerKind,
    evaluate_triggers,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisVerdict",
    "DEFAULT_METRIC_SPECS",
    "EventKind",
    "EvolutionEngine",
    "EvolutionGraph",
    "ExecLimits",
    "ExecOutcome",
    "GatewayConfig",
    "IndicatorState",
    "Journal",
    "JournalEvent",
    "LiveGatewayBackend",
    "MetricRole",
    "MetricSpec",
    "Node",
    "NodeAction",
    "NodeId",
    "NodeStatus",
    "Observation",
    "OperatorContext",
    "ProcessSandbox",
    "RunBudget",
    "RunReplay",
    "RunResult",
    "SepddError",
    "StrategyConfig",
    "Suggestions",
    "SyntaxReport",
    "TaskSpec",
    "TokenBudget",
    "TokenLedger",
    "TokenUsage",
    "TriggerEvent",
    "TriggerKind",
    "analyzer",
    "best_node",
    "build_idea_prompt",
    "code_creator",
    "code_refiner",
    "evaluate_triggers",
    "extract_metrics",
    "idea_generator",
    "ledger_report",
    "load_run",
    "merge_analysis",
    "primary_edge",
    "rank_nodes",
    "read_events",
    "replay_journal",
    "replay_run",
    "resume_run",
    "run_node_workflow",
    "select_merge_parents",
    "select_parent",
    "should_terminate_branch",
]
