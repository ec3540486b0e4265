"""The LLM-powered operators and their prompt assembly.

Four operators drive one node's workflow: the idea generator proposes
prioritized improvements, the code creator synthesizes a complete candidate
program, the analyzer decides whether the candidate needs debugging, and
the code refiner fixes it using all prior failed attempts. A fifth module
distills several promising nodes into merge suggestions.

Metric values are always taken from the sandbox's deterministic extraction;
the analyzer's completion contributes explanation only and can never
override a parsed number. This closes the metric-gaming hole that purely
LLM-judged pipelines leave open.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

from .backends import Completion, CompletionRequest, Message, OperatorBackend
from .errors import (
    BackendError,
    BudgetExhausted,
    MissingCodeBlock,
    UnparsableSuggestions,
)
from .model import ExecOutcome, MetricSpec, Node, primary_metric
from .sandbox import SyntaxReport, extract_metrics

logger = logging.getLogger(__name__)

OP_IDEA = "idea"
OP_CODE = "code"
OP_ANALYZE = "analyze"
OP_REFINE = "refine"
OP_MERGE = "merge"


# --- context --------------------------------------------------------------


@dataclass(frozen=True)
class SolutionSummary:
    """Digest of one other solution, shown to the idea generator."""

    strategy_summary: str
    strengths: str
    weaknesses: str


@dataclass(frozen=True)
class OperatorContext:
    """Inputs shared by the prompt builders.

    ``exploration_id`` is rendered into every prompt so that distinct
    expansions never produce byte-identical requests; playback tables key
    on the rendered prompt, and two different nodes must stay replayable
    even when their graph context happens to coincide.
    """

    task_description: str
    data_description: str = ""
    task_requirements: str = ""
    parent_code: str | None = None
    parent_exec_summary: str | None = None
    parent_strategies: str | None = None
    journal_summaries: tuple[SolutionSummary, ...] = ()
    output_format: str = ""
    trigger_note: str = ""
    exploration_id: int | None = None

    def __post_init__(self) -> None:
        if not self.task_description.strip():
            raise ValueError("task_description must be non-empty")
        if not self.task_requirements.strip():
            raise ValueError("task_requirements must be non-empty")


SYSTEM_RULES = """\
- All task requirements must be satisfied by the submitted program.
- Produce one complete, self-contained source file; no placeholders.
- Print every metric explicitly to stdout, one per line, exactly as
  `SEPDD_METRIC <name>=<value>` (ASCII, decimal value).
- Honor the SEPDD_DEBUG environment variable: when it is set, shrink
  epochs/data so a debug run finishes quickly; the logic must not change.
- Read input data from the directory in SEPDD_DATA_DIR when provided.
- Do not fabricate or hard-code metric values; compute them."""

REASONING_INSTRUCTIONS = """\
- Ground every suggestion in the execution evidence above; avoid vague
  suggestions such as "tune hyperparameters" without naming which and why.
- Prefer few high-impact changes over many speculative ones.
- Consider what earlier solutions got right or wrong before proposing."""

DEFAULT_IDEA_OUTPUT_FORMAT = """\
Return a numbered list, most promising first. One line per idea:
`<n>. <short title>: <rationale>`"""

IDEA_SECTION_HEADERS: tuple[str, ...] = (
    "**Task Context**",
    "**Parent Node**",
    "**Summaries of Other Solutions**",
    "**System rules**",
    "**Reasoning Steps and Instructions**",
    "**Output Format**",
)


def build_idea_prompt(ctx: OperatorContext) -> tuple[Message, ...]:
    """Render the idea-generator prompt; all six section headers, in order.

    Deterministic: identical contexts produce byte-identical prompts.
    """
    parts: list[str] = []
    parts.append("**Task Context**")
    parts.append(f"- Task description:\n{ctx.task_description}")
    parts.append(f"- Data description:\n{ctx.data_description or '(none provided)'}")
    parts.append(f"- Task-Specific requirements:\n{ctx.task_requirements}")
    if ctx.trigger_note:
        parts.append(f"- Evolution trigger:\n{ctx.trigger_note}")
    if ctx.exploration_id is not None:
        parts.append(f"- Exploration index: {ctx.exploration_id}")

    parts.append("**Parent Node**")
    if ctx.parent_code is None:
        parts.append("none (initial draft)")
    else:
        parts.append(f"- Code:\n```\n{ctx.parent_code}\n```")
        parts.append(f"- Execution output:\n{ctx.parent_exec_summary or '(not executed)'}")
        parts.append(f"- Strategies of this code:\n{ctx.parent_strategies or '(none recorded)'}")

    parts.append("**Summaries of Other Solutions**")
    if not ctx.journal_summaries:
        parts.append("(no other solutions yet)")
    else:
        for index, summary in enumerate(ctx.journal_summaries, start=1):
            parts.append(
                f"Solution {index}:\n"
                f"- Model/training strategies summary: {summary.strategy_summary}\n"
                f"- Strength analysis: {summary.strengths}\n"
                f"- Weakness analysis: {summary.weaknesses}"
            )

    parts.append("**System rules**")
    parts.append(SYSTEM_RULES)
    parts.append("**Reasoning Steps and Instructions**")
    parts.append(REASONING_INSTRUCTIONS)
    parts.append("**Output Format**")
    parts.append(ctx.output_format or DEFAULT_IDEA_OUTPUT_FORMAT)

    return (Message("user", "\n\n".join(parts)),)


# --- suggestions ------------------------------------------------------------


@dataclass(frozen=True)
class SuggestionItem:
    title: str
    rationale: str
    priority: int


@dataclass(frozen=True)
class Suggestions:
    items: tuple[SuggestionItem, ...]
    raw: str

    def __post_init__(self) -> None:
        if not self.items:
            raise ValueError("suggestions must contain at least one item")
        priorities = [i.priority for i in self.items]
        if priorities != sorted(priorities):
            raise ValueError("priorities must be non-decreasing")

    def as_text(self) -> str:
        return "\n".join(
            f"{item.priority}. {item.title}: {item.rationale}" if item.rationale
            else f"{item.priority}. {item.title}"
            for item in self.items
        )


_LIST_ITEM_RE = re.compile(r"^\s*(?:\d+[.)]\s+|[-*•]\s+)(.*\S)\s*$")


def parse_suggestions(text: str) -> Suggestions | None:
    """Parse a numbered or bulleted list into prioritized suggestions.

    Priorities are the 1-based listing order; continuation lines attach to
    the preceding item. Returns None when no list items are found.
    """
    items: list[SuggestionItem] = []
    pending: list[str] | None = None

    def flush() -> None:
        nonlocal pending
        if pending is None:
            return
        body = " ".join(pending).strip()
        title, _, rationale = body.partition(":")
        if not _:
            title, _, rationale = body.partition(" - ")
        items.append(
            SuggestionItem(
                title=title.strip().strip("*").strip(),
                rationale=rationale.strip(),
                priority=len(items) + 1,
            )
        )
        pending = None

    for line in text.splitlines():
        match = _LIST_ITEM_RE.match(line)
        if match:
            flush()
            pending = [match.group(1)]
        elif pending is not None and line.strip():
            pending.append(line.strip())
    flush()
    if not items:
        return None
    return Suggestions(items=tuple(items), raw=text)


FORMAT_REMINDER = (
    "Your previous reply could not be parsed. Reply again with ONLY a "
    "numbered list, one idea per line, formatted `<n>. <title>: <rationale>`."
)


def idea_generator(
    ctx: OperatorContext,
    backend: OperatorBackend,
    *,
    node_id: int | None = None,
    model: str = "",
) -> Suggestions:
    """Generate prioritized improvement suggestions for the next candidate."""
    messages = build_idea_prompt(ctx)
    completion = backend.complete(
        CompletionRequest(operator=OP_IDEA, messages=messages, model=model, node_id=node_id)
    )
    parsed = parse_suggestions(completion.text)
    if parsed is not None:
        return parsed
    retry_messages = messages + (
        Message("assistant", completion.text),
        Message("user", FORMAT_REMINDER),
    )
    retry = backend.complete(
        CompletionRequest(operator=OP_IDEA, messages=retry_messages, model=model, node_id=node_id)
    )
    parsed = parse_suggestions(retry.text)
    if parsed is None:
        raise UnparsableSuggestions(
            f"idea generator returned no parsable list (after retry): {retry.text[:200]!r}"
        )
    return parsed


# --- code creator -----------------------------------------------------------


class CreatorMode(str, Enum):
    INITIAL = "initial"
    IMPROVEMENT = "improvement"
    MERGE = "merge"


_FENCED_BLOCK_RE = re.compile(r"```[a-zA-Z0-9_+-]*\n(.*?)```", re.DOTALL)


def extract_code_block(text: str) -> str | None:
    """Return the contents of the last fenced code block, if any.

    Last-wins by design: models often emit a sketch first and the final
    program last.
    """
    blocks = _FENCED_BLOCK_RE.findall(text)
    for block in reversed(blocks):
        if block.strip():
            return block.rstrip("\n") + "\n"
    return None


def build_creator_prompt(
    ctx: OperatorContext, suggestions: Suggestions, mode: CreatorMode
) -> tuple[Message, ...]:
    parts = [
        "**Task Context**",
        f"- Task description:\n{ctx.task_description}",
        f"- Data description:\n{ctx.data_description or '(none provided)'}",
        f"- Task-Specific requirements:\n{ctx.task_requirements}",
    ]
    if ctx.exploration_id is not None:
        parts.append(f"- Exploration index: {ctx.exploration_id}")
    parts += [
        "**Strategic Suggestions**",
        suggestions.as_text(),
    ]
    if mode is CreatorMode.INITIAL:
        parts.append("**Mode**")
        parts.append("Initial generation: write the first complete candidate program.")
    else:
        label = "Merge" if mode is CreatorMode.MERGE else "Improvement"
        parts.append("**Parent Code**")
        parts.append(f"```\n{ctx.parent_code or ''}\n```")
        parts.append("**Mode**")
        parts.append(
            f"{label}: rewrite the parent into a better complete program, applying "
            "the suggestions and proactively fixing any issues you notice."
        )
    parts.append("**System rules**")
    parts.append(SYSTEM_RULES)
    parts.append("**Output Format**")
    parts.append("Reply with exactly one fenced code block containing the full program.")
    return (Message("user", "\n\n".join(parts)),)


def code_creator(
    ctx: OperatorContext,
    suggestions: Suggestions,
    backend: OperatorBackend,
    mode: CreatorMode = CreatorMode.INITIAL,
    *,
    node_id: int | None = None,
    model: str = "",
) -> str:
    """Synthesize a complete candidate program from the suggestions."""
    if mode is not CreatorMode.INITIAL and ctx.parent_code is None:
        raise ValueError(f"{mode.value} mode requires parent_code")
    completion = backend.complete(
        CompletionRequest(
            operator=OP_CODE,
            messages=build_creator_prompt(ctx, suggestions, mode),
            model=model,
            node_id=node_id,
        )
    )
    code = extract_code_block(completion.text)
    if code is None:
        raise MissingCodeBlock("code creator returned no fenced code block")
    return code


# --- analyzer ----------------------------------------------------------------


REASON_SYNTAX = "syntax-error"
REASON_NO_EXECUTION = "no-execution"
REASON_NONZERO_EXIT = "nonzero-exit"
REASON_TIMEOUT = "timeout"
REASON_SPAWN_FAILURE = "spawn-failure"
REASON_MISSING_PRIMARY_METRIC = "missing-primary-metric"


@dataclass(frozen=True)
class AnalysisVerdict:
    buggy: bool
    analysis: str
    extracted_metrics: Mapping[str, float] = field(default_factory=dict)
    needs_debug_reason: str | None = None


def _deterministic_verdict(
    syntax_report: SyntaxReport | None,
    exec_outcome: ExecOutcome | None,
    specs: Sequence[MetricSpec],
    fallback_patterns: Sequence[tuple[str, str]],
) -> tuple[bool, str | None, dict[str, float]]:
    if syntax_report is not None and not syntax_report.ok:
        return True, REASON_SYNTAX, {}
    if exec_outcome is None:
        return True, REASON_NO_EXECUTION, {}
    if exec_outcome.exit_code == "timeout":
        return True, REASON_TIMEOUT, {}
    if exec_outcome.exit_code == "spawn-failure":
        return True, REASON_SPAWN_FAILURE, {}
    if exec_outcome.exit_code != 0:
        return True, REASON_NONZERO_EXIT, {}
    metrics = extract_metrics(exec_outcome.stdout, fallback_patterns)
    if primary_metric(specs).name not in metrics:
        return True, REASON_MISSING_PRIMARY_METRIC, {}
    return False, None, metrics


def build_analyzer_prompt(
    code: str,
    syntax_report: SyntaxReport | None,
    exec_outcome: ExecOutcome | None,
    deterministic_reason: str | None,
    exploration_id: int | None = None,
) -> tuple[Message, ...]:
    parts = [
        "**Candidate Code**",
        *(() if exploration_id is None else (f"Exploration index: {exploration_id}",)),
        f"```\n{code}\n```",
        "**Static Check**",
        syntax_report.describe() if syntax_report else "(not run)",
        "**Execution Outcome**",
        exec_outcome.summary() if exec_outcome else "(not executed)",
        "**Verdict So Far**",
        (
            f"Deterministic signals flag this candidate as buggy ({deterministic_reason})."
            if deterministic_reason
            else "Deterministic signals look clean; metrics were parsed from stdout."
        ),
        "**Output Format**",
        "Explain in a short paragraph what happened, why, and what to change next. "
        "Do not restate metric values; they are parsed separately.",
    ]
    return (Message("user", "\n\n".join(parts)),)


def analyzer(
    code: str,
    syntax_report: SyntaxReport | None,
    exec_outcome: ExecOutcome | None,
    backend: OperatorBackend,
    *,
    specs: Sequence[MetricSpec],
    fallback_patterns: Sequence[tuple[str, str]] = (),
    node_id: int | None = None,
    model: str = "",
) -> AnalysisVerdict:
    """Judge a candidate from its static check and execution evidence.

    The buggy verdict and the metric map come from deterministic signals
    alone; the completion supplies the explanatory analysis. A backend
    failure degrades to a verdict with a placeholder analysis instead of
    failing the node workflow (budget exhaustion still propagates).
    """
    if syntax_report is None and exec_outcome is None:
        raise ValueError("analyzer needs a syntax report or an execution outcome")
    buggy, reason, metrics = _deterministic_verdict(
        syntax_report, exec_outcome, specs, fallback_patterns
    )
    try:
        completion = backend.complete(
            CompletionRequest(
                operator=OP_ANALYZE,
                messages=build_analyzer_prompt(
                    code, syntax_report, exec_outcome, reason, exploration_id=node_id
                ),
                model=model,
                node_id=node_id,
            )
        )
        analysis = completion.text.strip()
    except BudgetExhausted:
        raise
    except BackendError as exc:
        logger.warning("analyzer backend failed; using deterministic verdict: %s", exc)
        analysis = f"(analysis unavailable: backend error {type(exc).__name__})"
    if not analysis:
        analysis = "(analyzer returned no text)"
    return AnalysisVerdict(
        buggy=buggy,
        analysis=analysis,
        extracted_metrics=metrics,
        needs_debug_reason=reason,
    )


# --- refiner ------------------------------------------------------------------


@dataclass(frozen=True)
class PriorAttempt:
    code: str
    analysis: str


def build_refiner_prompt(
    code: str,
    exec_outcome: ExecOutcome | None,
    analysis: str,
    prior_attempts: Sequence[PriorAttempt],
    exploration_id: int | None = None,
) -> tuple[Message, ...]:
    parts = [
        "**Broken Candidate**",
        *(() if exploration_id is None else (f"Exploration index: {exploration_id}",)),
        f"```\n{code}\n```",
        "**Execution Outcome**",
        exec_outcome.summary() if exec_outcome else "(not executed)",
        "**Failure Analysis**",
        analysis or "(none)",
    ]
    if prior_attempts:
        parts.append("**Prior Failed Attempts**")
        for index, attempt in enumerate(prior_attempts, start=1):
            parts.append(
                f"Prior attempt {index} analysis:\n{attempt.analysis}\n"
                f"Prior attempt {index} code:\n```\n{attempt.code}\n```"
            )
        parts.append(
            "Do not repeat a strategy that already failed above; try something new."
        )
    parts.append("**System rules**")
    parts.append(SYSTEM_RULES)
    parts.append("**Output Format**")
    parts.append("Reply with exactly one fenced code block containing the fixed program.")
    return (Message("user", "\n\n".join(parts)),)


def code_refiner(
    code: str,
    exec_outcome: ExecOutcome | None,
    analysis: str,
    prior_attempts: Sequence[PriorAttempt],
    backend: OperatorBackend,
    *,
    node_id: int | None = None,
    model: str = "",
) -> str:
    """Produce a fixed candidate, steering away from prior failed strategies."""
    completion = backend.complete(
        CompletionRequest(
            operator=OP_REFINE,
            messages=build_refiner_prompt(
                code, exec_outcome, analysis, prior_attempts, exploration_id=node_id
            ),
            model=model,
            node_id=node_id,
        )
    )
    fixed = extract_code_block(completion.text)
    if fixed is None:
        raise MissingCodeBlock("code refiner returned no fenced code block")
    return fixed


# --- merge analysis ------------------------------------------------------------


@dataclass(frozen=True)
class CandidateAssessment:
    node_id: int
    strengths: str
    weaknesses: str


@dataclass(frozen=True)
class MergeAnalysis:
    merged_suggestions: Suggestions
    per_candidate: tuple[CandidateAssessment, ...]


def build_merge_prompt(
    candidates: Sequence[Node],
    specs: Sequence[MetricSpec],
    exploration_id: int | None = None,
) -> tuple[Message, ...]:
    primary = primary_metric(specs).name
    parts = ["**Promising Candidates**"]
    if exploration_id is not None:
        parts.append(f"Exploration index: {exploration_id}")
    for node in candidates:
        parts.append(
            f"Candidate {node.id} ({primary}={node.metric(primary)}):\n"
            f"Strategies:\n{node.suggestions or '(none recorded)'}\n"
            f"Analysis:\n{node.analysis or '(none recorded)'}\n"
            f"Code:\n```\n{node.code}\n```"
        )
    parts.append("**Instructions**")
    parts.append(
        "For each candidate, state its strengths and weaknesses. Then distill "
        "a merged plan that combines their effective patterns."
    )
    parts.append("**Output Format**")
    parts.append(
        "For each candidate output two lines:\n"
        "`CANDIDATE <id> STRENGTHS: <text>`\n"
        "`CANDIDATE <id> WEAKNESSES: <text>`\n"
        "Then a line `SUGGESTIONS:` followed by a numbered list of merged ideas."
    )
    return (Message("user", "\n\n".join(parts)),)


_CANDIDATE_LINE_RE = re.compile(
    r"^CANDIDATE\s+(\d+)\s+(STRENGTHS|WEAKNESSES):\s*(.*)$", re.IGNORECASE
)


def merge_analysis(
    candidates: Sequence[Node],
    backend: OperatorBackend,
    *,
    specs: Sequence[MetricSpec],
    node_id: int | None = None,
    model: str = "",
) -> MergeAnalysis:
    """Distill strengths, weaknesses, and a merged plan from >=2 valid nodes."""
    if len(candidates) < 2:
        raise ValueError("merge analysis needs at least two candidates")
    completion = backend.complete(
        CompletionRequest(
            operator=OP_MERGE,
            messages=build_merge_prompt(candidates, specs, exploration_id=node_id),
            model=model,
            node_id=node_id,
        )
    )
    strengths: dict[int, str] = {}
    weaknesses: dict[int, str] = {}
    suggestion_lines: list[str] = []
    in_suggestions = False
    for line in completion.text.splitlines():
        if line.strip().upper().startswith("SUGGESTIONS"):
            in_suggestions = True
            continue
        match = _CANDIDATE_LINE_RE.match(line.strip())
        if match:
            target = strengths if match.group(2).upper() == "STRENGTHS" else weaknesses
            target[int(match.group(1))] = match.group(3).strip()
            continue
        if in_suggestions:
            suggestion_lines.append(line)
    parsed = parse_suggestions("\n".join(suggestion_lines)) or parse_suggestions(
        completion.text
    )
    if parsed is None:
        raise UnparsableSuggestions("merge analysis produced no parsable suggestion list")
    assessments = tuple(
        CandidateAssessment(
            node_id=node.id,
            strengths=strengths.get(node.id, "(not stated)"),
            weaknesses=weaknesses.get(node.id, "(not stated)"),
        )
        for node in candidates
    )
    return MergeAnalysis(merged_suggestions=parsed, per_candidate=assessments)
