"""Run reporting: the evolution-tree rendering and the run summary.

Both outputs are derived purely from journal replay, so the CLI verbs and
the library functions agree byte-for-byte on the same run directory.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

from .errors import NoValidNode
from .gateway import format_millions
from .journal import RunReplay, load_run
from .model import (
    EvolutionGraph,
    MetricRole,
    MetricSpec,
    NodeStatus,
    primary_metric,
)
from .strategy import best_node, primary_edge


def _display_specs(specs: Sequence[MetricSpec]) -> list[MetricSpec]:
    """Metric print order: auxiliaries and tiebreak first, primary last."""
    primary = primary_metric(specs)
    return [s for s in specs if s.role is not MetricRole.PRIMARY] + [primary]


def _node_label(graph: EvolutionGraph, node_id: int, specs: Sequence[MetricSpec]) -> str:
    node = graph.node(node_id)
    if node.is_root:
        return f"Root {node_id}"
    pieces = []
    for spec in _display_specs(specs):
        value = node.metric(spec.name)
        pieces.append(
            f"{spec.name}={value:.4f}" if value is not None else f"{spec.name}=---"
        )
    label = f"{node_id}: " + ", ".join(pieces)
    if node.status is NodeStatus.BUGGY:
        label += " (invalid)"
    return label


def render_tree(graph: EvolutionGraph, specs: Sequence[MetricSpec]) -> str:
    """Box-drawing view of the evolution tree; ``*`` marks the best branch.

    Children print in ascending id order; buggy nodes carry ``(invalid)``.
    Deterministic for a given graph.
    """
    try:
        best_path = set(primary_edge(graph, specs))
    except NoValidNode:
        best_path = set()

    lines: list[str] = []

    def walk(node_id: int, prefix: str) -> None:
        children = graph.children(node_id)
        for index, child in enumerate(children):
            last = index == len(children) - 1
            connector = "└── " if last else "├── "
            label = _node_label(graph, child, specs)
            marker = " *" if child in best_path and not graph.node(child).is_root else ""
            suffix = marker if not graph.node(child).status is NodeStatus.BUGGY else ""
            lines.append(prefix + connector + label + suffix)
            walk(child, prefix + ("    " if last else "│   "))

    if graph.root in graph:
        lines.append(_node_label(graph, graph.root, specs))
        walk(graph.root, "")
    if best_path:
        lines.append("(* = best branch)")
    return "\n".join(lines)


def build_report(replay: RunReplay) -> dict[str, Any]:
    """Structured run report: best node, lineage, per-node table, tokens."""
    graph = replay.graph
    specs = replay.metric_specs
    finished = replay.finished or {}
    status = "finished" if replay.finished is not None else "in-progress"
    best: dict[str, Any] | None = None
    edge: list[int] = []
    if specs:
        try:
            best_id = best_node(graph, specs)
            edge = primary_edge(graph, specs)
            best = {"id": best_id, "metrics": dict(graph.node(best_id).metrics)}
        except NoValidNode:
            status = "no-valid-node"

    nodes_table = []
    for node_id in sorted(graph.nodes):
        node = graph.node(node_id)
        nodes_table.append(
            {
                "id": node.id,
                "parent": node.primary_parent,
                "action": node.action.value,
                "status": node.status.value,
                "metrics": dict(node.metrics),
                "debug_attempts": node.debug_attempts,
                "input_tokens": node.tokens.input_tokens,
                "output_tokens": node.tokens.output_tokens,
            }
        )

    totals = replay.token_totals
    return {
        "run_id": replay.run_id,
        "status": status,
        "reason": finished.get("reason"),
        "best": best,
        "nodes": nodes_table,
        "primary_edge": edge,
        "primary_edge_text": " → ".join(str(i) for i in edge),
        "nodes_produced": graph.produced_count(),
        "valid_nodes": sum(
            1
            for n in graph.nodes.values()
            if n.status is NodeStatus.VALID and not n.is_root
        ),
        "buggy_nodes": sum(
            1 for n in graph.nodes.values() if n.status is NodeStatus.BUGGY
        ),
        "tokens": {
            "input_tokens": totals.input_tokens,
            "output_tokens": totals.output_tokens,
            "total_tokens": totals.total,
            "formatted": (
                f"{format_millions(totals.input_tokens)} input / "
                f"{format_millions(totals.output_tokens)} output / "
                f"{format_millions(totals.total)} total"
            ),
        },
        "wall_seconds": finished.get("wall_seconds"),
    }


def render_report_text(report: dict[str, Any], specs: Sequence[MetricSpec]) -> str:
    lines = [f"Run {report['run_id'] or '(unnamed)'}: {report['status']}"]
    if report.get("reason"):
        lines.append(f"Stop reason: {report['reason']}")
    best = report.get("best")
    if best:
        metric_text = ", ".join(
            f"{name}={value:.4f}" for name, value in sorted(best["metrics"].items())
        )
        lines.append(f"Best node: {best['id']} ({metric_text})")
        lines.append(f"Primary edge: {report['primary_edge_text']}")
    else:
        lines.append("Best node: none (no valid node)")
    lines.append(
        f"Nodes produced: {report['nodes_produced']} "
        f"({report['valid_nodes']} valid, {report['buggy_nodes']} buggy)"
    )
    lines.append(f"Tokens: {report['tokens']['formatted']}")
    if report.get("wall_seconds") is not None:
        lines.append(f"Wall time: {report['wall_seconds']:.2f}s")
    return "\n".join(lines)


def build_full_report(replay: RunReplay) -> tuple[dict[str, Any], str]:
    """Structured report plus its human-readable rendering."""
    report = build_report(replay)
    specs = replay.metric_specs
    text_lines = [render_report_text(report, specs)]
    display = _display_specs(specs) if specs else []
    for node_id in sorted(replay.graph.nodes):
        node = replay.graph.node(node_id)
        if node.is_root:
            continue
        metric_text = "  ".join(
            (
                f"{s.name}={node.metric(s.name):.4f}"
                if node.metric(s.name) is not None
                else f"{s.name}=---"
            )
            for s in display
        )
        text_lines.append(
            f"{node.id:>4}  parent={node.primary_parent!s:>4}  "
            f"{node.action.value:<14}{node.status.value:<7}"
            f"debug={node.debug_attempts}  {metric_text}"
        )
    return report, "\n".join(text_lines)


def tree_from_run_dir(run_dir: Path | str) -> str:
    replay = load_run(run_dir)
    return render_tree(replay.graph, replay.metric_specs)


def report_from_run_dir(run_dir: Path | str) -> tuple[dict[str, Any], str]:
    replay = load_run(run_dir)
    return build_full_report(replay)
