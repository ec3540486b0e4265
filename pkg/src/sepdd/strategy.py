"""Parent selection, merge-candidate selection, termination, and ranking.

All functions here are pure over immutable graph snapshots: identical
inputs yield identical decisions, which is what makes journal replay and
crash-resume deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .errors import (
    InsufficientCandidates,
    InsufficientDiversity,
    NoExpandableNode,
    NoValidNode,
)
from .model import (
    EvolutionGraph,
    MetricSpec,
    Node,
    NodeId,
    NodeStatus,
    primary_metric,
    tiebreak_metric,
)


@dataclass(frozen=True)
class ScheduledExpansion:
    """One recorded expansion decision, used to re-enact a recorded run."""

    parent: NodeId
    action: str  # NodeAction value

    def to_dict(self) -> dict[str, Any]:
        return {"parent": self.parent, "action": self.action}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScheduledExpansion":
        return cls(parent=int(data["parent"]), action=str(data["action"]))


@dataclass(frozen=True)
class StrategyConfig:
    """Search-strategy knobs.

    ``expansion_schedule`` replaces live parent selection with a recorded
    decision sequence; it exists to replay runs whose scheduler state is
    not recoverable from metrics alone. Leave it unset for live search.
    """

    k: int = 3
    merge_period: int = 5
    merge_arity: int = 2
    faulty_streak_limit: int = 2
    initial_drafts: int = 2
    debug_buggy_nodes: bool = True
    expansion_schedule: tuple[ScheduledExpansion, ...] | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.merge_period < 1:
            raise ValueError("merge_period must be >= 1")
        if self.merge_arity < 2:
            raise ValueError("merge_arity must be >= 2")
        if self.faulty_streak_limit < 1:
            raise ValueError("faulty_streak_limit must be >= 1")
        if self.initial_drafts < 1:
            raise ValueError("initial_drafts must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "k": self.k,
            "merge_period": self.merge_period,
            "merge_arity": self.merge_arity,
            "faulty_streak_limit": self.faulty_streak_limit,
            "initial_drafts": self.initial_drafts,
            "debug_buggy_nodes": self.debug_buggy_nodes,
        }
        if self.expansion_schedule is not None:
            data["expansion_schedule"] = [s.to_dict() for s in self.expansion_schedule]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StrategyConfig":
        schedule = data.get("expansion_schedule")
        return cls(
            k=int(data.get("k", 3)),
            merge_period=int(data.get("merge_period", 5)),
            merge_arity=int(data.get("merge_arity", 2)),
            faulty_streak_limit=int(data.get("faulty_streak_limit", 2)),
            initial_drafts=int(data.get("initial_drafts", 2)),
            debug_buggy_nodes=bool(data.get("debug_buggy_nodes", True)),
            expansion_schedule=(
                tuple(ScheduledExpansion.from_dict(s) for s in schedule)
                if schedule is not None
                else None
            ),
        )


# --- ranking ------------------------------------------------------------


def _sort_key(node: Node, specs: Sequence[MetricSpec]):
    primary = primary_metric(specs)
    tiebreak = tiebreak_metric(specs)

    def directed(spec: MetricSpec | None) -> float:
        if spec is None:
            return 0.0
        value = node.metric(spec.name)
        if value is None:
            # Missing tiebreak ranks worst among equals on the primary.
            return float("inf")
        return -value if spec.higher_is_better else value

    return (directed(primary), directed(tiebreak), node.id)


def rankable(node: Node, specs: Sequence[MetricSpec]) -> bool:
    """Valid nodes carrying the primary metric participate in ranking."""
    return (
        node.status is NodeStatus.VALID
        and node.metric(primary_metric(specs).name) is not None
    )


def rank_nodes(graph: EvolutionGraph, specs: Sequence[MetricSpec]) -> list[NodeId]:
    """Valid nodes best-first: primary metric, then tiebreak, then lower id.

    Buggy nodes are always excluded. Raises :class:`NoValidNode` when
    nothing is rankable.
    """
    candidates = [n for n in graph.nodes.values() if rankable(n, specs)]
    if not candidates:
        raise NoValidNode("no valid node carries the primary metric")
    candidates.sort(key=lambda n: _sort_key(n, specs))
    return [n.id for n in candidates]


def best_node(graph: EvolutionGraph, specs: Sequence[MetricSpec]) -> NodeId:
    return rank_nodes(graph, specs)[0]


def primary_edge(graph: EvolutionGraph, specs: Sequence[MetricSpec]) -> list[NodeId]:
    """Root-to-best lineage along primary-parent links, root first."""
    return graph.path_to_root(best_node(graph, specs))


# --- termination ----------------------------------------------------------


def should_terminate_branch(graph: EvolutionGraph, node_id: NodeId) -> bool:
    """True iff the node and its primary parent are both buggy.

    Two consecutive faulty nodes kill the branch: the node and any
    would-be descendants are permanently excluded from expansion.
    """
    node = graph.node(node_id)
    if node.status is not NodeStatus.BUGGY:
        return False
    if node.primary_parent is None:
        return False
    return graph.node(node.primary_parent).status is NodeStatus.BUGGY


def in_terminated_lineage(graph: EvolutionGraph, node_id: NodeId) -> bool:
    """True when any ancestor pair at-or-above the node is a buggy streak."""
    path = graph.path_to_root(node_id)
    streak = 0
    for ancestor in path:
        if graph.node(ancestor).status is NodeStatus.BUGGY:
            streak += 1
            if streak >= 2:
                return True
        else:
            streak = 0
    return False


# --- parent selection -----------------------------------------------------


def select_parent(
    graph: EvolutionGraph,
    config: StrategyConfig,
    specs: Sequence[MetricSpec],
) -> NodeId:
    """Pick the next node to expand.

    The root is expandable until it has ``initial_drafts`` children. After
    that, among the top-``k`` ranked non-terminated nodes, the one with the
    minimum child count is expanded; ties break toward the higher-ranked
    node, then the lower id.
    """
    if graph.root in graph and graph.child_count(graph.root) < config.initial_drafts:
        return graph.root
    try:
        ranked = rank_nodes(graph, specs)
    except NoValidNode:
        raise NoExpandableNode("no valid node is available for expansion") from None
    live = [i for i in ranked if not in_terminated_lineage(graph, i)]
    if not live:
        raise NoExpandableNode("all ranked nodes sit on terminated branches")
    top = live[: config.k]
    return min(top, key=lambda i: (graph.child_count(i), top.index(i), i))


def eligible_for_tree_debug(graph: EvolutionGraph, node_id: NodeId) -> bool:
    """A buggy node gets one tree-level repair attempt before its branch dies.

    Eligibility: buggy, childless, and not already the second failure in a
    row (a buggy parent means the streak limit is reached).
    """
    node = graph.node(node_id)
    if node.status is not NodeStatus.BUGGY:
        return False
    if graph.child_count(node_id) > 0:
        return False
    return not in_terminated_lineage(graph, node_id)


# --- merge ------------------------------------------------------------------


def first_generation_ancestor(graph: EvolutionGraph, node_id: NodeId) -> NodeId:
    """The depth-1 ancestor (direct child of root) of a node."""
    path = graph.path_to_root(node_id)
    if len(path) < 2:
        return node_id
    return path[1]


def select_merge_parents(
    graph: EvolutionGraph,
    config: StrategyConfig,
    specs: Sequence[MetricSpec],
) -> list[NodeId]:
    """Top ``merge_arity`` ranked valid nodes spanning at least two branches.

    When the top slice collapses onto one first-generation branch, its
    lowest-ranked member is swapped for the best node of another branch.
    """
    try:
        ranked = rank_nodes(graph, specs)
    except NoValidNode:
        raise InsufficientCandidates("no valid nodes to merge") from None
    ranked = [i for i in ranked if not in_terminated_lineage(graph, i)]
    if len(ranked) < config.merge_arity:
        raise InsufficientCandidates(
            f"need {config.merge_arity} valid nodes, have {len(ranked)}"
        )
    branches = {first_generation_ancestor(graph, i) for i in ranked}
    if len(branches) < 2:
        raise InsufficientDiversity("all merge candidates share one branch")
    chosen = list(ranked[: config.merge_arity])
    chosen_branches = {first_generation_ancestor(graph, i) for i in chosen}
    if len(chosen_branches) < 2:
        anchor_branch = first_generation_ancestor(graph, chosen[0])
        for candidate in ranked:
            if first_generation_ancestor(graph, candidate) != anchor_branch:
                chosen[-1] = candidate
                break
    return chosen
