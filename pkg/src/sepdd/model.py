"""Core domain types: nodes, metrics, execution outcomes, and the evolution graph.

A node is one exploration of the code space: the plan that motivated it, the
candidate source it produced, the captured execution outcome, the metrics
parsed from that outcome, and its lineage inside the graph. Finalized nodes
are immutable; the graph only ever grows.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import DuplicateNodeId, MalformedEvent, UnknownNode, UnknownParent

NodeId = int

ROOT_ID: NodeId = 0


class NodeStatus(str, Enum):
    DRAFT = "draft"
    VALID = "valid"
    BUGGY = "buggy"


class NodeAction(str, Enum):
    ROOT = "root"
    DRAFT = "draft"
    IMPROVE = "improve"
    DEBUG_INTERNAL = "debug-internal"
    MERGE = "merge"


class ExecMode(str, Enum):
    DEBUG = "debug"
    FULL = "full"


class MetricRole(str, Enum):
    PRIMARY = "primary"
    TIEBREAK = "tiebreak"
    AUXILIARY = "auxiliary"


EXIT_TIMEOUT = "timeout"
EXIT_SPAWN_FAILURE = "spawn-failure"


@dataclass(frozen=True)
class TokenUsage:
    """Input/output token counts for one or more completion calls."""

    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total(self) -> int:
        return self.input_tokens + self.output_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.input_tokens + other.input_tokens,
            self.output_tokens + other.output_tokens,
        )

    def to_dict(self) -> dict[str, int]:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TokenUsage":
        return cls(int(data.get("input_tokens", 0)), int(data.get("output_tokens", 0)))


@dataclass(frozen=True)
class ExecOutcome:
    """Captured result of running candidate code in the sandbox.

    ``exit_code`` is the child's integer exit status, or one of the
    sentinels ``"timeout"`` / ``"spawn-failure"`` when no status exists.
    """

    exit_code: int | str
    stdout: str = ""
    stderr: str = ""
    wall_seconds: float = 0.0
    mode: ExecMode = ExecMode.FULL
    stdout_truncated: bool = False
    stderr_truncated: bool = False

    @property
    def ok(self) -> bool:
        return self.exit_code == 0

    @property
    def timed_out(self) -> bool:
        return self.exit_code == EXIT_TIMEOUT

    def summary(self, max_chars: int = 2000) -> str:
        """Compact description used in operator prompts.

        Deliberately excludes wall-clock time so prompts (and therefore
        playback fingerprints) are stable across reruns of the same code.
        """
        head = f"exit={self.exit_code} mode={self.mode.value}"
        out = self.stdout[-max_chars:] if self.stdout else "(empty)"
        err = self.stderr[-max_chars:] if self.stderr else "(empty)"
        return f"{head}\n--- stdout ---\n{out}\n--- stderr ---\n{err}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "exit_code": self.exit_code,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "wall_seconds": self.wall_seconds,
            "mode": self.mode.value,
            "stdout_truncated": self.stdout_truncated,
            "stderr_truncated": self.stderr_truncated,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExecOutcome":
        exit_code = data["exit_code"]
        if not isinstance(exit_code, (int, str)) or isinstance(exit_code, bool):
            raise MalformedEvent(f"invalid exit_code: {exit_code!r}")
        return cls(
            exit_code=exit_code,
            stdout=str(data.get("stdout", "")),
            stderr=str(data.get("stderr", "")),
            wall_seconds=float(data.get("wall_seconds", 0.0)),
            mode=ExecMode(data.get("mode", "full")),
            stdout_truncated=bool(data.get("stdout_truncated", False)),
            stderr_truncated=bool(data.get("stderr_truncated", False)),
        )


@dataclass(frozen=True)
class MetricSpec:
    """Declaration of one metric the run cares about."""

    name: str
    higher_is_better: bool = True
    role: MetricRole = MetricRole.AUXILIARY

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "higher_is_better": self.higher_is_better,
            "role": self.role.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MetricSpec":
        return cls(
            name=str(data["name"]),
            higher_is_better=bool(data.get("higher_is_better", True)),
            role=MetricRole(data.get("role", "auxiliary")),
        )


def validate_metric_specs(specs: Iterable[MetricSpec]) -> tuple[MetricSpec, ...]:
    """Check the one-primary invariant and return the specs as a tuple."""
    out = tuple(specs)
    primaries = [s for s in out if s.role is MetricRole.PRIMARY]
    if len(primaries) != 1:
        raise ValueError(f"exactly one primary metric required, found {len(primaries)}")
    return out


def primary_metric(specs: Iterable[MetricSpec]) -> MetricSpec:
    for spec in specs:
        if spec.role is MetricRole.PRIMARY:
            return spec
    raise ValueError("no primary metric configured")


def tiebreak_metric(specs: Iterable[MetricSpec]) -> MetricSpec | None:
    for spec in specs:
        if spec.role is MetricRole.TIEBREAK:
            return spec
    return None


DEFAULT_METRIC_SPECS: tuple[MetricSpec, ...] = (
    MetricSpec("mAP50", higher_is_better=True, role=MetricRole.PRIMARY),
    MetricSpec("mAP50-95", higher_is_better=True, role=MetricRole.TIEBREAK),
)


@dataclass(frozen=True)
class Node:
    """One exploration of the code space.

    ``merge_parents`` is non-empty only for merge nodes, always contains
    ``primary_parent``, and preserves rank order of the merged candidates.
    """

    id: NodeId
    primary_parent: NodeId | None
    action: NodeAction
    merge_parents: tuple[NodeId, ...] = ()
    suggestions: str = ""
    code: str = ""
    exec_outcome: ExecOutcome | None = None
    analysis: str = ""
    metrics: Mapping[str, float] = field(default_factory=dict)
    status: NodeStatus = NodeStatus.DRAFT
    debug_attempts: int = 0
    tokens: TokenUsage = field(default_factory=TokenUsage)
    created_at: float = 0.0

    @property
    def finalized(self) -> bool:
        return self.status is not NodeStatus.DRAFT

    @property
    def is_root(self) -> bool:
        return self.action is NodeAction.ROOT

    def metric(self, name: str) -> float | None:
        value = self.metrics.get(name)
        return float(value) if value is not None else None

    def check_invariants(self, max_debug_depth: int | None = None) -> None:
        """Raise ValueError when a finalized node violates its contracts.

        The root node (action ``root``) is exempt from the metrics
        requirement: it models the initial system state and is never ranked.
        """
        if self.id < 0:
            raise ValueError("node id must be non-negative")
        if self.is_root:
            if self.primary_parent is not None:
                raise ValueError("root must not have a parent")
        elif self.primary_parent is None:
            raise ValueError(f"node {self.id}: every non-root node needs a primary_parent")
        if self.merge_parents:
            if len(self.merge_parents) < 2:
                raise ValueError(f"node {self.id}: merge_parents must have size >= 2")
            if self.primary_parent not in self.merge_parents:
                raise ValueError(f"node {self.id}: merge_parents must include primary_parent")
        if self.debug_attempts < 0:
            raise ValueError("debug_attempts must be non-negative")
        if max_debug_depth is not None and self.debug_attempts > max_debug_depth:
            raise ValueError(
                f"node {self.id}: debug_attempts {self.debug_attempts} exceeds {max_debug_depth}"
            )
        if self.status is NodeStatus.VALID and not self.is_root and not self.metrics:
            raise ValueError(f"node {self.id}: valid nodes must carry metrics")
        if self.status is NodeStatus.BUGGY and self.metrics:
            raise ValueError(f"node {self.id}: buggy nodes must not carry metrics")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "primary_parent": self.primary_parent,
            "action": self.action.value,
            "merge_parents": list(self.merge_parents),
            "suggestions": self.suggestions,
            "code": self.code,
            "exec_outcome": self.exec_outcome.to_dict() if self.exec_outcome else None,
            "analysis": self.analysis,
            "metrics": dict(self.metrics),
            "status": self.status.value,
            "debug_attempts": self.debug_attempts,
            "tokens": self.tokens.to_dict(),
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Node":
        try:
            exec_data = data.get("exec_outcome")
            return cls(
                id=int(data["id"]),
                primary_parent=(
                    None if data.get("primary_parent") is None else int(data["primary_parent"])
                ),
                action=NodeAction(data["action"]),
                merge_parents=tuple(int(p) for p in data.get("merge_parents", ())),
                suggestions=str(data.get("suggestions", "")),
                code=str(data.get("code", "")),
                exec_outcome=ExecOutcome.from_dict(exec_data) if exec_data else None,
                analysis=str(data.get("analysis", "")),
                metrics={str(k): float(v) for k, v in dict(data.get("metrics", {})).items()},
                status=NodeStatus(data["status"]),
                debug_attempts=int(data.get("debug_attempts", 0)),
                tokens=TokenUsage.from_dict(data.get("tokens", {})),
                created_at=float(data.get("created_at", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedEvent(f"malformed node payload: {exc}") from exc

    def signature(self, include_timestamps: bool = True) -> str:
        """Stable content hash of the node's serialized form.

        Timestamps are informational only; cross-run comparisons exclude them.
        """
        data = self.to_dict()
        if not include_timestamps:
            data.pop("created_at", None)
        canon = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def make_root_node(created_at: float = 0.0) -> Node:
    """The initial-state node: no code, no metrics, expandable but never ranked."""
    return Node(
        id=ROOT_ID,
        primary_parent=None,
        action=NodeAction.ROOT,
        status=NodeStatus.VALID,
        created_at=created_at,
    )


class EvolutionGraph:
    """Tree-shaped graph of explorations, keyed by node id.

    Traversal follows ``primary_parent`` links; merge nodes record all
    contributing parents but count as a child of the primary parent only,
    which keeps the structure a tree.
    """

    def __init__(self, run_id: str = "") -> None:
        self.run_id = run_id
        self._nodes: dict[NodeId, Node] = {}
        self._children: dict[NodeId, list[NodeId]] = {}

    # -- queries ---------------------------------------------------------

    @property
    def nodes(self) -> Mapping[NodeId, Node]:
        return self._nodes

    @property
    def root(self) -> NodeId:
        return ROOT_ID

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: NodeId) -> bool:
        return node_id in self._nodes

    def node(self, node_id: NodeId) -> Node:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(f"no node with id {node_id}") from None

    def children(self, node_id: NodeId) -> tuple[NodeId, ...]:
        if node_id not in self._nodes:
            raise UnknownNode(f"no node with id {node_id}")
        return tuple(sorted(self._children.get(node_id, ())))

    def child_count(self, node_id: NodeId) -> int:
        if node_id not in self._nodes:
            raise UnknownNode(f"no node with id {node_id}")
        return len(self._children.get(node_id, ()))

    def next_id(self) -> NodeId:
        return max(self._nodes) + 1 if self._nodes else ROOT_ID

    def produced_count(self) -> int:
        """Number of non-root nodes (the expansions the run produced)."""
        return sum(1 for n in self._nodes.values() if not n.is_root)

    def path_to_root(self, node_id: NodeId) -> list[NodeId]:
        """Node ids from the root down to ``node_id`` (root first)."""
        path = [node_id]
        seen = {node_id}
        current = self.node(node_id)
        while current.primary_parent is not None:
            parent = current.primary_parent
            if parent in seen:
                raise ValueError(f"cycle detected at node {parent}")
            seen.add(parent)
            path.append(parent)
            current = self.node(parent)
        path.reverse()
        return path

    def depth(self, node_id: NodeId) -> int:
        return len(self.path_to_root(node_id)) - 1

    # -- mutation ----------------------------------------------------------

    def add_node(self, node: Node) -> None:
        if node.id in self._nodes:
            raise DuplicateNodeId(f"node id {node.id} already present")
        if node.primary_parent is not None and node.primary_parent not in self._nodes:
            raise UnknownParent(
                f"node {node.id} names unknown parent {node.primary_parent}"
            )
        for parent in node.merge_parents:
            if parent not in self._nodes:
                raise UnknownParent(f"merge parent {parent} unknown")
        self._nodes[node.id] = node
        if node.primary_parent is not None:
            self._children.setdefault(node.primary_parent, []).append(node.id)

    def finalize_node(self, node: Node) -> None:
        """Replace the draft entry for ``node.id`` with its finalized form."""
        existing = self._nodes.get(node.id)
        if existing is None:
            raise UnknownNode(f"cannot finalize unknown node {node.id}")
        if existing.finalized:
            raise ValueError(f"node {node.id} is already finalized")
        if existing.primary_parent != node.primary_parent:
            raise ValueError(f"node {node.id}: lineage changed at finalization")
        self._nodes[node.id] = node

    def remove_draft(self, node_id: NodeId) -> None:
        """Drop an abandoned draft; its id becomes reusable."""
        node = self.node(node_id)
        if node.finalized:
            raise ValueError(f"node {node_id} is finalized and cannot be removed")
        if self._children.get(node_id):
            raise ValueError(f"draft {node_id} unexpectedly has children")
        del self._nodes[node_id]
        self._children.pop(node_id, None)
        if node.primary_parent is not None:
            self._children[node.primary_parent].remove(node_id)

    # -- equality / integrity ---------------------------------------------

    def signature(self, include_timestamps: bool = False) -> str:
        """Canonical hash over all nodes; used for replay-equality checks.

        With timestamps excluded, wall-clock durations inside execution
        outcomes are dropped too, so re-executions of the same scripted run
        compare equal.
        """
        payload = {
            "run_id": self.run_id,
            "nodes": [
                self._nodes[i].to_dict() for i in sorted(self._nodes)
            ],
        }
        if not include_timestamps:
            for entry in payload["nodes"]:
                entry.pop("created_at", None)
                exec_outcome = entry.get("exec_outcome")
                if isinstance(exec_outcome, dict):
                    exec_outcome.pop("wall_seconds", None)
        canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def equals(self, other: "EvolutionGraph", include_timestamps: bool = True) -> bool:
        if set(self._nodes) != set(other._nodes):
            return False
        for node_id, node in self._nodes.items():
            theirs = other._nodes[node_id]
            if include_timestamps:
                if node != theirs:
                    return False
            elif replace(node, created_at=0.0) != replace(theirs, created_at=0.0):
                return False
        return True

    def check_integrity(self) -> None:
        """Verify acyclicity and child-count consistency over the whole graph."""
        for node_id in self._nodes:
            self.path_to_root(node_id)
        recount: dict[NodeId, int] = {}
        for node in self._nodes.values():
            if node.primary_parent is not None:
                recount[node.primary_parent] = recount.get(node.primary_parent, 0) + 1
        for node_id in self._nodes:
            if recount.get(node_id, 0) != self.child_count(node_id):
                raise ValueError(f"child-count index out of sync at node {node_id}")
