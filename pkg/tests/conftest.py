from __future__ import annotations

import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sepdd.model import (
    DEFAULT_METRIC_SPECS,
    EvolutionGraph,
    Node,
    NodeAction,
    NodeStatus,
    make_root_node,
)


def make_node(
    node_id: int,
    parent: int | None,
    *,
    status: NodeStatus = NodeStatus.VALID,
    metrics: dict[str, float] | None = None,
    action: NodeAction = NodeAction.IMPROVE,
    merge_parents: tuple[int, ...] = (),
) -> Node:
    return Node(
        id=node_id,
        primary_parent=parent,
        action=action,
        merge_parents=merge_parents,
        status=status,
        metrics=metrics or ({} if status is NodeStatus.BUGGY else {"mAP50": 0.5}),
    )


def random_valid_metrics(rng: random.Random) -> dict[str, float]:
    # Coarse values on purpose: ties must be frequent enough to exercise
    # the tiebreak and id rules.
    if rng.random() < 0.4:
        metrics = {"mAP50": rng.choice([0.2, 0.4, 0.6, 0.8])}
    else:
        metrics = {"mAP50": round(rng.uniform(0.0, 1.0), 4)}
    if rng.random() < 0.75:
        if rng.random() < 0.4:
            metrics["mAP50-95"] = rng.choice([0.1, 0.3, 0.5])
        else:
            metrics["mAP50-95"] = round(rng.uniform(0.0, 1.0), 4)
    return metrics


def random_graph(rng: random.Random, max_nodes: int = 24) -> EvolutionGraph:
    """Random exploration graph with buggy chains and metric ties."""
    graph = EvolutionGraph(run_id="prop")
    graph.add_node(make_root_node())
    count = rng.randint(1, max_nodes)
    for node_id in range(1, count + 1):
        parent = 0 if node_id <= 2 else rng.choice(list(graph.nodes))
        buggy = rng.random() < 0.3
        graph.add_node(
            make_node(
                node_id,
                parent,
                status=NodeStatus.BUGGY if buggy else NodeStatus.VALID,
                metrics={} if buggy else random_valid_metrics(rng),
                action=NodeAction.DRAFT if parent == 0 else NodeAction.IMPROVE,
            )
        )
    return graph


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20260810)
