from __future__ import annotations

import pytest

from conftest import make_node
from sepdd.errors import DuplicateNodeId, UnknownNode, UnknownParent
from sepdd.model import (
    EvolutionGraph,
    ExecMode,
    ExecOutcome,
    MetricRole,
    MetricSpec,
    Node,
    NodeAction,
    NodeStatus,
    TokenUsage,
    make_root_node,
    validate_metric_specs,
)


def graph_with_root() -> EvolutionGraph:
    graph = EvolutionGraph(run_id="t")
    graph.add_node(make_root_node())
    return graph


class TestTokenUsage:
    def test_addition(self):
        assert TokenUsage(100, 20) + TokenUsage(50, 10) == TokenUsage(150, 30)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            TokenUsage(-1, 0)

    def test_total(self):
        assert TokenUsage(3, 4).total == 7


class TestExecOutcome:
    def test_roundtrip(self):
        outcome = ExecOutcome(
            exit_code="timeout",
            stdout="x",
            stderr="y",
            wall_seconds=1.25,
            mode=ExecMode.DEBUG,
            stdout_truncated=True,
        )
        assert ExecOutcome.from_dict(outcome.to_dict()) == outcome

    def test_summary_excludes_wall_clock(self):
        outcome = ExecOutcome(exit_code=0, stdout="ok", wall_seconds=3.7)
        assert "3.7" not in outcome.summary()
        assert "exit=0" in outcome.summary()


class TestMetricSpecs:
    def test_exactly_one_primary(self):
        with pytest.raises(ValueError):
            validate_metric_specs([MetricSpec("a"), MetricSpec("b")])
        with pytest.raises(ValueError):
            validate_metric_specs(
                [
                    MetricSpec("a", role=MetricRole.PRIMARY),
                    MetricSpec("b", role=MetricRole.PRIMARY),
                ]
            )
        specs = validate_metric_specs([MetricSpec("a", role=MetricRole.PRIMARY)])
        assert specs[0].name == "a"


class TestAddNode:
    def test_root_base_case(self):
        graph = graph_with_root()
        assert len(graph) == 1
        assert graph.root == 0

    def test_single_edge_increments_child_count(self):
        graph = graph_with_root()
        graph.add_node(make_node(1, 0, action=NodeAction.DRAFT))
        assert graph.child_count(0) == 1

    def test_unknown_parent_rejected(self):
        graph = graph_with_root()
        with pytest.raises(UnknownParent):
            graph.add_node(make_node(1, 7))

    def test_duplicate_id_rejected(self):
        graph = graph_with_root()
        graph.add_node(make_node(1, 0))
        with pytest.raises(DuplicateNodeId):
            graph.add_node(make_node(1, 0))

    def test_child_count_unknown_id(self):
        graph = graph_with_root()
        with pytest.raises(UnknownNode):
            graph.child_count(9)

    def test_leaf_has_zero_children(self):
        graph = graph_with_root()
        graph.add_node(make_node(1, 0))
        assert graph.child_count(1) == 0


class TestLineage:
    def test_path_to_root(self):
        graph = graph_with_root()
        graph.add_node(make_node(1, 0))
        graph.add_node(make_node(2, 1))
        graph.add_node(make_node(3, 2))
        assert graph.path_to_root(3) == [0, 1, 2, 3]
        assert graph.depth(3) == 3

    def test_acyclicity_bound(self, rng):
        from conftest import random_graph

        for _ in range(50):
            graph = random_graph(rng)
            for node_id in graph.nodes:
                assert len(graph.path_to_root(node_id)) <= len(graph)
            graph.check_integrity()


class TestNodeInvariants:
    def test_non_root_needs_parent(self):
        with pytest.raises(ValueError):
            Node(id=1, primary_parent=None, action=NodeAction.DRAFT,
                 status=NodeStatus.VALID, metrics={"mAP50": 0.1}).check_invariants()

    def test_valid_needs_metrics(self):
        with pytest.raises(ValueError):
            Node(
                id=1, primary_parent=0, action=NodeAction.DRAFT,
                status=NodeStatus.VALID, metrics={},
            ).check_invariants()

    def test_root_exempt_from_metric_rule(self):
        make_root_node().check_invariants()

    def test_buggy_carries_no_metrics(self):
        with pytest.raises(ValueError):
            Node(
                id=1, primary_parent=0, action=NodeAction.DRAFT,
                status=NodeStatus.BUGGY, metrics={"mAP50": 0.1},
            ).check_invariants()

    def test_merge_parents_must_include_primary(self):
        with pytest.raises(ValueError):
            make_node(3, 1, merge_parents=(2, 4)).check_invariants()
        make_node(3, 1, merge_parents=(1, 2)).check_invariants()

    def test_debug_attempts_bound(self):
        node = Node(
            id=1, primary_parent=0, action=NodeAction.DRAFT,
            status=NodeStatus.BUGGY, debug_attempts=4,
        )
        with pytest.raises(ValueError):
            node.check_invariants(max_debug_depth=3)


class TestImmutability:
    def test_finalized_node_cannot_be_refinalized(self):
        graph = graph_with_root()
        graph.add_node(make_node(1, 0))
        with pytest.raises(ValueError):
            graph.finalize_node(make_node(1, 0))

    def test_signature_stable(self):
        node = make_node(1, 0, metrics={"mAP50": 0.4954})
        assert node.signature() == node.signature()
        assert node.signature(include_timestamps=False) == node.signature(
            include_timestamps=False
        )

    def test_remove_draft_frees_id(self):
        graph = graph_with_root()
        draft = Node(id=1, primary_parent=0, action=NodeAction.DRAFT)
        graph.add_node(draft)
        graph.remove_draft(1)
        assert 1 not in graph
        assert graph.child_count(0) == 0
        graph.add_node(make_node(1, 0))
        assert graph.child_count(0) == 1
