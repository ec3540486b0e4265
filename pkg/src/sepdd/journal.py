"""Append-only run journal and deterministic replay.

The journal is the single source of truth for a run. Every state change is
appended as one JSON object per line to ``<run_dir>/journal.ndjson``; the
graph, strategy counters, and final report can all be reconstructed from it.
Events are never rewritten. ``NodeFinalized`` embeds the full node snapshot,
so the journal is self-contained for resume without a side store.

Wire format (one event per line, UTF-8):

    {"seq": <int>, "kind": <str>, "ts": <float>, "payload": {...}}

Event kinds and payload fields:

    run_started        run_id, config_hash, metric_specs, strategy, budget, seed
    trigger_fired      trigger {kind, detail, fired_at}
    node_created       id, primary_parent, merge_parents, action
    node_finalized     node {<full Node snapshot>}
    merge_performed    id, parents, primary_parent
    branch_terminated  node_id, buggy_parent
    node_abandoned     id, reason            (resume marker for draft tails)
    run_finished       best, primary_edge, reason, nodes_produced, tokens
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    CorruptJournal,
    MalformedEvent,
    MissingRunStarted,
    SequenceGap,
    UnknownNode,
)
from .model import EvolutionGraph, MetricSpec, Node, NodeStatus, TokenUsage

logger = logging.getLogger(__name__)

JOURNAL_FILENAME = "journal.ndjson"


class EventKind(str, Enum):
    RUN_STARTED = "run_started"
    TRIGGER_FIRED = "trigger_fired"
    NODE_CREATED = "node_created"
    NODE_FINALIZED = "node_finalized"
    MERGE_PERFORMED = "merge_performed"
    BRANCH_TERMINATED = "branch_terminated"
    NODE_ABANDONED = "node_abandoned"
    RUN_FINISHED = "run_finished"


@dataclass(frozen=True)
class JournalEvent:
    seq: int
    kind: EventKind
    timestamp: float
    payload: dict[str, Any]

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "kind": self.kind.value, "ts": self.timestamp, "payload": self.payload},
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "JournalEvent":
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedEvent(f"invalid event JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise MalformedEvent("event line must be a JSON object")
        try:
            return cls(
                seq=int(raw["seq"]),
                kind=EventKind(raw["kind"]),
                timestamp=float(raw.get("ts", 0.0)),
                payload=dict(raw.get("payload", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedEvent(f"malformed event: {exc}") from exc


class Journal:
    """Serialized single-writer append log backed by an NDJSON file."""

    def __init__(self, path: Path | str, *, next_seq: int = 0, fsync: bool = False) -> None:
        self.path = Path(path)
        self._next_seq = next_seq
        self._fsync = fsync
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    @classmethod
    def create(cls, run_dir: Path | str, *, fsync: bool = False) -> "Journal":
        path = Path(run_dir) / JOURNAL_FILENAME
        if path.exists() and path.stat().st_size > 0:
            raise CorruptJournal(f"journal already exists at {path}")
        return cls(path, next_seq=0, fsync=fsync)

    @classmethod
    def open_append(cls, run_dir: Path | str, *, fsync: bool = False) -> "Journal":
        """Reopen an existing journal for resume; seq continues gap-free."""
        path = Path(run_dir) / JOURNAL_FILENAME
        events = read_events(path)
        next_seq = events[-1].seq + 1 if events else 0
        return cls(path, next_seq=next_seq, fsync=fsync)

    def append(self, kind: EventKind, payload: Mapping[str, Any]) -> JournalEvent:
        with self._lock:
            event = JournalEvent(
                seq=self._next_seq,
                kind=kind,
                timestamp=time.time(),
                payload=dict(payload),
            )
            self._fh.write(event.to_json() + "\n")
            self._fh.flush()
            if self._fsync:
                import os

                os.fsync(self._fh.fileno())
            self._next_seq += 1
            return event

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()

    def __enter__(self) -> "Journal":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def read_events(path: Path | str) -> list[JournalEvent]:
    """Load all events from an NDJSON journal file.

    A partial final line (interrupted write) is dropped with a warning;
    malformed lines elsewhere raise :class:`CorruptJournal`.
    """
    path = Path(path)
    if not path.exists():
        raise CorruptJournal(f"no journal at {path}")
    events: list[JournalEvent] = []
    lines = path.read_text(encoding="utf-8").splitlines()
    for index, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            events.append(JournalEvent.from_json(line))
        except MalformedEvent as exc:
            if index == len(lines) - 1:
                logger.warning("dropping partial trailing journal line: %s", exc)
                break
            raise CorruptJournal(f"line {index}: {exc}") from exc
    return events


@dataclass
class RunReplay:
    """Everything reconstructable from a journal stream."""

    graph: EvolutionGraph
    run_id: str = ""
    config_hash: str = ""
    metric_specs: tuple[MetricSpec, ...] = ()
    strategy: dict[str, Any] = field(default_factory=dict)
    budget: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    trigger: dict[str, Any] | None = None
    finished: dict[str, Any] | None = None
    draft_tail: Node | None = None
    merges: list[dict[str, Any]] = field(default_factory=list)
    terminated: list[dict[str, Any]] = field(default_factory=list)
    abandoned: list[dict[str, Any]] = field(default_factory=list)
    valid_since_merge: int = 0
    last_finalized: int | None = None
    token_totals: TokenUsage = field(default_factory=TokenUsage)
    event_count: int = 0


def replay_run(events: Sequence[JournalEvent]) -> RunReplay:
    """Rebuild the run state from an event stream; deterministic.

    Raises :class:`MissingRunStarted` on an empty or misordered stream and
    :class:`SequenceGap` when seq numbers are not contiguous from zero.
    """
    events = list(events)
    if not events or events[0].kind is not EventKind.RUN_STARTED:
        raise MissingRunStarted("journal must begin with run_started")
    for position, event in enumerate(events):
        if event.seq != position:
            raise SequenceGap(position, event.seq)
        if position > 0 and event.kind is EventKind.RUN_STARTED:
            raise MalformedEvent("run_started may only appear once")

    started = events[0].payload
    graph = EvolutionGraph(run_id=str(started.get("run_id", "")))
    state = RunReplay(
        graph=graph,
        run_id=graph.run_id,
        config_hash=str(started.get("config_hash", "")),
        metric_specs=tuple(
            MetricSpec.from_dict(s) for s in started.get("metric_specs", ())
        ),
        strategy=dict(started.get("strategy", {})),
        budget=dict(started.get("budget", {})),
        seed=int(started.get("seed", 0)),
        event_count=len(events),
    )

    drafts: dict[int, Node] = {}
    for event in events[1:]:
        payload = event.payload
        if event.kind is EventKind.TRIGGER_FIRED:
            state.trigger = dict(payload.get("trigger", {}))
        elif event.kind is EventKind.NODE_CREATED:
            node = Node(
                id=int(payload["id"]),
                primary_parent=(
                    None if payload.get("primary_parent") is None else int(payload["primary_parent"])
                ),
                action=_action_from(payload),
                merge_parents=tuple(int(p) for p in payload.get("merge_parents", ())),
                created_at=event.timestamp,
            )
            graph.add_node(node)
            drafts[node.id] = node
        elif event.kind is EventKind.NODE_FINALIZED:
            node = Node.from_dict(payload.get("node", {}))
            if node.id not in drafts:
                raise MalformedEvent(f"node_finalized for unknown draft {node.id}")
            graph.finalize_node(node)
            del drafts[node.id]
            state.last_finalized = node.id
            state.token_totals = state.token_totals + node.tokens
            if node.status is NodeStatus.VALID and not node.is_root:
                state.valid_since_merge += 1
        elif event.kind is EventKind.MERGE_PERFORMED:
            state.merges.append(dict(payload))
            state.valid_since_merge = 0
        elif event.kind is EventKind.BRANCH_TERMINATED:
            state.terminated.append(dict(payload))
        elif event.kind is EventKind.NODE_ABANDONED:
            node_id = int(payload["id"])
            if node_id not in drafts:
                raise MalformedEvent(f"node_abandoned for non-draft {node_id}")
            graph.remove_draft(node_id)
            del drafts[node_id]
            state.abandoned.append(dict(payload))
        elif event.kind is EventKind.RUN_FINISHED:
            state.finished = dict(payload)
        else:  # pragma: no cover - enum is closed
            raise MalformedEvent(f"unhandled event kind {event.kind}")

    if drafts:
        if len(drafts) > 1:
            raise MalformedEvent("more than one unfinalized draft in journal")
        state.draft_tail = next(iter(drafts.values()))
    graph.check_integrity()
    return state


def _action_from(payload: Mapping[str, Any]) -> Any:
    from .model import NodeAction

    try:
        return NodeAction(payload["action"])
    except (KeyError, ValueError) as exc:
        raise MalformedEvent(f"bad node_created action: {exc}") from exc


def replay_journal(events: Sequence[JournalEvent]) -> EvolutionGraph:
    """Reconstruct just the evolution graph from an event stream."""
    return replay_run(events).graph


def load_run(run_dir: Path | str) -> RunReplay:
    """Read and replay the journal under ``run_dir``."""
    return replay_run(read_events(Path(run_dir) / JOURNAL_FILENAME))


def events_equal_modulo_time(
    a: Iterable[JournalEvent], b: Iterable[JournalEvent]
) -> bool:
    """Compare two event streams ignoring timestamps inside events and payloads."""

    def strip(event: JournalEvent) -> tuple[int, str, str]:
        payload = json.loads(json.dumps(event.payload))
        payload.pop("wall_seconds", None)
        node = payload.get("node")
        if isinstance(node, dict):
            node.pop("created_at", None)
            exec_outcome = node.get("exec_outcome")
            if isinstance(exec_outcome, dict):
                exec_outcome.pop("wall_seconds", None)
        return (
            event.seq,
            event.kind.value,
            json.dumps(payload, sort_keys=True, separators=(",", ":")),
        )

    return [strip(e) for e in a] == [strip(e) for e in b]
