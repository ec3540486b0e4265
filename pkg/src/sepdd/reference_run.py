"""Bundled reference trace of a recorded industrial tuning run.

This is golden-run data: the tree shape, per-node metric pairs, and token
totals of one recorded detector-tuning run, packaged so the whole engine can
re-enact it deterministically. The re-enactment drives the real journal,
real operator plumbing, and the real subprocess sandbox (the scripted code
creator emits tiny runnable programs that print the recorded metrics); the
expansion order comes from the recorded schedule because a recorded run's
scheduler state is not recoverable from metrics alone.

Node 0 of the recorded graph is the root; nodes 1..18 are expansions.
Node 11 failed every debug attempt and finalized invalid.
"""

from __future__ import annotations

import re
import threading
from pathlib import Path
from typing import Mapping

from .backends import Completion, CompletionRequest, RecordingBackend, write_playback_table
from .engine import EvolutionEngine, RunBudget, RunResult, TaskSpec
from .gateway import TokenLedger
from .journal import Journal
from .model import DEFAULT_METRIC_SPECS, TokenUsage
from .operators import OP_ANALYZE, OP_CODE, OP_IDEA, OP_REFINE
from .sandbox import CHECKER_BUILTIN, ExecLimits, ProcessSandbox
from .strategy import ScheduledExpansion, StrategyConfig

# Recorded tree: node id -> primary parent.
REFERENCE_PARENTS: dict[int, int] = {
    1: 0, 2: 0, 3: 2, 4: 2, 5: 1, 6: 1, 7: 4, 8: 4, 9: 6,
    10: 6, 11: 10, 12: 10, 13: 9, 14: 9, 15: 10, 16: 10, 17: 13, 18: 13,
}

# Recorded metric pairs (mAP50, mAP50-95); None marks the invalid node.
REFERENCE_METRICS: dict[int, tuple[float, float] | None] = {
    1: (0.4433, 0.2764),
    2: (0.4325, 0.2718),
    3: (0.4723, 0.2827),
    4: (0.4106, 0.2685),
    5: (0.4106, 0.4106),
    6: (0.4578, 0.2970),
    7: (0.4389, 0.2802),
    8: (0.4114, 0.2433),
    9: (0.4592, 0.3051),
    10: (0.4954, 0.3069),
    11: None,
    12: (0.4549, 0.2767),
    13: (0.4609, 0.3045),
    14: (0.3919, 0.2552),
    15: (0.4581, 0.2777),
    16: (0.4909, 0.2904),
    17: (0.4561, 0.2942),
    18: (0.4736, 0.2935),
}

REFERENCE_BEST = 10
REFERENCE_PRIMARY_EDGE = [0, 1, 6, 10]
REFERENCE_NODE_COUNT = 18
REFERENCE_MAX_DEBUG_DEPTH = 3

# Recorded run-level token totals.
REFERENCE_INPUT_TOKENS = 1_360_000
REFERENCE_OUTPUT_TOKENS = 230_000

# Operator calls per node in the re-enactment: a clean node costs
# idea + code + 2 analyzer calls; the failing node costs
# idea + code + 3 x (analyzer + refiner).
_CLEAN_NODE_CALLS = 4
_FAILING_NODE_CALLS = 2 + 2 * REFERENCE_MAX_DEBUG_DEPTH
REFERENCE_CALL_COUNT = 17 * _CLEAN_NODE_CALLS + _FAILING_NODE_CALLS


def reference_schedule() -> tuple[ScheduledExpansion, ...]:
    """The recorded expansion order: creation order equals node id order."""
    entries = []
    for node_id in sorted(REFERENCE_PARENTS):
        parent = REFERENCE_PARENTS[node_id]
        action = "draft" if parent == 0 else "improve"
        entries.append(ScheduledExpansion(parent=parent, action=action))
    return tuple(entries)


def reference_strategy() -> StrategyConfig:
    # merge_period above the node budget: the recorded run performed no merge.
    return StrategyConfig(
        k=3,
        merge_period=100,
        merge_arity=2,
        initial_drafts=2,
        expansion_schedule=reference_schedule(),
    )


def reference_budget() -> RunBudget:
    return RunBudget(max_nodes=REFERENCE_NODE_COUNT, max_debug_depth=REFERENCE_MAX_DEBUG_DEPTH)


def reference_task() -> TaskSpec:
    return TaskSpec(
        description=(
            "Tune an object-detection training pipeline for electroluminescence "
            "panel imagery with long-tailed defect classes."
        ),
        data_description=(
            "814 training images, 90 validation images, YOLO-format boxes, "
            "heterogeneous panel formats and low resolution."
        ),
        requirements=(
            "Evaluate on the validation split and report mAP50 and mAP50-95."
        ),
    )


def _usage_for_call(index: int) -> TokenUsage:
    """Deterministic per-call allocation that sums to the recorded totals."""
    base_in, rem_in = divmod(REFERENCE_INPUT_TOKENS, REFERENCE_CALL_COUNT)
    base_out, rem_out = divmod(REFERENCE_OUTPUT_TOKENS, REFERENCE_CALL_COUNT)
    if index >= REFERENCE_CALL_COUNT:
        return TokenUsage(0, 0)
    return TokenUsage(
        base_in + (1 if index < rem_in else 0),
        base_out + (1 if index < rem_out else 0),
    )


def _metric_script(node_id: int) -> str:
    map50, map5095 = REFERENCE_METRICS[node_id]  # type: ignore[misc]
    return (
        "import os\n"
        "debug = os.environ.get(\"SEPDD_DEBUG\") == \"1\"\n"
        "epochs = 1 if debug else 40\n"
        "for _ in range(epochs):\n"
        "    pass\n"
        f"print(\"SEPDD_METRIC mAP50={map50:.4f}\")\n"
        f"print(\"SEPDD_METRIC mAP50-95={map5095:.4f}\")\n"
    )


def _failing_script(node_id: int, attempt: int) -> str:
    return (
        "import sys\n"
        f"# candidate attempt {attempt} for exploration {node_id}\n"
        "sys.stderr.write(\"RuntimeError: focal loss flags are unsupported"
        " by this trainer\\n\")\n"
        "sys.exit(1)\n"
    )


_PRIOR_ATTEMPT_RE = re.compile(r"^Prior attempt \d+ analysis:", re.MULTILINE)


class ReferenceBackend:
    """Scripted completion backend that replays the recorded run.

    Responses are a pure function of (operator, node id, prompt): the code
    creator emits a runnable program printing the recorded metrics (or a
    failing program for the invalid node), the refiner emits the next failed
    attempt, and the idea/analyzer responses are fixed texts. Per-call token
    usage follows the recorded allocation.
    """

    kind = "scripted-playback"

    def __init__(self) -> None:
        self._call_index = 0
        self._lock = threading.Lock()

    def _next_usage(self) -> TokenUsage:
        with self._lock:
            usage = _usage_for_call(self._call_index)
            self._call_index += 1
            return usage

    def complete(self, request: CompletionRequest) -> Completion:
        usage = self._next_usage()
        node_id = request.node_id or 0
        if request.operator == OP_IDEA:
            text = (
                f"1. adjust augmentation recipe: variation {node_id} of mosaic and "
                "mixup strengths matched to the backbone.\n"
                f"2. rebalance rare classes: oversampling tuned for exploration {node_id}."
            )
        elif request.operator == OP_CODE:
            if REFERENCE_METRICS.get(node_id) is None:
                text = "```python\n" + _failing_script(node_id, 0) + "```"
            else:
                text = "```python\n" + _metric_script(node_id) + "```"
        elif request.operator == OP_REFINE:
            attempt = len(_PRIOR_ATTEMPT_RE.findall(request.prompt_text)) + 1
            text = "```python\n" + _failing_script(node_id, attempt) + "```"
        elif request.operator == OP_ANALYZE:
            if REFERENCE_METRICS.get(node_id) is None:
                text = (
                    "The trainer rejects the focal-loss flags; the run exits "
                    "before evaluation, so no metrics are produced."
                )
            else:
                text = "Training completed and validation metrics were printed."
        else:
            text = "1. combine the strongest recipes: no merge occurred in this run."
        return Completion(text=text, usage=usage)


def reference_sandbox(run_dir: Path) -> ProcessSandbox:
    """Real subprocess sandbox sized for the tiny replay programs."""
    return ProcessSandbox(
        run_dir,
        ExecLimits(full_timeout=30.0, debug_timeout=15.0, kill_grace=1.0),
        checker=CHECKER_BUILTIN,
    )


def build_reference_engine(
    run_dir: Path | str,
    *,
    backend=None,
    record: bool = False,
) -> tuple[EvolutionEngine, TokenLedger, RecordingBackend | None]:
    run_dir = Path(run_dir)
    ledger = TokenLedger()
    inner = backend if backend is not None else ReferenceBackend()
    recorder = RecordingBackend(inner) if record else None
    engine = EvolutionEngine(
        journal=Journal.create(run_dir),
        backend=recorder if recorder is not None else inner,
        sandbox=reference_sandbox(run_dir),
        ledger=ledger,
        task=reference_task(),
        specs=DEFAULT_METRIC_SPECS,
        strategy=reference_strategy(),
        budget=reference_budget(),
        run_id="reference-replay",
        seed=7,
    )
    return engine, ledger, recorder


def run_reference_replay(
    run_dir: Path | str, *, record: bool = False
) -> tuple[RunResult, TokenLedger, RecordingBackend | None]:
    """Re-enact the recorded run into ``run_dir``; returns the run result."""
    engine, ledger, recorder = build_reference_engine(run_dir, record=record)
    result = engine.run()
    engine.journal.close()
    return result, ledger, recorder


def reference_ledger() -> TokenLedger:
    """The recorded run's ledger, reconstructed entry by entry."""
    ledger = TokenLedger()
    index = 0
    for node_id in sorted(REFERENCE_PARENTS):
        if REFERENCE_METRICS[node_id] is None:
            operators = [OP_IDEA, OP_CODE] + [OP_ANALYZE, OP_REFINE] * REFERENCE_MAX_DEBUG_DEPTH
        else:
            operators = [OP_IDEA, OP_CODE, OP_ANALYZE, OP_ANALYZE]
        for operator in operators:
            ledger.record(node_id, operator, _usage_for_call(index))
            index += 1
    return ledger


def materialize_reference_run(dest_dir: Path | str) -> Path:
    """Write a self-contained replay bundle: playback table + config file.

    Runs the re-enactment once in a scratch directory while recording, dumps
    the recordings as a fingerprint table, and emits a config whose ``run``
    invocation reproduces the recorded trace through the CLI. Returns the
    config path.
    """
    import yaml

    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    scratch = dest / "bootstrap"
    _, _, recorder = run_reference_replay(scratch, record=True)
    assert recorder is not None
    table_dir = dest / "table"
    write_playback_table(recorder.calls, table_dir)

    task = reference_task()
    config = {
        "run_dir": "run",
        "seed": 7,
        "run_id": "reference-replay",
        "task": {
            "description": task.description,
            "data": task.data_description,
            "requirements": task.requirements,
        },
        "metrics": [s.to_dict() for s in DEFAULT_METRIC_SPECS],
        "strategy": reference_strategy().to_dict(),
        "budget": reference_budget().to_dict(),
        "backend": {"kind": "playback-table", "table": "table"},
        "sandbox": {
            "checker": CHECKER_BUILTIN,
            "debug_timeout": 15.0,
            "full_timeout": 30.0,
        },
    }
    config_path = dest / "config.yaml"
    config_path.write_text(yaml.safe_dump(config, sort_keys=True), encoding="utf-8")
    return config_path
