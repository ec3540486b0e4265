"""Trigger evaluation: deciding when an evolution cycle should start.

The engine does not run the retraining whose failure fires the first
trigger; indicator values arrive from outside (a monitoring job, a cron
entry, or the ``check-triggers`` CLI verb reading an indicator file).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError


class TriggerKind(str, Enum):
    RETRAINING_FAILURE = "retraining-failure"
    LABEL_EVOLUTION = "label-evolution"
    OPERATIONAL_CHANGE = "operational-change"
    PERIODIC = "periodic"
    MANUAL = "manual"


@dataclass(frozen=True)
class TriggerEvent:
    kind: TriggerKind
    detail: Mapping[str, Any] = field(default_factory=dict)
    fired_at: float = 0.0

    def describe(self) -> str:
        detail = ", ".join(f"{k}={v}" for k, v in sorted(self.detail.items()))
        return f"{self.kind.value}({detail})" if detail else self.kind.value

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "detail": dict(self.detail), "fired_at": self.fired_at}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TriggerEvent":
        return cls(
            kind=TriggerKind(data["kind"]),
            detail=dict(data.get("detail", {})),
            fired_at=float(data.get("fired_at", 0.0)),
        )


@dataclass(frozen=True)
class IndicatorState:
    """Tracked indicators against which observations are judged."""

    metric_floor: float
    known_labels: frozenset[str] = frozenset()
    last_evolution_at: float = 0.0
    period_seconds: float = 0.0
    last_refresh_metric: float | None = None
    ops_change_flag: bool = False


@dataclass(frozen=True)
class Observation:
    metric: float | None = None
    labels: frozenset[str] | None = None
    ops_note: str | None = None


def evaluate_triggers(
    state: IndicatorState, now: float, observed: Observation
) -> TriggerEvent | None:
    """Return the highest-priority firing trigger, or None.

    Fixed priority: retraining failure, then label evolution, then
    operational change, then periodic.
    """
    if observed.metric is not None and observed.metric < state.metric_floor:
        return TriggerEvent(
            TriggerKind.RETRAINING_FAILURE,
            {"observed_metric": observed.metric, "metric_floor": state.metric_floor},
            fired_at=now,
        )
    if observed.labels is not None:
        added = sorted(observed.labels - state.known_labels)
        if added:
            return TriggerEvent(
                TriggerKind.LABEL_EVOLUTION, {"added_labels": added}, fired_at=now
            )
    if observed.ops_note or state.ops_change_flag:
        return TriggerEvent(
            TriggerKind.OPERATIONAL_CHANGE,
            {"note": observed.ops_note or "flagged by indicator state"},
            fired_at=now,
        )
    if state.period_seconds > 0 and now - state.last_evolution_at >= state.period_seconds:
        return TriggerEvent(
            TriggerKind.PERIODIC,
            {
                "elapsed_seconds": now - state.last_evolution_at,
                "period_seconds": state.period_seconds,
            },
            fired_at=now,
        )
    return None


def load_indicator_file(path: Path | str) -> tuple[IndicatorState, Observation]:
    """Read an indicator document (YAML or JSON) into state + observation.

    Expected keys: ``metric_floor``, ``known_labels``, ``last_evolution_at``,
    ``period_seconds``, ``ops_change_flag``, and an ``observed`` block with
    ``metric``, ``labels``, ``ops_note``.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"indicator file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, Mapping):
        raise ConfigError("indicator file must contain a mapping")
    try:
        state = IndicatorState(
            metric_floor=float(data.get("metric_floor", 0.0)),
            known_labels=frozenset(str(l) for l in data.get("known_labels", ())),
            last_evolution_at=float(data.get("last_evolution_at", 0.0)),
            period_seconds=float(data.get("period_seconds", 0.0)),
            last_refresh_metric=(
                None
                if data.get("last_refresh_metric") is None
                else float(data["last_refresh_metric"])
            ),
            ops_change_flag=bool(data.get("ops_change_flag", False)),
        )
        observed_raw = data.get("observed", {}) or {}
        observation = Observation(
            metric=None if observed_raw.get("metric") is None else float(observed_raw["metric"]),
            labels=(
                None
                if observed_raw.get("labels") is None
                else frozenset(str(l) for l in observed_raw["labels"])
            ),
            ops_note=observed_raw.get("ops_note"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad indicator file {path}: {exc}") from exc
    return state, observation


def check_triggers_now(path: Path | str, now: float | None = None) -> TriggerEvent | None:
    state, observation = load_indicator_file(path)
    return evaluate_triggers(state, time.time() if now is None else now, observation)
