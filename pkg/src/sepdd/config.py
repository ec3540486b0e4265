"""Run configuration: loading, validation, overrides, and engine assembly.

A run is configured by a single YAML document. Exactly one backend source
must be configured: a live gateway, a fingerprint playback table, or an
ordered playback script. ``--set key.path=value`` overrides individual keys
at load time. The config hash recorded in the journal covers everything
except ``run_dir`` (moving a run directory is not a config change) so that
resume can detect drift.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from .backends import (
    FilePlaybackBackend,
    OperatorBackend,
    RecordingBackend,
    SequenceScriptBackend,
)
from .engine import EvolutionEngine, RunBudget, TaskSpec
from .errors import ConfigError
from .gateway import (
    DEFAULT_MODEL_MAP,
    GatewayConfig,
    LiveGatewayBackend,
    TokenBudget,
    TokenLedger,
)
from .journal import Journal
from .model import DEFAULT_METRIC_SPECS, MetricSpec, validate_metric_specs
from .sandbox import (
    CHECKER_BUILTIN,
    DEFAULT_CHECKER,
    DEFAULT_INTERPRETER,
    ExecLimits,
    ProcessSandbox,
)
from .strategy import StrategyConfig

BACKEND_GATEWAY = "gateway"
BACKEND_PLAYBACK_TABLE = "playback-table"
BACKEND_PLAYBACK_SCRIPT = "playback-script"


@dataclass(frozen=True)
class SandboxSettings:
    interpreter: tuple[str, ...] = DEFAULT_INTERPRETER
    checker: tuple[str, ...] | str = DEFAULT_CHECKER
    debug_timeout: float = 120.0
    full_timeout: float = 600.0
    max_captured_bytes: int = 1_000_000
    kill_grace: float = 1.0
    data_dir: str | None = None

    def limits(self) -> ExecLimits:
        return ExecLimits(
            full_timeout=self.full_timeout,
            debug_timeout=self.debug_timeout,
            max_captured_bytes=self.max_captured_bytes,
            kill_grace=self.kill_grace,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "interpreter": list(self.interpreter),
            "checker": self.checker if isinstance(self.checker, str) else list(self.checker),
            "debug_timeout": self.debug_timeout,
            "full_timeout": self.full_timeout,
            "max_captured_bytes": self.max_captured_bytes,
            "kill_grace": self.kill_grace,
            "data_dir": self.data_dir,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SandboxSettings":
        checker = data.get("checker", list(DEFAULT_CHECKER))
        return cls(
            interpreter=tuple(data.get("interpreter", DEFAULT_INTERPRETER)),
            checker=checker if isinstance(checker, str) else tuple(checker),
            debug_timeout=float(data.get("debug_timeout", 120.0)),
            full_timeout=float(data.get("full_timeout", 600.0)),
            max_captured_bytes=int(data.get("max_captured_bytes", 1_000_000)),
            kill_grace=float(data.get("kill_grace", 1.0)),
            data_dir=data.get("data_dir"),
        )


@dataclass(frozen=True)
class RunConfig:
    run_dir: Path
    task: TaskSpec
    metric_specs: tuple[MetricSpec, ...] = DEFAULT_METRIC_SPECS
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    budget: RunBudget = field(default_factory=RunBudget)
    backend_kind: str = BACKEND_PLAYBACK_TABLE
    gateway: GatewayConfig | None = None
    playback_table: Path | None = None
    playback_script: Path | None = None
    record: bool = False
    sandbox: SandboxSettings = field(default_factory=SandboxSettings)
    summaries_limit: int = 5
    fallback_patterns: tuple[tuple[str, str], ...] = ()
    seed: int = 0
    run_id: str = ""

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "run_dir": str(self.run_dir),
            "seed": self.seed,
            "run_id": self.run_id,
            "task": {
                "description": self.task.description,
                "data": self.task.data_description,
                "requirements": self.task.requirements,
            },
            "metrics": [s.to_dict() for s in self.metric_specs],
            "strategy": self.strategy.to_dict(),
            "budget": self.budget.to_dict(),
            "backend": self._backend_dict(),
            "sandbox": self.sandbox.to_dict(),
            "summaries_limit": self.summaries_limit,
            "fallback_patterns": [list(p) for p in self.fallback_patterns],
        }
        return data

    def _backend_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.backend_kind, "record": self.record}
        if self.gateway is not None:
            out["gateway"] = {
                "base_url": self.gateway.base_url,
                "model_map": dict(self.gateway.model_map),
                "request_timeout": self.gateway.request_timeout,
                "max_retries": self.gateway.max_retries,
                "backoff_base_ms": self.gateway.backoff_base_ms,
                "temperature": self.gateway.temperature,
                "max_output_tokens": self.gateway.max_output_tokens,
                "budget": self.gateway.budget.to_dict() if self.gateway.budget else None,
                "api_key_env": self.gateway.api_key_env,
            }
        if self.playback_table is not None:
            out["table"] = str(self.playback_table)
        if self.playback_script is not None:
            out["script"] = str(self.playback_script)
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        data = self.to_dict()
        data.pop("run_dir", None)
        canon = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    # -- loading ---------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "RunConfig":
        # Anchor at an absolute base so the re-serialized config (stored in
        # the run directory) stays loadable from any working directory.
        base = (Path(base_dir) if base_dir is not None else Path.cwd()).resolve()

        def resolve(path_str: str) -> Path:
            path = Path(path_str)
            return path if path.is_absolute() else base / path

        try:
            task_raw = dict(data.get("task", {}))
            task = TaskSpec(
                description=_text_or_file(task_raw, "description", resolve),
                data_description=_text_or_file(task_raw, "data", resolve),
                requirements=_text_or_file(task_raw, "requirements", resolve),
            )
            if not task.description.strip():
                raise ConfigError("task.description must be non-empty")
            metrics_raw = data.get("metrics")
            specs = (
                tuple(MetricSpec.from_dict(m) for m in metrics_raw)
                if metrics_raw
                else DEFAULT_METRIC_SPECS
            )
            validate_metric_specs(specs)

            backend_raw = dict(data.get("backend", {}))
            sources = [
                key for key in ("gateway", "table", "script") if backend_raw.get(key)
            ]
            if len(sources) != 1:
                raise ConfigError(
                    "exactly one backend source required (backend.gateway, "
                    f"backend.table, or backend.script); found {sources or 'none'}"
                )
            kind = backend_raw.get("kind")
            inferred = {
                "gateway": BACKEND_GATEWAY,
                "table": BACKEND_PLAYBACK_TABLE,
                "script": BACKEND_PLAYBACK_SCRIPT,
            }[sources[0]]
            if kind is not None and kind != inferred:
                raise ConfigError(f"backend.kind {kind!r} does not match source {sources[0]!r}")

            gateway = None
            playback_table = None
            playback_script = None
            if inferred == BACKEND_GATEWAY:
                graw = dict(backend_raw["gateway"])
                budget_raw = graw.get("budget")
                gateway = GatewayConfig(
                    base_url=str(graw["base_url"]),
                    model_map=dict(graw.get("model_map", DEFAULT_MODEL_MAP)),
                    request_timeout=float(graw.get("request_timeout", 60.0)),
                    max_retries=int(graw.get("max_retries", 3)),
                    backoff_base_ms=float(graw.get("backoff_base_ms", 250.0)),
                    temperature=(
                        None if graw.get("temperature") is None else float(graw["temperature"])
                    ),
                    max_output_tokens=(
                        None
                        if graw.get("max_output_tokens") is None
                        else int(graw["max_output_tokens"])
                    ),
                    budget=(
                        TokenBudget(
                            max_input=budget_raw.get("max_input"),
                            max_output=budget_raw.get("max_output"),
                            max_total=budget_raw.get("max_total"),
                        )
                        if budget_raw
                        else None
                    ),
                    api_key_env=str(graw.get("api_key_env", "SEPDD_API_KEY")),
                )
            elif inferred == BACKEND_PLAYBACK_TABLE:
                playback_table = resolve(str(backend_raw["table"]))
                if not playback_table.is_dir():
                    raise ConfigError(f"playback table directory not found: {playback_table}")
            else:
                playback_script = resolve(str(backend_raw["script"]))
                if not playback_script.is_file():
                    raise ConfigError(f"playback script not found: {playback_script}")

            run_dir_raw = data.get("run_dir")
            if not run_dir_raw:
                raise ConfigError("run_dir is required")

            return cls(
                run_dir=resolve(str(run_dir_raw)),
                task=task,
                metric_specs=specs,
                strategy=StrategyConfig.from_dict(data.get("strategy", {})),
                budget=RunBudget.from_dict(data.get("budget", {})),
                backend_kind=inferred,
                gateway=gateway,
                playback_table=playback_table,
                playback_script=playback_script,
                record=bool(backend_raw.get("record", False)),
                sandbox=SandboxSettings.from_dict(data.get("sandbox", {})),
                summaries_limit=int(data.get("summaries_limit", 5)),
                fallback_patterns=tuple(
                    (str(name), str(pattern))
                    for name, pattern in data.get("fallback_patterns", ())
                ),
                seed=int(data.get("seed", 0)),
                run_id=str(data.get("run_id", "")),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    @classmethod
    def load(
        cls, path: Path | str, overrides: Sequence[str] = ()
    ) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        for override in overrides:
            data = apply_override(data, override)
        return cls.from_dict(data, base_dir=path.parent)

    # -- service assembly --------------------------------------------------------

    def build_backend(self, ledger: TokenLedger) -> OperatorBackend:
        if self.backend_kind == BACKEND_GATEWAY:
            assert self.gateway is not None
            backend: OperatorBackend = LiveGatewayBackend(self.gateway, ledger=ledger)
        elif self.backend_kind == BACKEND_PLAYBACK_TABLE:
            assert self.playback_table is not None
            backend = FilePlaybackBackend(self.playback_table)
        else:
            assert self.playback_script is not None
            backend = SequenceScriptBackend.from_file(self.playback_script)
        if self.record:
            backend = RecordingBackend(backend, record_dir=self.run_dir / "recordings")
        return backend

    def build_sandbox(self) -> ProcessSandbox:
        return ProcessSandbox(
            self.run_dir,
            self.sandbox.limits(),
            interpreter=self.sandbox.interpreter,
            checker=self.sandbox.checker,
            data_dir=Path(self.sandbox.data_dir) if self.sandbox.data_dir else None,
        )

    def build_engine(self, journal: Journal, ledger: TokenLedger) -> EvolutionEngine:
        return EvolutionEngine(
            journal=journal,
            backend=self.build_backend(ledger),
            sandbox=self.build_sandbox(),
            ledger=ledger,
            task=self.task,
            specs=self.metric_specs,
            strategy=self.strategy,
            budget=self.budget,
            token_budget=self.gateway.budget if self.gateway else None,
            run_id=self.run_id,
            config_hash=self.config_hash(),
            seed=self.seed,
            summaries_limit=self.summaries_limit,
            fallback_patterns=self.fallback_patterns,
        )


def _text_or_file(raw: Mapping[str, Any], key: str, resolve) -> str:
    """Inline text, or ``<key>_file`` pointing at a file that must exist."""
    file_key = f"{key}_file"
    if raw.get(file_key):
        path = resolve(str(raw[file_key]))
        if not path.is_file():
            raise ConfigError(f"task.{file_key} references missing file: {path}")
        return path.read_text(encoding="utf-8")
    return str(raw.get(key, "") or "")


def apply_override(data: dict[str, Any], override: str) -> dict[str, Any]:
    """Apply one ``dotted.key=value`` override; values parse as YAML."""
    if "=" not in override:
        raise ConfigError(f"override must look like key.path=value, got {override!r}")
    key_path, _, raw_value = override.partition("=")
    keys = [k for k in key_path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"empty key path in override {override!r}")
    try:
        value = yaml.safe_load(raw_value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw_value!r}: {exc}") from exc
    target = data
    for key in keys[:-1]:
        nxt = target.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            target[key] = nxt
        target = nxt
    target[keys[-1]] = value
    return data
