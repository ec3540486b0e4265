"""Candidate-code sandbox: syntax check, debug run, full run, metric parsing.

Candidates are plain single-file programs executed in a child process inside
a per-node workspace. Debug mode is signalled solely through the
``SEPDD_DEBUG=1`` environment variable; the prompt rules require generated
code to shrink its work when it is set. Metrics travel over stdout using the
line grammar::

    SEPDD_METRIC <name>=<decimal>

with ``name`` in ``[A-Za-z0-9_.-]+``. Duplicate names resolve last-wins.
"""

from __future__ import annotations

import json
import logging
import os
import re
import shutil
import signal
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import WorkspaceUnwritable
from .model import EXIT_SPAWN_FAILURE, EXIT_TIMEOUT, ExecMode, ExecOutcome

logger = logging.getLogger(__name__)

SOLUTION_FILENAME = "solution.src"
STDOUT_FILENAME = "stdout.log"
STDERR_FILENAME = "stderr.log"
OUTCOME_FILENAME = "outcome.meta"

ENV_DEBUG = "SEPDD_DEBUG"
ENV_DATA_DIR = "SEPDD_DATA_DIR"

METRIC_NAME_RE = r"[A-Za-z0-9_.-]+"
_DECIMAL_RE = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
METRIC_LINE_RE = re.compile(rf"^SEPDD_METRIC ({METRIC_NAME_RE})=({_DECIMAL_RE})$")
_METRIC_PREFIX_RE = re.compile(r"^SEPDD_METRIC\b")


def extract_metrics(
    stdout_text: str,
    fallback_patterns: Sequence[tuple[str, str]] = (),
) -> dict[str, float]:
    """Parse metric lines out of captured stdout; never raises.

    Lines that start with ``SEPDD_METRIC`` but do not match the grammar are
    logged as warnings and skipped. ``fallback_patterns`` is an ordered list
    of ``(metric_name, regex)`` pairs applied over the whole text, only for
    names the protocol lines did not already capture; the regex's first
    group must be the value and the last match wins.
    """
    metrics: dict[str, float] = {}
    if not isinstance(stdout_text, str):
        return metrics
    for line in stdout_text.splitlines():
        line = line.rstrip("\r")
        match = METRIC_LINE_RE.match(line)
        if match:
            try:
                metrics[match.group(1)] = float(match.group(2))
            except (ValueError, OverflowError):
                logger.warning("unparsable metric value in line: %r", line)
            continue
        if _METRIC_PREFIX_RE.match(line):
            logger.warning("malformed metric line ignored: %r", line)
    for name, pattern in fallback_patterns:
        if name in metrics:
            continue
        try:
            compiled = re.compile(pattern)
        except re.error:
            logger.warning("invalid fallback pattern for %s ignored", name)
            continue
        value: float | None = None
        for match in compiled.finditer(stdout_text):
            group = match.group(1) if match.groups() else match.group(0)
            try:
                value = float(group)
            except (TypeError, ValueError, OverflowError):
                continue
        if value is not None:
            metrics[name] = value
    return metrics


@dataclass(frozen=True)
class ExecLimits:
    """Per-run execution limits; debug runs must not exceed full runs."""

    full_timeout: float = 600.0
    debug_timeout: float = 120.0
    max_captured_bytes: int = 1_000_000
    kill_grace: float = 1.0

    def __post_init__(self) -> None:
        if self.full_timeout <= 0 or self.debug_timeout <= 0:
            raise ValueError("timeouts must be positive")
        if self.debug_timeout > self.full_timeout:
            raise ValueError("debug_timeout must be <= full_timeout")
        if self.max_captured_bytes <= 0:
            raise ValueError("max_captured_bytes must be positive")

    def to_dict(self) -> dict[str, float | int]:
        return {
            "full_timeout": self.full_timeout,
            "debug_timeout": self.debug_timeout,
            "max_captured_bytes": self.max_captured_bytes,
            "kill_grace": self.kill_grace,
        }


@dataclass(frozen=True)
class SyntaxDiagnostic:
    line: int | None
    message: str
    severity: str = "error"


@dataclass(frozen=True)
class SyntaxReport:
    ok: bool
    diagnostics: tuple[SyntaxDiagnostic, ...] = ()

    def describe(self) -> str:
        if self.ok:
            return "syntax check passed"
        parts = [
            f"line {d.line}: {d.message}" if d.line is not None else d.message
            for d in self.diagnostics
        ]
        return "syntax check failed: " + "; ".join(parts or ("unknown error",))


CHECKER_BUILTIN = "builtin"
DEFAULT_INTERPRETER: tuple[str, ...] = ("{python}", "{file}")
DEFAULT_CHECKER: tuple[str, ...] = ("{python}", "-m", "py_compile", "{file}")

_LINE_IN_TRACEBACK = re.compile(r'File "[^"]*", line (\d+)')


def _fill_command(template: Sequence[str], file: Path) -> list[str]:
    return [
        part.replace("{python}", sys.executable).replace("{file}", str(file))
        for part in template
    ]


def _truncate(data: bytes, limit: int) -> tuple[str, bool]:
    truncated = len(data) > limit
    if truncated:
        data = data[:limit]
    return data.decode("utf-8", errors="replace"), truncated


class NodeSandbox:
    """Sandbox session bound to one node's workspace directory."""

    def __init__(
        self,
        workspace: Path,
        limits: ExecLimits,
        *,
        interpreter: Sequence[str] = DEFAULT_INTERPRETER,
        checker: Sequence[str] | str = DEFAULT_CHECKER,
        data_dir: Path | None = None,
        env_extra: Mapping[str, str] | None = None,
    ) -> None:
        self.workspace = workspace
        self.limits = limits
        self.interpreter = tuple(interpreter)
        self.checker = checker
        self.data_dir = data_dir
        self.env_extra = dict(env_extra or {})
        try:
            self.workspace.mkdir(parents=True, exist_ok=True)
            probe = self.workspace / ".writable"
            probe.write_text("", encoding="utf-8")
            probe.unlink()
        except OSError as exc:
            raise WorkspaceUnwritable(f"cannot write to {workspace}: {exc}") from exc

    @property
    def solution_path(self) -> Path:
        return self.workspace / SOLUTION_FILENAME

    def _write_solution(self, code: str) -> Path:
        self.solution_path.write_text(code, encoding="utf-8")
        return self.solution_path

    def _child_env(self, mode: ExecMode) -> dict[str, str]:
        env = dict(os.environ)
        env.pop(ENV_DEBUG, None)
        if mode is ExecMode.DEBUG:
            env[ENV_DEBUG] = "1"
        if self.data_dir is not None:
            env[ENV_DATA_DIR] = str(self.data_dir)
        env.update(self.env_extra)
        return env

    def check_syntax(self, code: str) -> SyntaxReport:
        """Static check, either in-process (``builtin``) or via a command."""
        file = self._write_solution(code)
        if self.checker == CHECKER_BUILTIN:
            try:
                compile(code, str(file), "exec")
                return SyntaxReport(ok=True)
            except SyntaxError as exc:
                return SyntaxReport(
                    ok=False,
                    diagnostics=(SyntaxDiagnostic(exc.lineno, exc.msg or "syntax error"),),
                )
        command = _fill_command(self.checker, file)
        try:
            proc = subprocess.run(
                command,
                cwd=self.workspace,
                capture_output=True,
                timeout=self.limits.debug_timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            return SyntaxReport(
                ok=False,
                diagnostics=(SyntaxDiagnostic(None, f"checker failed: {exc}"),),
            )
        if proc.returncode == 0:
            return SyntaxReport(ok=True)
        stderr = proc.stderr.decode("utf-8", errors="replace")
        line_match = _LINE_IN_TRACEBACK.search(stderr)
        message = stderr.strip().splitlines()[-1] if stderr.strip() else "syntax error"
        return SyntaxReport(
            ok=False,
            diagnostics=(
                SyntaxDiagnostic(int(line_match.group(1)) if line_match else None, message),
            ),
        )

    def _run(self, code: str, mode: ExecMode) -> ExecOutcome:
        file = self._write_solution(code)
        command = _fill_command(self.interpreter, file)
        timeout = (
            self.limits.debug_timeout if mode is ExecMode.DEBUG else self.limits.full_timeout
        )
        start = time.monotonic()
        try:
            proc = subprocess.Popen(
                command,
                cwd=self.workspace,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                env=self._child_env(mode),
                start_new_session=True,
            )
        except OSError as exc:
            outcome = ExecOutcome(
                exit_code=EXIT_SPAWN_FAILURE,
                stderr=str(exc),
                wall_seconds=time.monotonic() - start,
                mode=mode,
            )
            self._persist(outcome)
            return outcome
        timed_out = False
        try:
            out, err = proc.communicate(timeout=timeout)
        except subprocess.TimeoutExpired:
            timed_out = True
            out, err = self._kill_tree(proc)
        wall = time.monotonic() - start
        stdout, out_trunc = _truncate(out or b"", self.limits.max_captured_bytes)
        stderr, err_trunc = _truncate(err or b"", self.limits.max_captured_bytes)
        outcome = ExecOutcome(
            exit_code=EXIT_TIMEOUT if timed_out else proc.returncode,
            stdout=stdout,
            stderr=stderr,
            wall_seconds=wall,
            mode=mode,
            stdout_truncated=out_trunc,
            stderr_truncated=err_trunc,
        )
        self._persist(outcome)
        return outcome

    def _kill_tree(self, proc: subprocess.Popen) -> tuple[bytes, bytes]:
        """Terminate the child's whole process group; SIGTERM, grace, SIGKILL."""
        pgid = None
        try:
            pgid = os.getpgid(proc.pid)
            os.killpg(pgid, signal.SIGTERM)
        except (ProcessLookupError, PermissionError):
            pass
        try:
            out, err = proc.communicate(timeout=self.limits.kill_grace)
        except subprocess.TimeoutExpired:
            if pgid is not None:
                try:
                    os.killpg(pgid, signal.SIGKILL)
                except (ProcessLookupError, PermissionError):
                    pass
            try:
                out, err = proc.communicate(timeout=5.0)
            except subprocess.TimeoutExpired:  # pragma: no cover - kernel refusal
                proc.kill()
                out, err = b"", b""
        if pgid is not None:
            # Reap any stragglers the group signal may have missed.
            try:
                os.killpg(pgid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                pass
        return out or b"", err or b""

    def _persist(self, outcome: ExecOutcome) -> None:
        try:
            (self.workspace / STDOUT_FILENAME).write_text(outcome.stdout, encoding="utf-8")
            (self.workspace / STDERR_FILENAME).write_text(outcome.stderr, encoding="utf-8")
            (self.workspace / OUTCOME_FILENAME).write_text(
                json.dumps(outcome.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
            )
        except OSError as exc:  # pragma: no cover - disk full etc.
            logger.warning("failed to persist outcome files: %s", exc)

    def validate(self, code: str) -> tuple[SyntaxReport, ExecOutcome | None]:
        """Static check first; on success, a debug-mode run with SEPDD_DEBUG=1."""
        report = self.check_syntax(code)
        if not report.ok:
            return report, None
        return report, self._run(code, ExecMode.DEBUG)

    def execute(self, code: str) -> ExecOutcome:
        """Full run: SEPDD_DEBUG unset, full timeout enforced."""
        return self._run(code, ExecMode.FULL)


class ProcessSandbox:
    """Factory for per-node sandboxes under ``<run_dir>/nodes/<id>/``.

    The journal lives at the run-dir root while candidates execute inside
    their node directory, so relative writes cannot touch it; the layout is
    asserted at session creation.
    """

    def __init__(
        self,
        run_dir: Path | str,
        limits: ExecLimits | None = None,
        *,
        interpreter: Sequence[str] = DEFAULT_INTERPRETER,
        checker: Sequence[str] | str = DEFAULT_CHECKER,
        data_dir: Path | None = None,
        env_extra: Mapping[str, str] | None = None,
    ) -> None:
        self.run_dir = Path(run_dir)
        self.limits = limits or ExecLimits()
        self.interpreter = tuple(interpreter)
        self.checker = checker
        self.data_dir = data_dir
        self.env_extra = dict(env_extra or {})

    def node_dir(self, node_id: int) -> Path:
        return self.run_dir / "nodes" / str(node_id)

    def for_node(self, node_id: int) -> NodeSandbox:
        workspace = self.node_dir(node_id).resolve()
        run_root = self.run_dir.resolve()
        if run_root not in workspace.parents:
            raise WorkspaceUnwritable(
                f"workspace {workspace} escapes run dir {run_root}"
            )
        if workspace.exists():
            shutil.rmtree(workspace)
        return NodeSandbox(
            workspace,
            self.limits,
            interpreter=self.interpreter,
            checker=self.checker,
            data_dir=self.data_dir,
            env_extra=self.env_extra,
        )
