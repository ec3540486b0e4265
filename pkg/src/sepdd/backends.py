"""Completion backends: the operator/provider seam.

Operators speak to any backend through ``complete(request)``. Three kinds
exist: the live HTTP gateway, scripted playback (deterministic replay of
recorded responses), and a recording wrapper that captures traffic from any
inner backend so it can be turned into a playback table.

Playback tables are directories with one file per request fingerprint:
``<fingerprint>.json`` holding ``{"text", "input_tokens", "output_tokens"}``
or bare ``<fingerprint>.txt`` (usage zero). The fingerprint is the first 16
hex chars of the SHA-256 over the canonical JSON of the operator kind and
the rendered messages, so identical prompts replay identically.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from .errors import ScriptExhausted, UnknownFingerprint
from .model import TokenUsage


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class CompletionRequest:
    """One completion call.

    ``node_id`` carries attribution context for ledgers and logic-scripted
    backends; it is excluded from the playback fingerprint on purpose, so a
    prompt replays the same way regardless of which node issued it.
    """

    operator: str
    messages: tuple[Message, ...]
    model: str = ""
    temperature: float | None = None
    max_output_tokens: int | None = None
    node_id: int | None = None

    @property
    def prompt_text(self) -> str:
        return "\n\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class Completion:
    text: str
    usage: TokenUsage = field(default_factory=TokenUsage)


def request_fingerprint(request: CompletionRequest) -> str:
    """Stable hash of (operator kind, rendered prompt)."""
    canon = json.dumps(
        {
            "operator": request.operator,
            "messages": [m.to_dict() for m in request.messages],
        },
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


class OperatorBackend(Protocol):
    kind: str

    def complete(self, request: CompletionRequest) -> Completion: ...


KIND_LIVE_GATEWAY = "live-gateway"
KIND_SCRIPTED_PLAYBACK = "scripted-playback"
KIND_RECORDING = "recording"


class FilePlaybackBackend:
    """Playback from a fingerprint-keyed table directory.

    A pure function of the request fingerprint; unknown fingerprints raise
    :class:`UnknownFingerprint` rather than falling through silently.
    """

    kind = KIND_SCRIPTED_PLAYBACK

    def __init__(self, table_dir: Path | str) -> None:
        self.table_dir = Path(table_dir)
        if not self.table_dir.is_dir():
            raise UnknownFingerprint(f"playback table directory missing: {self.table_dir}")

    def complete(self, request: CompletionRequest) -> Completion:
        fingerprint = request_fingerprint(request)
        json_path = self.table_dir / f"{fingerprint}.json"
        if json_path.exists():
            data = json.loads(json_path.read_text(encoding="utf-8"))
            return Completion(
                text=str(data["text"]),
                usage=TokenUsage(
                    int(data.get("input_tokens", 0)), int(data.get("output_tokens", 0))
                ),
            )
        txt_path = self.table_dir / f"{fingerprint}.txt"
        if txt_path.exists():
            return Completion(text=txt_path.read_text(encoding="utf-8"))
        preview = request.messages[-1].content[:200] if request.messages else ""
        raise UnknownFingerprint(
            f"no playback entry {fingerprint} for operator {request.operator!r}"
            f" (prompt tail: {preview!r})"
        )


class SequenceScriptBackend:
    """Playback from ordered per-operator response queues.

    Useful when responses are authored up front and fingerprints are not
    known (for example, scripting a run from outside the package). Each
    response is bound to its request fingerprint on first use, so repeated
    identical requests replay the same response instead of consuming the
    queue. Exhausted queues raise :class:`ScriptExhausted`.
    """

    kind = KIND_SCRIPTED_PLAYBACK

    def __init__(
        self,
        script: Mapping[str, Sequence[str | Mapping[str, Any]]],
        *,
        default_usage: TokenUsage = TokenUsage(),
    ) -> None:
        self._queues: dict[str, list[Completion]] = {}
        self._bound: dict[str, Completion] = {}
        self._lock = threading.Lock()
        self._default_usage = default_usage
        for operator, entries in script.items():
            queue = []
            for entry in entries:
                if isinstance(entry, str):
                    queue.append(Completion(text=entry, usage=default_usage))
                else:
                    queue.append(
                        Completion(
                            text=str(entry["text"]),
                            usage=TokenUsage(
                                int(entry.get("input_tokens", default_usage.input_tokens)),
                                int(entry.get("output_tokens", default_usage.output_tokens)),
                            ),
                        )
                    )
            self._queues[operator] = queue

    @classmethod
    def from_file(cls, path: Path | str) -> "SequenceScriptBackend":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("playback script must map operator -> response list")
        return cls(data)

    def complete(self, request: CompletionRequest) -> Completion:
        fingerprint = request_fingerprint(request)
        with self._lock:
            if fingerprint in self._bound:
                return self._bound[fingerprint]
            queue = self._queues.get(request.operator)
            if not queue:
                raise ScriptExhausted(
                    f"playback script has no responses left for operator {request.operator!r}"
                )
            completion = queue.pop(0)
            self._bound[fingerprint] = completion
            return completion


@dataclass
class RecordedCall:
    request: CompletionRequest
    completion: Completion
    fingerprint: str


class RecordingBackend:
    """Wrapper that captures every (request, completion) pair.

    Recordings can be dumped as a playback table; the authorization header
    never reaches this layer, so recordings are safe to keep.
    """

    kind = KIND_RECORDING

    def __init__(self, inner: OperatorBackend, record_dir: Path | str | None = None) -> None:
        self.inner = inner
        self.record_dir = Path(record_dir) if record_dir is not None else None
        self.calls: list[RecordedCall] = []
        self._lock = threading.Lock()
        if self.record_dir is not None:
            self.record_dir.mkdir(parents=True, exist_ok=True)

    def complete(self, request: CompletionRequest) -> Completion:
        completion = self.inner.complete(request)
        record = RecordedCall(request, completion, request_fingerprint(request))
        with self._lock:
            self.calls.append(record)
            if self.record_dir is not None:
                self._write_record(record, len(self.calls) - 1)
        return completion

    def _write_record(self, record: RecordedCall, index: int) -> None:
        path = self.record_dir / f"{index:05d}_{record.fingerprint}.json"
        path.write_text(
            json.dumps(
                {
                    "fingerprint": record.fingerprint,
                    "operator": record.request.operator,
                    "model": record.request.model,
                    "messages": [m.to_dict() for m in record.request.messages],
                    "response": {
                        "text": record.completion.text,
                        "input_tokens": record.completion.usage.input_tokens,
                        "output_tokens": record.completion.usage.output_tokens,
                    },
                },
                indent=2,
                ensure_ascii=False,
            ),
            encoding="utf-8",
        )

    def requests_for(self, operator: str) -> list[CompletionRequest]:
        return [c.request for c in self.calls if c.request.operator == operator]


def write_playback_table(
    calls: Iterable[RecordedCall], table_dir: Path | str
) -> int:
    """Materialize recorded calls as a fingerprint-keyed playback table."""
    table_dir = Path(table_dir)
    table_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for call in calls:
        path = table_dir / f"{call.fingerprint}.json"
        path.write_text(
            json.dumps(
                {
                    "text": call.completion.text,
                    "input_tokens": call.completion.usage.input_tokens,
                    "output_tokens": call.completion.usage.output_tokens,
                },
                ensure_ascii=False,
            ),
            encoding="utf-8",
        )
        count += 1
    return count


def recordings_to_table(recordings_dir: Path | str, table_dir: Path | str) -> int:
    """Convert a ``recordings/`` directory into a playback table."""
    recordings_dir = Path(recordings_dir)
    table_dir = Path(table_dir)
    table_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for path in sorted(recordings_dir.glob("*.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        response = data.get("response", {})
        out = table_dir / f"{data['fingerprint']}.json"
        out.write_text(
            json.dumps(
                {
                    "text": response.get("text", ""),
                    "input_tokens": int(response.get("input_tokens", 0)),
                    "output_tokens": int(response.get("output_tokens", 0)),
                },
                ensure_ascii=False,
            ),
            encoding="utf-8",
        )
        count += 1
    return count


class CallbackBackend:
    """Backend driven by a plain function; the workhorse for scripted tests.

    The callable receives the request (including ``node_id``) and returns a
    ``Completion`` or plain text. Stateless callables survive resume.
    """

    kind = KIND_SCRIPTED_PLAYBACK

    def __init__(self, fn: Callable[[CompletionRequest], Completion | str]) -> None:
        self._fn = fn

    def complete(self, request: CompletionRequest) -> Completion:
        result = self._fn(request)
        if isinstance(result, str):
            return Completion(text=result)
        return result
