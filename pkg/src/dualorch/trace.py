"""Tool-call traces: recording, canonical form, hashing and comparison.

Canonical byte encoding (what :func:`trace_hash` digests)::

    for each entry, in seq order:
        body = UTF-8 JSON of the entry dict, keys sorted, separators (",", ":"),
               non-ASCII left unescaped; the dict always has exactly the keys
               seq, stage_id, tool, args, status, strategy_id, observed
               (absent values are null)
        emit  len(body) as an 8-byte big-endian unsigned integer, then body
    digest = SHA-256 over the emitted bytes

An empty trace therefore hashes to SHA-256 of the empty string.
"""

from __future__ import annotations

import hashlib
import json
import posixpath
from dataclasses import dataclass, field
from typing import Any

from .core import StageId, canonical_json
from .tools import Tool, ToolRequest, ToolResult

EMPTY_TRACE_DIGEST = hashlib.sha256(b"").hexdigest()
VOLATILE_KEYS = frozenset(
    {"timestamp", "duration", "started_at", "ended_at", "elapsed", "wall_time"}
)
PATH_KEYS = frozenset({"path", "cwd", "glob", "entry"})
# string values under these keys are checked for absolute paths
PATH_BEARING_KEYS = PATH_KEYS | {"argv", "args", "paths"}


class CanonicalizationError(ValueError):
    pass


@dataclass(frozen=True)
class TraceEntry:
    seq: int
    tool: Tool
    canonical_args: Any
    status: str
    stage_id: StageId | None = None
    strategy_id: str | None = None
    observed: dict[str, Any] | None = None

    def key(self) -> tuple:
        return (
            self.tool,
            canonical_json(self.canonical_args),
            self.status,
            self.strategy_id,
            self.stage_id,
            canonical_json(self.observed),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "stage_id": self.stage_id.value if self.stage_id else None,
            "tool": self.tool.value,
            "args": self.canonical_args,
            "status": self.status,
            "strategy_id": self.strategy_id,
            "observed": self.observed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TraceEntry:
        return cls(
            seq=int(d["seq"]),
            tool=Tool(d["tool"]),
            canonical_args=d.get("args"),
            status=str(d["status"]),
            stage_id=StageId(d["stage_id"]) if d.get("stage_id") else None,
            strategy_id=d.get("strategy_id"),
            observed=d.get("observed"),
        )


@dataclass(frozen=True)
class ToolCallTrace:
    entries: tuple[TraceEntry, ...] = ()
    run_id: str = ""
    config_fingerprint: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    def tools(self) -> list[str]:
        return [e.tool.value for e in self.entries]

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "config_fingerprint": self.config_fingerprint,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ToolCallTrace:
        return cls(
            tuple(TraceEntry.from_dict(e) for e in d.get("entries", ())),
            d.get("run_id", ""),
            d.get("config_fingerprint", ""),
        )


@dataclass
class RawTrace:
    """What a run accumulates before canonicalization.

    Entries carry absolute paths, wall-clock stamps and durations; none of
    that survives :func:`canonicalize`.
    """

    root: str
    run_id: str = ""
    config_fingerprint: str = ""
    entries: list[dict[str, Any]] = field(default_factory=list)


class TraceRecorder:
    """Appends every tool invocation of one run; attach as ``Sandbox.recorder``.

    The orchestrator sets ``stage`` and ``strategy`` to label what follows.
    """

    def __init__(self, root: str, run_id: str = "", config_fingerprint: str = ""):
        self.raw = RawTrace(str(root), run_id, config_fingerprint)
        self.stage: StageId | None = None
        self.strategy: str | None = None
        self._clock = 0

    def record(self, request: ToolRequest, result: ToolResult) -> None:
        self._clock += 1
        self.raw.entries.append({
            "tool": request.tool.value,
            "args": request.args,
            "status": result.status_label(),
            "stage_id": self.stage.value if self.stage else None,
            "strategy_id": self.strategy,
            "observed": result.observed,
            "duration": result.duration,
            "timestamp": self._clock,
        })

    def canonical(self) -> ToolCallTrace:
        return canonicalize(self.raw)


def _is_absolute(s: str) -> bool:
    return s.startswith("/") or s.startswith("\\\\") or (
        len(s) > 2 and s[1] == ":" and s[2] in "/\\" and s[0].isalpha()
    )


def _canon_value(value: Any, root: str | None, key: str | None = None) -> Any:
    if isinstance(value, dict):
        return {
            k: _canon_value(value[k], root, k)
            for k in sorted(value)
            if k not in VOLATILE_KEYS
        }
    if isinstance(value, (list, tuple)):
        return [_canon_value(v, root, key) for v in value]
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, bytes):
        value = value.decode("latin-1")
    if isinstance(value, str):
        s = value.replace("\\", "/") if key in PATH_KEYS else value
        if key in PATH_BEARING_KEYS and _is_absolute(s):
            norm_root = root.replace("\\", "/").rstrip("/") if root else None
            s = s.replace("\\", "/")
            if norm_root and (s == norm_root or s.startswith(norm_root + "/")):
                rel = posixpath.relpath(s, norm_root)
                return rel
            raise CanonicalizationError(f"path outside sandbox root in trace: {value!r}")
        return s
    return value


def canonicalize(raw: RawTrace | ToolCallTrace) -> ToolCallTrace:
    """Strip wall-clock data, relativize paths, sort keys, renumber.

    Idempotent: canonicalizing a canonical trace returns an equal trace.
    """
    if isinstance(raw, ToolCallTrace):
        root = None
        items = [e.to_dict() for e in raw.entries]
        run_id, fp = raw.run_id, raw.config_fingerprint
    else:
        root = raw.root
        items = raw.entries
        run_id, fp = raw.run_id, raw.config_fingerprint
    entries = []
    for seq, item in enumerate(items):
        stage = item.get("stage_id")
        observed = item.get("observed")
        entries.append(TraceEntry(
            seq=seq,
            tool=Tool(item["tool"]),
            canonical_args=_canon_value(item.get("args") or {}, root),
            status=str(item["status"]),
            stage_id=StageId(stage) if stage else None,
            strategy_id=item.get("strategy_id"),
            observed=_canon_value(observed, root) if observed is not None else None,
        ))
    return ToolCallTrace(tuple(entries), run_id, fp)


def is_canonical(trace: ToolCallTrace) -> bool:
    try:
        again = canonicalize(trace)
    except CanonicalizationError:
        return False
    return again.entries == trace.entries and all(
        e.seq == i for i, e in enumerate(trace.entries)
    )


def encode_entries(trace: ToolCallTrace) -> bytes:
    chunks = []
    for e in trace.entries:
        body = canonical_json(e.to_dict()).encode("utf-8")
        chunks.append(len(body).to_bytes(8, "big"))
        chunks.append(body)
    return b"".join(chunks)


def trace_hash(trace: ToolCallTrace) -> str:
    if not is_canonical(trace):
        raise CanonicalizationError("trace_hash needs a canonical trace")
    return hashlib.sha256(encode_entries(trace)).hexdigest()


def divergence_point(a: ToolCallTrace, b: ToolCallTrace) -> int | None:
    """Index of the first differing entry; the shorter length for a strict
    prefix; ``None`` when the traces are equal."""
    for i, (x, y) in enumerate(zip(a.entries, b.entries)):
        if x.key() != y.key():
            return i
    if len(a.entries) != len(b.entries):
        return min(len(a.entries), len(b.entries))
    return None


def dumps_trace(trace: ToolCallTrace) -> str:
    return json.dumps(trace.to_dict(), sort_keys=True)
