"""Language-model backends behind one request/response interface.

Three backends ship: :class:`ScriptedBackend` (JSON scripts replayed
verbatim), :class:`StochasticStub` (seeded random policy over a program's
candidate translations and tools) and :class:`HttpBackend` (chat-completion
style provider). Callers go through :func:`complete`, which retries transport
failures and meters tokens into the run's :class:`TokenLedger`. Responses
carry no backend identity.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

from .core import ConfigError, canonical_json
from .tools import Tool, ToolRequest

TRANSPORT_ATTEMPTS = 3


class Role(str, Enum):
    SYSTEM = "SYSTEM"
    USER = "USER"
    TOOL_RESULT = "TOOL_RESULT"
    ASSISTANT = "ASSISTANT"


class ResponseKind(str, Enum):
    CODE_EDIT = "CODE_EDIT"
    TOOL_ACTION = "TOOL_ACTION"
    FINISH = "FINISH"


class TransportError(Exception):
    """Retriable provider failure (connection refused, 5xx, timeouts)."""


class BackendUnavailable(Exception):
    """Transport kept failing after the bounded retries."""


class ProtocolError(Exception):
    """Provider returned something that is not a well-formed action."""


@dataclass(frozen=True)
class Message:
    role: Role
    content: bytes

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role.value, "content": self.content.decode("utf-8", "replace")}


@dataclass(frozen=True)
class ModelRequest:
    prompt_bundle_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    seed: int = 0
    program_id: str = ""

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a model request needs at least one message")
        if self.messages[0].role is not Role.SYSTEM:
            raise ValueError("the first message must be the system prompt")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    @property
    def index(self) -> int:
        """How many model turns precede this request."""
        return sum(1 for m in self.messages if m.role is Role.ASSISTANT)

    def history_hash(self) -> str:
        h = hashlib.sha256()
        for m in self.messages:
            h.update(m.role.value.encode())
            h.update(len(m.content).to_bytes(8, "big"))
            h.update(m.content)
        return h.hexdigest()

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt_bundle_id": self.prompt_bundle_id,
            "program_id": self.program_id,
            "temperature": self.temperature,
            "seed": self.seed,
            "messages": [m.to_dict() for m in self.messages],
        }


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts are non-negative")

    def __add__(self, other: TokenUsage) -> TokenUsage:
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> dict[str, int]:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TokenUsage:
        return cls(int(d.get("prompt_tokens", 0)), int(d.get("completion_tokens", 0)))


@dataclass
class TokenLedger:
    """Per-run token meter. ``totals`` is always the sum of ``calls``."""

    model_id: str = ""
    calls: list[TokenUsage] = field(default_factory=list)

    def record(self, usage: TokenUsage) -> None:
        self.calls.append(usage)

    @property
    def totals(self) -> TokenUsage:
        total = TokenUsage()
        for u in self.calls:
            total = total + u
        return total

    def to_dict(self) -> dict[str, Any]:
        t = self.totals
        return {
            "model_id": self.model_id,
            "prompt_tokens": t.prompt_tokens,
            "completion_tokens": t.completion_tokens,
            "calls": [[u.prompt_tokens, u.completion_tokens] for u in self.calls],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TokenLedger:
        ledger = cls(d.get("model_id", ""), [TokenUsage(p, c) for p, c in d.get("calls", ())])
        t = ledger.totals
        if (t.prompt_tokens, t.completion_tokens) != (
            d.get("prompt_tokens", t.prompt_tokens), d.get("completion_tokens", t.completion_tokens)
        ):
            raise ValueError("ledger totals disagree with per-call usage")
        return ledger


@dataclass(frozen=True)
class Edit:
    path: str
    content: str | None = None
    search: str | None = None
    replace: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in vars(self).items() if v is not None}


@dataclass(frozen=True)
class ModelResponse:
    kind: ResponseKind
    content: Any  # ToolRequest | tuple[Edit, ...] | str
    usage: TokenUsage = TokenUsage()

    def payload(self) -> dict[str, Any]:
        if self.kind is ResponseKind.TOOL_ACTION:
            return {"kind": self.kind.value, "tool": self.content.tool.value, "args": self.content.args}
        if self.kind is ResponseKind.CODE_EDIT:
            return {"kind": self.kind.value, "edits": [e.to_dict() for e in self.content]}
        return {"kind": self.kind.value, "status": self.content}

    def text(self) -> str:
        return canonical_json(self.payload())


def estimate_tokens(content: bytes) -> int:
    """Rough token count: one token per four bytes, rounded up."""
    return (len(content) + 3) // 4


def metered(request: ModelRequest, kind: ResponseKind, content: Any,
            usage: TokenUsage | None = None) -> ModelResponse:
    """Build a response, estimating usage when the backend reported none."""
    draft = ModelResponse(kind, content)
    if usage is None:
        prompt = sum(estimate_tokens(m.content) for m in request.messages)
        usage = TokenUsage(prompt, estimate_tokens(draft.text().encode()))
    return ModelResponse(kind, content, usage)


def parse_action(obj: Any) -> tuple[ResponseKind, Any]:
    """Decode the JSON action object every backend speaks."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ProtocolError(f"action must be an object with a 'kind': {obj!r:.200}")
    try:
        kind = ResponseKind(str(obj["kind"]).upper())
    except ValueError as exc:
        raise ProtocolError(f"unknown response kind {obj['kind']!r}") from exc
    try:
        if kind is ResponseKind.TOOL_ACTION:
            return kind, ToolRequest(Tool(str(obj["tool"]).upper()), dict(obj.get("args") or {}))
        if kind is ResponseKind.CODE_EDIT:
            edits = tuple(
                Edit(str(e["path"]), e.get("content"), e.get("search"), e.get("replace"))
                for e in obj["edits"]
            )
            if not edits:
                raise ProtocolError("CODE_EDIT without edits")
            return kind, edits
        return kind, str(obj.get("status", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed {kind.value} action: {exc!r}") from exc


class Backend(Protocol):
    def complete(self, request: ModelRequest) -> ModelResponse: ...


def complete(backend: Backend, request: ModelRequest, ledger: TokenLedger | None = None,
             transcript: list | None = None, *, backoff: float = 0.25,
             sleep=time.sleep) -> ModelResponse:
    """One model turn: bounded retry on transport failure, then metering."""
    for attempt in range(TRANSPORT_ATTEMPTS):
        try:
            response = backend.complete(request)
            break
        except TransportError as exc:
            if attempt == TRANSPORT_ATTEMPTS - 1:
                raise BackendUnavailable(str(exc)) from exc
            sleep(backoff * 2**attempt)
    if ledger is not None:
        ledger.record(response.usage)
    if transcript is not None:
        transcript.append({
            "request": request.to_dict(),
            "response": response.payload(),
            "usage": response.usage.to_dict(),
        })
    return response


# --------------------------------------------------------------------------
# scripted backend


@dataclass(frozen=True)
class ScriptRule:
    response: dict[str, Any]
    last_role: str | None = None
    contains: str | None = None
    min_index: int = 0

    def matches(self, request: ModelRequest) -> bool:
        if request.index < self.min_index:
            return False
        last = request.messages[-1]
        if self.last_role is not None and last.role.value != self.last_role:
            return False
        if self.contains is not None and self.contains.encode() not in last.content:
            return False
        return True


@dataclass(frozen=True)
class Script:
    """Responses replayed by request index, with optional predicate rules.

    Rules are checked first, in order; otherwise the template at the request
    index is used, and the last template repeats once the list runs out.
    """

    responses: tuple[dict[str, Any], ...]
    rules: tuple[ScriptRule, ...] = ()
    program_id: str | None = None

    def template_for(self, request: ModelRequest) -> dict[str, Any]:
        for rule in self.rules:
            if rule.matches(request):
                return rule.response
        if not self.responses:
            raise ProtocolError("script has no responses")
        return self.responses[min(request.index, len(self.responses) - 1)]

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path | None = None) -> Script:
        if d.get("schema_version", "v1") != "v1":
            raise ConfigError("script schema_version must be v1")

        def inline(t: dict[str, Any]) -> dict[str, Any]:
            t = json.loads(json.dumps(t))
            for e in t.get("edits", ()):
                if "content_file" in e:
                    e["content"] = ((base_dir or Path(".")) / e.pop("content_file")).read_text()
            parse_action(t)
            return t

        rules = tuple(
            ScriptRule(inline(r["response"]), **{k: v for k, v in r.get("when", {}).items()})
            for r in d.get("rules", ())
        )
        return cls(tuple(inline(t) for t in d["responses"]), rules, d.get("program_id"))

    @classmethod
    def load(cls, path: str | Path) -> Script:
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


class ScriptedBackend:
    """Pure function of (script, request index, request)."""

    def __init__(self, scripts: Script | dict[str, Script]):
        self.scripts = scripts

    @classmethod
    def from_dir(cls, directory: str | Path) -> ScriptedBackend:
        scripts = {}
        for path in sorted(Path(directory).glob("*.json")):
            script = Script.load(path)
            scripts[script.program_id or path.stem] = script
        return cls(scripts)

    def _script(self, request: ModelRequest) -> Script:
        if isinstance(self.scripts, Script):
            return self.scripts
        try:
            return self.scripts[request.program_id]
        except KeyError:
            raise ProtocolError(f"no script for program {request.program_id!r}") from None

    def complete(self, request: ModelRequest) -> ModelResponse:
        template = self._script(request).template_for(request)
        kind, content = parse_action(template)
        usage = TokenUsage.from_dict(template["usage"]) if "usage" in template else None
        return metered(request, kind, content, usage)


# --------------------------------------------------------------------------
# seeded stochastic stub


@dataclass(frozen=True)
class ProgramHints:
    """What the stub may emit for one program."""

    source_path: str
    target_path: str
    candidates: dict[str, str]  # label -> translation text
    stdin_samples: tuple[str, ...] = ()
    urls: tuple[str, ...] = ()


@dataclass(frozen=True)
class StubConfig:
    # action mix before any CODE_EDIT has been emitted, then after
    p_tool_before_edit: float = 0.55
    p_tool_after_edit: float = 0.40
    p_finish_after_edit: float = 0.40
    # probability of obeying an explicit request for a CODE_EDIT
    p_comply: float = 0.9
    translation_weights: tuple[tuple[str, float], ...] = (
        ("correct", 0.75), ("near_miss", 0.15), ("broken", 0.10),
    )
    tool_weights: tuple[tuple[str, float], ...] = (
        ("READ_FILE", 3.0), ("LIST_FILES", 1.0), ("RUN_COMMAND", 3.0),
        ("GIT", 1.0), ("WEB_SCRAPE", 1.0),
    )

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StubConfig:
        kw = dict(d)
        for k in ("translation_weights", "tool_weights"):
            if k in kw:
                kw[k] = tuple((str(a), float(b)) for a, b in dict(kw[k]).items())
        return cls(**kw)


EDIT_REQUEST_MARKER = b"Respond with a CODE_EDIT"


def _weighted(rng: random.Random, pairs: tuple[tuple[str, float], ...]) -> str:
    labels = [a for a, _ in pairs]
    weights = [w for _, w in pairs]
    return rng.choices(labels, weights=weights, k=1)[0]


class StochasticStub:
    """Seeded random policy; a pure function of (seed, request history hash)."""

    def __init__(self, hints: dict[str, ProgramHints], config: StubConfig | None = None):
        self.hints = hints
        self.config = config or StubConfig()

    def _rng(self, request: ModelRequest) -> random.Random:
        digest = hashlib.sha256(f"{request.seed}:{request.history_hash()}".encode()).digest()
        return random.Random(int.from_bytes(digest, "big"))

    def complete(self, request: ModelRequest) -> ModelResponse:
        try:
            hints = self.hints[request.program_id]
        except KeyError:
            raise ProtocolError(f"stub has no hints for {request.program_id!r}") from None
        cfg = self.config
        rng = self._rng(request)
        edited = any(
            m.role is Role.ASSISTANT and b'"CODE_EDIT"' in m.content for m in request.messages
        )
        last = request.messages[-1]
        if last.role is Role.USER and EDIT_REQUEST_MARKER in last.content:
            p_tool, p_finish = (1 - cfg.p_comply), 0.0
        elif not edited:
            p_tool, p_finish = cfg.p_tool_before_edit, 0.0
        else:
            p_tool, p_finish = cfg.p_tool_after_edit, cfg.p_finish_after_edit
            if last.role is Role.TOOL_RESULT and (
                b'"status":"ERROR' in last.content or b'"exit_code":0' not in last.content
            ):
                # a failing tool result pulls the model back toward repairs
                p_finish *= 0.5
        u = rng.random()
        if u < p_finish:
            return metered(request, ResponseKind.FINISH, "done")
        if u < p_finish + p_tool:
            return metered(request, ResponseKind.TOOL_ACTION, self._tool(rng, hints))
        label = _weighted(rng, cfg.translation_weights)
        text = hints.candidates.get(label) or hints.candidates["correct"]
        return metered(request, ResponseKind.CODE_EDIT, (Edit(hints.target_path, text),))

    def _tool(self, rng: random.Random, hints: ProgramHints) -> ToolRequest:
        name = _weighted(rng, self.config.tool_weights)
        if name == "READ_FILE":
            path = rng.choice([hints.source_path, hints.target_path])
            return ToolRequest(Tool.READ_FILE, {"path": path})
        if name == "LIST_FILES":
            return ToolRequest(Tool.LIST_FILES, {"glob": rng.choice(["**/*", "*", "translated/*"])})
        if name == "RUN_COMMAND":
            args: dict[str, Any] = {"argv": ["python", hints.target_path]}
            if hints.stdin_samples:
                args["stdin"] = rng.choice(hints.stdin_samples)
            return ToolRequest(Tool.RUN_COMMAND, args)
        if name == "GIT":
            return ToolRequest(Tool.GIT, {"args": [rng.choice(["status", "diff", "log"])]})
        url = rng.choice(hints.urls) if hints.urls else "https://example.invalid/cobol"
        return ToolRequest(Tool.WEB_SCRAPE, {"url": url})


# --------------------------------------------------------------------------
# live HTTP provider


_WIRE_ROLE = {Role.SYSTEM: "system", Role.USER: "user", Role.TOOL_RESULT: "user",
              Role.ASSISTANT: "assistant"}


class HttpBackend:
    """Chat-completion style provider. Credentials come from the environment.

    The assistant message content must be a JSON action object (see
    :func:`parse_action`). Seeds are forwarded but providers honour them
    unevenly, so determinism here is best effort.
    """

    def __init__(self, url: str, model: str, api_key_env: str = "DUALORCH_API_KEY",
                 max_in_flight: int = 4, timeout: float = 120.0):
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _body(self, request: ModelRequest) -> bytes:
        return json.dumps({
            "model": self.model,
            "messages": [
                {"role": _WIRE_ROLE[m.role],
                 "content": ("[tool result]\n" if m.role is Role.TOOL_RESULT else "")
                 + m.content.decode("utf-8", "replace")}
                for m in request.messages
            ],
            "temperature": request.temperature,
            "seed": request.seed,
            "response_format": {"type": "json_object"},
        }).encode()

    def complete(self, request: ModelRequest) -> ModelResponse:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(self.url, data=self._body(request), headers=headers)
        with self._slots:
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:  # noqa: S310
                    raw = resp.read()
            except urllib.error.HTTPError as exc:
                if exc.code >= 500 or exc.code == 429:
                    raise TransportError(f"HTTP {exc.code}") from exc
                raise ProtocolError(f"HTTP {exc.code}") from exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                raise TransportError(str(exc)) from exc
        try:
            body = json.loads(raw)
            text = body["choices"][0]["message"]["content"]
            action = json.loads(text)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed provider payload: {exc!r}") from exc
        kind, content = parse_action(action)
        usage = None
        if isinstance(body.get("usage"), dict):
            usage = TokenUsage.from_dict(body["usage"])
        return metered(request, kind, content, usage)


def build_backend(spec: dict[str, Any], *, scripts_dir: Path | None = None,
                  hints: dict[str, ProgramHints] | None = None) -> Backend:
    kind = spec.get("kind")
    if kind == "scripted":
        directory = Path(spec["scripts_dir"]) if "scripts_dir" in spec else scripts_dir
        if directory is None:
            raise ConfigError("scripted backend needs a scripts directory")
        return ScriptedBackend.from_dir(directory)
    if kind == "stub":
        if hints is None:
            raise ConfigError("stub backend needs program hints")
        return StochasticStub(hints, StubConfig.from_dict(spec.get("stub", {})))
    if kind == "http":
        return HttpBackend(spec["url"], spec["model"], spec.get("api_key_env", "DUALORCH_API_KEY"),
                           int(spec.get("max_in_flight", 4)))
    raise ConfigError(f"unknown backend kind {kind!r}")
