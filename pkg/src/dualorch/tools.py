"""The six controlled tools, executed inside a per-run sandbox workspace.

Both orchestration modes reach the workspace only through :func:`invoke`,
so the tool surface, its argument schemas and its permissions are identical
between them. Every invocation is handed to the sandbox's recorder (when one
is attached) the moment it completes.
"""

from __future__ import annotations

import hashlib
import json
import os
import posixpath
import subprocess
import sys
import time
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path, PurePosixPath
from typing import Any

import jsonschema


class Tool(str, Enum):
    READ_FILE = "READ_FILE"
    WRITE_FILE = "WRITE_FILE"
    LIST_FILES = "LIST_FILES"
    WEB_SCRAPE = "WEB_SCRAPE"
    RUN_COMMAND = "RUN_COMMAND"
    GIT = "GIT"


class ToolError(str, Enum):
    PATH_ESCAPE = "PATH_ESCAPE"
    BAD_ARGS = "BAD_ARGS"
    TIMEOUT = "TIMEOUT"
    NETWORK_DISABLED = "NETWORK_DISABLED"
    NOT_FOUND = "NOT_FOUND"
    NOT_ALLOWED = "NOT_ALLOWED"
    IO_ERROR = "IO_ERROR"


GIT_SUBCOMMANDS = ("init", "add", "commit", "status", "diff", "log", "rev-parse")
GIT_FORBIDDEN_OPTIONS = ("-C", "-c", "--git-dir", "--work-tree", "--exec-path", "--output")
DEFAULT_ENV_ALLOWLIST = ("LANG", "LC_ALL", "PATH")
SKIP_DIRS = (".git",)


def default_command_allowlist() -> dict[str, tuple[str, ...]]:
    # isolated mode, no site: startup cost dominates short harness runs
    return {"python": (sys.executable, "-I", "-S"), "python3": (sys.executable, "-I", "-S")}


@dataclass
class Sandbox:
    root: Path
    allow_network: bool = False
    command_timeout: float = 10.0
    env_allowlist: tuple[str, ...] = DEFAULT_ENV_ALLOWLIST
    command_allowlist: dict[str, tuple[str, ...]] = field(default_factory=default_command_allowlist)
    fixtures_dir: Path | None = None
    git_identity: tuple[str, str] = ("dualorch", "dualorch@localhost")
    git_timestamp: int = 1_500_000_000
    recorder: Any = None

    def __post_init__(self) -> None:
        self.root = Path(os.path.abspath(self.root))


@dataclass(frozen=True)
class ToolRequest:
    tool: Tool
    args: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"tool": self.tool.value, "args": self.args}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ToolRequest:
        return cls(Tool(str(d["tool"]).upper()), dict(d.get("args") or {}))


@dataclass
class ToolResult:
    status: str  # "OK" or "ERROR"
    stdout: bytes = b""
    stderr: bytes = b""
    exit_code: int | None = None
    payload: Any = None
    duration: float = 0.0
    error_code: ToolError | None = None
    observed: dict[str, Any] | None = None  # result facts that belong in the trace

    @property
    def ok(self) -> bool:
        return self.status == "OK"

    def status_label(self) -> str:
        return "OK" if self.ok else f"ERROR({self.error_code.value})"

    def to_dict(self, *, with_duration: bool = True) -> dict[str, Any]:
        payload = self.payload
        if isinstance(payload, bytes):
            payload = {"bytes": payload.decode("latin-1")}
        d = {
            "status": self.status,
            "error_code": self.error_code.value if self.error_code else None,
            "stdout": self.stdout.decode("latin-1"),
            "stderr": self.stderr.decode("latin-1"),
            "exit_code": self.exit_code,
            "payload": payload,
        }
        if with_duration:
            d["duration"] = self.duration
        return d


def _error(code: ToolError, message: str, **kw: Any) -> ToolResult:
    return ToolResult("ERROR", stderr=message.encode(), error_code=code, **kw)


class PathEscape(Exception):
    pass


@lru_cache(maxsize=None)
def tool_schema(tool: Tool) -> dict[str, Any]:
    text = resources.files("dualorch").joinpath(f"schemas/tools/{tool.value.lower()}.json").read_text()
    return json.loads(text)


@lru_cache(maxsize=None)
def _validator(tool: Tool) -> Any:
    schema = tool_schema(tool)
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def validate_args(request: ToolRequest) -> str | None:
    """Return a diagnostic when args violate the tool schema, else None."""
    error = jsonschema.exceptions.best_match(_validator(request.tool).iter_errors(request.args))
    return None if error is None else error.message


def confine(sandbox: Sandbox, path: str, base: str = "") -> Path:
    """Resolve ``path`` (workspace-relative) to an absolute path inside root.

    Backslashes count as separators so the check is platform independent.
    The check is lexical; a symlink pointing outside the root is refused too.
    """
    if "\x00" in path:
        raise PathEscape(path)
    rel = path.replace("\\", "/")
    if rel.startswith("/") or (len(rel) > 1 and rel[1] == ":"):
        raise PathEscape(path)
    joined = posixpath.normpath(posixpath.join(base.replace("\\", "/") or ".", rel))
    if joined == ".." or joined.startswith("../") or joined.startswith("/"):
        raise PathEscape(path)
    target = sandbox.root / joined if joined != "." else sandbox.root
    real_root = os.path.realpath(sandbox.root)
    real = os.path.realpath(target)
    if real != real_root and not real.startswith(real_root + os.sep):
        raise PathEscape(path)
    return target


def relpath(sandbox: Sandbox, path: Path) -> str:
    return PurePosixPath(Path(path).relative_to(sandbox.root)).as_posix()


def invoke(request: ToolRequest, sandbox: Sandbox) -> ToolResult:
    start = time.perf_counter()
    problem = validate_args(request)
    if problem is not None:
        result = _error(ToolError.BAD_ARGS, problem)
    else:
        try:
            result = _HANDLERS[request.tool](request.args, sandbox)
        except PathEscape as exc:
            result = _error(ToolError.PATH_ESCAPE, f"path escapes sandbox: {exc}")
        except OSError as exc:
            result = _error(ToolError.IO_ERROR, f"{type(exc).__name__}: {exc.strerror or exc}")
    result.duration = time.perf_counter() - start
    if sandbox.recorder is not None:
        sandbox.recorder.record(request, result)
    return result


# --------------------------------------------------------------------------
# handlers


def _read_file(args: dict[str, Any], sandbox: Sandbox) -> ToolResult:
    target = confine(sandbox, args["path"])
    if not target.is_file():
        return _error(ToolError.NOT_FOUND, f"no such file: {args['path']}")
    data = target.read_bytes()
    return ToolResult("OK", stdout=data, payload=data)


def _write_file(args: dict[str, Any], sandbox: Sandbox) -> ToolResult:
    target = confine(sandbox, args["path"])
    if target == sandbox.root or target.is_dir():
        return _error(ToolError.BAD_ARGS, "path names a directory")
    data = args["content"].encode(args.get("encoding", "utf-8"))
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(data)
    return ToolResult("OK", payload={"path": relpath(sandbox, target), "bytes": len(data)})


def list_files(sandbox: Sandbox, glob: str) -> list[str]:
    """Workspace files matching ``glob``, sorted, with ``/`` separators."""
    pattern = glob.replace("\\", "/")
    parts = PurePosixPath(pattern).parts
    if pattern.startswith("/") or ".." in parts:
        raise PathEscape(glob)
    found = []
    for p in sandbox.root.glob(pattern):
        if not p.is_file():
            continue
        rel = relpath(sandbox, p)
        if rel.split("/", 1)[0] in SKIP_DIRS:
            continue
        found.append(rel)
    return sorted(found)


def _list_files(args: dict[str, Any], sandbox: Sandbox) -> ToolResult:
    try:
        files = list_files(sandbox, args["glob"])
    except ValueError as exc:
        return _error(ToolError.BAD_ARGS, str(exc))
    return ToolResult("OK", stdout="\n".join(files).encode(), payload=files)


def url_key(url: str) -> str:
    return hashlib.sha256(url.encode("utf-8")).hexdigest()


def register_fixture(fixtures_dir: str | Path, url: str, body: bytes,
                     content_type: str = "text/html") -> Path:
    """Store a replayable response under ``fixtures/web/<sha256(url)>``."""
    web = Path(fixtures_dir) / "web"
    web.mkdir(parents=True, exist_ok=True)
    key = url_key(url)
    (web / f"{key}.body").write_bytes(body)
    (web / f"{key}.meta").write_text(
        json.dumps({"url": url, "content-type": content_type}, sort_keys=True) + "\n"
    )
    return web / f"{key}.body"


def web_scrape(url: str, sandbox: Sandbox) -> ToolResult:
    body = None
    if sandbox.fixtures_dir is not None:
        path = Path(sandbox.fixtures_dir) / "web" / f"{url_key(url)}.body"
        if path.is_file():
            body = path.read_bytes()
    if body is None:
        if not sandbox.allow_network:
            return _error(ToolError.NETWORK_DISABLED, f"network disabled and no fixture for {url}")
        with urllib.request.urlopen(url, timeout=sandbox.command_timeout) as resp:  # noqa: S310
            body = resp.read()
    digest = hashlib.sha256(body).hexdigest()
    return ToolResult("OK", stdout=body, payload=body, observed={"url": url, "body_sha256": digest})


def _web_scrape(args: dict[str, Any], sandbox: Sandbox) -> ToolResult:
    return web_scrape(args["url"], sandbox)


def _check_argv_paths(sandbox: Sandbox, argv: list[str], cwd: str) -> None:
    for a in argv:
        norm = a.replace("\\", "/")
        if norm.startswith("/") or ".." in PurePosixPath(norm).parts:
            confine(sandbox, a, base=cwd)


def _env(sandbox: Sandbox) -> dict[str, str]:
    env = {k: os.environ[k] for k in sandbox.env_allowlist if k in os.environ}
    env.setdefault("PATH", os.defpath)
    env["PYTHONHASHSEED"] = "0"
    env["PYTHONDONTWRITEBYTECODE"] = "1"
    return env


def _scrub(data: bytes, root: Path) -> bytes:
    """Rewrite absolute workspace paths as relative ones, so tool output does
    not depend on where the sandbox happens to live."""
    for r in dict.fromkeys((str(root), os.path.realpath(root))):
        prefix = os.fsencode(r)
        data = data.replace(prefix + b"/", b"").replace(prefix, b".")
    return data


def _run(cmd: list[str], cwd: Path, env: dict[str, str], stdin: bytes,
         timeout: float, root: Path) -> ToolResult:
    try:
        proc = subprocess.run(
            cmd, cwd=cwd, env=env, input=stdin, capture_output=True, timeout=timeout
        )
    except subprocess.TimeoutExpired as exc:
        return ToolResult(
            "ERROR",
            stdout=_scrub(exc.stdout or b"", root),
            stderr=_scrub(exc.stderr or b"", root),
            error_code=ToolError.TIMEOUT,
            payload={"timed_out": True},
        )
    except FileNotFoundError as exc:
        return _error(ToolError.NOT_FOUND, str(exc))
    return ToolResult(
        "OK", stdout=_scrub(proc.stdout, root), stderr=_scrub(proc.stderr, root),
        exit_code=proc.returncode,
        payload={"exit_code": proc.returncode},
    )


def _run_command(args: dict[str, Any], sandbox: Sandbox) -> ToolResult:
    argv = list(args["argv"])
    prefix = sandbox.command_allowlist.get(argv[0])
    if prefix is None:
        return _error(ToolError.NOT_ALLOWED, f"command {argv[0]!r} not in allowlist")
    cwd_rel = args.get("cwd", ".") or "."
    cwd = confine(sandbox, cwd_rel)
    _check_argv_paths(sandbox, argv[1:], cwd_rel)
    cwd.mkdir(parents=True, exist_ok=True)
    stdin = args.get("stdin", "").encode("latin-1")
    return _run(list(prefix) + argv[1:], cwd, _env(sandbox), stdin, sandbox.command_timeout,
                sandbox.root)


def _git(args: dict[str, Any], sandbox: Sandbox) -> ToolResult:
    argv = list(args["args"])
    for a in argv[1:]:
        if a.split("=", 1)[0] in GIT_FORBIDDEN_OPTIONS:
            return _error(ToolError.NOT_ALLOWED, f"git option {a!r} not permitted")
    _check_argv_paths(sandbox, argv[1:], ".")
    if argv[0] == "init" and len(argv) > 1 and not all(a.startswith("-") for a in argv[1:]):
        return _error(ToolError.NOT_ALLOWED, "git init takes no path in the sandbox")
    name, email = sandbox.git_identity
    stamp = f"{sandbox.git_timestamp} +0000"
    env = _env(sandbox)
    env.update({
        "GIT_AUTHOR_NAME": name, "GIT_AUTHOR_EMAIL": email, "GIT_AUTHOR_DATE": stamp,
        "GIT_COMMITTER_NAME": name, "GIT_COMMITTER_EMAIL": email, "GIT_COMMITTER_DATE": stamp,
        "GIT_CONFIG_NOSYSTEM": "1", "GIT_CONFIG_GLOBAL": os.devnull, "HOME": str(sandbox.root),
        "GIT_CEILING_DIRECTORIES": str(sandbox.root.parent),
    })
    cmd = ["git", "-c", "init.defaultBranch=main", "-c", "core.autocrlf=false",
           "-c", "commit.gpgsign=false", *argv]
    result = _run(cmd, sandbox.root, env, b"", sandbox.command_timeout, sandbox.root)
    if result.ok:
        result.payload = {"exit_code": result.exit_code,
                          "output": result.stdout.decode("utf-8", "replace").strip()}
    return result


_HANDLERS = {
    Tool.READ_FILE: _read_file,
    Tool.WRITE_FILE: _write_file,
    Tool.LIST_FILES: _list_files,
    Tool.WEB_SCRAPE: _web_scrape,
    Tool.RUN_COMMAND: _run_command,
    Tool.GIT: _git,
}


def read_file(sandbox: Sandbox, path: str) -> ToolResult:
    return invoke(ToolRequest(Tool.READ_FILE, {"path": path}), sandbox)


def write_file(sandbox: Sandbox, path: str, content: str) -> ToolResult:
    return invoke(ToolRequest(Tool.WRITE_FILE, {"path": path, "content": content}), sandbox)
