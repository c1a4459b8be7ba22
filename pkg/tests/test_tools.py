import hashlib
import os
import random

import pytest

from dualorch.tools import (
    PathEscape,
    Tool,
    ToolError,
    ToolRequest,
    confine,
    invoke,
    list_files,
    read_file,
    register_fixture,
    validate_args,
    write_file,
)
from dualorch.trace import TraceRecorder


def _escapes_oracle(path):
    # independent lexical model: walk components, fail if depth ever goes negative
    p = path.replace("\\", "/")
    if p.startswith("/") or (len(p) > 1 and p[1] == ":"):
        return True
    depth = 0
    for part in p.split("/"):
        if part in ("", "."):
            continue
        depth += -1 if part == ".." else 1
        if depth < 0:
            return True
    return False


def test_confine_matches_lexical_oracle(sandbox):
    rng = random.Random(1234)
    parts = ["..", ".", "a", "b", "", "..\\..", "c\\..", "/etc", "C:"]
    for _ in range(2000):
        path = "/".join(rng.choice(parts) for _ in range(rng.randint(1, 6)))
        try:
            confine(sandbox, path)
            escaped = False
        except PathEscape:
            escaped = True
        assert escaped == _escapes_oracle(path), path


def test_confine_refuses_symlink_out(sandbox, tmp_path):
    outside = tmp_path / "outside"
    outside.mkdir()
    os.symlink(outside, sandbox.root / "link")
    with pytest.raises(PathEscape):
        confine(sandbox, "link/x")
    r = invoke(ToolRequest(Tool.WRITE_FILE, {"path": "link/x", "content": "no"}), sandbox)
    assert r.error_code is ToolError.PATH_ESCAPE
    assert not (outside / "x").exists()


def test_write_read_list(sandbox):
    assert write_file(sandbox, "d/a.txt", "hi\n").ok
    assert write_file(sandbox, "b.txt", "x").ok
    r = read_file(sandbox, "d/a.txt")
    assert r.ok and r.payload == b"hi\n"
    assert list_files(sandbox, "**/*.txt") == ["b.txt", "d/a.txt"]
    assert read_file(sandbox, "nope").error_code is ToolError.NOT_FOUND
    r = invoke(ToolRequest(Tool.WRITE_FILE, {"path": "d", "content": ""}), sandbox)
    assert r.error_code is ToolError.BAD_ARGS


def test_list_files_rejects_escape(sandbox):
    r = invoke(ToolRequest(Tool.LIST_FILES, {"glob": "../*"}), sandbox)
    assert r.error_code is ToolError.PATH_ESCAPE


@pytest.mark.parametrize("tool,args", [
    (Tool.READ_FILE, {}),
    (Tool.READ_FILE, {"path": "a", "extra": 1}),
    (Tool.WRITE_FILE, {"path": "a"}),
    (Tool.RUN_COMMAND, {"argv": []}),
    (Tool.WEB_SCRAPE, {"url": "file:///etc/passwd"}),
    (Tool.GIT, {"args": ["push"]}),
    (Tool.LIST_FILES, {"glob": 3}),
])
def test_schema_violations(tool, args, sandbox):
    assert validate_args(ToolRequest(tool, args)) is not None
    assert invoke(ToolRequest(tool, args), sandbox).error_code is ToolError.BAD_ARGS


def test_run_command(sandbox):
    write_file(sandbox, "p.py", "import sys\nprint(sys.stdin.read().upper())\nsys.exit(3)\n")
    r = invoke(ToolRequest(Tool.RUN_COMMAND, {"argv": ["python", "p.py"], "stdin": "abc"}), sandbox)
    assert r.ok and r.exit_code == 3 and r.stdout == b"ABC\n"


def test_run_command_allowlist_and_paths(sandbox):
    r = invoke(ToolRequest(Tool.RUN_COMMAND, {"argv": ["sh", "-c", "true"]}), sandbox)
    assert r.error_code is ToolError.NOT_ALLOWED
    r = invoke(ToolRequest(Tool.RUN_COMMAND, {"argv": ["python", "/etc/passwd"]}), sandbox)
    assert r.error_code is ToolError.PATH_ESCAPE
    r = invoke(ToolRequest(Tool.RUN_COMMAND, {"argv": ["python", "x.py"], "cwd": ".."}), sandbox)
    assert r.error_code is ToolError.PATH_ESCAPE


def test_run_command_timeout(sandbox):
    sandbox.command_timeout = 0.5
    write_file(sandbox, "slow.py", "print('partial', flush=True)\nwhile True: pass\n")
    r = invoke(ToolRequest(Tool.RUN_COMMAND, {"argv": ["python", "slow.py"]}), sandbox)
    assert r.error_code is ToolError.TIMEOUT
    assert r.status_label() == "ERROR(TIMEOUT)"


def test_run_command_env_is_scrubbed(sandbox, monkeypatch):
    monkeypatch.setenv("SECRET_TOKEN", "hunter2")
    write_file(sandbox, "e.py", "import os\nprint(sorted(os.environ))\n")
    r = invoke(ToolRequest(Tool.RUN_COMMAND, {"argv": ["python", "e.py"]}), sandbox)
    assert b"SECRET_TOKEN" not in r.stdout


def test_git_is_pinned(sandbox):
    assert invoke(ToolRequest(Tool.GIT, {"args": ["init", "-q"]}), sandbox).ok
    write_file(sandbox, "a.txt", "a")
    invoke(ToolRequest(Tool.GIT, {"args": ["add", "-A"]}), sandbox)
    c = invoke(ToolRequest(Tool.GIT, {"args": ["commit", "-q", "-m", "m"]}), sandbox)
    assert c.ok and c.exit_code == 0
    head = invoke(ToolRequest(Tool.GIT, {"args": ["rev-parse", "HEAD"]}), sandbox).payload["output"]
    # same content, identity and timestamp give the same commit in another workspace
    other = type(sandbox)(sandbox.root.parent / "ws2")
    other.root.mkdir()
    invoke(ToolRequest(Tool.GIT, {"args": ["init", "-q"]}), other)
    write_file(other, "a.txt", "a")
    invoke(ToolRequest(Tool.GIT, {"args": ["add", "-A"]}), other)
    invoke(ToolRequest(Tool.GIT, {"args": ["commit", "-q", "-m", "m"]}), other)
    assert invoke(ToolRequest(Tool.GIT, {"args": ["rev-parse", "HEAD"]}), other).payload["output"] == head


@pytest.mark.parametrize("args", [["status", "-C", "/"], ["log", "--git-dir=/tmp"], ["init", "elsewhere"]])
def test_git_forbidden(args, sandbox):
    assert invoke(ToolRequest(Tool.GIT, {"args": args}), sandbox).error_code is ToolError.NOT_ALLOWED


def test_web_scrape_fixture_and_offline(sandbox, tmp_path):
    url = "https://docs.example.org/x"
    register_fixture(tmp_path / "fx", url, b"<p>hi</p>")
    sandbox.fixtures_dir = tmp_path / "fx"
    r = invoke(ToolRequest(Tool.WEB_SCRAPE, {"url": url}), sandbox)
    assert r.ok and r.payload == b"<p>hi</p>"
    assert r.observed == {"url": url, "body_sha256": hashlib.sha256(b"<p>hi</p>").hexdigest()}
    r = invoke(ToolRequest(Tool.WEB_SCRAPE, {"url": "https://docs.example.org/missing"}), sandbox)
    assert r.error_code is ToolError.NETWORK_DISABLED


def test_recorder_sees_every_call(sandbox):
    rec = TraceRecorder(str(sandbox.root))
    sandbox.recorder = rec
    write_file(sandbox, "a", "x")
    read_file(sandbox, "../b")
    invoke(ToolRequest(Tool.READ_FILE, {}), sandbox)
    assert [e["status"] for e in rec.raw.entries] == ["OK", "ERROR(PATH_ESCAPE)", "ERROR(BAD_ARGS)"]


def test_command_output_hides_sandbox_location(sandbox):
    res = invoke(ToolRequest(Tool.RUN_COMMAND, {"argv": ["python", "missing.py"]}), sandbox)
    assert res.exit_code != 0
    assert str(sandbox.root).encode() not in res.stderr
    assert b"missing.py" in res.stderr
