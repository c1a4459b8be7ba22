"""Differential execution harness.

Runs reference and translated programs on the same test inputs, compares
what they observably do, and turns the comparison into Computational
Accuracy (fraction of tests with equal outcomes) and a per-run success
verdict. Reports aggregate per benchmark category with the columns
Programs, Executed, Error, Pass, Fail, Deleted, Inspect, Total.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import shutil
import tempfile
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any

from .core import Category, ProgramUnit, TestCase, TestStatus
from .tools import Sandbox, Tool, ToolError, ToolRequest, confine, invoke, relpath


class HarnessError(RuntimeError):
    """The harness could not run the program at all (not a program failure)."""


@dataclass(frozen=True)
class ExecutableSpec:
    command: tuple[str, ...] = ("python", "{entry}")
    entry: str = "main.py"
    output_dir: str = "out"

    def to_dict(self) -> dict[str, Any]:
        return {"command": list(self.command), "entry": self.entry, "output_dir": self.output_dir}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExecutableSpec:
        return cls(tuple(d.get("command", cls.command)), d["entry"], d.get("output_dir", "out"))


@dataclass(frozen=True)
class ExecutionOutcome:
    exit_code: int
    stdout: bytes
    stderr: bytes = b""
    produced_files: Mapping[str, bytes] = field(default_factory=dict)
    timed_out: bool = False

    def to_golden(self) -> dict[str, Any]:
        # stderr is left out: it is not compared by default and tracebacks
        # embed temporary paths, which would make goldens unreproducible
        return {"exit_code": self.exit_code, "stdout": self.stdout.decode("latin-1")}


@dataclass(frozen=True)
class NormalizationPolicy:
    newlines: bool = True
    trailing_whitespace: bool = True
    trailing_blank_lines: bool = True
    compare_stderr: bool = False

    def normalize(self, data: bytes) -> bytes:
        if self.newlines:
            data = data.replace(b"\r\n", b"\n")
        if self.trailing_whitespace:
            data = b"\n".join(line.rstrip() for line in data.split(b"\n"))
        if self.trailing_blank_lines:
            data = data.rstrip(b"\n")
        return data


DEFAULT_POLICY = NormalizationPolicy()
BIT_EXACT = NormalizationPolicy(False, False, False)


def _clear_dir(path: Path) -> None:
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True)


def _collect_files(sandbox: Sandbox, out: Path) -> dict[str, bytes]:
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file():
            files[Path(p).relative_to(out).as_posix()] = p.read_bytes()
    return files


def execute_program(spec: ExecutableSpec, test: TestCase, sandbox: Sandbox,
                    timeout: float | None = None) -> ExecutionOutcome:
    """Run ``spec`` on one test input through the RUN_COMMAND tool.

    The declared output directory is emptied first and becomes the working
    directory; everything left in it afterwards is a produced file.
    """
    entry = confine(sandbox, spec.entry)
    if not entry.is_file():
        raise HarnessError(f"missing executable {spec.entry}")
    out = confine(sandbox, spec.output_dir)
    _clear_dir(out)
    entry_arg = Path(entry).relative_to(sandbox.root).as_posix()
    depth = len(Path(relpath(sandbox, out)).parts)
    entry_from_out = "/".join([".."] * depth + [entry_arg])
    argv = [part.replace("{entry}", entry_from_out) for part in spec.command] + list(test.argv)
    box = sandbox if timeout is None else replace(sandbox, command_timeout=timeout)
    result = invoke(
        ToolRequest(Tool.RUN_COMMAND, {
            "argv": argv,
            "cwd": relpath(sandbox, out),
            "stdin": test.stdin_payload.decode("latin-1"),
        }),
        box,
    )
    if result.error_code is ToolError.TIMEOUT:
        return ExecutionOutcome(-1, result.stdout, result.stderr, _collect_files(sandbox, out), True)
    if not result.ok:
        raise HarnessError(result.stderr.decode("utf-8", "replace"))
    return ExecutionOutcome(result.exit_code, result.stdout, result.stderr,
                            _collect_files(sandbox, out))


def outcomes_equal(a: ExecutionOutcome, b: ExecutionOutcome,
                   policy: NormalizationPolicy = DEFAULT_POLICY) -> bool:
    if a.timed_out or b.timed_out:
        return False
    if a.exit_code != b.exit_code:
        return False
    norm = policy.normalize
    if norm(a.stdout) != norm(b.stdout):
        return False
    if policy.compare_stderr and norm(a.stderr) != norm(b.stderr):
        return False
    if set(a.produced_files) != set(b.produced_files):
        return False
    return all(norm(a.produced_files[k]) == norm(b.produced_files[k]) for k in a.produced_files)


def computational_accuracy(
    generated_exec: Callable[[TestCase], ExecutionOutcome],
    reference_exec: Callable[[TestCase], ExecutionOutcome],
    tests: Sequence[TestCase],
    policy: NormalizationPolicy = DEFAULT_POLICY,
) -> Fraction:
    if not tests:
        raise ValueError("computational accuracy needs at least one test")
    equal = sum(outcomes_equal(generated_exec(t), reference_exec(t), policy) for t in tests)
    return Fraction(equal, len(tests))


def is_successful_run(record: Any) -> bool:
    """No recorded error and every test passed."""
    return record.error is None and record.ca is not None and record.ca == 1


# --------------------------------------------------------------------------
# reference outcomes


def golden_outcome(test: TestCase) -> ExecutionOutcome | None:
    if test.golden is None:
        return None
    g = test.golden
    return ExecutionOutcome(
        int(g["exit_code"]),
        str(g.get("stdout", "")).encode("latin-1"),
        str(g.get("stderr", "")).encode("latin-1"),
        dict(test.expected_artifacts),
    )


_REFERENCE_CACHE: dict[tuple[str, str, bytes, tuple[str, ...]], ExecutionOutcome] = {}


def reference_outcome(program: ProgramUnit, test: TestCase, timeout: float = 10.0,
                      *, prefer_golden: bool = True) -> ExecutionOutcome:
    """Golden outputs when the manifest has them, else a live reference run."""
    if prefer_golden:
        golden = golden_outcome(test)
        if golden is not None:
            return golden
    ref = program.resolve(program.reference_path)
    if not ref.is_file():
        raise HarnessError(f"missing reference {ref}")
    digest = hashlib.sha256(ref.read_bytes()).hexdigest()
    key = (digest, test.id, test.stdin_payload, test.argv)
    cached = _REFERENCE_CACHE.get(key)
    if cached is not None:
        return cached
    with tempfile.TemporaryDirectory(prefix="dualorch-ref-") as tmp:
        box = Sandbox(Path(tmp), command_timeout=timeout)
        shutil.copyfile(ref, Path(tmp) / "reference.py")
        outcome = execute_program(ExecutableSpec(entry="reference.py"), test, box)
    _REFERENCE_CACHE[key] = outcome
    return outcome


# --------------------------------------------------------------------------
# reports

COLUMNS = ("Programs", "Executed", "Error", "Pass", "Fail", "Deleted", "Inspect", "Total")


@dataclass(frozen=True)
class HarnessRow:
    programs: int = 0
    executed: int = 0
    error: int = 0
    passed: int = 0
    failed: int = 0
    deleted: int = 0
    inspect: int = 0
    total: int = 0

    def __post_init__(self) -> None:
        if self.passed + self.failed + self.deleted + self.inspect != self.total:
            raise ValueError(
                f"row violates pass+fail+deleted+inspect=total: {self.as_tuple()}"
            )

    def as_tuple(self) -> tuple[int, ...]:
        return (self.programs, self.executed, self.error, self.passed, self.failed,
                self.deleted, self.inspect, self.total)

    def __add__(self, other: HarnessRow) -> HarnessRow:
        return HarnessRow(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))


@dataclass(frozen=True)
class HarnessReport:
    rows: dict[Category, HarnessRow] = field(default_factory=dict)

    def total(self) -> HarnessRow:
        acc = HarnessRow()
        for row in self.rows.values():
            acc = acc + row
        return acc

    def ordered(self) -> list[tuple[Category, HarnessRow]]:
        order = list(Category)
        return sorted(self.rows.items(), key=lambda kv: order.index(kv[0]))

    def to_json(self) -> str:
        return json.dumps({
            "columns": list(COLUMNS),
            "rows": {c.value: dict(zip(COLUMNS, r.as_tuple())) for c, r in self.ordered()},
            "total": dict(zip(COLUMNS, self.total().as_tuple())),
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> HarnessReport:
        d = json.loads(text)
        return cls({
            Category(c): HarnessRow(*(int(v[k]) for k in COLUMNS)) for c, v in d["rows"].items()
        })

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("Module", *COLUMNS))
        for c, r in self.ordered():
            w.writerow((c.value, *r.as_tuple()))
        w.writerow(("Total", *self.total().as_tuple()))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> HarnessReport:
        rows = {}
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header[1:]) != COLUMNS:
            raise ValueError(f"unexpected harness report header {header}")
        for line in reader:
            if not line or line[0] == "Total":
                continue
            rows[Category(line[0])] = HarnessRow(*(int(x) for x in line[1:]))
        return cls(rows)


def build_harness_report(
    records_by_category: Mapping[Any, Iterable[Any]],
    suite: Iterable[ProgramUnit] = (),
) -> HarnessReport:
    """Aggregate run records into per-category counts.

    Pass/Fail count individual test cases of each record; Deleted/Inspect come
    from the suite manifest annotations of the programs that appear.
    """
    annotations: dict[str, tuple[int, int]] = {}
    for p in suite:
        annotations[p.id] = (
            sum(t.status is TestStatus.DELETED for t in p.tests),
            sum(t.status is TestStatus.INSPECT for t in p.tests),
        )
    rows: dict[Category, HarnessRow] = {}
    for key, records in records_by_category.items():
        cat = key if isinstance(key, Category) else Category.parse(str(key))
        programs: set[str] = set()
        executed: set[str] = set()
        counted: set[str] = set()
        passed = failed = deleted = inspect = 0
        for r in records:
            programs.add(r.program_id)
            if r.executed:
                executed.add(r.program_id)
                passed += sum(1 for ok in r.test_results.values() if ok)
                failed += sum(1 for ok in r.test_results.values() if not ok)
            if r.program_id not in counted:
                counted.add(r.program_id)
                d, i = annotations.get(r.program_id, (0, 0))
                deleted += d
                inspect += i
        row = HarnessRow(
            programs=len(programs), executed=len(executed), error=len(programs - executed),
            passed=passed, failed=failed, deleted=deleted, inspect=inspect,
            total=passed + failed + deleted + inspect,
        )
        rows[cat] = rows[cat] + row if cat in rows else row
    return HarnessReport(rows)
