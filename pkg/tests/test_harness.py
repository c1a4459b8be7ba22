import random
import shutil
from fractions import Fraction
from types import SimpleNamespace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualorch.core import Category, TestCase
from dualorch.harness import (
    BIT_EXACT,
    COLUMNS,
    DEFAULT_POLICY,
    ExecutableSpec,
    ExecutionOutcome,
    HarnessError,
    HarnessReport,
    HarnessRow,
    NormalizationPolicy,
    build_harness_report,
    computational_accuracy,
    execute_program,
    is_successful_run,
    outcomes_equal,
    reference_outcome,
)

WS = b" \t\r\n\x0b\x0c"


def _normalize_oracle(data: bytes) -> bytes:
    # byte-at-a-time reimplementation of the default policy
    out = bytearray()
    i = 0
    while i < len(data):
        if data[i:i + 2] == b"\r\n":
            out += b"\n"
            i += 2
        else:
            out.append(data[i])
            i += 1
    lines = bytes(out).split(b"\n")
    cleaned = []
    for line in lines:
        end = len(line)
        while end and line[end - 1] in WS:
            end -= 1
        cleaned.append(line[:end])
    while cleaned and cleaned[-1] == b"":
        cleaned.pop()
    return b"\n".join(cleaned)


@given(st.binary(max_size=40).map(lambda b: bytes(WS[x % 6] if x % 3 else 97 + x % 3 for x in b)))
def test_normalizer_matches_oracle(data):
    assert DEFAULT_POLICY.normalize(data) == _normalize_oracle(data)


def test_policies():
    assert DEFAULT_POLICY.normalize(b"a \r\nb\t\n\n\n") == b"a\nb"
    assert BIT_EXACT.normalize(b"a \r\n") == b"a \r\n"
    a = ExecutionOutcome(0, b"x\n", b"warn")
    b = ExecutionOutcome(0, b"x", b"other")
    assert outcomes_equal(a, b)
    assert not outcomes_equal(a, b, NormalizationPolicy(compare_stderr=True))
    assert not outcomes_equal(a, ExecutionOutcome(1, b"x"))
    assert not outcomes_equal(a, ExecutionOutcome(0, b"x", timed_out=True))
    assert not outcomes_equal(ExecutionOutcome(0, b"", produced_files={"F": b"1"}), ExecutionOutcome(0, b""))
    assert outcomes_equal(ExecutionOutcome(0, b"", produced_files={"F": b"1\r\n"}),
                          ExecutionOutcome(0, b"", produced_files={"F": b"1"}))


def test_ca_counts_equal_outcomes():
    tests = [TestCase(f"t{i}") for i in range(7)]
    good = ExecutionOutcome(0, b"ok")
    gen = lambda t: good if int(t.id[1:]) % 3 else ExecutionOutcome(0, b"no")
    assert computational_accuracy(gen, lambda t: good, tests) == Fraction(4, 7)
    with pytest.raises(ValueError):
        computational_accuracy(gen, gen, [])


def _workspace(sandbox, program, label):
    src = program.resolve(f"programs/{program.id}/translations/{label}.py")
    shutil.copyfile(src, sandbox.root / "t.py")
    return ExecutableSpec(entry="t.py")


def _ca(sandbox, program, spec):
    tests = program.active_tests
    return computational_accuracy(lambda t: execute_program(spec, t, sandbox),
                                  lambda t: reference_outcome(program, t), tests)


@pytest.mark.parametrize("pid", ["NC101", "SQ101", "ST101"])
def test_identical_translation_scores_one(pid, programs, sandbox):
    p = programs[pid]
    assert _ca(sandbox, p, _workspace(sandbox, p, "correct")) == 1
    assert _ca(sandbox, p, _workspace(sandbox, p, "near_miss")) < 1
    assert _ca(sandbox, p, _workspace(sandbox, p, "broken")) == 0


def test_one_byte_mutation_fails(programs, sandbox):
    p = programs["NC101"]
    text = p.resolve(p.reference_path).read_text().replace('f"SUM=', 'f"SUM:')
    (sandbox.root / "t.py").write_text(text)
    ca = _ca(sandbox, p, ExecutableSpec(entry="t.py"))
    assert ca == 0
    record = SimpleNamespace(error=None, ca=ca)
    assert not is_successful_run(record)
    assert is_successful_run(SimpleNamespace(error=None, ca=Fraction(1)))


def test_golden_equals_live_reference(suite):
    for p in suite:
        for t in p.active_tests:
            assert outcomes_equal(reference_outcome(p, t), reference_outcome(p, t, prefer_golden=False))


def test_missing_executable(sandbox):
    with pytest.raises(HarnessError):
        execute_program(ExecutableSpec(entry="none.py"), TestCase("t"), sandbox)


def test_timeout_is_an_outcome(sandbox):
    (sandbox.root / "t.py").write_text("while True: pass\n")
    o = execute_program(ExecutableSpec(entry="t.py"), TestCase("t"), sandbox, timeout=0.3)
    assert o.timed_out and not outcomes_equal(o, o)


def test_produced_files_collected(sandbox):
    (sandbox.root / "t.py").write_text("open('R.DAT', 'w').write('1\\n')\nprint('done')\n")
    o = execute_program(ExecutableSpec(entry="t.py"), TestCase("t"), sandbox)
    assert o.produced_files == {"R.DAT": b"1\n"} and o.stdout == b"done\n"
    # output dir is cleared between executions
    (sandbox.root / "t.py").write_text("print('x')\n")
    assert execute_program(ExecutableSpec(entry="t.py"), TestCase("t"), sandbox).produced_files == {}


def test_row_identity_enforced():
    with pytest.raises(ValueError):
        HarnessRow(1, 1, 0, 1, 1, 0, 0, 3)


def test_nc_baseline_row_roundtrip():
    row = HarnessRow(90, 90, 0, 4352, 0, 6, 11, 4369)
    report = HarnessReport({Category.NC: row})
    assert HarnessReport.from_csv(report.to_csv()).rows[Category.NC] == row
    assert HarnessReport.from_json(report.to_json()).rows[Category.NC] == row
    assert report.to_csv().splitlines()[0] == "Module," + ",".join(COLUMNS)


def _records(rng, n):
    out = []
    for i in range(n):
        executed = rng.random() < 0.8
        results = {f"t{j}": rng.random() < 0.7 for j in range(rng.randint(1, 5))} if executed else {}
        out.append(SimpleNamespace(program_id=f"P{i}", executed=executed, test_results=results))
    return out


def test_report_counts_match_oracle():
    rng = random.Random(5)
    for _ in range(50):
        recs = {c: _records(rng, rng.randint(1, 6)) for c in (Category.NC, Category.SQ)}
        report = build_harness_report(recs)
        for cat, rs in recs.items():
            row = report.rows[cat]
            passed = sum(v for r in rs if r.executed for v in r.test_results.values())
            failed = sum(not v for r in rs if r.executed for v in r.test_results.values())
            assert row.as_tuple() == (len(rs), sum(r.executed for r in rs),
                                      sum(not r.executed for r in rs), passed, failed, 0, 0,
                                      passed + failed)
        t = report.total()
        assert t.passed + t.failed + t.deleted + t.inspect == t.total


def test_report_uses_manifest_annotations(suite):
    recs = {p.category: [] for p in suite}
    for p in suite:
        recs[p.category].append(SimpleNamespace(program_id=p.id, executed=True,
                                                test_results={t.id: True for t in p.active_tests}))
    report = build_harness_report(recs, suite)
    nc = report.rows[Category.NC]
    assert (nc.programs, nc.deleted, nc.inspect) == (3, 1, 1)
    assert report.total().total == sum(len(p.tests) for p in suite)
