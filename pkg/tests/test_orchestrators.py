from fractions import Fraction
from pathlib import Path

import pytest

from dualorch.core import ConfigError, FailureKind, Mode, Outcome, RunConfig, StageId, SystemState
from dualorch.gateway import BackendUnavailable, Edit, ProtocolError, Script, ScriptedBackend, StochasticStub
from dualorch.orchestrators import (
    apply_with_fallback,
    run_agentic,
    run_deterministic,
    run_program,
)
from dualorch.tools import Tool
from dualorch.trace import trace_hash

GOLDEN = Path(__file__).parent / "golden"
TARGET = "translated/NC101.py"


def _text(programs, label):
    p = programs["NC101"]
    return p.resolve(f"programs/NC101/translations/{label}.py").read_text()


def _edit(content):
    return {"kind": "CODE_EDIT", "edits": [{"path": TARGET, "content": content}]}


def _backend(*responses):
    return ScriptedBackend(Script(tuple(responses)))


def _det(programs, backend, **cfg):
    return run_deterministic(programs["NC101"], RunConfig(**cfg), backend)


def test_scripted_deterministic_matches_golden(programs, scripted):
    r = _det(programs, scripted)
    assert r.successful and r.ca == 1 and r.error is None
    assert r.stage_outcomes == {s: Outcome.PASSED for s in StageId}
    assert trace_hash(r.trace) == (GOLDEN / "nc101_deterministic_scripted.sha256").read_text().strip()


def test_validate_repair(programs):
    r = _det(programs, _backend(_edit(_text(programs, "broken")), _edit(_text(programs, "correct"))))
    assert r.successful
    compiles = [e for e in r.trace.entries if e.stage_id is StageId.VALIDATE and e.tool is Tool.RUN_COMMAND]
    assert len(compiles) == 2
    assert len(r.token_ledger.calls) == 2


def test_compile_failure_is_recorded_and_test_still_runs(programs):
    r = _det(programs, _backend(_edit(_text(programs, "broken"))))
    assert r.error is FailureKind.COMPILE_FAIL
    assert r.stage_outcomes[StageId.VALIDATE] is Outcome.FAILED
    assert r.stage_outcomes[StageId.TEST] is Outcome.FAILED
    assert r.ca == 0 and not r.successful
    # one initial edit plus max_retries repairs in each of VALIDATE and TEST
    assert len(r.token_ledger.calls) == 1 + 2 + 2


def test_test_repair_with_exact_patch(programs):
    patch = {"kind": "CODE_EDIT", "edits": [{
        "path": TARGET, "search": 'print(f"SUM={a + b:06d}")',
        "replace": 'print(f"SUM={(a + b) % 1000000:06d}")'}]}
    r = _det(programs, _backend(_edit(_text(programs, "near_miss")), patch))
    assert r.successful
    writes = [e for e in r.trace.entries if e.tool is Tool.WRITE_FILE]
    assert [w.strategy_id for w in writes] == ["whole_file_rewrite", "exact_patch"]


def test_persistent_test_failure(programs):
    r = _det(programs, _backend(_edit(_text(programs, "near_miss"))))
    assert r.error is FailureKind.TEST_FAIL and r.ca == Fraction(2, 3)
    assert r.test_results == {"t1": True, "t2": False, "t3": True}
    assert len(r.token_ledger.calls) == 3


def test_apply_failure(programs):
    r = _det(programs, _backend({"kind": "TOOL_ACTION", "tool": "LIST_FILES", "args": {"glob": "*"}}))
    assert r.error is FailureKind.TOOL_ERROR
    assert r.stage_outcomes[StageId.APPLY] is Outcome.FAILED
    assert r.stage_outcomes[StageId.PERSIST] is Outcome.SKIPPED
    # VALIDATE is gated on its flag alone, so it still runs and spends its repairs
    assert r.stage_outcomes[StageId.VALIDATE] is Outcome.FAILED
    assert len(r.token_ledger.calls) == 3 + 2
    # the orchestrator never executes a tool the model asked for
    assert Tool.LIST_FILES not in {e.tool for e in r.trace.entries}


def test_flags_disable_stages(programs, scripted):
    flags = {"enable_persist": False, "enable_validate": False, "enable_test": False}
    r = _det(programs, scripted, flags=flags)
    assert r.stage_outcomes[StageId.APPLY] is Outcome.PASSED
    assert all(r.stage_outcomes[s] is Outcome.SKIPPED for s in (StageId.PERSIST, StageId.VALIDATE, StageId.TEST))
    assert r.ca is None and not r.successful


def test_undeclared_flag(programs, scripted):
    with pytest.raises(ConfigError):
        _det(programs, scripted, flags={"enable_persist": True})


def test_global_timeout(programs, scripted):
    r = _det(programs, scripted, global_timeout=0.0)
    assert r.error is FailureKind.TIMEOUT
    assert set(r.stage_outcomes.values()) == {Outcome.SKIPPED}


class _Down:
    def complete(self, request):
        raise BackendUnavailable("down")


class _Crash:
    def complete(self, request):
        raise RuntimeError("bug")


def test_backend_down_gives_record(programs):
    r = _det(programs, _Down())
    assert r.error is FailureKind.TOOL_ERROR and not r.successful
    r = run_agentic(programs["NC101"], RunConfig(mode=Mode.AGENTIC), _Down())
    assert r.termination_reason == "FATAL_TOOL_ERROR"


def test_unexpected_exception_still_yields_record(programs):
    r = _det(programs, _Crash())
    assert r.error is FailureKind.TOOL_ERROR and r.ca == 0


def test_wrong_mode(programs, scripted):
    with pytest.raises(ValueError):
        run_deterministic(programs["NC101"], RunConfig(mode=Mode.AGENTIC), scripted)
    with pytest.raises(ValueError):
        run_agentic(programs["NC101"], RunConfig(), scripted)


def test_apply_with_fallback_order(sandbox):
    calls = []

    def fail(edits, box):
        calls.append("fail")
        return False

    def ok(edits, box):
        calls.append("ok")
        return True

    state = SystemState(".")
    out = apply_with_fallback(["fail", "ok", "fail"], [Edit("a\\b.py", "x")], sandbox, state,
                              {"fail": fail, "ok": ok})
    assert out is Outcome.PASSED and calls == ["fail", "ok"] and state.modified_files == {"a/b.py"}
    assert apply_with_fallback(["fail"], [], sandbox, registry={"fail": fail}) is Outcome.FAILED
    with pytest.raises(ValueError):
        apply_with_fallback([], [], sandbox)


# agentic


def _agentic(programs, backend, **cfg):
    return run_agentic(programs["NC101"], RunConfig(mode=Mode.AGENTIC, **cfg), backend)


def test_scripted_agentic(programs, scripted):
    r = _agentic(programs, scripted)
    assert r.termination_reason == "MODEL_FINISH" and r.step_count == 4 and r.successful
    assert r.tokens_spent == r.token_ledger.totals.total
    assert [e.tool for e in r.trace.entries][-4:-3] == [Tool.RUN_COMMAND]


def test_step_limit(programs):
    r = _agentic(programs, _backend({"kind": "TOOL_ACTION", "tool": "LIST_FILES", "args": {"glob": "*"}}),
                 max_agentic_steps=5)
    assert r.termination_reason == "STEP_LIMIT" and r.step_count == 5
    assert r.error is FailureKind.BUDGET_EXHAUSTED and r.ca == 0 and not r.executed


def test_token_budget_wins_ties(programs, scripted):
    r = _agentic(programs, scripted, max_agentic_steps=0, token_budget=10)
    assert r.termination_reason == "TOKEN_BUDGET" and r.step_count == 0


def test_token_budget_mid_run(programs):
    r = _agentic(programs, _backend({"kind": "TOOL_ACTION", "tool": "READ_FILE", "args": {"path": "src/NC101.cbl"}}),
                 token_budget=5000)
    assert r.termination_reason == "TOKEN_BUDGET"
    assert r.tokens_spent <= 5000


def test_fatal_tool_error(programs):
    r = _agentic(programs, _backend({"kind": "TOOL_ACTION", "tool": "READ_FILE", "args": {"path": "../x"}}))
    assert r.termination_reason == "FATAL_TOOL_ERROR" and r.step_count == 3
    assert r.error is FailureKind.TOOL_ERROR


def test_protocol_errors_consume_steps(programs):
    class Bad:
        def complete(self, request):
            raise ProtocolError("nope")

    r = _agentic(programs, Bad(), max_agentic_steps=4)
    assert r.termination_reason == "STEP_LIMIT" and r.step_count == 4


def test_finish_with_failing_translation(programs):
    r = _agentic(programs, _backend(_edit(_text(programs, "near_miss")), {"kind": "FINISH", "status": "done"}))
    assert r.termination_reason == "MODEL_FINISH"
    assert r.error is FailureKind.TEST_FAIL and r.ca == Fraction(2, 3)


def test_stub_reproducible_per_seed(programs, hints):
    stub = StochasticStub(hints)
    cfg = RunConfig(mode=Mode.AGENTIC, seed=3, backend={"kind": "stub", "model": "stub"})
    a = run_program(programs["NC101"], cfg, stub)
    b = run_program(programs["NC101"], cfg, stub)
    assert trace_hash(a.trace) == trace_hash(b.trace)
    assert a.token_ledger == b.token_ledger
    hashes = {trace_hash(run_program(programs["NC101"], cfg.replace(seed=s), stub).trace) for s in range(8)}
    assert len(hashes) > 1
