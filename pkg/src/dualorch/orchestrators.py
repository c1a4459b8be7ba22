"""The two execution engines.

:func:`run_deterministic` walks a fixed stage plan; the model only supplies
code content, and every branch is decided by gate predicates over observable
state. :func:`run_agentic` hands control to the model: each turn it picks a
tool, an edit, or termination. Both use the same prompts, tools and harness,
and both always return exactly one :class:`~dualorch.records.RunRecord`.
"""

from __future__ import annotations

import logging
import shutil
import tempfile
import time
from collections.abc import Callable, Sequence
from contextlib import ExitStack
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from .core import (
    APPLY_STRATEGIES,
    FailureKind,
    Mode,
    Outcome,
    ProgramUnit,
    RunConfig,
    StageId,
    SystemState,
    build_stage_plan,
    canonical_json,
    evaluate_gate,
)
from .gateway import (
    BackendUnavailable,
    Edit,
    Message,
    ModelRequest,
    ModelResponse,
    ProtocolError,
    ResponseKind,
    Role,
    TokenLedger,
    complete,
    estimate_tokens,
)
from .harness import (
    ExecutableSpec,
    HarnessError,
    execute_program,
    outcomes_equal,
    reference_outcome,
)
from .prompts import PromptBundle, get_bundle
from .records import RunRecord
from .tools import Sandbox, Tool, ToolRequest, ToolResult, invoke
from .trace import ToolCallTrace, TraceRecorder

log = logging.getLogger(__name__)

FATAL_REPEAT = 3
TOOL_OUTPUT_LIMIT = 2000


def target_path(program: ProgramUnit) -> str:
    return f"translated/{program.id}.py"


def source_path(program: ProgramUnit) -> str:
    suffix = Path(program.source_path).suffix or ".cbl"
    return f"src/{program.id}{suffix}"


# --------------------------------------------------------------------------
# edit application strategies


def exact_patch(edits: Sequence[Edit], sandbox: Sandbox) -> bool:
    """Search/replace where each search string occurs exactly once."""
    patched = []
    for e in edits:
        current = invoke(ToolRequest(Tool.READ_FILE, {"path": e.path}), sandbox)
        if not current.ok or e.search is None or e.replace is None:
            return False
        text = current.payload.decode("utf-8", "replace")
        if text.count(e.search) != 1:
            return False
        patched.append((e.path, text.replace(e.search, e.replace)))
    for path, text in patched:
        if not invoke(ToolRequest(Tool.WRITE_FILE, {"path": path, "content": text}), sandbox).ok:
            return False
    return True


def whole_file_rewrite(edits: Sequence[Edit], sandbox: Sandbox) -> bool:
    for e in edits:
        args: dict[str, Any] = {"path": e.path}
        if e.content is not None:
            args["content"] = e.content
        if not invoke(ToolRequest(Tool.WRITE_FILE, args), sandbox).ok:
            return False
    return True


STRATEGIES: dict[str, Callable[[Sequence[Edit], Sandbox], bool]] = {
    "exact_patch": exact_patch,
    "whole_file_rewrite": whole_file_rewrite,
}


def apply_with_fallback(strategies: Sequence[str], edits: Sequence[Edit], sandbox: Sandbox,
                        state: SystemState | None = None,
                        registry: dict[str, Callable] | None = None) -> Outcome:
    """Try each strategy in list order; stop at the first that succeeds."""
    if not strategies:
        raise ValueError("at least one strategy is required")
    registry = STRATEGIES if registry is None else registry
    recorder = sandbox.recorder
    try:
        for sid in strategies:
            if recorder is not None:
                recorder.strategy = sid
            if registry[sid](edits, sandbox):
                if state is not None:
                    for e in edits:
                        state.mark_modified(e.path.replace("\\", "/"))
                return Outcome.PASSED
        return Outcome.FAILED
    finally:
        if recorder is not None:
            recorder.strategy = None


# --------------------------------------------------------------------------
# shared run plumbing


def _truncate(data: bytes, limit: int) -> str:
    text = data.decode("utf-8", "replace")
    return text if len(text) <= limit else text[:limit] + "...[truncated]"


def tool_result_message(request: ToolRequest, result: ToolResult) -> bytes:
    return canonical_json({
        "tool": request.tool.value,
        "status": result.status_label(),
        "exit_code": result.exit_code,
        "stdout": _truncate(result.stdout, TOOL_OUTPUT_LIMIT),
        "stderr": _truncate(result.stderr, TOOL_OUTPUT_LIMIT),
    }).encode()


@dataclass
class TestEvaluation:
    __test__ = False

    ca: Fraction
    results: dict[str, bool]
    executed: bool
    error: FailureKind | None
    details: str = ""


class _Run:
    """Per-run mutable context: sandbox, trace, ledger, conversation."""

    def __init__(self, program: ProgramUnit, config: RunConfig, backend: Any,
                 workdir: Path, run_index: int, fixtures_dir: Path | None,
                 transcript: list | None):
        self.program = program
        self.config = config
        self.backend = backend
        self.run_index = run_index
        self.transcript = transcript
        self.bundle: PromptBundle = get_bundle(config.prompts)
        self.recorder = TraceRecorder(str(workdir), f"{program.id}:{config.mode.value}:{run_index}",
                                      config.fingerprint())
        self.sandbox = Sandbox(
            workdir,
            command_timeout=config.command_timeout,
            fixtures_dir=fixtures_dir,
            git_timestamp=1_500_000_000 + config.seed % 1_000_000_000,
        )
        self.ledger = TokenLedger(config.model_id)
        self.state = SystemState(workspace_root=".")
        self.messages: list[Message] = []
        self.last_evaluation: TestEvaluation | None = None
        self.target = target_path(program)
        self.source = source_path(program)
        self._prepare_workspace()
        self.sandbox.recorder = self.recorder

    def _prepare_workspace(self) -> None:
        root = self.sandbox.root
        (root / "src").mkdir(parents=True, exist_ok=True)
        (root / "translated").mkdir(exist_ok=True)
        shutil.copyfile(self.program.resolve(self.program.source_path), root / self.source)
        invoke(ToolRequest(Tool.GIT, {"args": ["init", "-q"]}), self.sandbox)

    def open_conversation(self) -> None:
        """Read the legacy source through the tool layer and seed the prompt."""
        read = invoke(ToolRequest(Tool.READ_FILE, {"path": self.source}), self.sandbox)
        source = read.payload.decode("utf-8", "replace") if read.ok else ""
        self.messages = [
            Message(Role.SYSTEM, self.bundle.system.encode()),
            Message(Role.USER, self.bundle.task_message(
                self.program.id, self.source, self.target, source).encode()),
        ]

    def request(self) -> ModelRequest:
        return ModelRequest(self.bundle.id, tuple(self.messages), temperature=float(
            self.config.backend.get("temperature", 0.0)), seed=self.config.seed,
            program_id=self.program.id)

    def ask(self) -> ModelResponse:
        response = complete(self.backend, self.request(), self.ledger, self.transcript)
        self.messages.append(Message(Role.ASSISTANT, response.text().encode()))
        return response

    def say(self, text: str, role: Role = Role.USER) -> None:
        self.messages.append(Message(role, text.encode() if isinstance(text, str) else text))

    def evaluate(self) -> TestEvaluation:
        """Run every active test against the reference; exactly the CA of the run."""
        tests = self.program.active_tests
        spec = ExecutableSpec(entry=self.target, output_dir="out")
        results: dict[str, bool] = {}
        timed_out = crashed = False
        failures = []
        for t in tests:
            ref = reference_outcome(self.program, t, self.config.command_timeout)
            try:
                got = execute_program(spec, t, self.sandbox)
            except HarnessError as exc:
                return TestEvaluation(Fraction(0), {}, False, FailureKind.TEST_FAIL, str(exc))
            ok = outcomes_equal(got, ref)
            results[t.id] = ok
            timed_out |= got.timed_out
            crashed |= (not got.timed_out and got.exit_code != 0 and ref.exit_code == 0)
            if not ok:
                failures.append(
                    f"test {t.id}: expected stdout {ref.stdout[:200]!r}, got {got.stdout[:200]!r}"
                    f" (exit {got.exit_code}); stderr {_truncate(got.stderr, 300)}"
                )
        ca = Fraction(sum(results.values()), len(tests))
        error = None
        if timed_out:
            error = FailureKind.TIMEOUT
        elif crashed:
            error = FailureKind.RUNTIME_ERROR
        elif ca < 1:
            error = FailureKind.TEST_FAIL
        return TestEvaluation(ca, results, True, error, "\n".join(failures))

    def record(self, *, ca, successful, error, results, executed, wall_time,
               termination_reason=None, step_count=0, tokens_spent=0) -> RunRecord:
        return RunRecord(
            program_id=self.program.id,
            config=self.config,
            trace=self.recorder.canonical(),
            token_ledger=self.ledger,
            stage_outcomes=dict(self.state.stage_outcomes),
            ca=ca,
            successful=successful,
            wall_time=wall_time,
            error=error,
            category=self.program.category,
            run_index=self.run_index,
            test_results=results,
            executed=executed,
            termination_reason=termination_reason,
            step_count=step_count,
            tokens_spent=tokens_spent,
        )


def _workspace(stack: ExitStack, workdir: str | Path | None) -> Path:
    if workdir is None:
        return Path(stack.enter_context(tempfile.TemporaryDirectory(prefix="dualorch-run-")))
    path = Path(workdir)
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


def _failed_record(program: ProgramUnit, config: RunConfig, run_index: int, start: float,
                   exc: BaseException) -> RunRecord:
    log.error("run %s/%s/%d aborted: %r", program.id, config.mode.value, run_index, exc)
    return RunRecord(
        program_id=program.id, config=config,
        trace=ToolCallTrace((), f"{program.id}:{config.mode.value}:{run_index}", config.fingerprint()),
        token_ledger=TokenLedger(config.model_id), ca=Fraction(0), successful=False,
        wall_time=time.perf_counter() - start, error=FailureKind.TOOL_ERROR,
        category=program.category, run_index=run_index,
    )


# --------------------------------------------------------------------------
# deterministic engine


def run_deterministic(program: ProgramUnit, config: RunConfig, backend: Any, *,
                      workdir: str | Path | None = None, run_index: int = 0,
                      fixtures_dir: Path | None = None,
                      transcript: list | None = None) -> RunRecord:
    if config.mode is not Mode.DETERMINISTIC:
        raise ValueError("run_deterministic needs a DETERMINISTIC config")
    plan = build_stage_plan(config)
    for stage in plan.stages:
        # surfaces undeclared flags as a configuration error before any work
        evaluate_gate(stage.gate, SystemState(workspace_root="."), config)
    start = time.perf_counter()
    with ExitStack() as stack:
        try:
            run = _Run(program, config, backend, _workspace(stack, workdir), run_index,
                       fixtures_dir, transcript)
            return _deterministic(run, start)
        except Exception as exc:  # a run always yields a record
            return _failed_record(program, config, run_index, start, exc)


def _code_edit(run: _Run, strategies: Sequence[str], max_retries: int,
               first_prompt: str | None = None) -> Outcome:
    """Ask for a CODE_EDIT and apply it, re-prompting on wrong kinds and
    unapplicable edits, at most ``max_retries`` extra times."""
    if first_prompt is not None:
        run.say(first_prompt)
    for attempt in range(max_retries + 1):
        try:
            response = run.ask()
        except ProtocolError as exc:
            run.say(f"Malformed reply ({exc}). {run.bundle.wrong_kind}")
            continue
        if response.kind is not ResponseKind.CODE_EDIT:
            run.say(run.bundle.wrong_kind)
            continue
        outcome = apply_with_fallback(strategies, response.content, run.sandbox, run.state)
        if outcome is Outcome.PASSED:
            return outcome
        run.say(run.bundle.edit_failed)
    return Outcome.FAILED


def _validate(run: _Run) -> tuple[bool, str]:
    """Compile (without running) every modified Python file."""
    targets = sorted(p for p in run.state.modified_files if p.endswith(".py"))
    if run.target not in targets:
        targets = sorted({*targets, run.target})
    problems = []
    for path in targets:
        result = invoke(ToolRequest(Tool.RUN_COMMAND, {"argv": [
            "python", "-c",
            "import sys; compile(open(sys.argv[1], 'rb').read(), sys.argv[1], 'exec')",
            path,
        ]}), run.sandbox)
        if not result.ok or result.exit_code != 0:
            problems.append(_truncate(result.stderr, run.config.reprompt_stderr_limit))
    return not problems, "\n".join(problems)[: run.config.reprompt_stderr_limit]


def _persist(run: _Run) -> bool:
    add = invoke(ToolRequest(Tool.GIT, {"args": ["add", "-A"]}), run.sandbox)
    commit = invoke(ToolRequest(Tool.GIT, {"args": [
        "commit", "-q", "-m", f"translate {run.program.id}"]}), run.sandbox)
    return add.ok and add.exit_code == 0 and commit.ok and commit.exit_code == 0


def _deterministic(run: _Run, start: float) -> RunRecord:
    config = run.config
    plan = build_stage_plan(config)
    errors: list[FailureKind] = []
    evaluation: TestEvaluation | None = None
    run.recorder.stage = StageId.APPLY
    run.open_conversation()
    for stage in plan.stages:
        if time.perf_counter() - start > plan.global_timeout:
            errors.append(FailureKind.TIMEOUT)
            run.state.record(stage.id, Outcome.SKIPPED)
            continue
        run.recorder.stage = stage.id
        if not evaluate_gate(stage.gate, run.state, config):
            run.state.record(stage.id, Outcome.SKIPPED)
            continue
        try:
            outcome = _run_stage(run, stage, errors)
        except BackendUnavailable:
            errors.append(FailureKind.TOOL_ERROR)
            outcome = Outcome.FAILED
        if stage.id is StageId.TEST:
            evaluation = run.last_evaluation
        run.state.record(stage.id, outcome)
    run.recorder.stage = None

    ca = evaluation.ca if evaluation else None
    error = errors[0] if errors else None
    successful = error is None and ca == 1
    return run.record(
        ca=ca, successful=successful, error=error,
        results=evaluation.results if evaluation else {},
        executed=evaluation.executed if evaluation else False,
        wall_time=time.perf_counter() - start,
    )


def _run_stage(run: _Run, stage, errors: list[FailureKind]) -> Outcome:
    if stage.id is StageId.APPLY:
        outcome = _code_edit(run, stage.strategies, stage.max_retries)
        if outcome is Outcome.FAILED:
            errors.append(FailureKind.TOOL_ERROR)
        return outcome

    if stage.id is StageId.PERSIST:
        return Outcome.PASSED if _persist(run) else Outcome.FAILED

    if stage.id is StageId.VALIDATE:
        ok, details = _validate(run)
        for _ in range(stage.max_retries):
            if ok:
                break
            prompt = run.bundle.repair.format(stage="VALIDATE", details=details)
            _code_edit(run, APPLY_STRATEGIES, 0, first_prompt=prompt)
            ok, details = _validate(run)
        if not ok:
            errors.append(FailureKind.COMPILE_FAIL)
        return Outcome.PASSED if ok else Outcome.FAILED

    # TEST
    evaluation = run.evaluate()
    for _ in range(stage.max_retries):
        if evaluation.error is None or not evaluation.executed:
            break
        details = evaluation.details[: run.config.reprompt_stderr_limit]
        prompt = run.bundle.repair.format(stage="TEST", details=details)
        _code_edit(run, APPLY_STRATEGIES, 0, first_prompt=prompt)
        evaluation = run.evaluate()
    run.last_evaluation = evaluation
    if evaluation.error is not None:
        errors.append(evaluation.error)
        return Outcome.FAILED
    return Outcome.PASSED


# --------------------------------------------------------------------------
# agentic engine


@dataclass
class AgenticState:
    step_count: int = 0
    history: list[tuple[ModelResponse, Any]] = field(default_factory=list)
    tokens_spent: int = 0
    terminated: bool = False
    termination_reason: str | None = None  # MODEL_FINISH, STEP_LIMIT, TOKEN_BUDGET, FATAL_TOOL_ERROR

    def stop(self, reason: str) -> None:
        self.terminated = True
        self.termination_reason = reason


def run_agentic(program: ProgramUnit, config: RunConfig, backend: Any, *,
                workdir: str | Path | None = None, run_index: int = 0,
                fixtures_dir: Path | None = None,
                transcript: list | None = None) -> RunRecord:
    if config.mode is not Mode.AGENTIC:
        raise ValueError("run_agentic needs an AGENTIC config")
    start = time.perf_counter()
    with ExitStack() as stack:
        try:
            run = _Run(program, config, backend, _workspace(stack, workdir), run_index,
                       fixtures_dir, transcript)
            return _agentic(run, start)
        except Exception as exc:  # a run always yields a record
            return _failed_record(program, config, run_index, start, exc)


def _agentic(run: _Run, start: float) -> RunRecord:
    config = run.config
    st = AgenticState()
    run.recorder.stage = None
    run.open_conversation()
    last_failure: str | None = None
    repeats = 0
    while not st.terminated:
        # token budget is checked before the step limit so it wins ties
        projected = sum(estimate_tokens(m.content) for m in run.messages)
        if st.tokens_spent + projected > config.token_budget:
            st.stop("TOKEN_BUDGET")
            break
        if st.step_count >= config.max_agentic_steps:
            st.stop("STEP_LIMIT")
            break
        if time.perf_counter() - start > config.global_timeout:
            st.stop("STEP_LIMIT")
            break
        try:
            response = run.ask()
        except BackendUnavailable:
            st.stop("FATAL_TOOL_ERROR")
            break
        except ProtocolError as exc:
            st.step_count += 1
            run.say(f"Malformed reply: {exc}")
            continue
        if st.tokens_spent + response.usage.total > config.token_budget:
            st.stop("TOKEN_BUDGET")
            break
        st.step_count += 1
        st.tokens_spent += response.usage.total

        if response.kind is ResponseKind.FINISH:
            st.history.append((response, None))
            st.stop("MODEL_FINISH")
        elif response.kind is ResponseKind.CODE_EDIT:
            outcome = apply_with_fallback(APPLY_STRATEGIES, response.content, run.sandbox, run.state)
            st.history.append((response, outcome))
            run.say(canonical_json({"edit": outcome.value}), Role.TOOL_RESULT)
        else:
            result = invoke(response.content, run.sandbox)
            st.history.append((response, result))
            run.say(tool_result_message(response.content, result), Role.TOOL_RESULT)
            if result.ok:
                last_failure, repeats = None, 0
            else:
                key = canonical_json(response.content.to_dict())
                repeats = repeats + 1 if key == last_failure else 1
                last_failure = key
                if repeats >= FATAL_REPEAT:
                    st.stop("FATAL_TOOL_ERROR")

    evaluation = None
    if config.flags.get("enable_test", True):
        if (run.sandbox.root / run.target).is_file():
            evaluation = run.evaluate()
        else:
            evaluation = TestEvaluation(Fraction(0), {}, False, FailureKind.TEST_FAIL,
                                        "no translation produced")
    if st.termination_reason == "MODEL_FINISH":
        error = evaluation.error if evaluation else None
    elif st.termination_reason == "FATAL_TOOL_ERROR":
        error = FailureKind.TOOL_ERROR
    else:
        error = FailureKind.BUDGET_EXHAUSTED
    ca = evaluation.ca if evaluation else None
    return run.record(
        ca=ca, successful=error is None and ca == 1, error=error,
        results=evaluation.results if evaluation else {},
        executed=evaluation.executed if evaluation else False,
        wall_time=time.perf_counter() - start,
        termination_reason=st.termination_reason,
        step_count=st.step_count, tokens_spent=st.tokens_spent,
    )


def run_program(program: ProgramUnit, config: RunConfig, backend: Any, **kw: Any) -> RunRecord:
    if config.mode is Mode.DETERMINISTIC:
        return run_deterministic(program, config, backend, **kw)
    return run_agentic(program, config, backend, **kw)
