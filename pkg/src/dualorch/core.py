"""Domain model shared by the orchestrators, harness and metrics.

Everything here is an immutable value type except :class:`SystemState`,
which the single orchestrator owning a run mutates append-only.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

SCHEMA_VERSION = "v1"
DEFAULT_MAX_RETRIES = 2
MAX_RETRIES_CEILING = 8
APPLY_STRATEGIES = ("exact_patch", "whole_file_rewrite")
DEFAULT_FLAGS = {"enable_persist": True, "enable_validate": True, "enable_test": True}


class ConfigError(ValueError):
    """Configuration does not match the schema the engine expects."""


class Category(str, Enum):
    NC = "NC"
    SM = "SM"
    IC = "IC"
    SQ = "SQ"
    IX = "IX"
    ST = "ST"
    SG = "SG"
    OB = "OB"
    IF = "IF"
    RL = "RL"
    CM = "CM"
    DB = "DB"
    RW = "RW"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, value: str) -> Category:
        try:
            return cls(str(value).upper())
        except ValueError:
            return cls.OTHER


class StageId(str, Enum):
    APPLY = "APPLY"
    PERSIST = "PERSIST"
    VALIDATE = "VALIDATE"
    TEST = "TEST"


class Outcome(str, Enum):
    PASSED = "PASSED"
    FAILED = "FAILED"
    SKIPPED = "SKIPPED"


class Mode(str, Enum):
    DETERMINISTIC = "DETERMINISTIC"
    AGENTIC = "AGENTIC"


class FailureKind(str, Enum):
    COMPILE_FAIL = "COMPILE_FAIL"
    RUNTIME_ERROR = "RUNTIME_ERROR"
    TEST_FAIL = "TEST_FAIL"
    TIMEOUT = "TIMEOUT"
    BUDGET_EXHAUSTED = "BUDGET_EXHAUSTED"
    TOOL_ERROR = "TOOL_ERROR"


class TestStatus(str, Enum):
    """Manifest annotation for a test case; only ACTIVE cases are executed."""

    __test__ = False

    ACTIVE = "ACTIVE"
    DELETED = "DELETED"
    INSPECT = "INSPECT"


# --------------------------------------------------------------------------
# Programs and tests


@dataclass(frozen=True)
class TestCase:
    __test__ = False

    id: str
    stdin_payload: bytes = b""
    argv: tuple[str, ...] = ()
    expected_artifacts: tuple[tuple[str, bytes], ...] = ()
    status: TestStatus = TestStatus.ACTIVE
    golden: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "stdin": self.stdin_payload.decode("latin-1"),
            "argv": list(self.argv),
        }
        if self.expected_artifacts:
            d["expected_artifacts"] = [
                [p, b.decode("latin-1")] for p, b in self.expected_artifacts
            ]
        if self.status is not TestStatus.ACTIVE:
            d["status"] = self.status.value
        if self.golden is not None:
            d["golden"] = self.golden
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TestCase:
        return cls(
            id=str(d["id"]),
            stdin_payload=str(d.get("stdin", "")).encode("latin-1"),
            argv=tuple(str(a) for a in d.get("argv", ())),
            expected_artifacts=tuple(
                (str(p), str(b).encode("latin-1"))
                for p, b in d.get("expected_artifacts", ())
            ),
            status=TestStatus(d.get("status", "ACTIVE")),
            golden=d.get("golden"),
        )


@dataclass(frozen=True)
class ProgramUnit:
    id: str
    category: Category
    source_path: str
    reference_path: str
    tests: tuple[TestCase, ...]
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        ids = [t.id for t in self.tests]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate test id in program {self.id}")

    @property
    def active_tests(self) -> tuple[TestCase, ...]:
        return tuple(t for t in self.tests if t.status is TestStatus.ACTIVE)

    def resolve(self, rel: str) -> Path:
        base = self.base_dir or Path(".")
        return (base / rel).resolve()

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "category": self.category.value,
            "source_path": self.source_path,
            "reference_path": self.reference_path,
            "tests": [t.to_dict() for t in self.tests],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path | None = None) -> ProgramUnit:
        return cls(
            id=str(d["id"]),
            category=Category.parse(d.get("category", "OTHER")),
            source_path=str(d["source_path"]),
            reference_path=str(d["reference_path"]),
            tests=tuple(TestCase.from_dict(t) for t in d.get("tests", ())),
            base_dir=base_dir,
        )


def load_suite(path: str | Path) -> list[ProgramUnit]:
    """Read a suite manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read suite manifest {path}: {exc}") from exc
    if isinstance(raw, dict):
        raw = raw.get("programs")
    if not isinstance(raw, list):
        raise ConfigError("suite manifest must be an array of program descriptors")
    programs = []
    for i, entry in enumerate(raw):
        try:
            programs.append(ProgramUnit.from_dict(entry, base_dir=path.parent.resolve()))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"program descriptor #{i}: {exc!r}") from exc
    ids = [p.id for p in programs]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigError(f"duplicate program ids: {dupes}")
    for p in programs:
        if not p.active_tests:
            raise ConfigError(f"program {p.id} has no executable tests")
    return programs


def dump_suite(programs: list[ProgramUnit], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([p.to_dict() for p in programs], indent=2, sort_keys=True) + "\n"
    )


# --------------------------------------------------------------------------
# Gates and plans


class GateKind(str, Enum):
    ALWAYS = "ALWAYS"
    FILES_MODIFIED = "FILES_MODIFIED"
    FLAG_ENABLED = "FLAG_ENABLED"
    ALL_OF = "ALL_OF"
    ANY_OF = "ANY_OF"


@dataclass(frozen=True)
class GatePredicate:
    kind: GateKind
    flag: str | None = None
    children: tuple[GatePredicate, ...] = ()

    @classmethod
    def always(cls) -> GatePredicate:
        return cls(GateKind.ALWAYS)

    @classmethod
    def files_modified(cls) -> GatePredicate:
        return cls(GateKind.FILES_MODIFIED)

    @classmethod
    def flag_enabled(cls, name: str) -> GatePredicate:
        return cls(GateKind.FLAG_ENABLED, flag=name)

    @classmethod
    def all_of(cls, *children: GatePredicate) -> GatePredicate:
        return cls(GateKind.ALL_OF, children=tuple(children))

    @classmethod
    def any_of(cls, *children: GatePredicate) -> GatePredicate:
        return cls(GateKind.ANY_OF, children=tuple(children))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind.value}
        if self.kind is GateKind.FLAG_ENABLED:
            d["flag"] = self.flag
        if self.kind in (GateKind.ALL_OF, GateKind.ANY_OF):
            d["children"] = [c.to_dict() for c in self.children]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> GatePredicate:
        kind = GateKind(d["kind"])
        return cls(
            kind,
            flag=d.get("flag") if kind is GateKind.FLAG_ENABLED else None,
            children=tuple(cls.from_dict(c) for c in d.get("children", ())),
        )


@dataclass(frozen=True)
class Stage:
    id: StageId
    gate: GatePredicate
    strategies: tuple[str, ...]
    max_retries: int = DEFAULT_MAX_RETRIES

    def __post_init__(self) -> None:
        if self.id is StageId.APPLY and not self.strategies:
            raise ConfigError("APPLY stage needs at least one strategy")
        if not 0 <= self.max_retries <= MAX_RETRIES_CEILING:
            raise ConfigError(
                f"max_retries must be in [0, {MAX_RETRIES_CEILING}], got {self.max_retries}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id.value,
            "gate": self.gate.to_dict(),
            "strategies": list(self.strategies),
            "max_retries": self.max_retries,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Stage:
        return cls(
            StageId(d["id"]),
            GatePredicate.from_dict(d["gate"]),
            tuple(d["strategies"]),
            int(d["max_retries"]),
        )


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[Stage, ...]
    global_timeout: float

    def __post_init__(self) -> None:
        ids = [s.id for s in self.stages]
        if len(set(ids)) != len(ids):
            raise ConfigError("stage ids must be unique")

    def to_dict(self) -> dict[str, Any]:
        return {
            "stages": [s.to_dict() for s in self.stages],
            "global_timeout": self.global_timeout,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StagePlan:
        return cls(
            tuple(Stage.from_dict(s) for s in d["stages"]),
            float(d["global_timeout"]),
        )


@dataclass
class SystemState:
    """Observable state the gates read. Append-only during a run."""

    workspace_root: str
    modified_files: set[str] = field(default_factory=set)
    stage_outcomes: dict[StageId, Outcome] = field(default_factory=dict)

    def mark_modified(self, path: str) -> None:
        self.modified_files.add(path)

    def record(self, stage: StageId, outcome: Outcome) -> None:
        if stage in self.stage_outcomes:
            raise RuntimeError(f"stage {stage.value} already has an outcome")
        self.stage_outcomes[stage] = outcome

    def to_dict(self) -> dict[str, Any]:
        return {
            "workspace_root": self.workspace_root,
            "modified_files": sorted(self.modified_files),
            "stage_outcomes": {k.value: v.value for k, v in self.stage_outcomes.items()},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SystemState:
        return cls(
            workspace_root=d["workspace_root"],
            modified_files=set(d.get("modified_files", ())),
            stage_outcomes={
                StageId(k): Outcome(v) for k, v in d.get("stage_outcomes", {}).items()
            },
        )


# --------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class RunConfig:
    mode: Mode = Mode.DETERMINISTIC
    seed: int = 0
    flags: dict[str, bool] = field(default_factory=lambda: dict(DEFAULT_FLAGS))
    prompts: str = "default-v1"
    backend: dict[str, Any] = field(default_factory=lambda: {"kind": "scripted", "model": "scripted"})
    max_agentic_steps: int = 30
    token_budget: int = 400_000
    command_timeout: float = 10.0
    global_timeout: float = 600.0
    reprompt_stderr_limit: int = 2000

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.max_agentic_steps < 0 or self.token_budget <= 0:
            raise ConfigError("max_agentic_steps must be >= 0 and token_budget > 0")

    @property
    def model_id(self) -> str:
        return str(self.backend.get("model", self.backend.get("kind", "unknown")))

    def replace(self, **changes: Any) -> RunConfig:
        d = self.to_dict()
        d.update({k: (v.value if isinstance(v, Enum) else v) for k, v in changes.items()})
        return RunConfig.from_dict(d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode.value,
            "seed": self.seed,
            "flags": dict(sorted(self.flags.items())),
            "prompts": self.prompts,
            "backend": self.backend,
            "max_agentic_steps": self.max_agentic_steps,
            "token_budget": self.token_budget,
            "command_timeout": self.command_timeout,
            "global_timeout": self.global_timeout,
            "reprompt_stderr_limit": self.reprompt_stderr_limit,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunConfig:
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version!r}")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known - {"schema_version"}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kw: dict[str, Any] = {k: v for k, v in d.items() if k in known}
        try:
            if "mode" in kw:
                kw["mode"] = Mode(kw["mode"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if "flags" in kw:
            kw["flags"] = {str(k): bool(v) for k, v in kw["flags"].items()}
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)


def canonical_json(obj: Any) -> str:
    """Sorted keys, no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def build_stage_plan(config: RunConfig) -> StagePlan:
    if config.mode is not Mode.DETERMINISTIC:
        raise ConfigError("stage plans exist only for deterministic runs")
    flag = GatePredicate.flag_enabled
    return StagePlan(
        stages=(
            Stage(StageId.APPLY, GatePredicate.always(), APPLY_STRATEGIES),
            Stage(
                StageId.PERSIST,
                GatePredicate.all_of(flag("enable_persist"), GatePredicate.files_modified()),
                ("git_commit",),
            ),
            Stage(StageId.VALIDATE, flag("enable_validate"), ("py_compile",)),
            Stage(StageId.TEST, flag("enable_test"), ("harness",)),
        ),
        global_timeout=config.global_timeout,
    )


def evaluate_gate(gate: GatePredicate, state: SystemState, config: RunConfig) -> bool:
    kind = gate.kind
    if kind is GateKind.ALWAYS:
        return True
    if kind is GateKind.FILES_MODIFIED:
        return bool(state.modified_files)
    if kind is GateKind.FLAG_ENABLED:
        if gate.flag not in config.flags:
            raise ConfigError(f"gate references undeclared flag {gate.flag!r}")
        return bool(config.flags[gate.flag])
    if kind is GateKind.ALL_OF:
        # every child is evaluated so undeclared flags surface regardless of order
        results = [evaluate_gate(c, state, config) for c in gate.children]
        return all(results)
    if kind is GateKind.ANY_OF:
        results = [evaluate_gate(c, state, config) for c in gate.children]
        return any(results)
    raise ConfigError(f"unknown gate kind {kind!r}")
