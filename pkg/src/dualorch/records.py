"""RunRecord and its JSONL form (one record per line, schema ``v1``)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable

from .core import SCHEMA_VERSION, Category, FailureKind, Mode, Outcome, RunConfig, StageId
from .gateway import TokenLedger
from .trace import ToolCallTrace


class RunlogError(ValueError):
    def __init__(self, message: str, lines: list[int] | None = None):
        super().__init__(message)
        self.lines = lines or []


@dataclass
class RunRecord:
    program_id: str
    config: RunConfig
    trace: ToolCallTrace
    token_ledger: TokenLedger
    stage_outcomes: dict[StageId, Outcome] = field(default_factory=dict)
    ca: Fraction | None = None
    successful: bool = False
    wall_time: float = 0.0
    error: FailureKind | None = None
    category: Category = Category.OTHER
    run_index: int = 0
    test_results: dict[str, bool] = field(default_factory=dict)
    executed: bool = False
    termination_reason: str | None = None
    step_count: int = 0
    tokens_spent: int = 0

    def __post_init__(self) -> None:
        if self.ca is not None and not 0 <= self.ca <= 1:
            raise ValueError(f"CA out of range: {self.ca}")
        if self.successful and (self.error is not None or self.ca is None):
            raise ValueError("a successful run has no error and a computed CA")

    @property
    def mode(self) -> Mode:
        return self.config.mode

    @property
    def run_id(self) -> str:
        return f"{self.program_id}:{self.mode.value}:{self.run_index}"

    def to_dict(self, *, include_wall_time: bool = True) -> dict[str, Any]:
        d = {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "program_id": self.program_id,
            "category": self.category.value,
            "run_index": self.run_index,
            "config": self.config.to_dict(),
            "trace": self.trace.to_dict(),
            "stage_outcomes": {k.value: v.value for k, v in self.stage_outcomes.items()},
            "token_ledger": self.token_ledger.to_dict(),
            "ca": None if self.ca is None else f"{self.ca.numerator}/{self.ca.denominator}",
            "successful": self.successful,
            "error": self.error.value if self.error else None,
            "test_results": dict(sorted(self.test_results.items())),
            "executed": self.executed,
            "termination_reason": self.termination_reason,
            "step_count": self.step_count,
            "tokens_spent": self.tokens_spent,
        }
        if include_wall_time:
            d["wall_time"] = round(self.wall_time, 6)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunRecord:
        return cls(
            program_id=d["program_id"],
            config=RunConfig.from_dict(d["config"]),
            trace=ToolCallTrace.from_dict(d["trace"]),
            token_ledger=TokenLedger.from_dict(d["token_ledger"]),
            stage_outcomes={StageId(k): Outcome(v) for k, v in d.get("stage_outcomes", {}).items()},
            ca=None if d.get("ca") is None else Fraction(d["ca"]),
            successful=bool(d["successful"]),
            wall_time=float(d.get("wall_time", 0.0)),
            error=FailureKind(d["error"]) if d.get("error") else None,
            category=Category.parse(d.get("category", "OTHER")),
            run_index=int(d.get("run_index", 0)),
            test_results={k: bool(v) for k, v in d.get("test_results", {}).items()},
            executed=bool(d.get("executed", False)),
            termination_reason=d.get("termination_reason"),
            step_count=int(d.get("step_count", 0)),
            tokens_spent=int(d.get("tokens_spent", 0)),
        )


def write_runlog(records: Iterable[RunRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_runlog(path: str | Path) -> list[RunRecord]:
    """Parse a JSONL runlog; every line must carry schema_version v1."""
    records, bad = [], []
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines()]
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError:
            bad.append(n)
            continue
        if d.get("schema_version") != SCHEMA_VERSION:
            bad.append(n)
            continue
        records.append(RunRecord.from_dict(d))
    if bad:
        raise RunlogError(f"{path}: unsupported or mixed schema versions on lines {bad}", bad)
    return records
