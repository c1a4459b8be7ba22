"""Builders shared by the test modules."""

from fractions import Fraction

from dualorch.core import Category, FailureKind, Mode, RunConfig
from dualorch.gateway import TokenLedger, TokenUsage
from dualorch.records import RunRecord
from dualorch.trace import ToolCallTrace


def make_record(program_id="P1", ca=Fraction(1), *, error=None, run_index=0,
                mode=Mode.DETERMINISTIC, category=Category.NC, usage=(0, 0), model="m"):
    if error is None and ca is not None and ca < 1:
        error = FailureKind.TEST_FAIL
    config = RunConfig(mode=mode, seed=run_index, backend={"kind": "scripted", "model": model})
    ledger = TokenLedger(model, [TokenUsage(*usage)] if usage != (0, 0) else [])
    return RunRecord(
        program_id=program_id, config=config, trace=ToolCallTrace(), token_ledger=ledger,
        ca=ca, successful=error is None and ca == 1, error=error, category=category,
        run_index=run_index,
    )
