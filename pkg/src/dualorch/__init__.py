"""Deterministic and model-controlled orchestration for legacy code translation,
with a differential test harness and tail-risk metrics over repeated runs."""

from .core import (
    Category,
    ConfigError,
    FailureKind,
    GatePredicate,
    Mode,
    Outcome,
    ProgramUnit,
    RunConfig,
    StageId,
    StagePlan,
    SystemState,
    TestCase,
    build_stage_plan,
    evaluate_gate,
    load_suite,
)
from .gateway import ScriptedBackend, StochasticStub, TokenLedger, TokenUsage
from .harness import (
    HarnessReport,
    HarnessRow,
    build_harness_report,
    computational_accuracy,
    is_successful_run,
)
from .metrics import (
    UNDEFINED,
    MetricsConfig,
    SampleSet,
    cost_per_success,
    cvar,
    mean_ca,
    p5_ca,
    success_rate,
    summarize,
    tokens_per_success,
)
from .orchestrators import run_agentic, run_deterministic, run_program
from .records import RunRecord, read_runlog, write_runlog
from .tools import Sandbox, Tool, ToolRequest, ToolResult, invoke
from .trace import ToolCallTrace, canonicalize, divergence_point, trace_hash

__version__ = "0.1.0"
