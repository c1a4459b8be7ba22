"""Robustness and efficiency metrics over repeated runs.

All CA-derived statistics stay exact: samples are :class:`~fractions.Fraction`
values and so are the results.

* success rate: fraction of a program's N runs that succeeded; the suite-level
  value is the unweighted mean over programs.
* percentile CA: nearest rank, i.e. the ascending-sorted sample at 1-based
  index ``ceil(q/100 * N)`` (clamped to at least 1).
* CVaR: mean of the ``k = max(1, ceil(alpha * N))`` smallest samples.
* tokens / cost per success: spend over *all* runs of a group divided by the
  number of successful runs; :data:`UNDEFINED` when nothing succeeded.
"""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from .core import ConfigError
from .harness import is_successful_run


class _Undefined:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNDEFINED"

    def __bool__(self) -> bool:
        return False


UNDEFINED = _Undefined()


def _ceil(x: Fraction) -> int:
    return -((-x.numerator) // x.denominator)


@dataclass(frozen=True)
class SampleSet:
    program_id: str
    samples: tuple[Fraction, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(Fraction(s) for s in self.samples))
        if any(not 0 <= s <= 1 for s in self.samples):
            raise ValueError("CA samples must lie in [0, 1]")

    @property
    def N(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class MetricsConfig:
    alpha: Fraction = Fraction(1, 10)
    percentile_q: Fraction = Fraction(5)
    n_runs: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", Fraction(self.alpha))
        object.__setattr__(self, "percentile_q", Fraction(self.percentile_q))
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= self.percentile_q <= 100:
            raise ValueError("percentile q must be in [0, 100]")

    @property
    def cvar_column(self) -> str:
        return "CVAR_" + format(float(self.alpha), "g").replace(".", "_")


def _values(samples: SampleSet | Sequence) -> tuple[Fraction, ...]:
    vals = samples.samples if isinstance(samples, SampleSet) else tuple(Fraction(s) for s in samples)
    if not vals:
        raise ValueError("empty sample set")
    return vals


def mean_ca(samples: SampleSet | Sequence) -> Fraction:
    vals = _values(samples)
    return sum(vals, Fraction(0)) / len(vals)


def p5_ca(samples: SampleSet | Sequence, q: Fraction | int = 5) -> Fraction:
    vals = sorted(_values(samples))
    rank = max(1, _ceil(Fraction(q) / 100 * len(vals)))
    return vals[rank - 1]


def cvar(samples: SampleSet | Sequence, alpha: Fraction | float = Fraction(1, 10)) -> Fraction:
    vals = sorted(_values(samples))
    alpha = Fraction(alpha)
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    k = max(1, _ceil(alpha * len(vals)))
    return sum(vals[:k], Fraction(0)) / k


def success_rate(records: Sequence[Any], n: int | None = None) -> Fraction:
    n = len(records) if n is None else n
    if n == 0:
        raise ValueError("success rate over zero runs")
    if len(records) != n:
        raise ValueError(f"expected {n} runs, got {len(records)}")
    return Fraction(sum(1 for r in records if is_successful_run(r)), n)


def aggregate_success_rate(per_program: Mapping[str, Fraction]) -> Fraction:
    if not per_program:
        raise ValueError("no programs")
    return sum(per_program.values(), Fraction(0)) / len(per_program)


# --------------------------------------------------------------------------
# efficiency


PriceTable = Mapping[str, tuple[Fraction, Fraction]]


def load_price_table(path: str | Path) -> dict[str, tuple[Fraction, Fraction]]:
    """``{"model-id": {"prompt": "3e-6", "completion": "15e-6"}}`` per token."""
    raw = json.loads(Path(path).read_text())
    table = {}
    for model, prices in raw.items():
        table[model] = (Fraction(str(prices["prompt"])), Fraction(str(prices["completion"])))
    return table


def _spend(records: Iterable[Any]) -> tuple[int, int]:
    successes = total = 0
    for r in records:
        total += r.token_ledger.totals.total
        successes += is_successful_run(r)
    return total, successes


def tokens_per_success(records: Iterable[Any]) -> Fraction | _Undefined:
    total, successes = _spend(records)
    if successes == 0:
        return UNDEFINED
    return Fraction(total, successes)


def total_cost(records: Iterable[Any], price_table: PriceTable) -> Fraction:
    records = list(records)
    missing = sorted({r.config.model_id for r in records} - set(price_table))
    if missing:
        raise ConfigError(f"price table has no entry for {missing}")
    cost = Fraction(0)
    for r in records:
        prompt_price, completion_price = price_table[r.config.model_id]
        t = r.token_ledger.totals
        cost += t.prompt_tokens * prompt_price + t.completion_tokens * completion_price
    return cost


def cost_per_success(records: Iterable[Any], price_table: PriceTable) -> Fraction | _Undefined:
    records = list(records)
    cost = total_cost(records, price_table)
    successes = sum(1 for r in records if is_successful_run(r))
    if successes == 0:
        return UNDEFINED
    return cost / successes


# --------------------------------------------------------------------------
# summaries


def run_ca(record: Any) -> Fraction:
    """CA of one run for tail statistics; a run never evaluated counts as 0."""
    return record.ca if record.ca is not None else Fraction(0)


@dataclass
class SummaryRow:
    level: str  # "program", "category" or "suite"
    key: str
    mode: str
    n: int
    values: dict[str, Any] = field(default_factory=dict)


def _fmt(v: Any) -> str:
    if v is UNDEFINED or v is None:
        return "UNDEFINED"
    if isinstance(v, Fraction):
        return f"{float(v):.6f}"
    return str(v)


def _exact(v: Any) -> Any:
    if v is UNDEFINED or v is None:
        return "UNDEFINED"
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    return v


@dataclass
class MetricsSummary:
    cvar_column: str
    rows: list[SummaryRow] = field(default_factory=list)

    @property
    def columns(self) -> tuple[str, ...]:
        return ("CA", "BEST_CA", "SR", "P5_CA", self.cvar_column, "TOKENS_PER_SUCCESS",
                "COST_PER_SUCCESS", "TOTAL_TOKENS")

    def get(self, level: str, key: str, mode: str) -> SummaryRow:
        for r in self.rows:
            if (r.level, r.key, r.mode) == (level, key, mode):
                return r
        raise KeyError((level, key, mode))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("LEVEL", "KEY", "MODE", "N", *self.columns))
        for r in self.rows:
            w.writerow((r.level, r.key, r.mode, r.n, *(_fmt(r.values.get(c)) for c in self.columns)))
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "columns": list(self.columns),
            "rows": [
                {"level": r.level, "key": r.key, "mode": r.mode, "N": r.n,
                 "values": {c: _exact(r.values.get(c)) for c in self.columns},
                 "approx": {c: (float(r.values[c]) if isinstance(r.values.get(c), Fraction)
                                else _exact(r.values.get(c))) for c in self.columns}}
                for r in self.rows
            ],
        }, indent=2)


def summarize(records: Sequence[Any], config: MetricsConfig | None = None,
              price_table: PriceTable | None = None) -> MetricsSummary:
    """Per (program, mode) rows, then per (category, mode) rows, then one
    suite-wide row per mode.

    Category and suite CA, SR, P5-CA and CVaR are unweighted means of the program
    values; tokens and cost per success pool every run of the category.
    """
    config = config or MetricsConfig()
    if price_table is not None:
        total_cost(records, price_table)  # fail on missing prices before any output
    summary = MetricsSummary(config.cvar_column)
    by_program: dict[tuple[str, str], list[Any]] = defaultdict(list)
    category_of: dict[str, str] = {}
    for r in records:
        by_program[(r.program_id, r.mode.value)].append(r)
        category_of[r.program_id] = r.category.value

    program_rows: dict[tuple[str, str], SummaryRow] = {}
    for (pid, mode), runs in sorted(by_program.items()):
        runs = sorted(runs, key=lambda r: r.run_index)
        if config.n_runs is not None and len(runs) != config.n_runs:
            raise ValueError(f"{pid}/{mode}: expected {config.n_runs} runs, found {len(runs)}")
        samples = SampleSet(pid, tuple(run_ca(r) for r in runs))
        values = {
            "CA": mean_ca(samples),
            "BEST_CA": max(samples.samples),
            "SR": success_rate(runs),
            "P5_CA": p5_ca(samples, config.percentile_q),
            config.cvar_column: cvar(samples, config.alpha),
            "TOKENS_PER_SUCCESS": tokens_per_success(runs),
            "COST_PER_SUCCESS": cost_per_success(runs, price_table) if price_table else UNDEFINED,
            "TOTAL_TOKENS": sum(r.token_ledger.totals.total for r in runs),
        }
        row = SummaryRow("program", pid, mode, len(runs), values)
        program_rows[(pid, mode)] = row
        summary.rows.append(row)

    groups: dict[tuple[str, str, str], list[tuple[str, str]]] = defaultdict(list)
    for pid, mode in program_rows:
        groups[("category", category_of[pid], mode)].append((pid, mode))
        groups[("suite", "ALL", mode)].append((pid, mode))
    for (level, cat, mode), keys in sorted(groups.items(), key=lambda kv: (kv[0][0] == "suite", kv[0])):
        rows = [program_rows[k] for k in keys]
        runs = [r for k in keys for r in by_program[k]]

        def avg(col: str) -> Fraction:
            return sum((row.values[col] for row in rows), Fraction(0)) / len(rows)

        values = {
            "CA": avg("CA"),
            "BEST_CA": avg("BEST_CA"),
            "SR": aggregate_success_rate({row.key: row.values["SR"] for row in rows}),
            "P5_CA": avg("P5_CA"),
            config.cvar_column: avg(config.cvar_column),
            "TOKENS_PER_SUCCESS": tokens_per_success(runs),
            "COST_PER_SUCCESS": cost_per_success(runs, price_table) if price_table else UNDEFINED,
            "TOTAL_TOKENS": sum(r.token_ledger.totals.total for r in runs),
        }
        summary.rows.append(SummaryRow(level, cat, mode, len(runs), values))
    return summary
