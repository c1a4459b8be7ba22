"""Repeat the whole bundled suite under both engines and print the metric
table: mean and best accuracy, success rate, 5th percentile, CVaR and
tokens per success.

    python demos/02_tail_risk_metrics.py [REPEATS]
"""

import sys
import tempfile
from pathlib import Path

from dualorch.cli import BatchSpec, run_batch
from dualorch.core import Mode, RunConfig
from dualorch.metrics import summarize
from dualorch.suite import bundled_manifest


def main() -> None:
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 5
    with tempfile.TemporaryDirectory() as tmp:
        config = Path(tmp) / "config.json"
        config.write_text(RunConfig(backend={"kind": "stub", "model": "stub"}).to_json())
        batch = BatchSpec(suite=bundled_manifest(), config=config,
                          modes=(Mode.DETERMINISTIC, Mode.AGENTIC), repeats=repeats,
                          seed_base=0, parallelism=4, out=Path(tmp) / "out")
        by_mode = run_batch(batch)
    records = [r for recs in by_mode.values() for r in recs]
    summary = summarize(records)
    cols = ("CA", "SR", "P5_CA", summary.cvar_column, "TOKENS_PER_SUCCESS")
    print(f"{'level':9} {'key':6} {'mode':14} " + " ".join(f"{c:>18}" for c in cols))
    for row in summary.rows:
        if row.level == "program":
            continue
        cells = []
        for c in cols:
            v = row.values[c]
            cells.append(f"{float(v):18.4f}" if hasattr(v, "numerator") else f"{str(v):>18}")
        print(f"{row.level:9} {row.key:6} {row.mode:14} " + " ".join(cells))


if __name__ == "__main__":
    main()
